"""Render per-vertex wave signals as audible WAV files.

Graph frequencies sqrt(lambda) are sub-audible, so the signal is sampled in
dilated time: the dilation factor maps the largest mode frequency onto a
configurable audio frequency (default 2 kHz). Output is mono 16-bit
little-endian PCM with the canonical 44-byte header.
"""

from __future__ import annotations

import wave as wave_format

import numpy as np

from .data import GraphBundle
from .errors import VertexOutOfRange
from .graph import LaplacianOperator, build_operator
from .spectral import ORACLE_LIMIT_DEFAULT, eigendecompose

_TIME_CHUNK = 16384


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as mono 16-bit PCM."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave_format.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(int(sample_rate))
        handle.writeframes(pcm.tobytes())


def _oracle_samples(op, column, vertex, times) -> np.ndarray:
    dec = eigendecompose(op)
    coeffs = dec.eigenvectors.T @ column
    if vertex == "mix":
        weights = dec.eigenvectors.mean(axis=0) * coeffs
    else:
        weights = dec.eigenvectors[vertex, :] * coeffs
    omega = np.sqrt(dec.eigenvalues)
    out = np.empty(times.shape[0])
    for start in range(0, times.shape[0], _TIME_CHUNK):
        block = times[start:start + _TIME_CHUNK]
        out[start:start + _TIME_CHUNK] = np.cos(np.outer(block, omega)) @ weights
    return out


def _encoder_samples(op, column, vertex, num_samples, h) -> np.ndarray:
    # Streaming integrator: only the observed vertex (or the mix) is kept.
    x = column.copy()
    v = np.zeros_like(x)
    out = np.empty(num_samples)
    matrix = op.matrix
    for i in range(num_samples):
        v -= h * (matrix @ x)
        x = x + h * v
        out[i] = x.mean() if vertex == "mix" else x[vertex]
    return out


def export_wav(
    bundle: GraphBundle,
    variant,
    vertex,
    sample_rate: int,
    duration: float,
    path,
    target_hz: float = 2000.0,
    oracle_limit: int = ORACLE_LIMIT_DEFAULT,
) -> dict:
    """Render the first feature column's signal at a vertex (or the vertex
    mean with vertex="mix") to a WAV file.

    The exact spectral signal is used when the graph fits the oracle limit;
    larger graphs fall back to the integrator with one step per output
    sample (noted in the returned info dict). The per-signal mean (DC) is
    removed, then the signal is peak-normalized to 0.9 full scale; an all-
    zero signal yields silence of the requested length.
    """
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    if not 0 < target_hz < sample_rate / 2:
        raise ValueError(
            f"target_hz must lie below the Nyquist frequency {sample_rate / 2}"
        )
    if 2.0 * np.pi * target_hz / sample_rate >= 2.0:
        # The integrator fallback takes one step per output sample and is
        # unstable once the mapped top frequency exceeds 2 rad per step.
        raise ValueError(
            f"target_hz {target_hz} too high for sample_rate {sample_rate}: "
            f"needs target_hz < sample_rate / pi"
        )
    graph = bundle.to_graph()
    if vertex != "mix":
        vertex = int(vertex)
        if not 0 <= vertex < graph.n:
            raise VertexOutOfRange(f"vertex {vertex} outside [0, {graph.n})")
    op = build_operator(graph, variant)
    column = graph.features[:, 0].astype(np.float64)
    num_samples = int(round(sample_rate * duration))

    use_oracle = op.n <= oracle_limit
    if use_oracle:
        dec = eigendecompose(op, oracle_limit)
        lambda_max = float(dec.eigenvalues[-1])
    else:
        lambda_max = float(op.max_eigenvalue_bound)

    if lambda_max <= 1e-12:
        dilation = 0.0
        samples = np.zeros(num_samples)
    else:
        dilation = 2.0 * np.pi * target_hz / np.sqrt(lambda_max)
        if use_oracle:
            times = dilation * np.arange(num_samples) / sample_rate
            samples = _oracle_samples(op, column, vertex, times)
        else:
            scaled = LaplacianOperator(
                variant=op.variant,
                matrix=op.matrix * dilation ** 2,
                max_eigenvalue_bound=op.max_eigenvalue_bound * dilation ** 2,
            )
            samples = _encoder_samples(scaled, column, vertex, num_samples,
                                       1.0 / sample_rate)

    samples = samples - samples.mean() if samples.size else samples
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    silent = peak < 1e-12
    if silent:
        samples = np.zeros(num_samples)
    else:
        samples = samples * (0.9 / peak)
    write_wav(path, samples, sample_rate)
    return {
        "num_samples": num_samples,
        "sample_rate": int(sample_rate),
        "oracle": use_oracle,
        "silent": silent,
        "time_dilation": dilation,
        "target_hz": target_hz,
        "mapped_max_hz": target_hz if lambda_max > 1e-12 else 0.0,
    }
