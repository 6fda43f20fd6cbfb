"""Quantitative probes: energy traces, the smoothness metric, finite-
difference sensitivity of trained models, and the accuracy-vs-steps sweep."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import decoder as dec
from .errors import DimensionMismatch, VertexOutOfRange
from .graph import Graph, LaplacianOperator, LaplacianVariant, build_operator
from .spectral import eigendecompose, exact_signal
from .training import TrainConfig, decode_all, encode, train
from .wave import WaveConfig, WaveSignal, propagate


def dirichlet_energy(op: LaplacianOperator, x) -> float:
    """Quadratic form trace(x^T L x); for the combinatorial operator this is
    the sum of squared differences across edges."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != op.n:
        raise DimensionMismatch(f"x rows {x.shape[0]} != operator size {op.n}")
    return float(np.sum(x * op.apply(x)))


def energy_trace(signal: WaveSignal, op: LaplacianOperator):
    """Discrete energies E_i = |V_i|^2/2 + X_i . L X_i / 2 for every step.

    Returns (energies, max relative drift from E_0), drift measured against
    max(E_0, 1e-12). Requires a signal recorded with velocities.
    """
    if signal.velocities is None:
        raise DimensionMismatch("energy trace needs velocity snapshots "
                                "(propagate with record_velocities=True)")
    num = signal.positions.shape[0]
    energies = np.empty(num)
    for i in range(num):
        x = signal.positions[i]
        v = signal.velocities[i]
        energies[i] = 0.5 * np.sum(v * v) + 0.5 * np.sum(x * op.apply(x))
    drift = float(np.max(np.abs(energies - energies[0])) / max(energies[0], 1e-12))
    return energies, drift


def _edge_pairs(op: LaplacianOperator) -> tuple[np.ndarray, np.ndarray]:
    coo = op.matrix.tocoo()
    upper = coo.row < coo.col
    return coo.row[upper], coo.col[upper]


def oversmoothing_metric(op: LaplacianOperator, node_vectors) -> float:
    """Edge-summed Dirichlet node similarity:
    mu(Y) = sqrt((1/n) * sum over edges of |Y_u - Y_v|^2).

    Zero exactly when Y is constant on each connected component. The edge set
    is the operator's off-diagonal sparsity pattern, so any variant of the
    same graph gives the same value.
    """
    y = np.asarray(node_vectors, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != op.n:
        raise DimensionMismatch(f"node_vectors rows {y.shape[0]} != operator size {op.n}")
    u, v = _edge_pairs(op)
    diff = y[u] - y[v]
    return float(np.sqrt(np.sum(diff * diff) / op.n))


def fit_decay_rate(step_counts, values, floor: float = 1e-12) -> float:
    """Least-squares slope c2 of log(value) = log(c1) - c2 * N.

    Positive c2 means exponential decay with N; the smoothness metric of a
    non-collapsing model should fit to c2 near or below zero.
    """
    n = np.asarray(step_counts, dtype=np.float64)
    y = np.log(np.maximum(np.asarray(values, dtype=np.float64), floor))
    slope = np.polyfit(n, y, 1)[0]
    return float(-slope)


def encoder_convergence(
    op: LaplacianOperator,
    x0,
    stopping_time: float,
    base_steps: int,
    refinements: int = 3,
) -> dict:
    """Integrator-vs-oracle deviation under step halving at fixed T.

    Runs the encoder at base_steps, 2*base_steps, ... steps, measures the max
    absolute deviation from the exact signal over all grid times, and fits
    the convergence order (slope of log deviation vs log h). The scheme is
    first order, so a healthy fit lands near 1.
    """
    dec_ = eigendecompose(op)
    step_sizes = []
    deviations = []
    for level in range(refinements):
        steps = base_steps * 2 ** level
        config = WaveConfig.from_time(steps, stopping_time)
        signal = propagate(op, x0, config, record_velocities=False)
        times = np.arange(steps + 1) * config.step_size
        exact = exact_signal(dec_, signal.positions[0], times)
        deviations.append(float(np.max(np.abs(signal.positions - exact))))
        step_sizes.append(config.step_size)
    if min(deviations) < 1e-300:
        order = float("nan")
    else:
        order = float(np.polyfit(np.log(step_sizes), np.log(deviations), 1)[0])
    return {"step_sizes": step_sizes, "max_deviations": deviations, "order": order}


def _vertex_output(params, op, features, wave_config, placement, v):
    signal = encode(op, features, wave_config, params, placement)
    seq = signal.positions[1:, v:v + 1, :]
    y, _ = dec.forward(params, seq, apply_embedding=(placement == "post"))
    return y[0]


def sensitivity(
    params: dec.DecoderParams,
    graph: Graph,
    config: TrainConfig,
    v: int,
    u: int,
    delta: float | None = None,
) -> float:
    """Finite-difference estimate of |d y_v / d x_u| (Frobenius norm).

    Central differences over every coordinate of vertex u's features, re-
    running encoder and decoder per probe. delta defaults to 1e-4 relative to
    the feature scale. Exactly zero whenever u and v lie in different
    connected components (the encoder never mixes them).
    """
    for w in (v, u):
        if not 0 <= w < graph.n:
            raise VertexOutOfRange(f"vertex {w} outside [0, {graph.n})")
    op = build_operator(graph, config.laplacian_variant)
    wave_config = config.wave_config()
    placement = config.embedding_placement
    scale = max(1.0, float(np.abs(graph.features).max()))
    step = delta if delta is not None else 1e-4 * scale
    d0 = graph.features.shape[1]
    jacobian = np.empty((params.output_dim, d0))
    for j in range(d0):
        plus = graph.features.copy()
        minus = graph.features.copy()
        plus[u, j] += step
        minus[u, j] -= step
        y_plus = _vertex_output(params, op, plus, wave_config, placement, v)
        y_minus = _vertex_output(params, op, minus, wave_config, placement, v)
        jacobian[:, j] = (y_plus - y_minus) / (2.0 * step)
    return float(np.sqrt(np.sum(jacobian * jacobian)))


@dataclass
class SweepEntry:
    num_steps: int
    step_size: float
    stopping_time: float
    mean_metric: float
    std_metric: float
    seeds: list
    per_seed_metrics: list
    mean_smoothness: float


@dataclass
class SweepResult:
    """Accuracy (and output smoothness) versus the number of time steps at a
    fixed stopping time."""

    fixed_stopping_time: float
    entries: list = field(default_factory=list)
    fixed_t: bool = True

    def to_dict(self) -> dict:
        return {
            "fixed_stopping_time": self.fixed_stopping_time,
            "fixed_t": self.fixed_t,
            "entries": [vars(e).copy() for e in self.entries],
        }

    def to_csv(self) -> str:
        lines = ["num_steps,step_size,stopping_time,mean_metric,std_metric,"
                 "mean_smoothness,num_seeds"]
        for e in self.entries:
            lines.append(f"{e.num_steps},{e.step_size!r},{e.stopping_time!r},"
                         f"{e.mean_metric!r},{e.std_metric!r},"
                         f"{e.mean_smoothness!r},{len(e.seeds)}")
        return "\n".join(lines) + "\n"


def sweep_steps(
    graph: Graph,
    base_config: TrainConfig,
    step_counts,
    seeds,
    split_source: str = "unspecified",
) -> SweepResult:
    """Train per (N, seed) at fixed stopping time T (h = T/N per entry) and
    aggregate mean/std test metric plus the mean smoothness of the decoder
    outputs at the best checkpoint."""
    stopping_time = base_config.stopping_time
    mu_op = build_operator(graph, LaplacianVariant.COMBINATORIAL)
    result = SweepResult(fixed_stopping_time=stopping_time)
    for num_steps in step_counts:
        h = stopping_time / num_steps
        metrics = []
        smoothness = []
        for seed in seeds:
            config = replace(base_config, num_steps=int(num_steps), step_size=h,
                             seed=int(seed))
            params, report = train(graph, config, split_source=split_source)
            metrics.append(report.test_metric)
            op = build_operator(graph, config.laplacian_variant)
            signal = encode(op, graph.features, config.wave_config(), params,
                            config.embedding_placement)
            outputs = decode_all(params, signal.positions[1:],
                                 config.embedding_placement == "post",
                                 config.node_chunk_size)
            smoothness.append(oversmoothing_metric(mu_op, outputs))
        result.entries.append(SweepEntry(
            num_steps=int(num_steps),
            step_size=h,
            stopping_time=stopping_time,
            mean_metric=float(np.mean(metrics)),
            std_metric=float(np.std(metrics)),
            seeds=[int(s) for s in seeds],
            per_seed_metrics=[float(m) for m in metrics],
            mean_smoothness=float(np.mean(smoothness)),
        ))
    return result
