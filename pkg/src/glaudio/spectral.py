"""Dense spectral oracles for small graphs.

Everything here is verification machinery: exact solutions of the wave
equation from an eigendecomposition, the moment-sequence characterization of
signal equality, receptive fields, and recovery of eigenvector projections
from a single vertex's signal by cosine-family quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    InsufficientSamples,
    NonIntegralSpectrum,
    RepeatedEigenvalues,
    TooLargeForOracle,
    VertexOutOfRange,
)
from .graph import LaplacianOperator

ORACLE_LIMIT_DEFAULT = 2000
_EIGENVALUE_FLOOR = -1e-9


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues and orthonormal eigenvectors of an operator.

    Eigenvector columns carry a deterministic sign: the entry of largest
    absolute value is positive (ties broken to the lowest index).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source: str

    @property
    def n(self) -> int:
        return int(self.eigenvalues.shape[0])


@dataclass(frozen=True)
class ReceptiveField:
    """Eigenvector indices visible from a vertex.

    member_indices holds the 0-based indices i with |eigenvector_i[vertex]|
    above tol times that eigenvector's max-norm. unique_spectrum is False
    when any eigenvalue gap falls at or below the tolerance, in which case
    membership is basis-dependent and downstream support claims need care.
    """

    vertex: int
    member_indices: np.ndarray
    tol: float
    unique_spectrum: bool


def eigendecompose(
    op: LaplacianOperator,
    oracle_limit: int = ORACLE_LIMIT_DEFAULT,
) -> SpectralDecomposition:
    """Dense symmetric eigendecomposition with canonical signs.

    Eigenvalues within -1e-9 of zero are clamped to zero; anything more
    negative fails the PSD contract and raises ConvergenceFailure.
    """
    if op.n > oracle_limit:
        raise TooLargeForOracle(f"n = {op.n} exceeds the oracle limit {oracle_limit}")
    dense = op.matrix.toarray()
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(dense)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"eigendecomposition failed: {exc}") from exc
    if eigenvalues.min(initial=0.0) < _EIGENVALUE_FLOOR:
        raise ConvergenceFailure(
            f"operator is not PSD: min eigenvalue {eigenvalues.min():.3e}"
        )
    eigenvalues = np.where(eigenvalues < 0.0, 0.0, eigenvalues)
    # argmax returns the first maximal entry, so ties break to the lowest index.
    peak = np.argmax(np.abs(eigenvectors), axis=0)
    signs = np.where(eigenvectors[peak, np.arange(op.n)] < 0.0, -1.0, 1.0)
    eigenvectors = eigenvectors * signs[None, :]
    eigenvalues.setflags(write=False)
    eigenvectors.setflags(write=False)
    return SpectralDecomposition(
        eigenvalues=eigenvalues, eigenvectors=eigenvectors, source=op.variant.value
    )


def _as_columns(x0, n: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x0, dtype=np.float64)
    was_1d = x.ndim == 1
    if was_1d:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != n:
        raise DimensionMismatch(f"features must be (n, d) with n={n}, got {np.shape(x0)}")
    return x, was_1d


def exact_signal(dec: SpectralDecomposition, x0, times) -> np.ndarray:
    """Closed-form wave solution at the requested times.

    X(t) = sum_i phi_i * cos(sqrt(lambda_i) * t) * <phi_i, x0>, per feature
    column. Returns (len(times), n, d); a 1-d x0 yields (len(times), n).
    """
    x, was_1d = _as_columns(x0, dec.n)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    coeffs = dec.eigenvectors.T @ x
    omega = np.sqrt(dec.eigenvalues)
    out = np.empty((times.shape[0], dec.n, x.shape[1]))
    for k, t in enumerate(times):
        out[k] = dec.eigenvectors @ (np.cos(omega * t)[:, None] * coeffs)
    return out[:, :, 0] if was_1d else out


def exact_velocity(dec: SpectralDecomposition, x0, times) -> np.ndarray:
    """Time derivative of the closed-form solution (for energy checks)."""
    x, was_1d = _as_columns(x0, dec.n)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    coeffs = dec.eigenvectors.T @ x
    omega = np.sqrt(dec.eigenvalues)
    out = np.empty((times.shape[0], dec.n, x.shape[1]))
    for k, t in enumerate(times):
        out[k] = dec.eigenvectors @ ((-omega * np.sin(omega * t))[:, None] * coeffs)
    return out[:, :, 0] if was_1d else out


def vertex_signal(
    dec: SpectralDecomposition,
    x0,
    v: int,
    times,
    frequencies: str = "sqrt",
) -> np.ndarray:
    """Scalar signal observed at one vertex.

    frequencies="sqrt" samples the wave-equation solution (mode frequencies
    sqrt(lambda_i)); frequencies="eigenvalue" samples the cosine family with
    frequencies equal to the eigenvalues themselves, which is the encoding
    assumed by `recover_projections` (orthogonal on [0, 2*pi*k] whenever
    k*lambda_i is integral).
    """
    if not 0 <= v < dec.n:
        raise VertexOutOfRange(f"vertex {v} outside [0, {dec.n})")
    x = np.asarray(x0, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dec.n:
        raise DimensionMismatch(f"x0 must be a length-{dec.n} vector, got {x.shape}")
    if frequencies == "sqrt":
        freq = np.sqrt(dec.eigenvalues)
    elif frequencies == "eigenvalue":
        freq = dec.eigenvalues
    else:
        raise ValueError(f"frequencies must be 'sqrt' or 'eigenvalue', got {frequencies!r}")
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    coeffs = dec.eigenvectors.T @ x
    weights = dec.eigenvectors[v, :] * coeffs
    return np.cos(np.outer(times, freq)) @ weights


def moment_sequence(op: LaplacianOperator, x0, n_max: int) -> list[np.ndarray]:
    """[x0, L @ x0, ..., L^n_max @ x0] with a fixed accumulation order."""
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    x = np.asarray(x0, dtype=np.float64)
    if x.shape[0] != op.n:
        raise DimensionMismatch(f"x0 rows {x.shape[0]} != operator size {op.n}")
    moments = [x.copy()]
    for _ in range(n_max):
        moments.append(op.apply(moments[-1]))
    return moments


@dataclass(frozen=True)
class EncodingComparison:
    """Result of the moment/signal equivalence check between two encodings.

    The two agreement flags must match: moments agree up to n_max if and only
    if the exact signals agree (for n_max >= 2n the check is complete, since
    each moment sequence obeys a linear recurrence of order <= n). consistent
    records whether this equivalence held numerically.
    """

    moments_agree: bool
    signals_agree: bool
    max_moment_deviation: float
    max_signal_deviation: float
    consistent: bool


def compare_encodings(
    op_g: LaplacianOperator,
    x0_g,
    op_h: LaplacianOperator,
    x0_h,
    n_max: int,
    sample_times,
    tol: float = 1e-9,
) -> EncodingComparison:
    """Check moment-sequence agreement against exact-signal agreement.

    The k-th moments are compared relative to their worst-case growth
    max(1, eigenvalue_bound)^k times the feature scale: applying the operator
    k times amplifies both true values and floating-point noise by up to
    lambda_max^k, so a flat tolerance would misclassify kernel-adjacent
    inputs at high orders.
    """
    if op_g.n != op_h.n:
        raise DimensionMismatch(f"operators act on different vertex counts: {op_g.n} vs {op_h.n}")
    moments_g = moment_sequence(op_g, x0_g, n_max)
    moments_h = moment_sequence(op_h, x0_h, n_max)
    base = max(1.0, op_g.max_eigenvalue_bound, op_h.max_eigenvalue_bound)
    feature_scale = max(1.0, float(np.abs(moments_g[0]).max(initial=0.0)),
                        float(np.abs(moments_h[0]).max(initial=0.0)))
    max_moment_dev = 0.0
    for order, (mg, mh) in enumerate(zip(moments_g, moments_h)):
        growth = base ** order * feature_scale
        max_moment_dev = max(max_moment_dev, float(np.max(np.abs(mg - mh))) / growth)
    sig_g = exact_signal(eigendecompose(op_g), x0_g, sample_times)
    sig_h = exact_signal(eigendecompose(op_h), x0_h, sample_times)
    scale = np.maximum(1.0, np.maximum(np.abs(sig_g), np.abs(sig_h)))
    max_signal_dev = float(np.max(np.abs(sig_g - sig_h) / scale))
    moments_agree = max_moment_dev <= tol
    signals_agree = max_signal_dev <= tol
    return EncodingComparison(
        moments_agree=moments_agree,
        signals_agree=signals_agree,
        max_moment_deviation=max_moment_dev,
        max_signal_deviation=max_signal_dev,
        consistent=moments_agree == signals_agree,
    )


def receptive_field(
    dec: SpectralDecomposition,
    v: int,
    tol: float = 1e-8,
) -> ReceptiveField:
    """Eigenvector indices whose entry at v is nonzero (above tolerance).

    tol is relative to each eigenvector's max-norm. unique_spectrum reports
    whether all eigenvalue gaps exceed tol (relative to max(1, lambda_max));
    support claims downstream require it.
    """
    if not 0 <= v < dec.n:
        raise VertexOutOfRange(f"vertex {v} outside [0, {dec.n})")
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    thresholds = tol * np.max(np.abs(dec.eigenvectors), axis=0)
    members = np.flatnonzero(np.abs(dec.eigenvectors[v, :]) > thresholds)
    gap_tol = tol * max(1.0, float(dec.eigenvalues[-1]) if dec.n else 1.0)
    gaps = np.diff(dec.eigenvalues)
    unique = bool(gaps.size == 0 or np.min(gaps) > gap_tol)
    members = members.astype(np.int64)
    members.setflags(write=False)
    return ReceptiveField(vertex=v, member_indices=members, tol=tol, unique_spectrum=unique)


def recover_projections(
    signal_v,
    dec: SpectralDecomposition,
    v: int,
    k: int,
    quadrature_steps: int,
    tol: float = 1e-8,
) -> dict[int, float]:
    """Recover <phi_i, x> for every i in the receptive field of v from the
    vertex's signal alone.

    signal_v must sample the eigenvalue-frequency cosine encoding (see
    `vertex_signal(..., frequencies="eigenvalue")`) uniformly on [0, 2*pi*k],
    with at least quadrature_steps+1 points. Each projection is the trapezoid
    evaluation of (1/(pi*k)) * integral of cos(lambda_i * s) * signal(s),
    divided by the eigenvector's entry at v; the zero-eigenvalue mode gets an
    extra factor 1/2, restoring orthonormality of the cosine family (the
    constant mode integrates to 2*pi*k instead of pi*k).

    Requires k*lambda_i integral within 1e-9 and pairwise distinct
    eigenvalues; returns {eigenvector index: estimate}.
    """
    if not 0 <= v < dec.n:
        raise VertexOutOfRange(f"vertex {v} outside [0, {dec.n})")
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    scaled = k * dec.eigenvalues
    if np.max(np.abs(scaled - np.round(scaled))) > 1e-9:
        worst = int(np.argmax(np.abs(scaled - np.round(scaled))))
        raise NonIntegralSpectrum(
            f"k*lambda is not integral: k={k}, lambda={dec.eigenvalues[worst]}"
        )
    gaps = np.diff(dec.eigenvalues)
    if gaps.size and np.min(gaps) <= 1e-9:
        j = int(np.argmin(gaps))
        raise RepeatedEigenvalues(
            f"eigenvalues {dec.eigenvalues[j]} and {dec.eigenvalues[j + 1]} coincide"
        )
    sig = np.asarray(signal_v, dtype=np.float64)
    if sig.ndim != 1 or sig.shape[0] < quadrature_steps + 1:
        raise InsufficientSamples(
            f"signal must supply >= {quadrature_steps + 1} uniform samples on "
            f"[0, 2*pi*{k}], got {sig.shape}"
        )
    grid = np.linspace(0.0, 2.0 * np.pi * k, sig.shape[0])
    field = receptive_field(dec, v, tol=tol)
    estimates: dict[int, float] = {}
    for i in field.member_indices:
        lam = dec.eigenvalues[i]
        integral = np.trapezoid(np.cos(lam * grid) * sig, grid)
        value = integral / (np.pi * k) / dec.eigenvectors[v, i]
        if np.round(k * lam) == 0:
            value /= 2.0
        estimates[int(i)] = float(value)
    return estimates
