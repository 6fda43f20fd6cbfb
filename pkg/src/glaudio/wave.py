"""Discrete wave propagation: the implicit-explicit (symplectic Euler) scheme.

A step updates velocity from the current position, then position from the new
velocity:

    V_{i+1} = V_i - h * (L @ X_i)
    X_{i+1} = X_i + h * V_{i+1}

starting from X_0 = x and V_0 = 0. The scheme is linear in x, so its exact
adjoint is the transposed recurrence (`propagate_adjoint`), used to push loss
gradients from decoder input sequences back into trainable embeddings.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, StabilityWarning, TimeOutOfRange, VertexOutOfRange
from .graph import LaplacianOperator


@dataclass(frozen=True)
class WaveConfig:
    """Time grid of the integrator: num_steps * step_size = stopping_time."""

    num_steps: int
    step_size: float
    stopping_time: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.stopping_time is None:
            object.__setattr__(self, "stopping_time", self.num_steps * self.step_size)
        else:
            expected = self.num_steps * self.step_size
            if abs(self.stopping_time - expected) > 1e-12 * max(abs(expected), 1.0):
                raise ValueError(
                    f"stopping_time {self.stopping_time} != num_steps * step_size {expected}"
                )

    @classmethod
    def from_time(cls, num_steps: int, stopping_time: float) -> "WaveConfig":
        return cls(num_steps=num_steps, step_size=stopping_time / num_steps,
                   stopping_time=stopping_time)

    def is_stable(self, max_eigenvalue_bound: float) -> bool:
        return self.step_size * math.sqrt(max(max_eigenvalue_bound, 0.0)) < 2.0


@dataclass(frozen=True)
class WaveSignal:
    """Recorded trajectory X^0..X^N (and V^0..V^N unless streaming).

    positions has shape (N+1, n, d); velocities matches, or is None when the
    signal was produced with record_velocities=False.
    """

    positions: np.ndarray
    velocities: np.ndarray | None
    config: WaveConfig

    @property
    def n(self) -> int:
        return int(self.positions.shape[1])

    @property
    def width(self) -> int:
        return int(self.positions.shape[2])


def _as_features(x0, n: int) -> np.ndarray:
    x = np.asarray(x0, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != n:
        raise DimensionMismatch(f"features must be (n, d) with n={n}, got {x.shape}")
    return x


def propagate(
    op: LaplacianOperator,
    x0,
    config: WaveConfig,
    record_velocities: bool = True,
) -> WaveSignal:
    """Run the integrator for all N steps and record every snapshot.

    Deterministic: no randomness, fixed accumulation order. Emits a
    StabilityWarning (non-fatal) when h * sqrt(max_eigenvalue_bound) >= 2.
    record_velocities=False is the streaming mode for training on large N;
    it halves the memory and drops only the velocity snapshots.
    """
    x = _as_features(x0, op.n)
    if not config.is_stable(op.max_eigenvalue_bound):
        warnings.warn(
            f"h*sqrt(max_eigenvalue_bound) = "
            f"{config.step_size * math.sqrt(op.max_eigenvalue_bound):.3f} >= 2; "
            "the integrator may be unstable",
            StabilityWarning,
            stacklevel=2,
        )
    h = config.step_size
    num = config.num_steps
    positions = np.empty((num + 1, *x.shape), dtype=np.float64)
    velocities = np.empty_like(positions) if record_velocities else None
    positions[0] = x
    if record_velocities:
        velocities[0] = 0.0
    cur_x = x.copy()
    cur_v = np.zeros_like(x)
    for i in range(num):
        cur_v -= h * op.apply(cur_x)
        cur_x = cur_x + h * cur_v
        positions[i + 1] = cur_x
        if record_velocities:
            velocities[i + 1] = cur_v
    positions.setflags(write=False)
    if record_velocities:
        velocities.setflags(write=False)
    return WaveSignal(positions=positions, velocities=velocities, config=config)


def propagate_adjoint(
    op: LaplacianOperator,
    grad_positions: np.ndarray,
    config: WaveConfig,
    grad_velocities: np.ndarray | None = None,
) -> np.ndarray:
    """Exact gradient of the propagation w.r.t. the initial features.

    grad_positions[i] is the loss gradient w.r.t. the recorded X^i (index 0
    usually zero since decoders start at X^1); grad_velocities optionally
    supplies direct gradients w.r.t. V^i. Returns the (n, d) gradient w.r.t.
    x0, reversing the recurrence with the same sparse products (L symmetric).
    """
    g = np.asarray(grad_positions, dtype=np.float64)
    num = config.num_steps
    if g.shape[0] != num + 1 or g.shape[1] != op.n:
        raise DimensionMismatch(
            f"grad_positions must be (N+1, n, d) = ({num + 1}, {op.n}, d), got {g.shape}"
        )
    gv = None
    if grad_velocities is not None:
        gv = np.asarray(grad_velocities, dtype=np.float64)
        if gv.shape != g.shape:
            raise DimensionMismatch("grad_velocities shape must match grad_positions")
    h = config.step_size
    ax = g[num].copy()
    av = np.zeros_like(ax)
    for i in range(num - 1, -1, -1):
        av += h * ax
        if gv is not None:
            av += gv[i + 1]
        ax = ax - h * op.apply(av) + g[i]
    return ax


def sample_step_function(signal: WaveSignal, v: int, t: float):
    """Evaluate the integrator's step function at vertex v and time t.

    The step function assigns X^1 on (0, h] and X^i on ((i-1)h, ih]; t must
    lie in (0, T].
    """
    config = signal.config
    if not 0 <= v < signal.n:
        raise VertexOutOfRange(f"vertex {v} outside [0, {signal.n})")
    if not (t > 0 and t <= config.stopping_time * (1 + 1e-12)):
        raise TimeOutOfRange(f"t = {t} outside (0, {config.stopping_time}]")
    i = int(math.ceil(t / config.step_size - 1e-12))
    i = min(max(i, 1), config.num_steps)
    return signal.positions[i, v].copy()


def node_sequence(
    signal: WaveSignal,
    v: int,
    include_velocity: bool = False,
    include_initial: bool = False,
) -> np.ndarray:
    """Per-vertex decoder input: X^1_v .. X^N_v as an (N, d) array.

    include_velocity concatenates V^i_v (doubling the width); include_initial
    prepends X^0_v (the raw feature row), giving N+1 rows.
    """
    if not 0 <= v < signal.n:
        raise VertexOutOfRange(f"vertex {v} outside [0, {signal.n})")
    start = 0 if include_initial else 1
    seq = signal.positions[start:, v, :]
    if include_velocity:
        if signal.velocities is None:
            raise DimensionMismatch("signal was recorded without velocities")
        seq = np.concatenate([seq, signal.velocities[start:, v, :]], axis=1)
    return seq.copy()


def node_sequences(signal: WaveSignal, include_initial: bool = False) -> np.ndarray:
    """All decoder input sequences at once, shape (N, n, d)."""
    start = 0 if include_initial else 1
    return signal.positions[start:]
