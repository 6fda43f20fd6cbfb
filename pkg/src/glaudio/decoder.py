"""Trainable sequence decoders with exact backpropagation through time.

Three architectures (simple recurrent cell, LSTM, coupled-oscillator cell)
share the same surface: an initial node-wise linear embedding, a stack of
recurrent layers, and a linear head read out at the final step. Weights are
shared across all vertices; a batch axis carries the vertices.

All arithmetic is float64 numpy; gradients are hand-derived and verified
against central finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import BadDimensions, DimensionMismatch, TapeMismatch, VersionMismatch

ARCHITECTURES = ("rnn", "lstm", "cornn")

CHECKPOINT_VERSION = 1

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_deriv(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0.0).astype(np.float64)),
    "leaky_relu": (
        lambda x: np.where(x > 0.0, x, 0.01 * x),
        lambda x: np.where(x > 0.0, 1.0, 0.01),
    ),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "gelu": (_gelu, _gelu_deriv),
}


def activation_pair(name: str):
    """(function, derivative) pair for a named activation."""
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise BadDimensions(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None


@dataclass
class Linear:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)


@dataclass
class RnnLayer:
    state_w: np.ndarray  # (q, q), multiplies the previous hidden state
    input_w: np.ndarray  # (d_in, q)
    bias: np.ndarray  # (q,)


@dataclass
class LstmLayer:
    input_w: np.ndarray  # (d_in, 4q), gate order: input, forget, cell, output
    state_w: np.ndarray  # (q, 4q)
    bias: np.ndarray  # (4q,)


@dataclass
class CornnLayer:
    """Coupled-oscillator recurrence with fixed scalar coefficients.

    z' = z + substep * (act(y @ state_w + z @ velocity_w + u @ input_w + bias)
                        - stiffness * y - damping * z)
    y' = y + substep * z'
    """

    state_w: np.ndarray  # (q, q)
    velocity_w: np.ndarray  # (q, q)
    input_w: np.ndarray  # (d_in, q)
    bias: np.ndarray  # (q,)
    stiffness: float = 1.0
    damping: float = 1.0
    substep: float = 1.0


@dataclass
class DecoderParams:
    architecture: str
    activation: str
    embedding: Linear
    layers: list
    head: Linear
    embedding_activation: str | None = None

    @property
    def input_dim(self) -> int:
        return int(self.embedding.weight.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.embedding.weight.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.head.weight.shape[1])

    @property
    def num_layers(self) -> int:
        return len(self.layers)


@dataclass
class GradientSet:
    """Gradients for every parameter tensor, keyed like flatten_params.

    input_sequence additionally carries the gradient w.r.t. the sequence that
    was passed to forward(); the trainer pushes it through the encoder's
    adjoint when the embedding is applied before propagation.
    """

    tensors: dict
    input_sequence: np.ndarray | None = None


def flatten_params(params: DecoderParams) -> dict:
    """Live views of every parameter array, in declared order."""
    out = {"embedding.weight": params.embedding.weight, "embedding.bias": params.embedding.bias}
    for i, layer in enumerate(params.layers):
        if isinstance(layer, RnnLayer):
            names = ("state_w", "input_w", "bias")
        elif isinstance(layer, LstmLayer):
            names = ("input_w", "state_w", "bias")
        else:
            names = ("state_w", "velocity_w", "input_w", "bias")
        for name in names:
            out[f"layers.{i}.{name}"] = getattr(layer, name)
    out["head.weight"] = params.head.weight
    out["head.bias"] = params.head.bias
    return out


def zero_gradients(params: DecoderParams) -> dict:
    return {k: np.zeros_like(v) for k, v in flatten_params(params).items()}


def clone_params(params: DecoderParams) -> DecoderParams:
    layers = []
    for layer in params.layers:
        if isinstance(layer, RnnLayer):
            layers.append(RnnLayer(layer.state_w.copy(), layer.input_w.copy(), layer.bias.copy()))
        elif isinstance(layer, LstmLayer):
            layers.append(LstmLayer(layer.input_w.copy(), layer.state_w.copy(), layer.bias.copy()))
        else:
            layers.append(CornnLayer(layer.state_w.copy(), layer.velocity_w.copy(),
                                     layer.input_w.copy(), layer.bias.copy(),
                                     layer.stiffness, layer.damping, layer.substep))
    return DecoderParams(
        architecture=params.architecture,
        activation=params.activation,
        embedding=Linear(params.embedding.weight.copy(), params.embedding.bias.copy()),
        layers=layers,
        head=Linear(params.head.weight.copy(), params.head.bias.copy()),
        embedding_activation=params.embedding_activation,
    )


def parameter_count(params: DecoderParams) -> int:
    return sum(int(a.size) for a in flatten_params(params).values())


def init_params(
    architecture: str,
    input_dim: int,
    hidden_dim: int,
    output_dim: int,
    num_layers: int = 1,
    activation: str = "tanh",
    seed: int = 0,
    embedding_activation: str | None = None,
    stiffness: float = 1.0,
    damping: float = 1.0,
    substep: float = 1.0,
) -> DecoderParams:
    """Deterministic Glorot-uniform initialization from the seed.

    Biases start at zero except the LSTM forget gate (1.0). The coupled-
    oscillator scalars are fixed (not trained) but configurable.
    """
    if architecture not in ARCHITECTURES:
        raise BadDimensions(f"unknown architecture {architecture!r}; expected {ARCHITECTURES}")
    if min(input_dim, hidden_dim, output_dim) < 1 or num_layers < 1:
        raise BadDimensions(
            f"dimensions must be positive: input={input_dim} hidden={hidden_dim} "
            f"output={output_dim} layers={num_layers}"
        )
    activation_pair(activation)
    if embedding_activation is not None:
        activation_pair(embedding_activation)
    rng = np.random.default_rng(seed)

    def glorot(d_in, d_out):
        bound = np.sqrt(6.0 / (d_in + d_out))
        return rng.uniform(-bound, bound, size=(d_in, d_out))

    q = hidden_dim
    embedding = Linear(glorot(input_dim, q), np.zeros(q))
    layers = []
    for _ in range(num_layers):
        if architecture == "rnn":
            layers.append(RnnLayer(glorot(q, q), glorot(q, q), np.zeros(q)))
        elif architecture == "lstm":
            bias = np.zeros(4 * q)
            bias[q:2 * q] = 1.0
            layers.append(LstmLayer(glorot(q, 4 * q), glorot(q, 4 * q), bias))
        else:
            layers.append(CornnLayer(glorot(q, q), glorot(q, q), glorot(q, q), np.zeros(q),
                                     stiffness=stiffness, damping=damping, substep=substep))
    head = Linear(glorot(q, output_dim), np.zeros(output_dim))
    return DecoderParams(
        architecture=architecture,
        activation=activation,
        embedding=embedding,
        layers=layers,
        head=head,
        embedding_activation=embedding_activation,
    )


def cornn_step(state: tuple, u: np.ndarray, layer: CornnLayer, activation: str = "tanh"):
    """One coupled-oscillator update; state is the (y, z) pair."""
    y, z = state
    act, _ = activation_pair(activation)
    a = y @ layer.state_w + z @ layer.velocity_w + u @ layer.input_w + layer.bias
    z_new = z + layer.substep * (act(a) - layer.stiffness * y - layer.damping * z)
    y_new = y + layer.substep * z_new
    return y_new, z_new


@dataclass
class Tape:
    """Cached activations from one forward() call, consumed by backward()."""

    params_id: int
    had_batch: bool
    apply_embedding: bool
    raw_inputs: np.ndarray  # the sequence as passed, batched (N, B, d)
    embed_pre: np.ndarray | None  # embedding pre-activation, when nonlinear
    drop_masks: np.ndarray | None  # (N, B, q) inverted-dropout scales
    head_mask: np.ndarray | None  # (B, q)
    layer_inputs: list = field(default_factory=list)  # per layer, (N, B, d_in)
    layer_caches: list = field(default_factory=list)
    final_state: np.ndarray | None = None  # post-dropout state fed to the head


def _check_batched(sequence) -> tuple[np.ndarray, bool]:
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim == 2:
        return seq[:, None, :], False
    if seq.ndim == 3:
        return seq, True
    raise DimensionMismatch(f"sequence must be (N, d) or (N, B, d), got {seq.shape}")


def _rnn_forward(layer: RnnLayer, inputs: np.ndarray, activation: str):
    act, _ = activation_pair(activation)
    num, batch, _ = inputs.shape
    q = layer.bias.shape[0]
    preacts = np.empty((num, batch, q))
    states = np.zeros((num + 1, batch, q))
    drive = inputs @ layer.input_w + layer.bias
    for t in range(num):
        preacts[t] = states[t] @ layer.state_w + drive[t]
        states[t + 1] = act(preacts[t])
    return states[1:], {"preacts": preacts, "states": states}


def _rnn_backward(layer: RnnLayer, inputs, cache, d_out, activation: str):
    _, actd = activation_pair(activation)
    num, batch, _ = inputs.shape
    preacts, states = cache["preacts"], cache["states"]
    d_state_w = np.zeros_like(layer.state_w)
    d_input_w = np.zeros_like(layer.input_w)
    d_bias = np.zeros_like(layer.bias)
    d_in = np.empty_like(inputs)
    ds_next = np.zeros((batch, layer.bias.shape[0]))
    for t in range(num - 1, -1, -1):
        da = (d_out[t] + ds_next) * actd(preacts[t])
        d_state_w += states[t].T @ da
        d_input_w += inputs[t].T @ da
        d_bias += da.sum(axis=0)
        d_in[t] = da @ layer.input_w.T
        ds_next = da @ layer.state_w.T
    return {"state_w": d_state_w, "input_w": d_input_w, "bias": d_bias}, d_in


def _lstm_forward(layer: LstmLayer, inputs: np.ndarray, activation: str):
    # Gate nonlinearities are the standard sigmoid/tanh; the configurable
    # activation plays no role inside the cell.
    num, batch, _ = inputs.shape
    q = layer.bias.shape[0] // 4
    gates = np.empty((num, batch, 4 * q))
    cells = np.zeros((num + 1, batch, q))
    hiddens = np.zeros((num + 1, batch, q))
    tanh_c = np.empty((num, batch, q))
    drive = inputs @ layer.input_w + layer.bias
    for t in range(num):
        z = drive[t] + hiddens[t] @ layer.state_w
        zi, zf, zg, zo = z[:, :q], z[:, q:2 * q], z[:, 2 * q:3 * q], z[:, 3 * q:]
        i = 1.0 / (1.0 + np.exp(-zi))
        f = 1.0 / (1.0 + np.exp(-zf))
        g = np.tanh(zg)
        o = 1.0 / (1.0 + np.exp(-zo))
        gates[t] = np.concatenate([i, f, g, o], axis=1)
        cells[t + 1] = f * cells[t] + i * g
        tanh_c[t] = np.tanh(cells[t + 1])
        hiddens[t + 1] = o * tanh_c[t]
    return hiddens[1:], {"gates": gates, "cells": cells, "hiddens": hiddens, "tanh_c": tanh_c}


def _lstm_backward(layer: LstmLayer, inputs, cache, d_out, activation: str):
    num, batch, _ = inputs.shape
    q = layer.bias.shape[0] // 4
    gates, cells, hiddens, tanh_c = (
        cache["gates"], cache["cells"], cache["hiddens"], cache["tanh_c"],
    )
    d_input_w = np.zeros_like(layer.input_w)
    d_state_w = np.zeros_like(layer.state_w)
    d_bias = np.zeros_like(layer.bias)
    d_in = np.empty_like(inputs)
    dh_next = np.zeros((batch, q))
    dc_next = np.zeros((batch, q))
    for t in range(num - 1, -1, -1):
        i, f, g, o = (gates[t, :, :q], gates[t, :, q:2 * q],
                      gates[t, :, 2 * q:3 * q], gates[t, :, 3 * q:])
        dh = d_out[t] + dh_next
        do = dh * tanh_c[t]
        dc = dc_next + dh * o * (1.0 - tanh_c[t] ** 2)
        di = dc * g
        df = dc * cells[t]
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g ** 2), do * o * (1.0 - o)],
            axis=1,
        )
        d_input_w += inputs[t].T @ dz
        d_state_w += hiddens[t].T @ dz
        d_bias += dz.sum(axis=0)
        d_in[t] = dz @ layer.input_w.T
        dh_next = dz @ layer.state_w.T
    return {"input_w": d_input_w, "state_w": d_state_w, "bias": d_bias}, d_in


def _cornn_forward(layer: CornnLayer, inputs: np.ndarray, activation: str):
    act, _ = activation_pair(activation)
    num, batch, _ = inputs.shape
    q = layer.bias.shape[0]
    preacts = np.empty((num, batch, q))
    ys = np.zeros((num + 1, batch, q))
    zs = np.zeros((num + 1, batch, q))
    drive = inputs @ layer.input_w + layer.bias
    dt, gamma, eps = layer.substep, layer.stiffness, layer.damping
    for t in range(num):
        preacts[t] = ys[t] @ layer.state_w + zs[t] @ layer.velocity_w + drive[t]
        zs[t + 1] = zs[t] + dt * (act(preacts[t]) - gamma * ys[t] - eps * zs[t])
        ys[t + 1] = ys[t] + dt * zs[t + 1]
    return ys[1:], {"preacts": preacts, "ys": ys, "zs": zs}


def _cornn_backward(layer: CornnLayer, inputs, cache, d_out, activation: str):
    _, actd = activation_pair(activation)
    num, batch, _ = inputs.shape
    preacts, ys, zs = cache["preacts"], cache["ys"], cache["zs"]
    d_state_w = np.zeros_like(layer.state_w)
    d_velocity_w = np.zeros_like(layer.velocity_w)
    d_input_w = np.zeros_like(layer.input_w)
    d_bias = np.zeros_like(layer.bias)
    d_in = np.empty_like(inputs)
    dt, gamma, eps = layer.substep, layer.stiffness, layer.damping
    dy_next = np.zeros((batch, layer.bias.shape[0]))
    dz_next = np.zeros_like(dy_next)
    for t in range(num - 1, -1, -1):
        dy = d_out[t] + dy_next
        dz = dz_next + dt * dy
        da = (dt * dz) * actd(preacts[t])
        d_state_w += ys[t].T @ da
        d_velocity_w += zs[t].T @ da
        d_input_w += inputs[t].T @ da
        d_bias += da.sum(axis=0)
        d_in[t] = da @ layer.input_w.T
        dy_next = dy - dt * gamma * dz + da @ layer.state_w.T
        dz_next = (1.0 - dt * eps) * dz + da @ layer.velocity_w.T
    return {
        "state_w": d_state_w, "velocity_w": d_velocity_w,
        "input_w": d_input_w, "bias": d_bias,
    }, d_in


_LAYER_FWD = {"rnn": _rnn_forward, "lstm": _lstm_forward, "cornn": _cornn_forward}
_LAYER_BWD = {"rnn": _rnn_backward, "lstm": _lstm_backward, "cornn": _cornn_backward}


def forward(
    params: DecoderParams,
    sequence,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    apply_embedding: bool = True,
) -> tuple[np.ndarray, Tape]:
    """Run the decoder over a sequence and return the final-step output.

    sequence is (N, d) for a single vertex or (N, B, d) for a batch of
    vertices sharing the weights. With apply_embedding=False the sequence is
    taken as already embedded (the pre-propagation pipeline), and must have
    width hidden_dim. Dropout (inverted scaling) is applied to the embedded
    input at each step and to the pre-head state; it requires an rng, and
    without one the call is a pure deterministic function.
    """
    seq, had_batch = _check_batched(sequence)
    if dropout_rate > 0.0 and rng is None:
        raise ValueError("dropout_rate > 0 requires an rng (training mode)")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")

    if apply_embedding:
        if seq.shape[2] != params.input_dim:
            raise DimensionMismatch(
                f"sequence width {seq.shape[2]} != embedding input {params.input_dim}"
            )
        embed_pre = seq @ params.embedding.weight + params.embedding.bias
        if params.embedding_activation is not None:
            act, _ = activation_pair(params.embedding_activation)
            embedded = act(embed_pre)
        else:
            embedded, embed_pre = embed_pre, None
    else:
        if seq.shape[2] != params.hidden_dim:
            raise DimensionMismatch(
                f"pre-embedded sequence width {seq.shape[2]} != hidden {params.hidden_dim}"
            )
        embedded, embed_pre = seq, None

    drop_masks = None
    if dropout_rate > 0.0:
        keep = 1.0 - dropout_rate
        drop_masks = (rng.random(embedded.shape) < keep).astype(np.float64) / keep
        embedded = embedded * drop_masks

    tape = Tape(
        params_id=id(params),
        had_batch=had_batch,
        apply_embedding=apply_embedding,
        raw_inputs=seq,
        embed_pre=embed_pre,
        drop_masks=drop_masks,
        head_mask=None,
    )
    layer_fwd = _LAYER_FWD[params.architecture]
    current = embedded
    for layer in params.layers:
        tape.layer_inputs.append(current)
        current, cache = layer_fwd(layer, current, params.activation)
        tape.layer_caches.append(cache)

    state = current[-1]
    if dropout_rate > 0.0:
        keep = 1.0 - dropout_rate
        tape.head_mask = (rng.random(state.shape) < keep).astype(np.float64) / keep
        state = state * tape.head_mask
    tape.final_state = state
    output = state @ params.head.weight + params.head.bias
    return (output if had_batch else output[0]), tape


def backward(params: DecoderParams, tape: Tape, output_grad) -> GradientSet:
    """Exact gradients of <output_grad, y_N> for every parameter tensor.

    Also fills GradientSet.input_sequence, the gradient w.r.t. the sequence
    argument of the matching forward() call.
    """
    if tape.params_id != id(params):
        raise TapeMismatch("tape was produced by a different params object")
    grad = np.asarray(output_grad, dtype=np.float64)
    if not tape.had_batch:
        grad = grad[None, :]
    batch = tape.raw_inputs.shape[1]
    if grad.shape != (batch, params.output_dim):
        raise DimensionMismatch(
            f"output_grad shape {grad.shape} != ({batch}, {params.output_dim})"
        )

    tensors = zero_gradients(params)
    tensors["head.weight"] += tape.final_state.T @ grad
    tensors["head.bias"] += grad.sum(axis=0)
    d_state = grad @ params.head.weight.T
    if tape.head_mask is not None:
        d_state = d_state * tape.head_mask

    num = tape.raw_inputs.shape[0]
    layer_bwd = _LAYER_BWD[params.architecture]
    d_seq = np.zeros((num, batch, params.hidden_dim))
    d_seq[num - 1] = d_state
    for i in range(params.num_layers - 1, -1, -1):
        layer_grads, d_seq = layer_bwd(
            params.layers[i], tape.layer_inputs[i], tape.layer_caches[i],
            d_seq, params.activation,
        )
        for name, arr in layer_grads.items():
            tensors[f"layers.{i}.{name}"] += arr

    if tape.drop_masks is not None:
        d_seq = d_seq * tape.drop_masks

    if tape.apply_embedding:
        if params.embedding_activation is not None:
            _, actd = activation_pair(params.embedding_activation)
            d_pre = d_seq * actd(tape.embed_pre)
        else:
            d_pre = d_seq
        flat_in = tape.raw_inputs.reshape(-1, params.input_dim)
        flat_dpre = d_pre.reshape(-1, params.hidden_dim)
        tensors["embedding.weight"] += flat_in.T @ flat_dpre
        tensors["embedding.bias"] += flat_dpre.sum(axis=0)
        d_input = d_pre @ params.embedding.weight.T
    else:
        d_input = d_seq

    if not tape.had_batch:
        d_input = d_input[:, 0, :]
    return GradientSet(tensors=tensors, input_sequence=d_input)


def save_checkpoint(params: DecoderParams, path, seed_lineage=()) -> None:
    """Versioned JSON checkpoint: architecture tag, dimensions, seed lineage,
    and the flat parameter arrays in declared order."""
    arrays = flatten_params(params)
    scalars = {}
    if params.architecture == "cornn":
        layer = params.layers[0]
        scalars = {"stiffness": layer.stiffness, "damping": layer.damping,
                   "substep": layer.substep}
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": params.architecture,
        "activation": params.activation,
        "embedding_activation": params.embedding_activation,
        "dims": {
            "input_dim": params.input_dim,
            "hidden_dim": params.hidden_dim,
            "output_dim": params.output_dim,
            "num_layers": params.num_layers,
        },
        "scalars": scalars,
        "seed_lineage": list(seed_lineage),
        "arrays": {k: v.tolist() for k, v in arrays.items()},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[DecoderParams, dict]:
    """Inverse of save_checkpoint; returns (params, metadata)."""
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint format_version {version!r} unsupported")
    dims = payload["dims"]
    params = init_params(
        payload["architecture"], dims["input_dim"], dims["hidden_dim"],
        dims["output_dim"], dims["num_layers"], payload["activation"],
        embedding_activation=payload.get("embedding_activation"),
        **payload.get("scalars", {}),
    )
    arrays = flatten_params(params)
    for key, value in payload["arrays"].items():
        arr = np.asarray(value, dtype=np.float64)
        if key not in arrays or arrays[key].shape != arr.shape:
            raise VersionMismatch(f"checkpoint array {key!r} does not fit the declared dims")
        arrays[key][...] = arr
    meta = {"seed_lineage": payload.get("seed_lineage", [])}
    return params, meta
