"""Training loop: losses, Adam with decoupled weight decay, LR scheduling,
early stopping, and the encode/decode pipeline glue.

The pipeline per epoch: embed features (pre-propagation placement), run the
wave encoder, decode every vertex with the shared-weight sequence model,
apply the masked loss, backpropagate through time and through the encoder's
linear adjoint into the embedding, and take one optimizer step. The wave
signal is cached across epochs whenever nothing upstream of it trains.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import decoder as dec
from .errors import EmptyMask, InvalidConfig, LabelOutOfRange, ShapeMismatch
from .graph import Graph, LaplacianOperator, LaplacianVariant, build_operator
from .wave import WaveConfig, WaveSignal, propagate, propagate_adjoint

LOSSES = ("cross_entropy", "l1")
SCHEDULES = ("constant", "reduce_on_plateau")
PLACEMENTS = ("pre", "post")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run (JSON-serializable)."""

    num_steps: int
    step_size: float
    learning_rate: float
    architecture: str = "cornn"
    num_layers: int = 1
    hidden_dim: int = 32
    activation: str = "leaky_relu"
    weight_decay: float = 0.0
    normalized_laplacian: bool = False
    self_loops: bool = False
    dropout_rate: float = 0.0
    epochs: int = 300
    seed: int = 0
    loss: str = "cross_entropy"
    schedule: str = "constant"
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_learning_rate: float = 1e-5
    early_stopping_patience: int | None = None
    embedding_placement: str = "pre"
    embedding_activation: str | None = None
    train_embedding: bool = True
    include_velocity: bool = False
    batch_nodes: int | None = None
    node_chunk_size: int = 1024
    recompute_signal: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    cornn_stiffness: float = 1.0
    cornn_damping: float = 1.0
    cornn_substep: float = 1.0

    def validate(self) -> None:
        if self.num_steps < 1:
            raise InvalidConfig(f"num_steps must be >= 1, got {self.num_steps}")
        if not self.step_size > 0:
            raise InvalidConfig(f"step_size must be > 0, got {self.step_size}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must lie in [0, 1)")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.architecture not in dec.ARCHITECTURES:
            raise InvalidConfig(f"unknown architecture {self.architecture!r}")
        if self.loss not in LOSSES:
            raise InvalidConfig(f"unknown loss {self.loss!r}")
        if self.schedule not in SCHEDULES:
            raise InvalidConfig(f"unknown schedule {self.schedule!r}")
        if self.embedding_placement not in PLACEMENTS:
            raise InvalidConfig(f"unknown embedding_placement {self.embedding_placement!r}")
        if self.include_velocity and self.embedding_placement == "pre":
            raise InvalidConfig("include_velocity requires embedding_placement='post'")
        if self.hidden_dim < 1 or self.num_layers < 1 or self.node_chunk_size < 1:
            raise InvalidConfig("hidden_dim, num_layers, node_chunk_size must be >= 1")

    @property
    def stopping_time(self) -> float:
        return self.num_steps * self.step_size

    @property
    def laplacian_variant(self) -> LaplacianVariant:
        return LaplacianVariant.from_flags(self.normalized_laplacian, self.self_loops)

    def wave_config(self) -> WaveConfig:
        return WaveConfig(num_steps=self.num_steps, step_size=self.step_size)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config key(s): {sorted(unknown)}")
        try:
            config = cls(**data)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None
        config.validate()
        return config

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainReport:
    """Per-epoch history plus the test metric at the best-val checkpoint."""

    seed: int
    config_hash: str
    metric_name: str
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_metric: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_metric: float = float("nan")
    test_metric: float | None = None
    wall_clock_seconds: float = 0.0
    stopped_early: bool = False
    split_source: str = "unspecified"

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "metric_name": self.metric_name,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "train_metric": self.train_metric,
            "val_metric": self.val_metric,
            "learning_rates": self.learning_rates,
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_val_metric,
            "test_metric": self.test_metric,
            "wall_clock_seconds": self.wall_clock_seconds,
            "stopped_early": self.stopped_early,
            "split_source": self.split_source,
        }


# --- losses ---

def masked_cross_entropy(logits: np.ndarray, labels, mask) -> tuple[float, np.ndarray]:
    """Mean over masked vertices of -log softmax(logits)[label].

    Softmax uses max-subtraction for stability. Gradients are zero off-mask.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() == 0:
        raise EmptyMask("cross entropy over an empty mask")
    idx = np.flatnonzero(mask)
    sub = logits[idx]
    lab = labels[idx].astype(np.int64)
    if (lab < 0).any() or (lab >= logits.shape[1]).any():
        raise LabelOutOfRange(
            f"labels must lie in [0, {logits.shape[1]}) on the mask"
        )
    shifted = sub - sub.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    picked = shifted[np.arange(len(idx)), lab] - np.log(exp.sum(axis=1))
    loss = float(-picked.mean())
    grad = np.zeros_like(logits)
    g = softmax
    g[np.arange(len(idx)), lab] -= 1.0
    grad[idx] = g / len(idx)
    return loss, grad


def l1_loss(pred: np.ndarray, target, mask) -> tuple[float, np.ndarray]:
    """Mean over masked vertices of the 1-norm of the residual row.

    The subgradient at an exactly zero residual entry is 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1:
        target = target[:, None]
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} != target {target.shape}")
    mask = np.asarray(mask, dtype=bool)
    m = int(mask.sum())
    if m == 0:
        raise EmptyMask("l1 loss over an empty mask")
    residual = pred[mask] - target[mask]
    loss = float(np.abs(residual).sum() / m)
    grad = np.zeros_like(pred)
    grad[mask] = np.sign(residual) / m
    return loss, grad


# --- optimizer ---

@dataclass
class AdamState:
    first_moment: dict
    second_moment: dict
    step: int = 0

    @classmethod
    def for_tensors(cls, tensors: dict) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in tensors.items()},
            second_moment={k: np.zeros_like(v) for k, v in tensors.items()},
        )


def adam_step(
    tensors: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    """One in-place Adam update with bias correction.

    Weight decay is decoupled: parameters shrink by lr*weight_decay*param
    before the Adam update, independently of the gradient moments.
    """
    if set(tensors) != set(grads):
        raise ShapeMismatch("parameter and gradient keys differ")
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for key, param in tensors.items():
        grad = grads[key]
        if grad.shape != param.shape:
            raise ShapeMismatch(f"gradient shape {grad.shape} != param {param.shape} for {key}")
        if weight_decay:
            param -= lr * weight_decay * param
        m = state.first_moment[key]
        v = state.second_moment[key]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state


# --- pipeline glue ---

def encode(
    op: LaplacianOperator,
    features: np.ndarray,
    wave_config: WaveConfig,
    params: dec.DecoderParams | None = None,
    placement: str = "pre",
    record_velocities: bool = False,
) -> WaveSignal:
    """Produce the wave signal a decoder will consume.

    placement="pre" embeds features with params before propagation (the
    sequences are hidden_dim wide); "post" propagates the raw features.
    """
    if placement == "pre":
        if params is None:
            raise InvalidConfig("pre-propagation encoding needs decoder params")
        x0 = embed_features(params, features)
    else:
        x0 = features
    return propagate(op, x0, wave_config, record_velocities=record_velocities)


def embed_features(params: dec.DecoderParams, features: np.ndarray) -> np.ndarray:
    pre = features @ params.embedding.weight + params.embedding.bias
    if params.embedding_activation is not None:
        act, _ = dec.activation_pair(params.embedding_activation)
        return act(pre)
    return pre


def decode_all(
    params: dec.DecoderParams,
    sequences: np.ndarray,
    apply_embedding: bool,
    chunk_size: int = 1024,
) -> np.ndarray:
    """Deterministic decoder outputs for every vertex, (n, d1)."""
    n = sequences.shape[1]
    out = np.empty((n, params.output_dim))
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        y, _ = dec.forward(params, sequences[:, start:stop, :],
                           apply_embedding=apply_embedding)
        out[start:stop] = y
    return out


def _decoder_sequences(signal: WaveSignal, include_velocity: bool) -> np.ndarray:
    seq = signal.positions[1:]
    if include_velocity:
        seq = np.concatenate([seq, signal.velocities[1:]], axis=2)
    return seq


def _output_dim(graph: Graph, loss: str) -> int:
    if loss == "cross_entropy":
        if graph.labels.ndim != 1:
            raise InvalidConfig("cross_entropy needs integer class labels")
        c = graph.num_classes
        if c < 1:
            raise InvalidConfig("no valid class labels present")
        return c
    return 1 if graph.labels.ndim == 1 else int(graph.labels.shape[1])


def evaluate(
    params: dec.DecoderParams,
    graph: Graph,
    signal: WaveSignal,
    mask,
    metric: str = "accuracy",
    apply_embedding: bool | None = None,
    chunk_size: int = 1024,
) -> float:
    """Accuracy (argmax, ties to the lowest class) or MAE over the mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() == 0:
        raise EmptyMask("evaluate over an empty mask")
    if apply_embedding is None:
        width = signal.width
        if width == params.input_dim:
            apply_embedding = True
        elif width == params.hidden_dim:
            apply_embedding = False
        else:
            raise InvalidConfig("cannot infer embedding placement from signal width")
    outputs = decode_all(params, _decoder_sequences(signal, False),
                         apply_embedding, chunk_size)
    return _metric_from_outputs(outputs, graph.labels, mask, metric)


def _metric_from_outputs(outputs, labels, mask, metric: str) -> float:
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if metric == "accuracy":
        pred = np.argmax(outputs[idx], axis=1)
        return float((pred == np.asarray(labels)[idx]).mean())
    if metric == "mae":
        target = np.asarray(labels, dtype=np.float64)
        if target.ndim == 1:
            target = target[:, None]
        return float(np.abs(outputs[idx] - target[idx]).mean())
    raise InvalidConfig(f"unknown metric {metric!r}")


def train(graph: Graph, config: TrainConfig, split_source: str = "unspecified"):
    """Full training run; returns (best params, TrainReport).

    Deterministic given the config seed: parameter init, dropout draws, and
    mini-batch shuffles all derive from it, and gradient reduction over node
    chunks runs in a fixed order.
    """
    config.validate()
    if graph.train_mask.sum() == 0:
        raise EmptyMask("training requires a nonempty train mask")
    started = time.perf_counter()

    op = build_operator(graph, config.laplacian_variant)
    wave_config = config.wave_config()
    metric = "accuracy" if config.loss == "cross_entropy" else "mae"
    loss_fn = masked_cross_entropy if config.loss == "cross_entropy" else l1_loss
    better = (lambda a, b: a > b) if metric == "accuracy" else (lambda a, b: a < b)

    d0 = graph.features.shape[1]
    seq_width = d0 * (2 if config.include_velocity else 1)
    input_dim = d0 if config.embedding_placement == "pre" else seq_width
    params = dec.init_params(
        config.architecture, input_dim, config.hidden_dim, _output_dim(graph, config.loss),
        num_layers=config.num_layers, activation=config.activation, seed=config.seed,
        embedding_activation=config.embedding_activation,
        stiffness=config.cornn_stiffness, damping=config.cornn_damping,
        substep=config.cornn_substep,
    )
    tensors = dec.flatten_params(params)
    if not config.train_embedding:
        # A frozen embedding must not even decay, or cached signals go stale.
        tensors = {k: v for k, v in tensors.items() if not k.startswith("embedding.")}
    state = AdamState.for_tensors(tensors)
    dropout_rng = np.random.default_rng(config.seed + 1)
    batch_rng = np.random.default_rng(config.seed + 2)

    pre_trainable = config.embedding_placement == "pre" and config.train_embedding
    apply_embedding = config.embedding_placement == "post"
    cached_sequences = None
    if not pre_trainable and not config.recompute_signal:
        signal = encode(op, graph.features, wave_config, params,
                        config.embedding_placement,
                        record_velocities=config.include_velocity)
        cached_sequences = _decoder_sequences(signal, config.include_velocity)

    report = TrainReport(seed=config.seed, config_hash=config.hash(),
                         metric_name=metric, split_source=split_source)
    lr = config.learning_rate
    betas = (config.adam_beta1, config.adam_beta2)
    best_params = dec.clone_params(params)
    best_val = None
    plateau_best = np.inf
    plateau_wait = 0
    stop_best = np.inf
    stop_wait = 0
    has_val = bool(graph.val_mask.sum())
    train_idx = np.flatnonzero(graph.train_mask)
    chunk = config.node_chunk_size

    def current_sequences():
        if cached_sequences is not None:
            return cached_sequences
        signal = encode(op, graph.features, wave_config, params,
                        config.embedding_placement,
                        record_velocities=config.include_velocity)
        return _decoder_sequences(signal, config.include_velocity)

    def train_step(sequences, step_mask):
        grads = dec.zero_gradients(params)
        n = graph.n
        outputs = np.empty((n, params.output_dim))
        tapes = []
        spans = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
        for start, stop in spans:
            rng = dropout_rng if config.dropout_rate > 0 else None
            y, tape = dec.forward(params, sequences[:, start:stop, :],
                                  dropout_rate=config.dropout_rate, rng=rng,
                                  apply_embedding=apply_embedding)
            outputs[start:stop] = y
            tapes.append(tape)
        loss, dout = loss_fn(outputs, graph.labels, step_mask)
        d_seq = np.empty_like(sequences) if pre_trainable else None
        for (start, stop), tape in zip(spans, tapes):
            gs = dec.backward(params, tape, dout[start:stop])
            for key in grads:
                grads[key] += gs.tensors[key]
            if pre_trainable:
                d_seq[:, start:stop, :] = gs.input_sequence
        if pre_trainable:
            grad_positions = np.zeros(
                (config.num_steps + 1, n, params.hidden_dim))
            grad_positions[1:] = d_seq
            d_embedded = propagate_adjoint(op, grad_positions, wave_config)
            if params.embedding_activation is not None:
                _, actd = dec.activation_pair(params.embedding_activation)
                pre = graph.features @ params.embedding.weight + params.embedding.bias
                d_embedded = d_embedded * actd(pre)
            grads["embedding.weight"] = graph.features.T @ d_embedded
            grads["embedding.bias"] = d_embedded.sum(axis=0)
        return loss, grads

    for epoch in range(config.epochs):
        if config.batch_nodes is None:
            sequences = current_sequences()
            _, grads = train_step(sequences, graph.train_mask)
            adam_step(tensors, {k: grads[k] for k in tensors}, state, lr, betas,
                      config.adam_eps, config.weight_decay)
        else:
            order = batch_rng.permutation(train_idx)
            for start in range(0, len(order), config.batch_nodes):
                batch_mask = np.zeros(graph.n, dtype=bool)
                batch_mask[order[start:start + config.batch_nodes]] = True
                sequences = current_sequences()
                _, grads = train_step(sequences, batch_mask)
                adam_step(tensors, {k: grads[k] for k in tensors}, state, lr,
                          betas, config.adam_eps, config.weight_decay)

        # Clean evaluation pass (dropout off) on the updated parameters.
        sequences = current_sequences()
        outputs = decode_all(params, sequences, apply_embedding, chunk)
        train_loss, _ = loss_fn(outputs, graph.labels, graph.train_mask)
        train_metric = _metric_from_outputs(outputs, graph.labels, graph.train_mask, metric)
        if has_val:
            val_loss, _ = loss_fn(outputs, graph.labels, graph.val_mask)
            val_metric = _metric_from_outputs(outputs, graph.labels, graph.val_mask, metric)
        else:
            val_loss, val_metric = train_loss, train_metric
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.train_metric.append(train_metric)
        report.val_metric.append(val_metric)
        report.learning_rates.append(lr)

        if best_val is None or better(val_metric, best_val):
            best_val = val_metric
            report.best_epoch = epoch
            best_params = dec.clone_params(params)

        if config.schedule == "reduce_on_plateau":
            if val_loss < plateau_best - 1e-12:
                plateau_best = val_loss
                plateau_wait = 0
            else:
                plateau_wait += 1
                if plateau_wait >= config.plateau_patience:
                    lr = max(lr * config.plateau_factor, config.min_learning_rate)
                    plateau_wait = 0
        if config.early_stopping_patience is not None:
            if val_loss < stop_best - 1e-12:
                stop_best = val_loss
                stop_wait = 0
            else:
                stop_wait += 1
                if stop_wait >= config.early_stopping_patience:
                    report.stopped_early = True
                    break

    report.best_val_metric = best_val if best_val is not None else float("nan")
    if graph.test_mask.sum():
        if pre_trainable:
            best_signal = encode(op, graph.features, wave_config, best_params, "pre")
            best_sequences = _decoder_sequences(best_signal, False)
        elif cached_sequences is not None:
            best_sequences = cached_sequences
        else:
            best_sequences = current_sequences()
        outputs = decode_all(best_params, best_sequences, apply_embedding, chunk)
        report.test_metric = _metric_from_outputs(outputs, graph.labels,
                                                  graph.test_mask, metric)
    report.wall_clock_seconds = time.perf_counter() - started
    return best_params, report
