"""Graph convolutional classifier and pair-similarity model.

The model stacks graph convolutions ``ReLU(N Z theta)`` with the
symmetrically normalized adjacency ``N = D^{-1/2} (A + I) D^{-1/2}``,
selects the top scoring nodes with an attention pooling layer, and reads
the graph embedding out with a column-wise max.  Two heads share that
backbone:

* ``classify``: a linear layer to two logits and a softmax.
* ``pair``: cosine similarity between two graph embeddings with a
  decision boundary ``delta``.

Training is plain minibatch descent (Adam by default) over the summed
batch loss, fully determined by the seed in :class:`ModelConfig`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FEATURE_DIM = 16
_CHECKPOINT_FORMAT = "netpoison-checkpoint"
_CHECKPOINT_VERSION = 1

HEADS = ("classify", "pair")
OPTIMIZERS = ("adam", "sgd")


class GnnError(ValueError):
    pass


class ZeroEmbeddingError(GnnError):
    """Cosine similarity is undefined for a zero-norm embedding."""


class CheckpointError(GnnError):
    pass


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch where it happened."""

    def __init__(self, epoch: int, loss: float) -> None:
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch


@dataclass
class ModelConfig:
    head: str = "classify"
    layers: int = 2
    hidden: tuple[int, ...] = (32, 32)
    pool_ratio: float = 0.8
    dropout: float = 0.0
    delta: float = 0.5
    epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    feature_dim: int = FEATURE_DIM

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.head not in HEADS:
            raise GnnError(f"unknown head {self.head!r}")
        if self.optimizer not in OPTIMIZERS:
            raise GnnError(f"unknown optimizer {self.optimizer!r}")
        if self.layers < 1:
            raise GnnError("layers must be at least 1")
        if len(self.hidden) != self.layers:
            raise GnnError(
                f"hidden has {len(self.hidden)} sizes for {self.layers} layers"
            )
        if any(h < 1 for h in self.hidden):
            raise GnnError("hidden sizes must be positive")
        if not 0.0 < self.pool_ratio <= 1.0:
            raise GnnError("pool_ratio must be in (0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise GnnError("dropout must be in [0, 1)")
        if self.epochs < 0:
            raise GnnError("epochs must be non-negative")
        if self.batch_size < 1:
            raise GnnError("batch_size must be positive")
        if self.learning_rate <= 0.0:
            raise GnnError("learning_rate must be positive")
        if self.feature_dim < 1:
            raise GnnError("feature_dim must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise GnnError(f"unknown model config keys: {', '.join(extra)}")
        return cls(**d)


@dataclass
class ModelParams:
    """Named weight arrays; the dict order is the canonical order."""

    arrays: dict[str, np.ndarray]

    def names(self) -> tuple[str, ...]:
        return tuple(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})


@dataclass
class Embedding:
    """A graph-level embedding vector."""

    vector: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass
class TrainResult:
    params: ModelParams
    config: ModelConfig
    # One row per epoch: (epoch index, mean per-sample loss, train accuracy).
    loss_trace: list[tuple[int, float, float]]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    prev = config.feature_dim
    for i, width in enumerate(config.hidden):
        shapes[f"gcn{i}"] = (prev, width)
        prev = width
    shapes["score"] = (prev, 1)
    if config.head == "classify":
        shapes["head_w"] = (prev, 2)
        shapes["head_b"] = (1, 2)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator | None = None) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn in canonical name order."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name == "head_b":
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = _glorot(rng, shape[0], shape[1])
    return ModelParams(arrays)


def norm_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2} with self loops added."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GnnError("adjacency must be a square matrix")
    a_hat = a + np.eye(a.shape[0])
    # Self loops make every degree at least 1, so no division guard needed.
    deg = a_hat.sum(axis=1)
    return a_hat / np.sqrt(np.outer(deg, deg))


def gcn_layer(features: np.ndarray, adjacency: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """One graph convolution: ReLU(N Z theta)."""
    n = norm_adjacency(adjacency)
    return np.maximum(n @ np.asarray(features, dtype=np.float64) @ theta, 0.0)


def topk_pool(
    features: np.ndarray,
    adjacency: np.ndarray,
    score_weights: np.ndarray,
    ratio: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Keep the ceil(ratio * n) best-scoring nodes.

    Scores are tanh(N Z w).  Kept rows are scaled by their score, ties
    prefer the lower node index, and the kept indices stay in ascending
    order.  Returns (pooled features, pooled adjacency, kept indices,
    all scores).
    """
    z = np.asarray(features, dtype=np.float64)
    a = np.asarray(adjacency, dtype=np.float64)
    alpha = np.tanh(norm_adjacency(a) @ z @ np.asarray(score_weights, dtype=np.float64))
    perm = _top_indices(alpha.reshape(-1), ratio)
    pooled = z[perm] * alpha[perm]
    return pooled, a[np.ix_(perm, perm)], perm, alpha.reshape(-1)


def _top_indices(scores: np.ndarray, ratio: float) -> np.ndarray:
    n = scores.shape[0]
    if n == 0:
        raise GnnError("cannot pool an empty graph")
    m = math.ceil(ratio * n)
    # Stable sort on the negated scores keeps lower indices first on ties.
    order = np.argsort(-scores, kind="stable")[:m]
    return np.sort(order)


def readout_max(features: np.ndarray) -> Embedding:
    """Column-wise max over nodes."""
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise GnnError("readout needs a non-empty node matrix")
    return Embedding(z.max(axis=0))


def _dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def _embed_graph(
    graph,
    params: dict[str, Tensor],
    config: ModelConfig,
    rng: np.random.Generator | None,
    train: bool,
) -> Tensor:
    """Backbone forward pass returning a (1, d) embedding tensor."""
    a = np.asarray(graph.adjacency, dtype=np.float64)
    z_data = np.asarray(graph.features, dtype=np.float64)
    if z_data.ndim != 2 or z_data.shape[0] != a.shape[0]:
        raise GnnError("feature matrix does not match the adjacency")
    if z_data.shape[1] != config.feature_dim:
        raise GnnError(
            f"graph has {z_data.shape[1]} features, model expects {config.feature_dim}"
        )
    n = Tensor(norm_adjacency(a))
    z = Tensor(z_data)
    drop = train and config.dropout > 0.0
    if drop and rng is None:
        raise GnnError("dropout during training needs a random generator")
    for i in range(config.layers):
        z = ad.relu(n @ z @ params[f"gcn{i}"])
        if drop:
            z = z * Tensor(_dropout_mask(rng, z.shape, config.dropout))
    alpha = ad.tanh(n @ z @ params["score"])
    perm = _top_indices(alpha.data.reshape(-1), config.pool_ratio)
    z = ad.gather_rows(z, perm) * ad.gather_rows(alpha, perm)
    return ad.max_rows(z)


def _cosine(a: Tensor, b: Tensor) -> Tensor:
    dot = ad.sum_all(a * b)
    na = ad.pow_const(ad.sum_all(a * a), 0.5)
    nb = ad.pow_const(ad.sum_all(b * b), 0.5)
    if na.data == 0.0 or nb.data == 0.0:
        raise ZeroEmbeddingError("cosine similarity of a zero-norm embedding")
    return dot * ad.pow_const(na * nb, -1.0)


def _item_loss(
    sample,
    label: int,
    params: dict[str, Tensor],
    config: ModelConfig,
    rng: np.random.Generator | None,
    train: bool,
) -> tuple[Tensor, bool]:
    """Loss tensor and prediction correctness for one dataset item."""
    if config.head == "classify":
        if label not in (0, 1):
            raise GnnError(f"classify labels must be 0 or 1, got {label!r}")
        emb = _embed_graph(sample, params, config, rng, train)
        logits = emb @ params["head_w"] + params["head_b"]
        logp = ad.log_softmax_row(logits)
        loss = ad.scale(ad.pick(logp, 0, label), -1.0)
        correct = int(np.argmax(logp.data)) == label
        return loss, correct
    if label not in (1, -1):
        raise GnnError(f"pair labels must be 1 or -1, got {label!r}")
    left, right = sample
    cos = _cosine(
        _embed_graph(left, params, config, rng, train),
        _embed_graph(right, params, config, rng, train),
    )
    if label == 1:
        loss = ad.add_const(ad.scale(cos, -1.0), 1.0)
    else:
        loss = ad.hinge_at(cos, config.delta)
    correct = (float(cos.data) > config.delta) == (label == 1)
    return loss, correct


def loss_classify(probabilities: Sequence[float], label: int) -> float:
    """Negative log likelihood of the true class, clamped away from log 0."""
    if label not in (0, 1):
        raise GnnError(f"classify labels must be 0 or 1, got {label!r}")
    p = float(np.asarray(probabilities, dtype=np.float64).reshape(-1)[label])
    return -math.log(max(p, 1e-12))


def loss_pair(similarity: float, label: int, delta: float = 0.5) -> float:
    """1 - s for matching pairs, max(0, s - delta) for non-matching."""
    if label == 1:
        return 1.0 - similarity
    if label == -1:
        return max(0.0, similarity - delta)
    raise GnnError(f"pair labels must be 1 or -1, got {label!r}")


def forward_classify(
    graph, params: ModelParams, config: ModelConfig
) -> tuple[np.ndarray, int]:
    """Class probabilities and the argmax label, without dropout."""
    tensors = {k: Tensor(v) for k, v in params.arrays.items()}
    emb = _embed_graph(graph, tensors, config, None, False)
    logits = emb @ tensors["head_w"] + tensors["head_b"]
    logp = ad.log_softmax_row(logits)
    probs = np.exp(logp.data).reshape(-1)
    return probs, int(np.argmax(probs))


def forward_pair(
    left, right, params: ModelParams, config: ModelConfig
) -> tuple[float, bool]:
    """Cosine similarity of the two embeddings and the match verdict."""
    tensors = {k: Tensor(v) for k, v in params.arrays.items()}
    cos = _cosine(
        _embed_graph(left, tensors, config, None, False),
        _embed_graph(right, tensors, config, None, False),
    )
    score = float(cos.data)
    return score, score > config.delta


def embed(graph, params: ModelParams, config: ModelConfig) -> Embedding:
    tensors = {k: Tensor(v) for k, v in params.arrays.items()}
    return Embedding(_embed_graph(graph, tensors, config, None, False).data.reshape(-1))


def compute_gradients(
    params: ModelParams,
    batch: Sequence[tuple[object, int]],
    config: ModelConfig,
    rng: np.random.Generator | None = None,
) -> tuple[dict[str, np.ndarray], float, int]:
    """Gradients of the summed batch loss.

    Returns (gradients by parameter name, batch loss, correct count).
    Dropout is applied only when a generator is passed and the config
    asks for it, which is exactly what the train loop does.
    """
    if not batch:
        raise GnnError("empty batch")
    tensors = {k: Tensor(v) for k, v in params.arrays.items()}
    total: Tensor | None = None
    correct = 0
    for sample, label in batch:
        loss, ok = _item_loss(sample, label, tensors, config, rng, rng is not None)
        correct += ok
        total = loss if total is None else ad.add(total, loss)
    ad.backward(total)
    grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in tensors.items()
    }
    return grads, float(total.data), correct


class _Optimizer:
    def __init__(self, config: ModelConfig, params: ModelParams) -> None:
        self.lr = config.learning_rate
        self.kind = config.optimizer
        self.step_count = 0
        if self.kind == "adam":
            self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        if self.kind == "sgd":
            for k, g in grads.items():
                params.arrays[k] -= self.lr * g
            return
        self.step_count += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            m_hat = self.m[k] / (1.0 - b1 ** self.step_count)
            v_hat = self.v[k] / (1.0 - b2 ** self.step_count)
            params.arrays[k] -= self.lr * m_hat / (np.sqrt(v_hat) + eps)


def train(
    dataset: Sequence[tuple[object, int]],
    config: ModelConfig,
    initial_params: ModelParams | None = None,
    progress: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Seeded minibatch training over the whole dataset.

    Passing ``initial_params`` continues from those weights with fresh
    optimizer state; otherwise weights are drawn from the config seed.
    The same seed, dataset and config reproduce bit-identical weights.
    """
    if not dataset:
        raise GnnError("empty training dataset")
    rng = np.random.default_rng(config.seed)
    if initial_params is None:
        params = init_params(config, rng)
    else:
        params = initial_params.copy()
    opt = _Optimizer(config, params)
    trace: list[tuple[int, float, float]] = []
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, n, config.batch_size):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            grads, loss, correct = compute_gradients(params, batch, config, rng)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            opt.step(params, grads)
            total_loss += loss
            total_correct += correct
        trace.append((epoch, total_loss / n, total_correct / n))
        if progress is not None:
            progress(epoch, total_loss / n, total_correct / n)
    return TrainResult(params, config, trace)


def write_loss_trace(path, trace: Iterable[tuple[int, float, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,accuracy\n")
        for epoch, loss, acc in trace:
            fh.write(f"{epoch},{loss!r},{acc!r}\n")


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    """Write weights plus config into one npz container."""
    meta = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "params": list(params.names()),
    }
    if "meta" in params.arrays:
        raise CheckpointError("parameter name 'meta' is reserved")
    np.savez(path, meta=np.array(json.dumps(meta)), **params.arrays)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise CheckpointError(f"{path}: not a model checkpoint")
        try:
            meta = json.loads(str(data["meta"]))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: bad checkpoint metadata") from exc
        if meta.get("format") != _CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: not a model checkpoint")
        if meta.get("version") != _CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {meta.get('version')!r}"
            )
        config = ModelConfig.from_dict(meta["config"])
        arrays = {}
        for name in meta["params"]:
            if name not in data:
                raise CheckpointError(f"{path}: missing weight array {name!r}")
            arrays[name] = data[name]
    params = ModelParams(arrays)
    expected = param_shapes(config)
    for name, shape in expected.items():
        if name not in arrays or arrays[name].shape != shape:
            raise CheckpointError(f"{path}: weight {name!r} does not match the config")
    return params, config
