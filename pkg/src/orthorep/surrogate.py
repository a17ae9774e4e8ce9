"""Compact attention regressor mapping integrated renderings to drag.

Architecture, per stream (normal and/or depth): area-average downsample to
the configured input resolution, cut into non-overlapping square patches,
linearly embed each patch, add a fixed sinusoidal position encoding, and run
one multi-head self-attention block with a residual connection. Fused models
then exchange information through symmetric cross-attention (each stream's
tokens query the other stream's keys/values, again residual). Token features
are mean-pooled per stream, concatenated, and fed to a small tanh hidden
layer ending in one scalar.

Everything is float64 numpy with hand-written analytic gradients, which keeps
the finite-difference oracle in the test suite meaningful. Training is plain
minibatch gradient descent with momentum, a per-epoch learning-rate decay,
and patience-based early stopping on validation MSE.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

STREAM_SETS = {
    "normal_only": ("normal",),
    "depth_only": ("depth",),
    "fused": ("normal", "depth"),
}

MOMENTUM = 0.9

WEIGHTS_MAGIC = b"ORWT"
WEIGHTS_VERSION = 1


class SurrogateError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults give 144 tokens (12x12 grid)."""

    input_resolution: int = 96
    patch_size: int = 8
    embed_dim: int = 64
    attention_dim: int = 128
    heads: int = 4
    streams: str = "fused"
    head_hidden: int = 128
    parameter_init_seed: int = 0
    use_position_encoding: bool = True

    def __post_init__(self):
        if self.streams not in STREAM_SETS:
            raise SurrogateError(f"unknown streams {self.streams!r}")
        for name in ("input_resolution", "patch_size", "embed_dim",
                     "attention_dim", "heads", "head_hidden"):
            if getattr(self, name) < 1:
                raise SurrogateError(f"{name} must be positive")
        if self.input_resolution % self.patch_size:
            raise SurrogateError(
                f"input_resolution {self.input_resolution} not divisible by "
                f"patch_size {self.patch_size}")
        if self.attention_dim % self.heads:
            raise SurrogateError(
                f"attention_dim {self.attention_dim} not divisible by heads "
                f"{self.heads}")

    @property
    def stream_names(self) -> tuple:
        return STREAM_SETS[self.streams]

    @property
    def tokens(self) -> int:
        n = self.input_resolution // self.patch_size
        return n * n

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def pooled_dim(self) -> int:
        return self.embed_dim * len(self.stream_names)

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    lr_decay_per_epoch: float = 0.96
    early_stop_patience: int = 20
    batch_size: int = 32
    max_epochs: int = 200
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise SurrogateError("learning_rate must be positive")
        if not (0.0 < self.lr_decay_per_epoch <= 1.0):
            raise SurrogateError("lr_decay_per_epoch must be in (0, 1]")
        if self.early_stop_patience < 1:
            raise SurrogateError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise SurrogateError("batch_size and max_epochs must be >= 1")
        if self.loss != "mse":
            raise SurrogateError(f"unsupported loss {self.loss!r}")


# ---------------------------------------------------------------------------
# Model state

def tensor_specs(config: ModelConfig) -> tuple:
    """(name, shape, fan_in) for every tensor, in canonical draw order.

    Biases reuse their layer's fan-in so the whole layer is initialized at
    one scale.
    """
    p, e, d = config.patch_dim, config.embed_dim, config.attention_dim
    specs = []
    for s in config.stream_names:
        specs.append((f"{s}.embed.W", (p, e), p))
        specs.append((f"{s}.embed.b", (e,), p))
        for w in ("Wq", "Wk", "Wv"):
            specs.append((f"{s}.attn.{w}", (e, d), e))
        specs.append((f"{s}.attn.Wo", (d, e), d))
    if config.streams == "fused":
        for s in config.stream_names:
            for w in ("Wq", "Wk", "Wv"):
                specs.append((f"{s}.cross.{w}", (e, d), e))
            specs.append((f"{s}.cross.Wo", (d, e), d))
    pd, hh = config.pooled_dim, config.head_hidden
    specs.append(("head.W1", (pd, hh), pd))
    specs.append(("head.b1", (hh,), pd))
    specs.append(("head.W2", (hh, 1), hh))
    specs.append(("head.b2", (1,), hh))
    return tuple(specs)


@dataclass
class ModelState:
    """Named weight tensors; the flat dict is the serialization unit."""

    tensors: dict

    def copy(self) -> "ModelState":
        return ModelState({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "ModelState":
        return ModelState({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def init_state(config: ModelConfig) -> ModelState:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per tensor."""
    rng = np.random.default_rng(config.parameter_init_seed)
    tensors = {}
    for name, shape, fan_in in tensor_specs(config):
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelState(tensors)


def validate_state(state: ModelState, config: ModelConfig) -> None:
    expected = {name: shape for name, shape, _ in tensor_specs(config)}
    got = set(state.tensors)
    if got != set(expected):
        missing = sorted(set(expected) - got)
        extra = sorted(got - set(expected))
        raise SurrogateError(f"state/config mismatch: missing {missing}, "
                             f"unexpected {extra}")
    for name, shape in expected.items():
        t = state.tensors[name]
        if t.shape != shape:
            raise SurrogateError(f"tensor {name}: shape {t.shape}, expected "
                                 f"{shape}")
        if not np.all(np.isfinite(t)):
            raise SurrogateError(f"tensor {name} contains non-finite values")


def init_fused_from_streams(normal_state: ModelState, depth_state: ModelState,
                            config: ModelConfig) -> ModelState:
    """Transfer init: copy per-stream weights from single-stream donors.

    Cross-attention and head tensors are freshly drawn under the fused
    config's seed; everything under normal.* / depth.* is copied bit-exact
    from the corresponding donor.
    """
    if config.streams != "fused":
        raise SurrogateError("transfer init requires a fused config")
    donors = {"normal": normal_state, "depth": depth_state}
    rng = np.random.default_rng(config.parameter_init_seed)
    tensors = {}
    for name, shape, fan_in in tensor_specs(config):
        prefix = name.split(".", 1)[0]
        if prefix in donors and ".cross." not in name:
            try:
                donor = donors[prefix].tensors[name]
            except KeyError as exc:
                raise SurrogateError(
                    f"donor for stream {prefix!r} lacks tensor {name}"
                ) from exc
            if donor.shape != shape:
                raise SurrogateError(
                    f"donor tensor {name}: shape {donor.shape}, fused config "
                    f"expects {shape}")
            tensors[name] = donor.copy()
        else:
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelState(tensors)


# ---------------------------------------------------------------------------
# Input preparation

def downsample_area(pixels: np.ndarray, target: int) -> np.ndarray:
    """Average-pool a square (R, R, 3) image down to (target, target, 3)."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != x.shape[1] or x.shape[2] != 3:
        raise SurrogateError(f"expected square (R, R, 3) image, got {x.shape}")
    r = x.shape[0]
    if r == target:
        return x
    if r % target:
        raise SurrogateError(f"image resolution {r} not divisible by "
                             f"model input resolution {target}")
    f = r // target
    return x.reshape(target, f, target, f, 3).mean(axis=(1, 3))


def image_to_patches(pixels, config: ModelConfig) -> np.ndarray:
    """Downsample and cut into row-major non-overlapping patch vectors."""
    x = downsample_area(getattr(pixels, "pixels", pixels),
                        config.input_resolution)
    ps = config.patch_size
    n = config.input_resolution // ps
    patches = x.reshape(n, ps, n, ps, 3).transpose(0, 2, 1, 3, 4)
    return patches.reshape(n * n, config.patch_dim)


def _example_streams(item, config: ModelConfig) -> dict:
    names = config.stream_names
    if config.streams == "fused":
        if not (isinstance(item, (tuple, list)) and len(item) == 2):
            raise SurrogateError("fused mode expects (normal, depth) pairs")
        parts = dict(zip(names, item))
    else:
        if isinstance(item, (tuple, list)):
            if len(item) != 1:
                raise SurrogateError(f"{config.streams} mode expects single "
                                     "images")
            item = item[0]
        parts = {names[0]: item}
    for name, img in parts.items():
        kind = getattr(img, "kind", None)
        if kind is not None and kind != name:
            raise SurrogateError(f"stream {name!r} received a {kind!r} image")
    return parts


def prepare_batch(batch, config: ModelConfig) -> dict:
    """Stack a list of examples into per-stream (B, T, P) patch arrays."""
    if len(batch) == 0:
        raise SurrogateError("empty batch")
    per_stream = {s: [] for s in config.stream_names}
    for item in batch:
        for s, img in _example_streams(item, config).items():
            per_stream[s].append(image_to_patches(img, config))
    return {s: np.stack(v) for s, v in per_stream.items()}


def position_encoding(tokens: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal token-position table (tokens, dim)."""
    pos = np.arange(tokens, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ---------------------------------------------------------------------------
# Forward / backward

def _softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _check_finite(x: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(x)):
        raise SurrogateError(f"non-finite activation in layer {layer}")


def _mha_forward(x_query, x_kv, wq, wk, wv, wo, heads):
    """Multi-head attention; queries from x_query, keys/values from x_kv.

    Returns the pre-residual output (B, T, E) and a backward cache.
    """
    dh = wq.shape[1] // heads
    scale = 1.0 / np.sqrt(dh)
    q = x_query @ wq
    k = x_kv @ wk
    v = x_kv @ wv
    concat = np.empty_like(q)
    attn = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[..., sl] @ k[..., sl].transpose(0, 2, 1)) * scale
        a = _softmax(scores)
        concat[..., sl] = a @ v[..., sl]
        attn.append(a)
    out = concat @ wo
    cache = (x_query, x_kv, q, k, v, attn, concat, wq, wk, wv, wo, heads, scale)
    return out, cache


def _mha_backward(d_out, cache):
    x_query, x_kv, q, k, v, attn, concat, wq, wk, wv, wo, heads, scale = cache
    dh = wq.shape[1] // heads
    d_wo = np.einsum("btd,bte->de", concat, d_out)
    d_concat = d_out @ wo.T
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        a = attn[h]
        d_head = d_concat[..., sl]
        da = d_head @ v[..., sl].transpose(0, 2, 1)
        dv[..., sl] = a.transpose(0, 2, 1) @ d_head
        ds = a * (da - np.sum(da * a, axis=-1, keepdims=True))
        ds *= scale
        dq[..., sl] = ds @ k[..., sl]
        dk[..., sl] = ds.transpose(0, 2, 1) @ q[..., sl]
    d_wq = np.einsum("bte,btd->ed", x_query, dq)
    d_wk = np.einsum("bte,btd->ed", x_kv, dk)
    d_wv = np.einsum("bte,btd->ed", x_kv, dv)
    d_xq = dq @ wq.T
    d_xkv = dk @ wk.T + dv @ wv.T
    return d_xq, d_xkv, d_wq, d_wk, d_wv, d_wo


def _forward_from_patches(state: ModelState, config: ModelConfig,
                          patches: dict):
    """Core forward pass on prepared patch arrays; returns (preds, cache)."""
    t = state.tensors
    streams = config.stream_names
    pe = (position_encoding(config.tokens, config.embed_dim)
          if config.use_position_encoding else None)
    tokens, self_caches = {}, {}
    for s in streams:
        x0 = patches[s] @ t[f"{s}.embed.W"] + t[f"{s}.embed.b"]
        _check_finite(x0, f"{s}.embed")
        x = x0 + pe if pe is not None else x0
        y, cache = _mha_forward(x, x, t[f"{s}.attn.Wq"], t[f"{s}.attn.Wk"],
                                t[f"{s}.attn.Wv"], t[f"{s}.attn.Wo"],
                                config.heads)
        _check_finite(y, f"{s}.attn")
        tokens[s] = x + y
        self_caches[s] = cache
    cross_caches = {}
    if config.streams == "fused":
        fused_tokens = {}
        for s in streams:
            other = streams[1] if s == streams[0] else streams[0]
            y, cache = _mha_forward(tokens[s], tokens[other],
                                    t[f"{s}.cross.Wq"], t[f"{s}.cross.Wk"],
                                    t[f"{s}.cross.Wv"], t[f"{s}.cross.Wo"],
                                    config.heads)
            _check_finite(y, f"{s}.cross")
            fused_tokens[s] = tokens[s] + y
            cross_caches[s] = cache
        final_tokens = fused_tokens
    else:
        final_tokens = tokens
    pooled = np.concatenate([final_tokens[s].mean(axis=1) for s in streams],
                            axis=-1)
    h_pre = pooled @ t["head.W1"] + t["head.b1"]
    h_act = np.tanh(h_pre)
    preds = (h_act @ t["head.W2"] + t["head.b2"]).ravel()
    _check_finite(preds, "head")
    cache = {
        "patches": patches,
        "self": self_caches,
        "cross": cross_caches,
        "tokens": tokens,
        "pooled": pooled,
        "h_act": h_act,
    }
    return preds, cache


def _backward_from_cache(state: ModelState, config: ModelConfig, cache,
                         d_preds: np.ndarray) -> dict:
    t = state.tensors
    streams = config.stream_names
    n_tokens = config.tokens
    e = config.embed_dim
    grads = {name: np.zeros(shape) for name, shape, _ in tensor_specs(config)}
    h_act = cache["h_act"]
    dy = d_preds[:, None]
    grads["head.b2"] = dy.sum(axis=0)
    grads["head.W2"] = h_act.T @ dy
    d_h_act = dy @ t["head.W2"].T
    d_h_pre = d_h_act * (1.0 - h_act ** 2)
    grads["head.b1"] = d_h_pre.sum(axis=0)
    grads["head.W1"] = cache["pooled"].T @ d_h_pre
    d_pooled = d_h_pre @ t["head.W1"].T
    d_final = {}
    for i, s in enumerate(streams):
        d_pool = d_pooled[:, i * e:(i + 1) * e]
        d_final[s] = np.repeat(d_pool[:, None, :] / n_tokens, n_tokens, axis=1)
    if config.streams == "fused":
        d_tokens = {s: d_final[s].copy() for s in streams}
        for s in streams:
            other = streams[1] if s == streams[0] else streams[0]
            d_xq, d_xkv, d_wq, d_wk, d_wv, d_wo = _mha_backward(
                d_final[s], cache["cross"][s])
            d_tokens[s] += d_xq
            d_tokens[other] += d_xkv
            grads[f"{s}.cross.Wq"] = d_wq
            grads[f"{s}.cross.Wk"] = d_wk
            grads[f"{s}.cross.Wv"] = d_wv
            grads[f"{s}.cross.Wo"] = d_wo
    else:
        d_tokens = d_final
    for s in streams:
        d_xq, d_xkv, d_wq, d_wk, d_wv, d_wo = _mha_backward(
            d_tokens[s], cache["self"][s])
        d_x = d_tokens[s] + d_xq + d_xkv
        grads[f"{s}.attn.Wq"] = d_wq
        grads[f"{s}.attn.Wk"] = d_wk
        grads[f"{s}.attn.Wv"] = d_wv
        grads[f"{s}.attn.Wo"] = d_wo
        grads[f"{s}.embed.W"] = np.einsum("btp,bte->pe", cache["patches"][s],
                                          d_x)
        grads[f"{s}.embed.b"] = d_x.sum(axis=(0, 1))
    return grads


def forward(state: ModelState, config: ModelConfig, batch) -> np.ndarray:
    """Predict one scalar per example; batch items are images or pairs."""
    validate_state(state, config)
    patches = prepare_batch(batch, config)
    preds, _ = _forward_from_patches(state, config, patches)
    return preds


def forward_features(state: ModelState, config: ModelConfig,
                     batch) -> np.ndarray:
    """Mean-pooled (pre-head) features, (B, pooled_dim); a test seam."""
    validate_state(state, config)
    patches = prepare_batch(batch, config)
    _, cache = _forward_from_patches(state, config, patches)
    return cache["pooled"]


def _loss_grad_from_patches(state, config, patches, labels):
    preds, cache = _forward_from_patches(state, config, patches)
    residuals = preds - labels
    loss = float(np.mean(residuals ** 2))
    d_preds = 2.0 * residuals / len(labels)
    grads = _backward_from_cache(state, config, cache, d_preds)
    return loss, grads


def loss_and_grad(state: ModelState, config: ModelConfig, batch, labels):
    """Mean squared error and its analytic gradient for every tensor."""
    validate_state(state, config)
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if len(batch) == 0:
        raise SurrogateError("empty batch")
    if len(labels) != len(batch):
        raise SurrogateError(f"{len(batch)} examples but {len(labels)} labels")
    if not np.all(np.isfinite(labels)):
        raise SurrogateError("non-finite label")
    patches = prepare_batch(batch, config)
    loss, grads = _loss_grad_from_patches(state, config, patches, labels)
    return loss, ModelState(grads)


# ---------------------------------------------------------------------------
# Training

@dataclass(frozen=True)
class Example:
    """One training sample: stream inputs, target drag, leakage group."""

    inputs: object
    label: float
    group_id: str


@dataclass(frozen=True)
class TrainLogRow:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float


class EarlyStopTracker:
    """Patience counter over validation MSE; snapshots the best state.

    An epoch improves only if its value is strictly below the best so far;
    `update` returns True once `patience` consecutive epochs fail to
    improve.
    """

    def __init__(self, patience: int):
        if patience < 1:
            raise SurrogateError("patience must be >= 1")
        self.patience = patience
        self.best_val = np.inf
        self.best_state: ModelState | None = None
        self.epochs_since_improvement = 0

    def update(self, val_loss: float, state: ModelState) -> bool:
        if val_loss < self.best_val:
            self.best_val = val_loss
            self.best_state = state.copy()
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience


def _examples_to_patches(examples, config):
    patches = prepare_batch([ex.inputs for ex in examples], config)
    labels = np.array([float(ex.label) for ex in examples])
    if not np.all(np.isfinite(labels)):
        raise SurrogateError("non-finite label in training data")
    return patches, labels


def _eval_mse(state, config, patches, labels) -> float:
    preds, _ = _forward_from_patches(state, config, patches)
    return float(np.mean((preds - labels) ** 2))


def train(state: ModelState, model_cfg: ModelConfig, train_cfg: TrainConfig,
          train_set, val_set):
    """Minibatch SGD with momentum 0.9 and per-epoch lr decay.

    train_set/val_set are sequences of Example. Inputs are patched once up
    front; each epoch shuffles under the training seed, and the per-epoch
    train loss is the batch-size-weighted mean of minibatch losses.
    Validation MSE is computed after every epoch; the best state seen is
    the one returned.

    Returns:
        (best ModelState, list of TrainLogRow)
    """
    validate_state(state, model_cfg)
    train_set = list(train_set)
    val_set = list(val_set)
    if not train_set or not val_set:
        raise SurrogateError("train and validation sets must be non-empty")
    overlap = ({ex.group_id for ex in train_set}
               & {ex.group_id for ex in val_set})
    if overlap:
        raise SurrogateError(f"train/val groups overlap: {sorted(overlap)[:5]}")
    train_patches, train_labels = _examples_to_patches(train_set, model_cfg)
    val_patches, val_labels = _examples_to_patches(val_set, model_cfg)
    n = len(train_set)
    state = state.copy()
    velocity = state.zeros_like()
    tracker = EarlyStopTracker(train_cfg.early_stop_patience)
    rng = np.random.default_rng(train_cfg.seed)
    log = []
    for epoch in range(1, train_cfg.max_epochs + 1):
        lr = train_cfg.learning_rate * train_cfg.lr_decay_per_epoch ** (epoch - 1)
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start:start + train_cfg.batch_size]
            batch_patches = {s: p[idx] for s, p in train_patches.items()}
            loss, grads = _loss_grad_from_patches(state, model_cfg,
                                                 batch_patches,
                                                 train_labels[idx])
            if not np.isfinite(loss):
                raise SurrogateError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(batch starting at {start}); lr {lr:g} may be too high")
            loss_sum += loss * len(idx)
            for name in state.tensors:
                v = velocity.tensors[name]
                v *= MOMENTUM
                v -= lr * grads[name]
                state.tensors[name] += v
        train_mse = loss_sum / n
        val_mse = _eval_mse(state, model_cfg, val_patches, val_labels)
        log.append(TrainLogRow(epoch, train_mse, val_mse, lr))
        if tracker.update(val_mse, state):
            logger.info("early stop at epoch %d (best val %.3g)", epoch,
                        tracker.best_val)
            break
    assert tracker.best_state is not None
    return tracker.best_state, log


def save_training_log(log, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_mse,val_mse,lr\n")
        for row in log:
            fh.write(f"{row.epoch},{row.train_mse:.12g},"
                     f"{row.val_mse:.12g},{row.lr:.12g}\n")


# ---------------------------------------------------------------------------
# Inference

def predict(state: ModelState, config: ModelConfig, images):
    """Forward pass plus a wall-time report.

    Returns:
        (predictions, {"seconds", "images_per_second"})
    """
    t0 = time.perf_counter()
    preds = forward(state, config, images)
    elapsed = time.perf_counter() - t0
    rate = len(preds) / elapsed if elapsed > 0 else float("inf")
    return preds, {"seconds": elapsed, "images_per_second": rate}


# ---------------------------------------------------------------------------
# Serialization

def save_weights(path, state: ModelState, config: ModelConfig) -> None:
    """Named-tensor binary (f64 little-endian) plus a JSON config sidecar."""
    validate_state(state, config)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(state.tensors)))
        for name in sorted(state.tensors):
            arr = np.ascontiguousarray(state.tensors[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    sidecar = path.with_name(path.name + ".json")
    with open(sidecar, "w") as fh:
        json.dump({"format_version": WEIGHTS_VERSION,
                   "model_config": config.to_json()}, fh, indent=2)


def load_weights(path):
    """Inverse of save_weights.

    Returns:
        (ModelState, ModelConfig)
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHTS_MAGIC:
            raise SurrogateError(f"{path}: not a weights file (magic {magic!r})")
        version, count = struct.unpack("<II", fh.read(8))
        if version != WEIGHTS_VERSION:
            raise SurrogateError(f"{path}: unsupported weights version "
                                 f"{version}")
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
            data = fh.read(n_bytes)
            tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    sidecar = path.with_name(path.name + ".json")
    try:
        with open(sidecar) as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise SurrogateError(f"missing config sidecar {sidecar}") from exc
    config = ModelConfig.from_json(meta["model_config"])
    state = ModelState(tensors)
    validate_state(state, config)
    return state, config
