"""1-D CNN emotion classifier with hand-written backprop and Adam.

Layout (channels x time throughout)::

    conv1(k5,pad2) -> relu -> maxpool2 -> conv2(k5,pad2) -> relu -> maxpool2
    -> conv3(k3,pad1) -> relu -> mean over time -> dense1 -> relu -> dropout
    -> dense2 -> logits
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AudioIOError,
    ConfigError,
    LabelError,
    ModelFormatError,
    ModelTruncatedError,
    ShapeMismatchError,
)
from .features import FeatureMatrix

LABELS = ("neutral", "calm", "happy", "sad", "angry", "fear", "disgust", "surprise")

TENSOR_NAMES = (
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b",
    "dense1.w", "dense1.b", "dense2.w", "dense2.b",
)

MAGIC = b"EMOC1\0"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    conv_channels: tuple[int, int, int] = (64, 128, 128)
    kernels: tuple[int, int, int] = (5, 5, 3)
    hidden: int = 64

    def shapes(self, n_in: int, n_labels: int) -> dict[str, tuple[int, ...]]:
        c1, c2, c3 = self.conv_channels
        k1, k2, k3 = self.kernels
        return {
            "conv1.w": (c1, n_in, k1), "conv1.b": (c1,),
            "conv2.w": (c2, c1, k2), "conv2.b": (c2,),
            "conv3.w": (c3, c2, k3), "conv3.b": (c3,),
            "dense1.w": (self.hidden, c3), "dense1.b": (self.hidden,),
            "dense2.w": (n_labels, self.hidden), "dense2.b": (n_labels,),
        }


@dataclass(eq=False)
class ModelParams:
    tensors: dict[str, np.ndarray]
    label_list: tuple[str, ...]
    input_shape: tuple[int, int]
    feature_fingerprint: str
    feature_config: dict | None = None
    architecture: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        expected = self.architecture.shapes(self.input_shape[0], len(self.label_list))
        if list(self.tensors) != list(TENSOR_NAMES):
            raise ModelFormatError(f"tensor set/order must be {TENSOR_NAMES}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ModelFormatError(f"{name} contains non-finite values")

    @property
    def n_labels(self) -> int:
        return len(self.label_list)

    @property
    def dtype(self):
        return self.tensors["conv1.w"].dtype

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "ModelParams":
        return replace(self, tensors=tensors)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in TENSOR_NAMES:
            t = self.tensors[name]
            h.update(name.encode())
            h.update(str(t.dtype).encode())
            h.update(np.ascontiguousarray(t).tobytes())
        h.update("|".join(self.label_list).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_rate: float = 0.3

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class AttackVerdict:
    label: str
    confidence: float
    probabilities: tuple[float, ...] | None = None


def validate_labels(labels: Sequence[str]) -> tuple[str, ...]:
    labels = tuple(labels)
    if not labels:
        raise LabelError("label list is empty")
    unknown = [l for l in labels if l not in LABELS]
    if unknown:
        raise LabelError(f"unknown labels {unknown}; canonical set is {LABELS}")
    if len(set(labels)) != len(labels):
        raise LabelError("duplicate labels")
    if not 2 <= len(labels) <= len(LABELS):
        raise LabelError("need between 2 and 8 labels")
    return labels


def init_model(
    seed: int,
    labels: Sequence[str],
    input_shape: tuple[int, int] = (40, 256),
    feature_fingerprint: str = "",
    feature_config: dict | None = None,
    architecture: Architecture = Architecture(),
    dtype=np.float32,
) -> ModelParams:
    """Uniform(-b, b) weights with b = sqrt(6 / fan_in); zero biases."""
    labels = validate_labels(labels)
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in architecture.shapes(input_shape[0], len(labels)).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams(tensors, labels, tuple(input_shape), feature_fingerprint,
                       feature_config, architecture)


# ---------------------------------------------------------------- layers

def _conv_forward(x, w, b):
    B, C, T = x.shape
    cout, _, k = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    # (B, C, T, k) -> (B, T, C, k) -> (B*T, C*k)
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    cols = cols.transpose(0, 2, 1, 3).reshape(B * T, C * k)
    out = cols @ w.reshape(cout, C * k).T + b
    return out.reshape(B, T, cout).transpose(0, 2, 1), cols


def _conv_backward(dout, cols, x_shape, w):
    B, C, T = x_shape
    cout, _, k = w.shape
    pad = k // 2
    d2 = dout.transpose(0, 2, 1).reshape(B * T, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(cout, C * k)).reshape(B, T, C, k)
    dxp = np.zeros((B, C, T + 2 * pad), dtype=dout.dtype)
    for j in range(k):
        dxp[:, :, j:j + T] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dxp[:, :, pad:pad + T], dw, db


def _pool_forward(x):
    B, C, T = x.shape
    t2 = T // 2
    pairs = x[:, :, : 2 * t2].reshape(B, C, t2, 2)
    pick = pairs[..., 1] > pairs[..., 0]  # ties go to the first element
    return np.where(pick, pairs[..., 1], pairs[..., 0]), pick


def _pool_backward(dout, pick, T):
    B, C, t2 = dout.shape
    dx = np.zeros((B, C, T), dtype=dout.dtype)
    dx[:, :, 0: 2 * t2: 2] = np.where(pick, 0, dout)
    dx[:, :, 1: 2 * t2: 2] = np.where(pick, dout, 0)
    return dx


def _as_batch(params: ModelParams, xs) -> np.ndarray:
    if isinstance(xs, FeatureMatrix):
        xs = [xs]
    arrays = []
    for x in xs:
        if isinstance(x, FeatureMatrix):
            if x.fingerprint is not None and params.feature_fingerprint and x.fingerprint != params.feature_fingerprint:
                raise ShapeMismatchError(
                    f"features fingerprint {x.fingerprint} != model's {params.feature_fingerprint}"
                )
            x = x.values
        arrays.append(np.asarray(x))
    batch = np.stack(arrays) if arrays else np.empty((0, *params.input_shape))
    if batch.ndim != 3 or batch.shape[1:] != tuple(params.input_shape):
        raise ShapeMismatchError(
            f"input shape {batch.shape[1:]} does not match model input {tuple(params.input_shape)}"
        )
    return batch.astype(params.dtype, copy=False)


def forward(params: ModelParams, x, train_mode: bool = False, dropout_seed: int = 0,
            dropout_rate: float = 0.3):
    """Logits for a FeatureMatrix (shape (n_labels,)) or a batch (B, n_labels).

    Returns ``(logits, cache)``; the cache feeds :func:`backward`.
    """
    single = isinstance(x, FeatureMatrix) or (isinstance(x, np.ndarray) and x.ndim == 2)
    if single:
        xb = _as_batch(params, [x])
    elif isinstance(x, np.ndarray) and x.ndim == 3:
        if x.shape[1:] != tuple(params.input_shape):
            raise ShapeMismatchError(f"input shape {x.shape[1:]} != {tuple(params.input_shape)}")
        xb = x.astype(params.dtype, copy=False)
    else:
        xb = _as_batch(params, x)
    p = params.tensors
    c = {"x": xb}
    z1, c["cols1"] = _conv_forward(xb, p["conv1.w"], p["conv1.b"])
    a1 = np.maximum(z1, 0)
    c["z1"] = z1
    h1, c["pick1"] = _pool_forward(a1)
    z2, c["cols2"] = _conv_forward(h1, p["conv2.w"], p["conv2.b"])
    a2 = np.maximum(z2, 0)
    c["z2"], c["h1"] = z2, h1
    h2, c["pick2"] = _pool_forward(a2)
    z3, c["cols3"] = _conv_forward(h2, p["conv3.w"], p["conv3.b"])
    a3 = np.maximum(z3, 0)
    c["z3"], c["h2"] = z3, h2
    g = a3.mean(axis=2)
    d1 = g @ p["dense1.w"].T + p["dense1.b"]
    r1 = np.maximum(d1, 0)
    if train_mode and dropout_rate > 0:
        rng = np.random.default_rng(dropout_seed)
        mask = (rng.random(r1.shape) >= dropout_rate).astype(r1.dtype) / (1.0 - dropout_rate)
    else:
        mask = None
    r1d = r1 * mask if mask is not None else r1
    logits = r1d @ p["dense2.w"].T + p["dense2.b"]
    c.update(g=g, d1=d1, mask=mask, r1d=r1d)
    return (logits[0] if single else logits), c


def backward(params: ModelParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    p = params.tensors
    dlogits = np.atleast_2d(dlogits).astype(params.dtype, copy=False)
    grads = {}
    grads["dense2.w"] = dlogits.T @ cache["r1d"]
    grads["dense2.b"] = dlogits.sum(axis=0)
    dr1 = dlogits @ p["dense2.w"]
    if cache["mask"] is not None:
        dr1 = dr1 * cache["mask"]
    dd1 = dr1 * (cache["d1"] > 0)
    grads["dense1.w"] = dd1.T @ cache["g"]
    grads["dense1.b"] = dd1.sum(axis=0)
    dg = dd1 @ p["dense1.w"]
    z3 = cache["z3"]
    da3 = np.repeat(dg[:, :, None] / z3.shape[2], z3.shape[2], axis=2)
    dz3 = da3 * (z3 > 0)
    dh2, grads["conv3.w"], grads["conv3.b"] = _conv_backward(dz3, cache["cols3"], cache["h2"].shape, p["conv3.w"])
    z2 = cache["z2"]
    dz2 = _pool_backward(dh2, cache["pick2"], z2.shape[2]) * (z2 > 0)
    dh1, grads["conv2.w"], grads["conv2.b"] = _conv_backward(dz2, cache["cols2"], cache["h1"].shape, p["conv2.w"])
    z1 = cache["z1"]
    dz1 = _pool_backward(dh1, cache["pick1"], z1.shape[2]) * (z1 > 0)
    _, grads["conv1.w"], grads["conv1.b"] = _conv_backward(dz1, cache["cols1"], cache["x"].shape, p["conv1.w"])
    return {name: grads[name].astype(params.dtype, copy=False) for name in TENSOR_NAMES}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _label_indices(params: ModelParams, labels) -> np.ndarray:
    index = {l: i for i, l in enumerate(params.label_list)}
    try:
        return np.array([index[l] if isinstance(l, str) else int(l) for l in labels])
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]!r} is not in the model's label list") from None


def loss_and_grad(params: ModelParams, batch, dropout_seed: int = 0, dropout_rate: float = 0.3,
                  train_mode: bool = True):
    """Mean softmax cross-entropy over ``batch`` and its gradient.

    ``batch`` is a list of ``(features, label)`` pairs, or a tuple
    ``(x_array, label_indices)`` for the trainer's pre-stacked path.
    """
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) and batch[0].ndim == 3:
        xb, y = batch
        y = np.asarray(y)
    else:
        if not batch:
            raise ConfigError("empty batch")
        xb = _as_batch(params, [x for x, _ in batch])
        y = _label_indices(params, [lab for _, lab in batch])
    if y.size and (y.min() < 0 or y.max() >= params.n_labels):
        raise LabelError("label index outside the model's label list")
    logits, cache = forward(params, xb, train_mode=train_mode, dropout_seed=dropout_seed,
                            dropout_rate=dropout_rate)
    probs = softmax(logits.astype(np.float64))
    n = xb.shape[0]
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300))))
    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, backward(params, cache, dlogits)


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(t) for k, t in params.tensors.items()},
                   {k: np.zeros_like(t) for k, t in params.tensors.items()})


def adam_step(params: ModelParams, grads: dict, state: AdamState, t: int, cfg: TrainConfig):
    if t < 1:
        raise ConfigError("Adam step index starts at 1")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_t, new_m, new_v = {}, {}, {}
    for k, w in params.tensors.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        step = cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        new_t[k] = (w - step).astype(w.dtype, copy=False)
        new_m[k], new_v[k] = m.astype(w.dtype, copy=False), v.astype(w.dtype, copy=False)
    return params.with_tensors(new_t), AdamState(new_m, new_v)


# ---------------------------------------------------------------- training

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


def _stack(samples) -> np.ndarray:
    return np.stack([s.values if isinstance(s, FeatureMatrix) else np.asarray(s) for s, _ in samples])


def evaluate(params: ModelParams, x: np.ndarray, y: np.ndarray, batch_size: int = 128):
    losses, correct = 0.0, 0
    for i in range(0, x.shape[0], batch_size):
        logits, _ = forward(params, x[i:i + batch_size])
        probs = softmax(logits.astype(np.float64))
        yy = y[i:i + batch_size]
        losses += float(-np.log(np.maximum(probs[np.arange(len(yy)), yy], 1e-300)).sum())
        correct += int((np.argmax(probs, axis=1) == yy).sum())
    return losses / x.shape[0], correct / x.shape[0]


def train(train_set, val_set, cfg: TrainConfig = TrainConfig(), *,
          labels: Sequence[str] | None = None, feature_fingerprint: str = "",
          feature_config: dict | None = None, architecture: Architecture = Architecture(),
          progress=None):
    """Seeded minibatch Adam; returns the best-validation-accuracy parameters and history."""
    if not train_set or not val_set:
        raise ConfigError("train and validation sets must be non-empty")
    present = {lab for _, lab in train_set}
    if len(present) < 2:
        raise LabelError("training set needs at least two distinct labels")
    if labels is None:
        labels = [l for l in LABELS if l in present]
    labels = validate_labels(labels)
    x_tr = _stack(train_set).astype(np.float32)
    x_va = _stack(val_set).astype(np.float32)
    params = init_model(cfg.seed, labels, x_tr.shape[1:], feature_fingerprint, feature_config,
                        architecture)
    y_tr = _label_indices(params, [lab for _, lab in train_set])
    y_va = _label_indices(params, [lab for _, lab in val_set])

    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState.zeros_like(params)
    best, best_acc, step = params, -1.0, 0
    history: list[EpochStats] = []
    n = x_tr.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            step += 1
            seed = int(rng.integers(2 ** 63))
            _, grads = loss_and_grad(params, (x_tr[idx], y_tr[idx]), dropout_seed=seed,
                                     dropout_rate=cfg.dropout_rate)
            params, state = adam_step(params, grads, state, step, cfg)
        tr_loss, tr_acc = evaluate(params, x_tr, y_tr)
        va_loss, va_acc = evaluate(params, x_va, y_va)
        stats = EpochStats(epoch, tr_loss, tr_acc, va_loss, va_acc)
        history.append(stats)
        if progress is not None:
            progress(stats)
        if va_acc > best_acc:
            best, best_acc = params, va_acc
    return best, history


# ---------------------------------------------------------------- inference

def predict_logits(params: ModelParams, logits: np.ndarray) -> AttackVerdict:
    probs = softmax(np.asarray(logits, dtype=np.float64))
    i = int(np.argmax(probs))  # first maximum -> label_list order tie-break
    return AttackVerdict(params.label_list[i], float(probs[i]), tuple(float(p) for p in probs))


def predict(params: ModelParams, x) -> AttackVerdict:
    logits, _ = forward(params, x)
    return predict_logits(params, logits)


def predict_batch(params: ModelParams, xs, batch_size: int = 64) -> list[AttackVerdict]:
    out = []
    for i in range(0, len(xs), batch_size):
        logits, _ = forward(params, _as_batch(params, xs[i:i + batch_size]))
        out.extend(predict_logits(params, row) for row in logits)
    return out


# ---------------------------------------------------------------- serialisation

def model_bytes(params: ModelParams) -> bytes:
    if not params.feature_fingerprint:
        raise ModelFormatError("refusing to save a model without a feature fingerprint")
    layers, blobs, offset = [], [], 0
    for name in TENSOR_NAMES:
        blob = np.ascontiguousarray(params.tensors[name], dtype="<f4").tobytes()
        layers.append({"name": name, "shape": list(params.tensors[name].shape),
                       "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "label_list": list(params.label_list),
        "layers": layers,
        "feature_fingerprint": params.feature_fingerprint,
        "feature_config": params.feature_config,
        "input_shape": list(params.input_shape),
        "architecture": {"conv_channels": list(params.architecture.conv_channels),
                         "kernels": list(params.architecture.kernels),
                         "hidden": params.architecture.hidden},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def save_model(params: ModelParams, path) -> None:
    try:
        Path(path).write_bytes(model_bytes(params))
    except OSError as exc:
        raise AudioIOError(f"cannot write model {path}: {exc}") from exc


def parse_model(data: bytes) -> ModelParams:
    if data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("bad magic bytes; not an EMOC1 weight file")
    pos = len(MAGIC)
    if len(data) < pos + 6:
        raise ModelTruncatedError("file ends inside the fixed header")
    version, hlen = struct.unpack_from("<HI", data, pos)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported weight-file version {version}")
    pos += 6
    if len(data) < pos + hlen:
        raise ModelTruncatedError("file ends inside the JSON header")
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt JSON header: {exc}") from exc
    if not header.get("feature_fingerprint"):
        raise ModelFormatError("weight file carries no feature fingerprint")
    pos += hlen
    body = data[pos:]
    tensors = {}
    for layer in header["layers"]:
        start, nbytes = layer["offset"], layer["nbytes"]
        if start + nbytes > len(body):
            raise ModelTruncatedError(f"file ends inside tensor {layer['name']}")
        arr = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=start)
        tensors[layer["name"]] = arr.reshape(layer["shape"]).astype(np.float32)
    arch = header.get("architecture") or {}
    return ModelParams(
        tensors={k: tensors[k] for k in TENSOR_NAMES if k in tensors},
        label_list=tuple(header["label_list"]),
        input_shape=tuple(header["input_shape"]),
        feature_fingerprint=header["feature_fingerprint"],
        feature_config=header.get("feature_config"),
        architecture=Architecture(tuple(arch.get("conv_channels", (64, 128, 128))),
                                  tuple(arch.get("kernels", (5, 5, 3))),
                                  arch.get("hidden", 64)),
    )


def load_model(path) -> ModelParams:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise AudioIOError(f"no such model file: {path}") from None
    except OSError as exc:
        raise AudioIOError(f"cannot read model {path}: {exc}") from exc
    return parse_model(data)
