"""Conv1D x2 -> stacked LSTM -> linear classifier, trained on a PU risk.

Everything is written against numpy arrays with hand-derived gradients. The
time-stepped inner loops live in :mod:`turngrab.kernels`.

Parameters are stored as float32; every computation casts them to float64
first, so a model that was saved and loaded produces bit-identical logits.
"""

import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    DivergenceDetected,
    EmptyDataset,
    InvalidConfig,
    NonFiniteActivation,
    ShapeMismatch,
    SingleClass,
)
from .metrics import confusion, mcc
from .pu import RiskConfig, risk_terms

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"TGRBWTS\x00"

# choices with no sourced value, echoed with every config
UNREPORTED_DEFAULTS = {
    "optimizer": "adam(beta1=0.9, beta2=0.999, eps=1e-8)",
    "batch_size": "chosen here",
    "kernel_size": "chosen here",
    "padding": "same",
    "activation": "relu after each conv",
    "summary": "last LSTM hidden state",
    "init": "glorot uniform, zero biases",
}


@dataclass(frozen=True)
class NetworkConfig:
    conv1_dim: int = 8
    conv2_dim: int = 128
    kernel_size: int = 3
    lstm_layers: int = 2
    lstm_dim: int = 16
    input_channels: int = 19
    seq_len: int = 100
    learning_rate: float = 1e-2
    batch_size: int = 64
    epochs: int = 50
    init_seed: int = 0

    def __post_init__(self):
        for f in ("conv1_dim", "conv2_dim", "kernel_size", "lstm_layers", "lstm_dim",
                  "input_channels", "seq_len", "batch_size"):
            if getattr(self, f) < 1:
                raise InvalidConfig(f"{f} must be >= 1")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.seq_len < self.kernel_size:
            raise InvalidConfig("seq_len must be at least kernel_size")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")

    def to_dict(self):
        d = asdict(self)
        d["unreported_defaults"] = dict(UNREPORTED_DEFAULTS)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_shapes(cfg):
    K, C = cfg.kernel_size, cfg.input_channels
    H = cfg.lstm_dim
    shapes = {
        "conv1.weight": (K, C, cfg.conv1_dim),
        "conv1.bias": (cfg.conv1_dim,),
        "conv2.weight": (K, cfg.conv1_dim, cfg.conv2_dim),
        "conv2.bias": (cfg.conv2_dim,),
    }
    d_in = cfg.conv2_dim
    for layer in range(cfg.lstm_layers):
        shapes[f"lstm{layer}.weight"] = (d_in + H, 4 * H)
        shapes[f"lstm{layer}.bias"] = (4 * H,)
        d_in = H
    shapes["fc.weight"] = (H,)
    shapes["fc.bias"] = ()
    return shapes


def _fans(name, shape):
    if name.startswith("conv"):
        K, cin, cout = shape
        return K * cin, K * cout
    if name.startswith("lstm"):
        return shape
    return shape[0], 1


class ModelParams:
    """Named weight tensors plus the config that shaped them."""

    def __init__(self, tensors, config, format_version=FORMAT_VERSION):
        self.tensors = dict(tensors)
        self.config = config
        self.format_version = format_version
        expected = param_shapes(config)
        if set(expected) != set(self.tensors):
            raise ShapeMismatch("parameter names do not match the network config")
        for name, shape in expected.items():
            if tuple(np.shape(self.tensors[name])) != shape:
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {np.shape(self.tensors[name])}")

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def as_float64(self):
        return {k: np.asarray(v, dtype=np.float64) for k, v in self.tensors.items()}

    def to_float32(self):
        return ModelParams({k: np.asarray(v, dtype=np.float32) for k, v in self.tensors.items()},
                           self.config, self.format_version)

    def all_finite(self):
        return all(np.isfinite(v).all() for v in self.tensors.values())

    # -- serialization ------------------------------------------------------

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", self.format_version))
        cfg = json.dumps(self.config.to_dict(), sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(cfg)))
        buf.write(cfg)
        buf.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            arr = np.asarray(self.tensors[name], dtype="<f4", order="C")
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        view = memoryview(data)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise ShapeMismatch("weights file is truncated")
            chunk = view[pos:pos + n]
            pos += n
            return chunk

        if bytes(take(len(MAGIC))) != MAGIC:
            raise ShapeMismatch("not a weights file (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != FORMAT_VERSION:
            raise ShapeMismatch(f"unsupported weights format version {version}")
        (n_cfg,) = struct.unpack("<I", take(4))
        config = NetworkConfig.from_dict(json.loads(bytes(take(n_cfg)).decode("utf-8")))
        (n_tensors,) = struct.unpack("<I", take(4))
        tensors = {}
        for _ in range(n_tensors):
            (n_name,) = struct.unpack("<H", take(2))
            name = bytes(take(n_name)).decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(bytes(take(4 * count)), dtype="<f4").reshape(shape)
            tensors[name] = arr.astype(np.float32)
        return cls(tensors, config, version)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def init_params(cfg):
    """Glorot-uniform weights from ``cfg.init_seed``, zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
    return ModelParams(tensors, cfg)


def zero_params(cfg):
    return ModelParams({k: np.zeros(s, dtype=np.float32) for k, s in param_shapes(cfg).items()}, cfg)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _weights(params):
    if isinstance(params, ModelParams):
        return params.as_float64(), params.config
    raise TypeError("expected ModelParams")


def _check_input(X, cfg):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (cfg.seq_len, cfg.input_channels):
        raise ShapeMismatch(
            f"expected input of shape (B, {cfg.seq_len}, {cfg.input_channels}), got {X.shape}"
        )
    return np.ascontiguousarray(X)


def forward_batch(w, cfg, X):
    """Logits for a ``(B, T, C)`` batch; ``w`` is a float64 tensor dict.

    Returns ``(logits, cache)``; the cache feeds :func:`backward_batch`.
    """
    X = _check_input(X, cfg)
    z1 = kernels.conv1d_forward(X, w["conv1.weight"], w["conv1.bias"])
    a1 = np.maximum(z1, 0.0)
    z2 = kernels.conv1d_forward(a1, w["conv2.weight"], w["conv2.bias"])
    a2 = np.maximum(z2, 0.0)
    layers = []
    seq = a2
    for layer in range(cfg.lstm_layers):
        h, c, acts = kernels.lstm_forward(seq, w[f"lstm{layer}.weight"], w[f"lstm{layer}.bias"])
        layers.append((seq, h, c, acts))
        seq = np.ascontiguousarray(h[:, 1:])
    if not np.isfinite(seq).all():
        raise NonFiniteActivation("LSTM produced non-finite activations")
    last = seq[:, -1]
    logits = last @ w["fc.weight"] + w["fc.bias"]
    return logits, (X, z1, a1, z2, layers, last)


def backward_batch(w, cfg, cache, dlogits):
    X, z1, a1, z2, layers, last = cache
    dlogits = np.asarray(dlogits, dtype=np.float64)
    grads = {
        "fc.weight": last.T @ dlogits,
        "fc.bias": np.asarray(dlogits.sum()),
    }
    B, T = X.shape[:2]
    gh = np.zeros((B, T, cfg.lstm_dim))
    gh[:, -1] = dlogits[:, None] * w["fc.weight"]
    for layer in range(cfg.lstm_layers - 1, -1, -1):
        seq, h, c, acts = layers[layer]
        gx, gW, gb = kernels.lstm_backward(seq, w[f"lstm{layer}.weight"], h, c, acts,
                                           np.ascontiguousarray(gh))
        grads[f"lstm{layer}.weight"] = gW
        grads[f"lstm{layer}.bias"] = gb
        gh = gx
    gz2 = np.ascontiguousarray(gh * (z2 > 0))
    ga1, grads["conv2.weight"], grads["conv2.bias"] = kernels.conv1d_backward(a1, w["conv2.weight"], gz2)
    gz1 = np.ascontiguousarray(ga1 * (z1 > 0))
    _, grads["conv1.weight"], grads["conv1.bias"] = kernels.conv1d_backward(X, w["conv1.weight"], gz1)
    return grads


def forward(params, sample):
    """Scalar logit for one ``(T, C)`` sample."""
    w, cfg = _weights(params)
    X = np.asarray(sample)
    if X.ndim != 2:
        raise ShapeMismatch(f"expected a (T, C) sample, got shape {X.shape}")
    return float(forward_batch(w, cfg, X)[0][0])


def logits(params, X, batch_size=256):
    w, cfg = _weights(params)
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    out = [forward_batch(w, cfg, X[i:i + batch_size])[0] for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def risk_and_grads(w, cfg, first, second, risk_cfg):
    """Risk of the two score sets and its gradient w.r.t. every weight."""
    n_first = len(first)
    X = np.concatenate([np.asarray(first, dtype=np.float64), np.asarray(second, dtype=np.float64)])
    out, cache = forward_batch(w, cfg, X)
    terms = risk_terms(out[:n_first], out[n_first:], risk_cfg)
    dlogits = np.concatenate([terms.grad_first, terms.grad_second])
    return terms, backward_batch(w, cfg, cache, dlogits)


def predict(params, sample, threshold=0.0):
    """``(intention, score)`` with intention = score > threshold."""
    score = forward(params, sample)
    return score > threshold, score


def predict_batch(params, X, threshold=0.0):
    scores = logits(params, X)
    return scores > threshold, scores


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, w, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            w[name] = w[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def stack_samples(samples):
    """``(N, T, C)`` float32 array from Sample objects or an array."""
    if isinstance(samples, np.ndarray):
        return samples
    if len(samples) == 0:
        return np.zeros((0, 0, 0), dtype=np.float32)
    return np.stack([np.asarray(s.data, dtype=np.float32) for s in samples])


def labeled_arrays(samples):
    """Stack samples that carry ground truth, merging labels for validation."""
    from .segmentation import merge_annotation_labels

    X, y = [], []
    for s in samples:
        if s.truth is None:
            continue
        lab = merge_annotation_labels(s.truth, "val_merge")
        if lab is None:
            continue
        X.append(np.asarray(s.data, dtype=np.float32))
        y.append(lab)
    if not X:
        return np.zeros((0, 0, 0), dtype=np.float32), np.zeros(0, dtype=bool)
    return np.stack(X), np.array(y, dtype=bool)


def _as_val(val):
    if isinstance(val, tuple):
        X, y = val
        return np.asarray(X), np.asarray(y, dtype=bool)
    return labeled_arrays(val)


def _rounded(w, cfg):
    return ModelParams({k: v.astype(np.float32) for k, v in w.items()}, cfg)


def iter_train(first, second, val, net_cfg, risk_cfg):
    """Generator form of :func:`train`.

    Yields ``(record, params)`` after every epoch, where ``record`` is
    ``{"epoch", "train_risk", "val_mcc"}`` and ``params`` the float32
    snapshot that was validated.
    """
    P = stack_samples(first)
    Q = stack_samples(second)
    if len(P) == 0 or len(Q) == 0:
        raise EmptyDataset("training needs non-empty positive and unlabeled/negative sets")
    val_X, val_y = _as_val(val)
    if len(val_y) == 0 or val_y.all() or not val_y.any():
        raise SingleClass("validation set must contain both classes")
    if P.shape[1:] != Q.shape[1:] or P.shape[1:] != val_X.shape[1:]:
        raise ShapeMismatch("training and validation samples differ in (T, C)")

    w = init_params(net_cfg).as_float64()
    opt = Adam(net_cfg.learning_rate)
    rng = np.random.default_rng([net_cfg.init_seed, 0x5EED])
    n_batches = max(1, math.ceil((len(P) + len(Q)) / net_cfg.batch_size))
    n_batches = min(n_batches, len(P), len(Q))

    for epoch in range(1, net_cfg.epochs + 1):
        p_parts = np.array_split(rng.permutation(len(P)), n_batches)
        q_parts = np.array_split(rng.permutation(len(Q)), n_batches)
        risks = []
        for pi, qi in zip(p_parts, q_parts):
            terms, grads = risk_and_grads(w, net_cfg, P[pi], Q[qi], risk_cfg)
            if not math.isfinite(terms.value):
                raise DivergenceDetected(f"non-finite training risk at epoch {epoch}")
            opt.step(w, grads)
            risks.append(terms.value)
        snapshot = _rounded(w, net_cfg)
        if not snapshot.all_finite():
            raise DivergenceDetected(f"non-finite parameters after epoch {epoch}")
        preds = logits(snapshot, val_X) > 0.0
        record = {
            "epoch": epoch,
            "train_risk": math.fsum(risks) / len(risks),
            "val_mcc": mcc(confusion(preds, val_y)),
        }
        log.debug("epoch %d risk %.6f val_mcc %.4f", epoch, record["train_risk"], record["val_mcc"])
        yield record, snapshot


def train(first, second, val, net_cfg, risk_cfg=None, callbacks=()):
    """Train and return ``(best_params, history)``.

    ``first``/``second`` are the positive and unlabeled sets (for the ``pn``
    estimator: positive and negative). ``val`` is a list of samples with
    ground truth or an ``(X, y)`` pair. The returned parameters are those of
    the epoch with the highest validation MCC (earliest on ties). A callback
    returning a truthy value stops training after the current epoch.
    """
    risk_cfg = risk_cfg or RiskConfig()
    history = []
    best, best_mcc = None, -math.inf
    if net_cfg.epochs == 0:
        return init_params(net_cfg), history
    for record, snapshot in iter_train(first, second, val, net_cfg, risk_cfg):
        history.append(record)
        if record["val_mcc"] > best_mcc:
            best, best_mcc = snapshot, record["val_mcc"]
        if any(cb(record) for cb in callbacks):
            break
    return best, history


def save_history(history, path):
    Path(path).write_text(json.dumps(history, indent=2) + "\n", encoding="utf-8")
