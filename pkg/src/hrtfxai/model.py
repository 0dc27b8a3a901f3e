"""Small 1D CNN for elevation-sector classification, implemented on numpy.

Stack: conv(64,k16) -> pool2 -> conv(32,k16) -> pool2 -> conv(32,k8)
-> pool2 -> conv(16,k8) -> global average pool -> dense(9).  All convs
use ReLU, stride 1 and zero 'same' padding; pooling is max over pairs
with an odd trailing element dropped.  Per-layer trainable counts are
2112, 32800, 8224, 4112 and 153 (total 47401).

Everything trains in float64 so analytic gradients can be checked
against central finite differences.  The global average pool makes the
dense head length-agnostic, so a trained model accepts any input width
of at least the largest kernel.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coords import N_CLASSES

__all__ = [
    "MODEL_MAGIC",
    "NumericalError",
    "ModelFormatError",
    "TrainConfig",
    "ForwardTrace",
    "TrainHistory",
    "CnnModel",
    "build_model",
    "softmax",
    "cross_entropy",
    "train",
    "predict",
    "save",
    "load",
    "MIN_INPUT_BINS",
]

MODEL_MAGIC = b"HRTFCNN1"
MIN_INPUT_BINS = 16  # largest conv kernel


class NumericalError(RuntimeError):
    """Training diverged (non-finite loss)."""


class ModelFormatError(Exception):
    """Corrupt or mismatched model file."""


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(probs, labels):
    n = probs.shape[0]
    p = probs[np.arange(n), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def ce_grad_logits(probs, labels):
    """d(mean cross-entropy)/d(logits); zero exactly when probs == onehot."""
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return grad / n


# ---------------------------------------------------------------------------
# layers


class _Conv1d:
    """Same-padded ReLU conv on length-major [n, L, ch] activations.

    Forward and the weight gradient run as single matmuls over an
    im2col buffer built with blocked (contiguous) copies; the input
    gradient runs as one matmul per kernel tap, which benchmarks faster
    here than the wide col2im matmul.  Large scratch buffers are reused
    across calls of the same batch shape.
    """

    def __init__(self, in_ch, out_ch, k, rng):
        limit = np.sqrt(6.0 / (in_ch * k))  # He-uniform fan-in
        self.w = rng.uniform(-limit, limit, size=(k, in_ch, out_ch))
        self.b = np.zeros(out_ch)
        self.k = k
        self.pad_left = (k - 1) // 2
        self._cache = None
        self._buffers = {}

    @property
    def n_params(self):
        return self.w.size + self.b.size

    def _scratch(self, n, length, c):
        key = (n, length)
        buf = self._buffers.get(key)
        if buf is None:
            out_ch = self.w.shape[2]
            buf = {
                "xp": np.zeros((n, length + self.k - 1, c)),
                "cols": np.empty((n, length, self.k, c)),
                "pre": np.empty((n, length, out_ch)),
                "mask": np.empty((n, length, out_ch), dtype=bool),
                "dz": np.empty((n * length, c)),
            }
            self._buffers[key] = buf
        return buf

    def forward(self, x, keep_cache):
        n, length, c = x.shape
        buf = self._scratch(n, length, c)
        xp, cols, pre = buf["xp"], buf["cols"], buf["pre"]
        xp[:, self.pad_left:self.pad_left + length, :] = x
        for j in range(self.k):
            cols[:, :, j, :] = xp[:, j:j + length, :]
        out_ch = self.w.shape[2]
        np.matmul(cols.reshape(n * length, -1), self.w.reshape(-1, out_ch),
                  out=pre.reshape(n * length, out_ch))
        pre += self.b
        if keep_cache:
            mask = buf["mask"]
            np.greater(pre, 0.0, out=mask)
            self._cache = (n, length, c)
        np.maximum(pre, 0.0, out=pre)
        return pre

    def backward(self, dout, need_dx=True):
        n, length, c = self._cache
        buf = self._buffers[(n, length)]
        cols, mask, dz = buf["cols"], buf["mask"], buf["dz"]
        out_ch = self.w.shape[2]
        dpref = (dout * mask).reshape(n * length, out_ch)
        dw = (cols.reshape(n * length, -1).T @ dpref).reshape(self.w.shape)
        db = dpref.sum(axis=0)
        if not need_dx:
            return None, dw, db
        dxp = np.zeros((n, length + self.k - 1, c))
        for j in range(self.k):
            np.matmul(dpref, self.w[j].T, out=dz)
            dxp[:, j:j + length, :] += dz.reshape(n, length, c)
        dx = dxp[:, self.pad_left:self.pad_left + length, :]
        return dx, dw, db


class _MaxPool2:
    def __init__(self):
        self._cache = None

    def forward(self, x, keep_cache):
        n, length, c = x.shape
        lout = length // 2  # odd trailing element dropped
        a = x[:, 0:2 * lout:2, :]
        b = x[:, 1:2 * lout:2, :]
        first_wins = a >= b  # ties route the gradient to the earlier slot
        out = np.where(first_wins, a, b)
        if keep_cache:
            self._cache = (first_wins, (n, length, c))
        return out

    def backward(self, dout):
        first_wins, (n, length, c) = self._cache
        lout = length // 2
        dx = np.zeros((n, length, c))
        dx[:, 0:2 * lout:2, :] = dout * first_wins
        dx[:, 1:2 * lout:2, :] = dout * ~first_wins
        return dx


@dataclass
class ForwardTrace:
    """Inputs to the classification head for one sample, kept for CAM."""

    logits: np.ndarray  # [9]
    probs: np.ndarray  # [9]
    last_conv: np.ndarray  # [16, L] post-ReLU activations
    gap: np.ndarray  # [16]


class CnnModel:
    """The full network; parameters live in the layer objects."""

    ARCH = (
        ("conv1", 2, 64, 16),
        ("conv2", 64, 32, 16),
        ("conv3", 32, 32, 8),
        ("conv4", 32, 16, 8),
    )
    DENSE_IN = 16

    def __init__(self, rng):
        self.convs = [
            _Conv1d(c_in, c_out, k, rng) for _, c_in, c_out, k in self.ARCH
        ]
        self.pools = [_MaxPool2() for _ in range(3)]
        limit = np.sqrt(6.0 / self.DENSE_IN)
        self.dense_w = rng.uniform(-limit, limit, size=(self.DENSE_IN, N_CLASSES))
        self.dense_b = np.zeros(N_CLASSES)
        self._gap_cache = None

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        """Ordered (name, array) pairs; arrays are live views."""
        out = []
        for (name, *_), conv in zip(self.ARCH, self.convs):
            out.append((f"{name}.w", conv.w))
            out.append((f"{name}.b", conv.b))
        out.append(("dense.w", self.dense_w))
        out.append(("dense.b", self.dense_b))
        return out

    def set_parameters(self, arrays):
        for (_, current), new in zip(self.parameters(), arrays):
            current[...] = new

    def layer_param_counts(self):
        counts = [conv.n_params for conv in self.convs]
        counts.append(self.dense_w.size + self.dense_b.size)
        return counts

    def n_params(self):
        return sum(self.layer_param_counts())

    def copy_parameters(self):
        return [arr.copy() for _, arr in self.parameters()]

    # -- forward / backward --------------------------------------------------

    def forward_batch(self, x, keep_cache=False):
        """x: [n, 2, B] float64 -> (logits [n, 9], last_conv [n, 16, L])."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1] != 2:
            raise ValueError("expected input of shape [n, 2, B]")
        if x.shape[2] < MIN_INPUT_BINS:
            raise ValueError(
                f"input width {x.shape[2]} below minimum {MIN_INPUT_BINS}"
            )
        h = np.ascontiguousarray(x.transpose(0, 2, 1))  # length-major
        h = self.convs[0].forward(h, keep_cache)
        h = self.pools[0].forward(h, keep_cache)
        h = self.convs[1].forward(h, keep_cache)
        h = self.pools[1].forward(h, keep_cache)
        h = self.convs[2].forward(h, keep_cache)
        h = self.pools[2].forward(h, keep_cache)
        a = self.convs[3].forward(h, keep_cache)
        gap = a.mean(axis=1)
        logits = gap @ self.dense_w + self.dense_b
        if keep_cache:
            self._gap_cache = (gap, a.shape[1])
        # Copy out of the conv scratch buffer so traces survive later calls.
        return logits, np.ascontiguousarray(a.transpose(0, 2, 1))

    def forward(self, x) -> ForwardTrace:
        """Single-sample forward returning head inputs for CAM."""
        x = np.asarray(x, dtype=float)
        logits, a = self.forward_batch(x[None], keep_cache=False)
        logits = logits[0]
        return ForwardTrace(logits, softmax(logits), a[0], a[0].mean(axis=1))

    def backward_batch(self, dlogits):
        """Gradients for every parameter given d(loss)/d(logits)."""
        gap, length = self._gap_cache
        grads = {}
        grads["dense.w"] = gap.T @ dlogits
        grads["dense.b"] = dlogits.sum(axis=0)
        dgap = dlogits @ self.dense_w.T
        da = np.repeat(dgap[:, None, :], length, axis=1) / length
        d, dw, db = self.convs[3].backward(da)
        grads["conv4.w"], grads["conv4.b"] = dw, db
        d = self.pools[2].backward(d)
        d, dw, db = self.convs[2].backward(d)
        grads["conv3.w"], grads["conv3.b"] = dw, db
        d = self.pools[1].backward(d)
        d, dw, db = self.convs[1].backward(d)
        grads["conv2.w"], grads["conv2.b"] = dw, db
        d = self.pools[0].backward(d)
        _, dw, db = self.convs[0].backward(d, need_dx=False)
        grads["conv1.w"], grads["conv1.b"] = dw, db
        return grads

    def loss_and_grads(self, x, labels):
        logits, _ = self.forward_batch(x, keep_cache=True)
        probs = softmax(logits)
        loss = cross_entropy(probs, labels)
        grads = self.backward_batch(ce_grad_logits(probs, labels))
        return loss, grads


def build_model(seed=0) -> CnnModel:
    return CnnModel(np.random.default_rng(seed))


def predict(model: CnnModel, x):
    """(class_id, confidence) for one sample; argmax ties -> lowest id."""
    trace = model.forward(x)
    cls = int(np.argmax(trace.probs))
    return cls, float(trace.probs[cls])


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    plateau_factor: float = 0.5
    plateau_patience: int = 15
    early_stop_patience: int = 30
    min_rel_improvement: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if min(self.learning_rate, self.batch_size, self.max_epochs) <= 0:
            raise ValueError("learning rate, batch size and epochs must be positive")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    lr_changes: list = field(default_factory=list)  # epochs where LR halved
    best_epoch: int = 0
    stop_epoch: int = 0

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "learning_rate": self.learning_rate,
            "lr_changes": self.lr_changes,
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
        }


class _Adam:
    def __init__(self, shapes, cfg: TrainConfig):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self.cfg = cfg

    def step(self, params, grads, lr):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def _dataset_loss(model, x, labels, batch_size=64):
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start:start + batch_size]
        yb = labels[start:start + batch_size]
        logits, _ = model.forward_batch(xb)
        total += cross_entropy(softmax(logits), yb) * xb.shape[0]
    return total / x.shape[0]


def train(train_x, train_y, val_x, val_y, cfg: TrainConfig, log=None):
    """Fit the network; returns (model, history).

    Deterministic given cfg.seed: weight init, shuffle order and batch
    boundaries are all derived from one generator, and every reduction
    runs in a fixed order.  The returned model carries the weights of the
    best validation epoch.
    """
    train_x = np.asarray(train_x, dtype=float)
    val_x = np.asarray(val_x, dtype=float)
    train_y = np.asarray(train_y, dtype=int)
    val_y = np.asarray(val_y, dtype=int)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ValueError("train and validation sets must be nonempty")
    if train_y.min() < 0 or train_y.max() >= N_CLASSES:
        raise ValueError("labels must lie in 0..8")

    rng = np.random.default_rng(cfg.seed)
    model = CnnModel(rng)
    param_arrays = [arr for _, arr in model.parameters()]
    grad_names = [name for name, _ in model.parameters()]
    adam = _Adam([arr.shape for arr in param_arrays], cfg)

    history = TrainHistory()
    lr = cfg.learning_rate
    best_val = np.inf
    best_params = model.copy_parameters()
    plateau_stale = 0
    early_stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_x.shape[0])
        epoch_loss = 0.0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(train_x[batch], train_y[batch])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}"
                )
            adam.step(param_arrays, [grads[n] for n in grad_names], lr)
            epoch_loss += loss * batch.size
        epoch_loss /= order.size

        val_loss = _dataset_loss(model, val_x, val_y)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(epoch_loss)
        history.val_loss.append(val_loss)
        history.learning_rate.append(lr)
        if log:
            log(f"epoch {epoch:3d}  train {epoch_loss:.4f}  "
                f"val {val_loss:.4f}  lr {lr:.2e}")

        improved = val_loss < best_val * (1.0 - cfg.min_rel_improvement)
        if improved:
            best_val = val_loss
            best_params = model.copy_parameters()
            history.best_epoch = epoch
            plateau_stale = 0
            early_stale = 0
        else:
            plateau_stale += 1
            early_stale += 1
            if plateau_stale >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                history.lr_changes.append(epoch)
                plateau_stale = 0
            if early_stale >= cfg.early_stop_patience:
                break

    history.stop_epoch = epoch
    model.set_parameters(best_params)
    return model, history


# ---------------------------------------------------------------------------
# persistence


def save(model: CnnModel, path):
    """Write magic, JSON layer manifest, then float64 LE parameter blocks."""
    manifest = {
        "layers": [
            {"name": name, "shape": list(arr.shape)}
            for name, arr in model.parameters()
        ]
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in model.parameters():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path) -> CnnModel:
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    if len(raw) < 12:
        raise ModelFormatError(f"{path}: truncated header")
    (meta_len,) = struct.unpack("<I", raw[8:12])
    meta_end = 12 + meta_len
    if len(raw) < meta_end:
        raise ModelFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[12:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: bad manifest: {exc}") from exc

    model = build_model(seed=0)
    expected = [(name, arr.shape) for name, arr in model.parameters()]
    declared = [(d["name"], tuple(d["shape"])) for d in manifest["layers"]]
    if declared != expected:
        raise ModelFormatError(f"{path}: layer manifest does not match architecture")

    offset = meta_end
    arrays = []
    for _, shape in expected:
        size = int(np.prod(shape)) * 8
        chunk = raw[offset:offset + size]
        if len(chunk) < size:
            raise ModelFormatError(f"{path}: truncated parameter block")
        arrays.append(np.frombuffer(chunk, dtype="<f8").reshape(shape).copy())
        offset += size
    if offset != len(raw):
        raise ModelFormatError(f"{path}: trailing bytes after parameters")
    model.set_parameters(arrays)
    return model
