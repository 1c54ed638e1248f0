"""Dense-tensor math and the fixed dual-branch CNN with manual backprop.

The network: two parallel conv layers (3x3 and 9x9 kernels, 16 channels
each, "same" zero padding) over the histogram stack with time bins as
input channels, each followed by ReLU and 2x2/stride-2 max-pooling, then
flattened, concatenated and fed to a single linear layer with 4 outputs.
Everything is float64; gradients are derived layer by layer by hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError, ShapeError

CLASS_NAMES = ("AM", "JM", "AF", "JF")
N_CLASSES = 4
CONV_CHANNELS = 16
KERNEL_A = 3
KERNEL_B = 9

PARAM_NAMES = (
    "conv_a_weights",
    "conv_a_bias",
    "conv_b_weights",
    "conv_b_bias",
    "linear_weights",
    "linear_bias",
)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 8
    momentum: float = 0.0
    rng_seed: int = 0
    normalization: str = "total"  # one of: none, total, max

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.momentum < 0:
            raise ConfigError("momentum must be >= 0")
        if self.normalization not in ("none", "total", "max"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")


def feature_dim(grid_n: int) -> int:
    """Length of the concatenated flattened pooled features."""
    half = grid_n // 2
    return 2 * CONV_CHANNELS * half * half


@dataclass
class ModelParams:
    """Weights of the two conv branches plus the linear head."""

    t_bins: int
    grid_n: int
    conv_a_weights: np.ndarray  # [16, T, 3, 3]
    conv_a_bias: np.ndarray  # [16]
    conv_b_weights: np.ndarray  # [16, T, 9, 9]
    conv_b_bias: np.ndarray  # [16]
    linear_weights: np.ndarray  # [4, F]
    linear_bias: np.ndarray  # [4]

    def validate(self):
        t, n = self.t_bins, self.grid_n
        f = feature_dim(n)
        expect = {
            "conv_a_weights": (CONV_CHANNELS, t, KERNEL_A, KERNEL_A),
            "conv_a_bias": (CONV_CHANNELS,),
            "conv_b_weights": (CONV_CHANNELS, t, KERNEL_B, KERNEL_B),
            "conv_b_bias": (CONV_CHANNELS,),
            "linear_weights": (N_CLASSES, f),
            "linear_bias": (N_CLASSES,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {got}")

    def copy(self) -> "ModelParams":
        return replace(
            self, **{n: getattr(self, n).copy() for n in PARAM_NAMES}
        )


def init_params(t_bins: int, grid_n: int, rng_seed: int = 0) -> ModelParams:
    """Uniform +-sqrt(6/fan_in) weights, zero biases, seedable."""
    rng = np.random.default_rng(rng_seed)

    def uniform(shape, fan_in):
        lim = np.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, size=shape)

    f = feature_dim(grid_n)
    p = ModelParams(
        t_bins=t_bins,
        grid_n=grid_n,
        conv_a_weights=uniform(
            (CONV_CHANNELS, t_bins, KERNEL_A, KERNEL_A),
            t_bins * KERNEL_A * KERNEL_A,
        ),
        conv_a_bias=np.zeros(CONV_CHANNELS),
        conv_b_weights=uniform(
            (CONV_CHANNELS, t_bins, KERNEL_B, KERNEL_B),
            t_bins * KERNEL_B * KERNEL_B,
        ),
        conv_b_bias=np.zeros(CONV_CHANNELS),
        linear_weights=uniform((N_CLASSES, f), f),
        linear_bias=np.zeros(N_CLASSES),
    )
    p.validate()
    return p


# ---------------------------------------------------------------------------
# layers (public single-sample ops + batched internals)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padding cross-correlation of x [C,H,W] with w [O,C,k,k]."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.ndim != 3 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError(
            f"conv2d expects x [C,H,W], w [O,C,k,k], b [O]; got "
            f"{x.shape}, {w.shape}, {b.shape}"
        )
    if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {w.shape[2:]}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(
            f"input has {x.shape[0]} channels but weights expect {w.shape[1]}"
        )
    if w.shape[0] != b.shape[0]:
        raise ShapeError("bias length must equal output channel count")
    return _conv_forward(x[None], w, b)[0]


def _im2col(xb: np.ndarray, k: int) -> np.ndarray:
    """Zero-padded sliding windows as a (B*H*W, C*k*k) matrix."""
    b, c, h, w = xb.shape
    p = (k - 1) // 2
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # [B,C,H,W,k,k]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)


def _conv_forward(xb: np.ndarray, w: np.ndarray, b: np.ndarray, cols=None):
    """Batched conv: xb [B,C,H,W] -> [B,O,H,W], one GEMM over im2col."""
    nb, _, h, wd = xb.shape
    k = w.shape[-1]
    if cols is None:
        cols = _im2col(xb, k)
    out = cols @ w.reshape(w.shape[0], -1).T  # (BHW, O)
    return out.reshape(nb, h, wd, -1).transpose(0, 3, 1, 2) + b[None, :, None, None]


def _conv_param_grads(cols: np.ndarray, dy: np.ndarray, kshape):
    """Weight/bias gradients from cached im2col columns; dy [B,O,H,W]."""
    o = dy.shape[1]
    dmat = dy.transpose(0, 2, 3, 1).reshape(-1, o)  # (BHW, O)
    dw = (dmat.T @ cols).reshape((o,) + tuple(kshape))
    return dw, dmat.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def maxpool2d(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 max pool of x [C,H,W]; odd trailing row/col dropped."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ShapeError(f"maxpool2d expects [C,H,W], got {x.shape}")
    out, _ = _pool_forward(x[None])
    return out[0]


def _pool_forward(xb: np.ndarray):
    b, c, h, w = xb.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2d needs H,W >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    t = (
        xb[:, :, : h2 * 2, : w2 * 2]
        .reshape(b, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h2, w2, 4)
    )
    idx = t.argmax(axis=-1)
    out = np.take_along_axis(t, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(idx: np.ndarray, dy: np.ndarray, in_shape):
    b, c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    g4 = np.zeros((b, c, h2, w2, 4))
    np.put_along_axis(g4, idx[..., None], dy[..., None], axis=-1)
    g = (
        g4.reshape(b, c, h2, w2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h2 * 2, w2 * 2)
    )
    out = np.zeros(in_shape)
    out[:, :, : h2 * 2, : w2 * 2] = g
    return out


# ---------------------------------------------------------------------------
# forward / loss


def _forward_batch(params: ModelParams, xb: np.ndarray, keep_cols: bool = False):
    """Full forward for a batch; returns (logits [B,4], cache)."""
    if xb.ndim != 4 or xb.shape[1:] != (params.t_bins, params.grid_n, params.grid_n):
        raise ShapeError(
            f"features must be [B,{params.t_bins},{params.grid_n},"
            f"{params.grid_n}], got {xb.shape}"
        )
    cols_a = _im2col(xb, KERNEL_A)
    cols_b = _im2col(xb, KERNEL_B)
    ca = _conv_forward(xb, params.conv_a_weights, params.conv_a_bias, cols_a)
    ra = np.maximum(ca, 0.0)
    pa, ia = _pool_forward(ra)
    cb = _conv_forward(xb, params.conv_b_weights, params.conv_b_bias, cols_b)
    rb = np.maximum(cb, 0.0)
    pb, ib = _pool_forward(rb)
    nb = xb.shape[0]
    feats = np.concatenate(
        [pa.reshape(nb, -1), pb.reshape(nb, -1)], axis=1
    )
    logits = feats @ params.linear_weights.T + params.linear_bias
    cache = {
        "mask_a": ca > 0,
        "mask_b": cb > 0,
        "relu_a": ra,
        "relu_b": rb,
        "idx_a": ia,
        "idx_b": ib,
        "pool_shape_a": pa.shape,
        "pool_shape_b": pb.shape,
        "feats": feats,
    }
    if keep_cols:
        cache["cols_a"] = cols_a
        cache["cols_b"] = cols_b
    return logits, cache


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Logits [4] for one histogram-stack tensor [T,N,N]."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 3:
        raise ShapeError(f"features must be [T,N,N], got {features.shape}")
    logits, _ = _forward_batch(params, features[None])
    return logits[0]


def predict(params: ModelParams, features: np.ndarray) -> int:
    """Argmax class index; ties go to the lowest index."""
    return int(np.argmax(forward(params, features)))


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Stable CE loss and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    if logits.shape != (N_CLASSES,):
        raise ShapeError(f"logits must have shape ({N_CLASSES},), got {logits.shape}")
    if not (isinstance(label, (int, np.integer)) and 0 <= label < N_CLASSES):
        raise ConfigError(f"label must be in 0..{N_CLASSES - 1}, got {label!r}")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    loss = lse - logits[label]
    grad = np.exp(logits - lse)
    grad[label] -= 1.0
    return float(loss), grad


# ---------------------------------------------------------------------------
# backward


def _loss_and_grads(params: ModelParams, batch):
    """Mean batch CE loss and gradients for every parameter."""
    if not batch:
        raise ConfigError("batch must be non-empty")
    xb = np.stack([np.asarray(x, dtype=float) for x, _ in batch])
    labels = np.array([lab for _, lab in batch], dtype=int)
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise ConfigError("labels must be in 0..3")
    nb = len(batch)

    logits, cache = _forward_batch(params, xb, keep_cols=True)
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    losses = lse[:, 0] - logits[np.arange(nb), labels]
    probs = np.exp(logits - lse)
    dlogits = probs.copy()
    dlogits[np.arange(nb), labels] -= 1.0
    dlogits /= nb

    grads = {
        "linear_weights": dlogits.T @ cache["feats"],
        "linear_bias": dlogits.sum(axis=0),
    }
    dfeat = dlogits @ params.linear_weights  # [B,F]
    half = cache["feats"].shape[1] // 2
    dpa = dfeat[:, :half].reshape(cache["pool_shape_a"])
    dpb = dfeat[:, half:].reshape(cache["pool_shape_b"])
    dra = _pool_backward(cache["idx_a"], dpa, cache["relu_a"].shape)
    drb = _pool_backward(cache["idx_b"], dpb, cache["relu_b"].shape)
    dca = dra * cache["mask_a"]
    dcb = drb * cache["mask_b"]
    dwa, dba = _conv_param_grads(
        cache["cols_a"], dca, params.conv_a_weights.shape[1:]
    )
    dwb, dbb = _conv_param_grads(
        cache["cols_b"], dcb, params.conv_b_weights.shape[1:]
    )
    grads["conv_a_weights"] = dwa
    grads["conv_a_bias"] = dba
    grads["conv_b_weights"] = dwb
    grads["conv_b_bias"] = dbb

    mean_loss = float(losses.mean())
    if not np.isfinite(mean_loss):
        raise NumericError("non-finite loss in softmax cross-entropy")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {name}")
    return mean_loss, grads


def backprop_batch(params: ModelParams, batch, config: TrainConfig, velocity=None):
    """One SGD step on the mean batch loss.

    Returns (mean_loss, updated params, velocity); pass the velocity back
    in when config.momentum > 0.
    """
    loss, grads = _loss_and_grads(params, batch)
    if velocity is None:
        velocity = {n: np.zeros_like(getattr(params, n)) for n in PARAM_NAMES}
    new = {}
    for name in PARAM_NAMES:
        velocity[name] = config.momentum * velocity[name] + grads[name]
        new[name] = getattr(params, name) - config.learning_rate * velocity[name]
    return loss, replace(params, **new), velocity


def grad_check(params: ModelParams, samples, h: float = 1e-6,
               atol: float = 1e-8) -> float:
    """Worst relative error of analytic vs central-difference gradients.

    samples may be one (features, label) pair or a list of them; the loss
    checked is the mean over the list.  Discrepancies below atol count as
    zero: the central difference carries roundoff noise of order
    eps * |loss| / h, which would otherwise swamp near-zero gradients.
    """
    if h <= 0:
        raise ConfigError("h must be > 0")
    if isinstance(samples, tuple):
        samples = [samples]

    _, grads = _loss_and_grads(params, samples)
    xb = np.stack([np.asarray(x, dtype=float) for x, _ in samples])
    labels = np.array([lab for _, lab in samples], dtype=int)

    def loss_at(p):
        logits, _ = _forward_batch(p, xb)
        m = logits.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
        return float((lse[:, 0] - logits[np.arange(len(samples)), labels]).mean())

    worst = 0.0
    probe = params.copy()
    for name in PARAM_NAMES:
        arr = getattr(probe, name)
        flat = arr.reshape(-1)
        aflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_at(probe)
            flat[i] = orig - h
            lm = loss_at(probe)
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            diff = abs(aflat[i] - numeric)
            if diff < atol:
                continue
            denom = max(abs(aflat[i]), abs(numeric), 1e-12)
            worst = max(worst, diff / denom)
    return worst


# ---------------------------------------------------------------------------
# serialization


def params_to_dict(params: ModelParams) -> dict:
    return {
        "config": {"t_bins": params.t_bins, "grid_n": params.grid_n},
        "tensors": {
            name: {
                "shape": list(getattr(params, name).shape),
                "data": getattr(params, name).ravel().tolist(),
            }
            for name in PARAM_NAMES
        },
    }


def params_from_dict(doc: dict) -> ModelParams:
    cfg = doc["config"]
    tensors = {}
    for name in PARAM_NAMES:
        entry = doc["tensors"][name]
        arr = np.array(entry["data"], dtype=float).reshape(entry["shape"])
        tensors[name] = arr
    p = ModelParams(t_bins=int(cfg["t_bins"]), grid_n=int(cfg["grid_n"]), **tensors)
    p.validate()
    return p


def save_params(params: ModelParams, path):
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh)


def load_params(path) -> ModelParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
