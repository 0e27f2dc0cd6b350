"""L2-regularized squared-epsilon-insensitive support vector regression.

Objective: 0.5*w'w + C * sum_i max(0, |w'x_i - d_i| - eps)^2 with a constant-1
bias feature appended to x (regularized like the rest).  The loss is convex
and once-differentiable, so the model is fit by full-batch gradient descent
with a backtracking line search.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels

DEFAULT_C = 1.0
DEFAULT_EPS = 0.1
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 5000

_MAGIC = b"OSVR"
_VERSION = 1


@dataclass(frozen=True)
class SvrModel:
    """Weights plus bias; w has the feature dimension, bias is separate."""

    w: np.ndarray
    bias: float
    C: float
    epsilon: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.w)) or not np.isfinite(self.bias):
            raise ValueError("model weights must be finite")
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass(frozen=True)
class SvrTrainSet:
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.targets, dtype=np.float64)
        if f.ndim != 2 or t.ndim != 1 or f.shape[0] != t.shape[0]:
            raise ValueError("features must be (n, dim) with n matching targets")
        if f.shape[0] < 1:
            raise ValueError("training set must be non-empty")
        if not np.all(np.isfinite(f)):
            raise ValueError("non-finite feature values")
        if t.min() < 0.0 or t.max() > 1.0:
            raise ValueError("targets must lie in [0, 1]")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "targets", t)


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    # einsum stays single-threaded regardless of the BLAS pool, keeping
    # objective values identical across --threads settings
    return float(np.einsum("i,i->", a, b))


def _residual_coeff(pred: np.ndarray, targets: np.ndarray, eps: float) -> np.ndarray:
    """Derivative of the squared eps-insensitive loss wrt the prediction, halved."""
    r = pred - targets
    return np.sign(r) * np.maximum(np.abs(r) - eps, 0.0)


def svr_objective(w: np.ndarray, train: SvrTrainSet, C: float, eps: float, bias: float = 0.0) -> float:
    if w.shape[0] != train.features.shape[1]:
        raise ValueError(f"weight dim {w.shape[0]} != feature dim {train.features.shape[1]}")
    excess = np.abs(_kernels.matvec(train.features, w) + bias - train.targets) - eps
    loss = np.maximum(excess, 0.0)
    return 0.5 * (_dot(w, w) + bias * bias) + C * _dot(loss, loss)


def svr_gradient(
    w: np.ndarray, train: SvrTrainSet, C: float, eps: float, bias: float = 0.0
) -> tuple[np.ndarray, float]:
    """Gradient wrt (w, bias) of svr_objective."""
    coeff = _residual_coeff(_kernels.matvec(train.features, w) + bias, train.targets, eps)
    gw = w + 2.0 * C * _kernels.rmatvec(train.features, coeff)
    gb = bias + 2.0 * C * float(np.sum(coeff))
    return gw, gb


def svr_train(
    train: SvrTrainSet,
    C: float = DEFAULT_C,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    include_bias: bool = True,
) -> SvrModel:
    """Fit by gradient descent with Armijo backtracking.

    The initial trial step of each iteration is the Barzilai-Borwein length
    from the previous accepted step; backtracking (c=1e-4, shrink 0.5) then
    enforces monotone descent, so the optimum reached is that of the convex
    objective regardless of the step seeding.  Deterministic: w starts at 0.
    """
    X, d = train.features, train.targets
    dim = X.shape[1]
    w = np.zeros(dim)
    bias = 0.0
    f = svr_objective(w, train, C, eps, bias)
    gw, gb = svr_gradient(w, train, C, eps, bias)
    if not include_bias:
        gb = 0.0
    step = 1.0
    prev_gw, prev_gb = None, 0.0
    prev_w, prev_bias = None, 0.0
    for _ in range(max_iter):
        gnorm = max(np.abs(gw).max() if dim else 0.0, abs(gb))
        if gnorm <= tol:
            break
        if prev_w is not None:
            sw = w - prev_w
            sb = bias - prev_bias
            yw = gw - prev_gw
            yb = gb - prev_gb
            sy = _dot(sw, yw) + sb * yb
            if sy > 1e-300:
                step = (_dot(sw, sw) + sb * sb) / sy
            step = min(max(step, 1e-12), 1e12)
        g2 = _dot(gw, gw) + gb * gb
        t = step
        for _ in range(80):
            w_new = w - t * gw
            bias_new = bias - t * gb
            f_new = svr_objective(w_new, train, C, eps, bias_new)
            if f_new <= f - 1e-4 * t * g2:
                break
            t *= 0.5
        else:
            break
        prev_w, prev_bias, prev_gw, prev_gb = w, bias, gw, gb
        w, bias, f, step = w_new, bias_new, f_new, t
        gw, gb = svr_gradient(w, train, C, eps, bias)
        if not include_bias:
            gb = 0.0
    return SvrModel(w=w, bias=float(bias), C=C, epsilon=eps)


def svr_predict(model: SvrModel, x: np.ndarray) -> float | np.ndarray:
    """Raw regression value w'x + bias; batch rows accepted."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[-1] != model.w.shape[0]:
        raise ValueError(f"feature dim {x.shape[-1]} != model dim {model.w.shape[0]}")
    if x.ndim == 1:
        return _dot(x, model.w) + model.bias
    return _kernels.matvec(x, model.w) + model.bias


def save_svr(model: SvrModel, path) -> None:
    dim = model.w.shape[0]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, dim))
        fh.write(np.concatenate([model.w, [model.bias]]).astype("<f8").tobytes())
        fh.write(struct.pack("<dd", model.C, model.epsilon))


def load_svr(path) -> SvrModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ValueError("not a regression model file (bad magic)")
    version, dim = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported model file version {version}")
    need = 12 + (dim + 1) * 8 + 16
    if len(raw) != need:
        raise ValueError("truncated or oversized model file")
    vals = np.frombuffer(raw, dtype="<f8", count=dim + 1, offset=12)
    C, eps = struct.unpack_from("<dd", raw, 12 + (dim + 1) * 8)
    return SvrModel(w=vals[:dim].copy(), bias=float(vals[dim]), C=C, epsilon=eps)
