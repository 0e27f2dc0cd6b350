"""Minimal deterministic neural-network engine.

Layers: convolution (no bias; batch norm follows it everywhere), batch norm,
ReLU, 2x2 max pooling, global average pooling, fully connected.  Softmax +
binary cross-entropy loss, SGD with momentum, and a finite-difference
gradient checker.  Everything is float64 and single-threaded deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
KINK_TOL = 1e-6


class Tensor:
    """Parameter array with a same-shape gradient slot."""

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad[...] = 0.0


class Layer:
    """Forward caches what backward needs; single-threaded use per instance."""

    def params(self) -> list[Tensor]:
        return []

    def state(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        """Named persistent arrays (parameters plus running statistics)."""
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def kink_mask(self) -> np.ndarray | None:
        """Output coordinates sitting on a nondifferentiable point, if any."""
        return None

    def branch_signature(self) -> list[np.ndarray]:
        """Arrays identifying the active linear region after the last forward.

        Finite-difference probes whose two evaluations land in different
        regions (a ReLU sign or pooling argmax changed) straddle a kink and
        measure nothing comparable to the analytic gradient.
        """
        return []


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """Cross-correlation with zero padding, odd kernel, no bias term."""

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, padding: int | None = None, rng=None):
        if k % 2 == 0 or k < 1:
            raise ValueError("kernel size must be odd")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.w = Tensor(_kaiming_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k))
        self._xpad = None

    def params(self):
        return [self.w]

    def state(self, prefix):
        return [(prefix + "w", self.w.data)]

    def _pad(self, x: np.ndarray) -> np.ndarray:
        p = self.padding
        if p == 0:
            return x
        n, c, h, w = x.shape
        xpad = np.zeros((n, c, h + 2 * p, w + 2 * p))
        xpad[:, :, p : p + h, p : p + w] = x
        return xpad

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.w.shape[1]:
            raise ValueError(f"expected (n,{self.w.shape[1]},h,w) input, got {x.shape}")
        self._xpad = self._pad(x)
        return _kernels.conv2d_forward(self._xpad, self.w.data, self.stride)

    def backward(self, dy, need_dx=True):
        k = self.w.shape[2]
        self.w.grad += _kernels.conv2d_backward_w(self._xpad, dy, k, self.stride)
        if not need_dx:
            return None
        hp, wp = self._xpad.shape[2], self._xpad.shape[3]
        dxpad = _kernels.conv2d_backward_x(self.w.data, dy, hp, wp, self.stride)
        p = self.padding
        return dxpad[:, :, p : hp - p, p : wp - p] if p else dxpad


class BatchNorm2d(Layer):
    """Per-channel normalization; biased batch variance, running stats for inference."""

    def __init__(self, ch: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(ch))
        self.beta = Tensor(np.zeros(ch))
        self.running_mean = np.zeros(ch)
        self.running_var = np.ones(ch)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state(self, prefix):
        return [
            (prefix + "gamma", self.gamma.data),
            (prefix + "beta", self.beta.data),
            (prefix + "running_mean", self.running_mean),
            (prefix + "running_var", self.running_var),
        ]

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.gamma.shape[0]:
            raise ValueError(f"expected (n,{self.gamma.shape[0]},h,w) input, got {x.shape}")
        x = np.ascontiguousarray(x, dtype=np.float64)
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch norm in train mode needs batch size >= 2")
            mean, var = _kernels.bn_stats(x)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat, y = _kernels.bn_forward_norm(x, mean, inv_std, self.gamma.data, self.beta.data)
        self._cache = (xhat, inv_std, train)
        return y

    def backward(self, dy, need_dx=True):
        xhat, inv_std, train = self._cache
        dy = np.ascontiguousarray(dy, dtype=np.float64)
        sdy, sdyxh = _kernels.bn_backward_sums(dy, xhat)
        self.beta.grad += sdy
        self.gamma.grad += sdyxh
        if not need_dx:
            return None
        g = self.gamma.data
        if not train:
            return dy * (g * inv_std)[None, :, None, None]
        return _kernels.bn_backward_dx(dy, xhat, g, inv_std, g * sdy, g * sdyxh)


class ReLU(Layer):
    def __init__(self, kink_tol: float = KINK_TOL):
        self.kink_tol = kink_tol
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, dy, need_dx=True):
        return dy * (self._x > 0) if need_dx else None

    def kink_mask(self):
        return np.abs(self._x) < self.kink_tol

    def branch_signature(self):
        return [self._x > 0]


class MaxPool2(Layer):
    """2x2 stride-2 max pooling; ties take the first window cell in raster order."""

    def __init__(self):
        self._idx = None

    def forward(self, x, train=False):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"pooling needs even spatial dims, got {x.shape}")
        y, self._idx = _kernels.maxpool2_forward(x)
        return y

    def backward(self, dy, need_dx=True):
        return _kernels.maxpool2_backward(dy, self._idx) if need_dx else None

    def branch_signature(self):
        return [self._idx]


class GlobalAvgPool(Layer):
    """(n, c, h, w) -> (n, c) channel means."""

    def __init__(self):
        self._hw = None

    def forward(self, x, train=False):
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        h, w = self._hw
        return np.broadcast_to(dy[:, :, None, None] / (h * w), dy.shape + (h, w)).copy()


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = Tensor(_kaiming_uniform(rng, (out_features, in_features), in_features))
        self.b = Tensor(np.zeros(out_features))
        self._x = None

    def params(self):
        return [self.w, self.b]

    def state(self, prefix):
        return [(prefix + "w", self.w.data), (prefix + "b", self.b.data)]

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.w.shape[1]:
            raise ValueError(f"expected (n,{self.w.shape[1]}) input, got {x.shape}")
        self._x = x
        return x @ self.w.data.T + self.b.data

    def backward(self, dy, need_dx=True):
        self.w.grad += dy.T @ self._x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.data if need_dx else None


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def state(self, prefix):
        return [t for i, layer in enumerate(self.layers) for t in layer.state(f"{prefix}{i}.")]

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy, need_dx=True):
        for i, layer in enumerate(reversed(self.layers)):
            last = i == len(self.layers) - 1
            dy = layer.backward(dy, need_dx=need_dx if last else True)
        return dy

    def kink_mask(self):
        return self.layers[-1].kink_mask() if self.layers else None

    def branch_signature(self):
        return [s for layer in self.layers for s in layer.branch_signature()]


class ConvBlock(Sequential):
    """Convolution, batch normalization, ReLU."""

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, padding: int | None = None, rng=None):
        self.conv = Conv2d(in_ch, out_ch, k, stride=stride, padding=padding, rng=rng)
        self.bn = BatchNorm2d(out_ch)
        self.relu = ReLU()
        super().__init__([self.conv, self.bn, self.relu])

    def state(self, prefix):
        named = [("conv.", self.conv), ("bn.", self.bn)]
        return [t for tag, layer in named for t in layer.state(prefix + tag)]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bce_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on softmax class-1 probability.

    Probabilities are clamped to [1e-12, 1-1e-12] in the loss value only;
    the gradient is the exact unclamped softmax-minus-onehot form.
    """
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError("logits must be (n, 2)")
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n = logits.shape[0]
    p = softmax(logits)
    p1 = np.clip(p[:, 1], 1e-12, 1.0 - 1e-12)
    loss = -float(np.mean(labels * np.log(p1) + (1 - labels) * np.log(1.0 - p1)))
    onehot = np.zeros_like(p)
    onehot[np.arange(n), labels] = 1.0
    return loss, (p - onehot) / n


class SgdState:
    """Momentum SGD: v <- mu*v - lr*g; p <- p + v."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if v.shape != p.grad.shape:
                raise ValueError("velocity/gradient shape mismatch")
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v


def sgd_step(state: SgdState) -> None:
    state.step()


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    worst_tensor: str


def grad_check(
    module: Layer,
    x: np.ndarray,
    h: float = 1e-3,
    n_samples: int = 25,
    seed: int = 0,
    train: bool = True,
) -> GradCheckReport:
    """Central-difference check of module.backward on a random scalar projection.

    A seed-deterministic subset of input and parameter coordinates is probed.
    Output coordinates whose ReLU pre-activation sits within the kink
    tolerance are excluded from the projection, and probes whose +h/-h
    evaluations land in a different linear region than the base point (a ReLU
    sign or pooling argmax flipped) are skipped: central differences across a
    kink do not estimate the one-sided gradient backward reports.
    """
    rng = np.random.default_rng(seed)
    x = x.astype(np.float64).copy()
    y = module.forward(x, train=train)
    base_sig = [s.copy() for s in module.branch_signature()]
    r = rng.standard_normal(y.shape)
    kinks = module.kink_mask()
    if kinks is not None:
        r[kinks] = 0.0

    params = module.params()
    zero_grads(params)
    dx = module.backward(r.copy(), need_dx=True)

    def f() -> tuple[float, bool]:
        val = float(np.sum(module.forward(x, train=train) * r))
        same = all(np.array_equal(a, b) for a, b in zip(base_sig, module.branch_signature()))
        return val, same

    max_rel = 0.0
    worst = "none"
    checked = 0
    tensors = [("input", x, dx)] + [(f"param{i}", p.data, p.grad) for i, p in enumerate(params)]
    for name, data, grad in tensors:
        flat = data.reshape(-1)
        gflat = grad.reshape(-1)
        count = min(n_samples, flat.size)
        for idx in rng.choice(flat.size, size=count, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus, ok_plus = f()
            flat[idx] = orig - h
            f_minus, ok_minus = f()
            flat[idx] = orig
            if not (ok_plus and ok_minus):
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = gflat[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            checked += 1
            if rel > max_rel:
                max_rel, worst = rel, name
    module.forward(x, train=train)
    return GradCheckReport(max_rel_err=float(max_rel), n_checked=checked, worst_tensor=worst)
