"""Layer kernels with explicit forward and backward passes, on numpy arrays.

Tensors are ``(N, C, H, W)`` arrays. Every op computes in the dtype of its
input, so float32 is the default and float64 arrays give the precision
needed for finite-difference checks. Convolution uses correlation
orientation (no kernel flip).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError


class Mode(enum.Enum):
    TRAIN = "TRAIN"
    EVAL = "EVAL"


@dataclass
class ConvParams:
    weight: np.ndarray  # (C_out, C_in // groups, k, k)
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ConfigError(f"conv weight must be (C_out, C_in/groups, k, k), got {self.weight.shape}")
        if self.weight.shape[2] % 2 == 0:
            raise ConfigError("conv kernel size must be odd")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.groups < 1 or self.weight.shape[0] % self.groups:
            raise ConfigError(f"groups={self.groups} does not divide C_out={self.weight.shape[0]}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ConfigError("conv bias must have C_out entries")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def k(self) -> int:
        return self.weight.shape[2]


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    def __post_init__(self):
        if not 0 < self.momentum < 1:
            raise ConfigError("BN momentum must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("BN epsilon must be positive")

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, **kw) -> "BnParams":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype), **kw)


# --------------------------------------------------------------------------- convolution

def _output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _check_conv(x, p: ConvParams):
    if x.ndim != 4:
        raise ConfigError(f"conv input must be (N, C, H, W), got shape {x.shape}")
    if x.shape[1] != p.c_in:
        raise ConfigError(f"conv expects {p.c_in} input channels, got {x.shape[1]}")
    if x.shape[2] + 2 * p.pad < p.k or x.shape[3] + 2 * p.pad < p.k:
        raise ConfigError("conv input smaller than the kernel after padding")


def _weight_matrix(p: ConvParams, dtype):
    """Weights as (G, k*k*C_in/G, C_out/G), rows ordered (row tap, column tap, channel)."""
    g, k = p.groups, p.k
    w = p.weight.astype(dtype, copy=False).reshape(g, p.c_out // g, p.c_in // g, k, k)
    return np.ascontiguousarray(w.transpose(0, 3, 4, 2, 1)).reshape(g, k * k * (p.c_in // g), p.c_out // g)


def _im2col(xp, k, s, ho, wo, g):
    """(N, Hp, Wp, C) padded channels-last input -> (G, N*Ho*Wo, k*k*C/G) patch matrix."""
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    if g == 1:
        # a row tap spans k*C contiguous values of one padded row
        view = as_strided(xp, (n, ho, wo, k, k * c), (sn, sh * s, sw * s, sh, sc))
        return view.reshape(1, n * ho * wo, k * k * c)
    cg = c // g
    view = as_strided(xp, (g, n, ho, wo, k, k, cg), (sc * cg, sn, sh * s, sw * s, sh, sw, sc))
    return view.reshape(g, n * ho * wo, k * k * cg)


def conv2d_forward(x: np.ndarray, p: ConvParams):
    """Grouped convolution; returns ``(y, cache)`` where cache feeds :func:`conv2d_backward`.

    Patches are gathered in a channels-last layout so each group is one
    tall (positions x taps) matrix product.
    """
    _check_conv(x, p)
    n, c, h, w = x.shape
    k, s, g, pad = p.k, p.stride, p.groups, p.pad
    cg = c // g
    ho, wo = _output_size(h, k, s, pad), _output_size(w, k, s, pad)
    if k == 1 and s == 1 and pad == 0:
        xh = x.reshape(n, g, cg, h, w).transpose(1, 0, 3, 4, 2)
        cols = np.ascontiguousarray(xh).reshape(g, n * h * w, cg)
    else:
        xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + w] = x.transpose(0, 2, 3, 1)
        cols = _im2col(xp, k, s, ho, wo, g)
    wm = _weight_matrix(p, x.dtype)
    if g == 1:
        y = (cols[0] @ wm[0]).reshape(n, ho, wo, p.c_out).transpose(0, 3, 1, 2)
    else:
        y = np.matmul(cols, wm)  # (G, N*Ho*Wo, C_out/G)
        y = y.reshape(g, n, ho, wo, p.c_out // g).transpose(1, 0, 4, 2, 3).reshape(n, p.c_out, ho, wo)
    if p.bias is not None:
        y = y + p.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return np.ascontiguousarray(y), (x.shape, cols, p)


def conv2d_backward(cache, grad_out: np.ndarray, need_input_grad: bool = True):
    """Gradients ``(grad_x, grad_weight, grad_bias)``.

    grad_bias is None for a bias-free convolution; grad_x is None when
    ``need_input_grad`` is false.
    """
    (n, c, h, w), cols, p = cache
    k, s, g, pad = p.k, p.stride, p.groups, p.pad
    cg, cog = c // g, p.c_out // g
    ho, wo = grad_out.shape[2:]
    if grad_out.shape != (n, p.c_out, ho, wo):
        raise ConfigError(f"grad_out shape {grad_out.shape} does not match conv output")
    gy = np.ascontiguousarray(grad_out.reshape(n, g, cog, ho, wo).transpose(1, 0, 3, 4, 2))
    gy = gy.reshape(g, n * ho * wo, cog)
    gw = np.matmul(gy.transpose(0, 2, 1), cols)  # (G, Cog, k*k*Cg)
    grad_w = gw.reshape(g, cog, k, k, cg).transpose(0, 1, 4, 2, 3).reshape(p.weight.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if p.bias is not None else None
    if not need_input_grad:
        return None, grad_w, grad_b
    if s == 1 and 0 < pad <= k - 1:
        # stride-1 input gradient is a correlation of grad_out with the flipped, transposed kernel
        wf = p.weight.reshape(g, cog, cg, k, k).transpose(0, 2, 1, 3, 4)[..., ::-1, ::-1]
        flipped = ConvParams(np.ascontiguousarray(wf).reshape(c, cog, k, k), None, 1, k - 1 - pad, g)
        return conv2d_forward(grad_out, flipped)[0], grad_w, grad_b
    gcols = np.matmul(gy, _weight_matrix(p, grad_out.dtype).transpose(0, 2, 1))  # (G, NHW, k*k*Cg)
    if k == 1 and s == 1 and pad == 0:
        gx = gcols.reshape(g, n, h, w, cg).transpose(1, 0, 4, 2, 3).reshape(n, c, h, w)
        return np.ascontiguousarray(gx), grad_w, grad_b
    gcols = gcols.reshape(g, n, ho, wo, k, k, cg)
    gxp = np.zeros((n, h + 2 * pad, w + 2 * pad, g, cg), dtype=grad_out.dtype)
    for a in range(k):
        for b in range(k):
            gxp[:, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s] += gcols[:, :, :, :, a, b].transpose(1, 2, 3, 0, 4)
    gx = gxp[:, pad:pad + h, pad:pad + w].reshape(n, h, w, c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gx), grad_w, grad_b


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    return conv2d_forward(x, p)[0]


def conv2d_grad(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    return conv2d_backward(conv2d_forward(x, p)[1], grad_out)


# --------------------------------------------------------------------------- batch norm

def batch_norm_forward(x: np.ndarray, p: BnParams, mode: Mode = Mode.TRAIN):
    """Per-channel normalization. TRAIN uses batch statistics and updates the running ones in place."""
    mode = Mode(mode)
    dt = x.dtype
    gamma = p.gamma.astype(dt, copy=False)[None, :, None, None]
    beta = p.beta.astype(dt, copy=False)[None, :, None, None]
    if mode is Mode.EVAL:
        invstd = 1.0 / np.sqrt(p.running_var.astype(dt) + dt.type(p.epsilon))
        xhat = (x - p.running_mean.astype(dt)[None, :, None, None]) * invstd[None, :, None, None]
        return gamma * xhat + beta, (xhat, invstd, p, mode)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m < 2:
        raise ConfigError("batch norm in TRAIN mode needs at least 2 values per channel")
    mean = x.mean(axis=(0, 2, 3))
    xc = x - mean[None, :, None, None]
    var = (xc * xc).mean(axis=(0, 2, 3))
    invstd = 1.0 / np.sqrt(var + dt.type(p.epsilon))
    xhat = xc * invstd[None, :, None, None]
    mom = p.momentum
    p.running_mean[...] = mom * p.running_mean + (1 - mom) * mean
    p.running_var[...] = mom * p.running_var + (1 - mom) * var * (m / (m - 1))
    return gamma * xhat + beta, (xhat, invstd, p, mode)


def batch_norm_backward(cache, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, invstd, p, mode = cache
    dt = grad_out.dtype
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    g = (p.gamma.astype(dt, copy=False) * invstd)[None, :, None, None]
    if mode is Mode.EVAL:
        return grad_out * g, grad_gamma, grad_beta
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    gx = g * (grad_out - (grad_beta / m)[None, :, None, None] - xhat * (grad_gamma / m)[None, :, None, None])
    return gx, grad_gamma, grad_beta


def batch_norm(x, p: BnParams, mode: Mode = Mode.TRAIN) -> np.ndarray:
    return batch_norm_forward(x, p, mode)[0]


def batch_norm_grad(x, p: BnParams, grad_out, mode: Mode = Mode.TRAIN):
    """Gradients at ``x``. Running statistics are left untouched."""
    saved = p.running_mean.copy(), p.running_var.copy()
    _, cache = batch_norm_forward(x, p, mode)
    p.running_mean[...], p.running_var[...] = saved
    return batch_norm_backward(cache, grad_out)


# --------------------------------------------------------------------------- pointwise, pooling, head

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C) spatial means."""
    return x.mean(axis=(2, 3))


def global_avg_pool_grad(x_shape, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    return np.broadcast_to((grad_out / (h * w))[:, :, None, None], x_shape).copy()


def fully_connected(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weight.shape[0] != x.shape[1] or bias.shape != (weight.shape[1],):
        raise ConfigError(f"fully connected shape mismatch: x {x.shape}, W {weight.shape}, b {bias.shape}")
    return x @ weight.astype(x.dtype, copy=False) + bias.astype(x.dtype, copy=False)


def fully_connected_grad(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_weight, grad_bias)``."""
    return grad_out @ weight.astype(grad_out.dtype, copy=False).T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, classes = logits.shape
    if labels.shape != (n,) or np.any((labels < 0) | (labels >= classes)) or np.any(labels != labels.astype(int)):
        raise ConfigError(f"labels must be {n} integers in [0, {classes})")
    labels = labels.astype(int)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(n), labels] -= 1
    return loss, grad / n
