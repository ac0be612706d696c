"""Layers with exact analytic forward/backward passes.

All arrays are float64 with the batch on the leading axis.  Each layer
recomputes whatever it needs for the backward pass from the forward
activations alone, so a network's activation list is the complete
differentiation state.

Matrix products involving per-sample data go through ``_bmm`` (a
broadcasted 3-D matmul), which runs one GEMM per sample.  This keeps
every sample's arithmetic bit-identical whether it is processed alone or
inside a batch — batched latent restarts rely on that.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError


def _bmm(x, w):
    """(N, A) @ (A, B) computed as N independent (1, A) @ (A, B) GEMMs."""
    return np.matmul(x[:, None, :], w)[:, 0, :]


def _im2col(x, kh, kw, stride, pad):
    """Unfold (N, C, H, W) into patch columns (N, C*kh*kw, out_h*out_w)."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, out_h * out_w)
    return np.ascontiguousarray(cols), out_h, out_w


def _col2im(cols, out_shape, kh, kw, stride, pad):
    """Exact adjoint of ``_im2col``: scatter-add columns back to an image."""
    n, c, h, w = out_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    src_h = (hp - kh) // stride + 1
    src_w = (wp - kw) // stride + 1
    folded = np.zeros((n, c, hp, wp))
    cols = cols.reshape(n, c, kh, kw, src_h, src_w)
    for i in range(kh):
        for j in range(kw):
            folded[:, :, i : i + stride * src_h : stride, j : j + stride * src_w : stride] += cols[:, :, i, j]
    return folded[:, :, pad : pad + h, pad : pad + w]


class Layer:
    """Base layer: stateless apart from parameters and batchnorm statistics."""

    kind = "layer"

    def __init__(self):
        self.params = {}

    def forward(self, x, mode):
        raise NotImplementedError

    def backward(self, x, y, gy, mode, need_param_grads=True):
        """Return (param_grads, input_grad) given forward activations x, y."""
        raise NotImplementedError

    def out_shape(self, in_shape):
        raise NotImplementedError

    def spec(self):
        return {"kind": self.kind}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.params = {
            "weight": np.zeros((self.out_features, self.in_features)),
            "bias": np.zeros(self.out_features),
        }

    def forward(self, x, mode):
        return _bmm(x, self.params["weight"].T) + self.params["bias"]

    def backward(self, x, y, gy, mode, need_param_grads=True):
        gx = _bmm(gy, self.params["weight"])
        if not need_param_grads:
            return {}, gx
        return {"weight": gy.T @ x, "bias": gy.sum(axis=0)}, gx

    def out_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeMismatchError("dense", (self.in_features,), in_shape)
        return (self.out_features,)

    def spec(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0):
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.pad = int(pad)
        k = self.kernel
        self.params = {
            "weight": np.zeros((self.out_channels, self.in_channels, k, k)),
            "bias": np.zeros(self.out_channels),
        }

    def forward(self, x, mode):
        k, s, p = self.kernel, self.stride, self.pad
        cols, oh, ow = _im2col(x, k, k, s, p)
        wf = self.params["weight"].reshape(self.out_channels, -1)
        y = np.matmul(wf, cols) + self.params["bias"][:, None]
        return y.reshape(x.shape[0], self.out_channels, oh, ow)

    def backward(self, x, y, gy, mode, need_param_grads=True):
        k, s, p = self.kernel, self.stride, self.pad
        n = x.shape[0]
        wf = self.params["weight"].reshape(self.out_channels, -1)
        gy_f = gy.reshape(n, self.out_channels, -1)
        gx = _col2im(np.matmul(wf.T, gy_f), x.shape, k, k, s, p)
        if not need_param_grads:
            return {}, gx
        cols, _, _ = _im2col(x, k, k, s, p)
        gw = np.matmul(gy_f, cols.transpose(0, 2, 1)).sum(axis=0)
        return {
            "weight": gw.reshape(self.params["weight"].shape),
            "bias": gy.sum(axis=(0, 2, 3)),
        }, gx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeMismatchError("conv2d", (self.in_channels, "H", "W"), in_shape)
        oh = (h + 2 * self.pad - self.kernel) // self.stride + 1
        ow = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatchError("conv2d output", ("≥1", "≥1"), (oh, ow))
        return (self.out_channels, oh, ow)

    def spec(self):
        return {
            "kind": self.kind,
            "in": self.in_channels,
            "out": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
        }


class ConvTranspose2d(Layer):
    kind = "conv_transpose2d"

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0):
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.pad = int(pad)
        k = self.kernel
        self.params = {
            "weight": np.zeros((self.in_channels, self.out_channels, k, k)),
            "bias": np.zeros(self.out_channels),
        }

    def forward(self, x, mode):
        k, s, p = self.kernel, self.stride, self.pad
        n, _, h, w = x.shape
        oh = (h - 1) * s - 2 * p + k
        ow = (w - 1) * s - 2 * p + k
        wf = self.params["weight"].reshape(self.in_channels, -1)
        cols = np.matmul(wf.T, x.reshape(n, self.in_channels, h * w))
        y = _col2im(cols, (n, self.out_channels, oh, ow), k, k, s, p)
        return y + self.params["bias"][None, :, None, None]

    def backward(self, x, y, gy, mode, need_param_grads=True):
        k, s, p = self.kernel, self.stride, self.pad
        n, _, h, w = x.shape
        wf = self.params["weight"].reshape(self.in_channels, -1)
        gcols, _, _ = _im2col(gy, k, k, s, p)
        gx = np.matmul(wf, gcols).reshape(x.shape)
        if not need_param_grads:
            return {}, gx
        xf = x.reshape(n, self.in_channels, h * w)
        gw = np.matmul(xf, gcols.transpose(0, 2, 1)).sum(axis=0)
        return {
            "weight": gw.reshape(self.params["weight"].shape),
            "bias": gy.sum(axis=(0, 2, 3)),
        }, gx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeMismatchError("conv_transpose2d", (self.in_channels, "H", "W"), in_shape)
        oh = (h - 1) * self.stride - 2 * self.pad + self.kernel
        ow = (w - 1) * self.stride - 2 * self.pad + self.kernel
        if oh < 1 or ow < 1:
            raise ShapeMismatchError("conv_transpose2d output", ("≥1", "≥1"), (oh, ow))
        return (self.out_channels, oh, ow)

    def spec(self):
        return {
            "kind": self.kind,
            "in": self.in_channels,
            "out": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
        }


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, C, H, W).

    Train mode normalizes with biased batch statistics and updates the
    running statistics by exponential moving average (running variance uses
    the unbiased estimate).  Infer mode uses the running statistics only,
    which makes the forward pass a pure per-sample function.
    """

    kind = "batchnorm2d"

    # 64-bit arithmetic allows a small eps, keeping normalized batch
    # variance within 1e-8 of one.
    def __init__(self, channels, eps=1e-10, momentum=0.1):
        super().__init__()
        self.channels = int(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.params = {
            "gamma": np.ones(self.channels),
            "beta": np.zeros(self.channels),
        }
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)

    def _batch_stats(self, x):
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        return mu, var

    def forward(self, x, mode):
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if mode == "train":
            m = x.shape[0] * x.shape[2] * x.shape[3]
            if m < 2:
                raise ValueError("batchnorm2d train mode needs at least 2 values per channel")
            mu, var = self._batch_stats(x)
            xhat = (x - mu[None, :, None, None]) / np.sqrt(var + self.eps)[None, :, None, None]
            unbiased = var * m / (m - 1)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            xhat = (x - self.running_mean[None, :, None, None]) / np.sqrt(
                self.running_var + self.eps
            )[None, :, None, None]
        return gamma * xhat + beta

    def backward(self, x, y, gy, mode, need_param_grads=True):
        gamma = self.params["gamma"]
        if mode == "train":
            mu, var = self._batch_stats(x)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
            m = x.shape[0] * x.shape[2] * x.shape[3]
            gxhat = gy * gamma[None, :, None, None]
            sum_g = gxhat.sum(axis=(0, 2, 3))
            sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3))
            gx = (
                inv_std[None, :, None, None]
                / m
                * (m * gxhat - sum_g[None, :, None, None] - xhat * sum_gx[None, :, None, None])
            )
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
            gx = gy * (gamma * inv_std)[None, :, None, None]
        if not need_param_grads:
            return {}, gx
        return {
            "gamma": (gy * xhat).sum(axis=(0, 2, 3)),
            "beta": gy.sum(axis=(0, 2, 3)),
        }, gx

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.channels:
            raise ShapeMismatchError("batchnorm2d", (self.channels, "H", "W"), in_shape)
        return in_shape

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps, "momentum": self.momentum}

    def state_tensors(self):
        """Non-parameter state serialized alongside the parameters."""
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def set_state_tensor(self, name, value):
        if name == "running_mean":
            self.running_mean = value
        elif name == "running_var":
            self.running_var = value
        else:
            raise KeyError(name)


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope=0.2):
        super().__init__()
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
        self.slope = float(slope)

    def forward(self, x, mode):
        return np.where(x > 0, x, self.slope * x)

    def backward(self, x, y, gy, mode, need_param_grads=True):
        return {}, gy * np.where(x > 0, 1.0, self.slope)

    def out_shape(self, in_shape):
        return in_shape

    def spec(self):
        return {"kind": self.kind, "slope": self.slope}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode):
        return np.maximum(x, 0.0)

    def backward(self, x, y, gy, mode, need_param_grads=True):
        return {}, gy * (x > 0)

    def out_shape(self, in_shape):
        return in_shape


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, mode):
        return np.tanh(x)

    def backward(self, x, y, gy, mode, need_param_grads=True):
        return {}, gy * (1.0 - y * y)

    def out_shape(self, in_shape):
        return in_shape


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, mode):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    def backward(self, x, y, gy, mode, need_param_grads=True):
        return {}, gy * y * (1.0 - y)

    def out_shape(self, in_shape):
        return in_shape


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x, mode):
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, x, y, gy, mode, need_param_grads=True):
        return {}, gy.reshape(x.shape)

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeMismatchError("reshape", self.shape, in_shape)
        return self.shape

    def spec(self):
        return {"kind": self.kind, "shape": ",".join(str(s) for s in self.shape)}


_LAYER_KINDS = {
    "dense": lambda p: Dense(int(p["in"]), int(p["out"])),
    "conv2d": lambda p: Conv2d(int(p["in"]), int(p["out"]), int(p["kernel"]), int(p["stride"]), int(p["pad"])),
    "conv_transpose2d": lambda p: ConvTranspose2d(
        int(p["in"]), int(p["out"]), int(p["kernel"]), int(p["stride"]), int(p["pad"])
    ),
    "batchnorm2d": lambda p: BatchNorm2d(int(p["channels"]), float(p["eps"]), float(p["momentum"])),
    "leaky_relu": lambda p: LeakyReLU(float(p["slope"])),
    "relu": lambda p: ReLU(),
    "tanh": lambda p: Tanh(),
    "sigmoid": lambda p: Sigmoid(),
    "reshape": lambda p: Reshape(int(s) for s in p["shape"].split(",")),
}


def layer_from_spec(spec):
    """Rebuild a layer from the dict produced by ``Layer.spec()``."""
    kind = spec["kind"]
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    return _LAYER_KINDS[kind]({k: v for k, v in spec.items() if k != "kind"})
