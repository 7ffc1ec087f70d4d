"""Layer vocabulary for the two stream networks.

All spatial ops use valid (no padding) windows, so every output extent is
floor((in - k) / stride) + 1. Layers accept a single sample [T,H,W,C] or a
batch [N,T,H,W,C]; single samples run as a batch of one and are squeezed on
the way out. Forward behaviour depends on ``mode``:

  train   batch statistics, running-stat updates, dropout active
  frozen  batch statistics, no state updates, no dropout (selection pass)
  infer   running statistics, no dropout
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, active_tape

MODES = ("train", "frozen", "infer")


def he_init(shape, fan_in: int, seed=None, dtype=np.float64) -> Tensor:
    """Variance-scaling initialization: zero-mean normal with variance 2/fan_in."""
    if fan_in < 1:
        raise ContractError("fan_in must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = np.sqrt(2.0 / fan_in)
    data = rng.normal(0.0, std, size=tuple(shape)).astype(dtype)
    return Tensor(data, requires_grad=True)


def _as_batch(x: Tensor):
    if x.data.ndim == 4:
        return x.reshape((1,) + x.data.shape), True
    if x.data.ndim == 5:
        return x, False
    raise ShapeError(f"expected rank-4 [T,H,W,C] or rank-5 [N,T,H,W,C] input, got {x.data.shape}")


def _conv_out_extent(n, k, s):
    return (n - k) // s + 1


def _window_view(data: np.ndarray, kernel, stride):
    """[N,T,H,W,C] -> strided view [N,T',H',W',kT,kH,kW,C] of valid windows."""
    v = np.lib.stride_tricks.sliding_window_view(data, kernel, axis=(1, 2, 3))
    v = v[:, :: stride[0], :: stride[1], :: stride[2]]
    # sliding_window_view leaves C at axis 4; move it after the kernel axes
    return np.moveaxis(v, 4, 7)


class Conv3D:
    """Valid 3D cross-correlation; kernels [out_ch, kT, kH, kW, in_ch]."""

    def __init__(self, in_ch, out_ch, kernel, stride=(1, 1, 1), seed=None,
                 dtype=np.float64, name="conv"):
        self.name = name
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.in_ch = in_ch
        self.out_ch = out_ch
        fan_in = in_ch * int(np.prod(self.kernel))
        self.kernels = he_init((out_ch,) + self.kernel + (in_ch,), fan_in, seed, dtype)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        xb, squeeze = _as_batch(x)
        n, t, h, w, c = xb.data.shape
        kt, kh, kw = self.kernel
        st, sh, sw = self.stride
        if c != self.in_ch:
            raise ShapeError(f"{self.name}: expected {self.in_ch} input channels, got {c}")
        if kt > t or kh > h or kw > w:
            raise ShapeError(f"{self.name}: kernel {self.kernel} exceeds input {(t, h, w)}")
        to, ho, wo = (_conv_out_extent(t, kt, st), _conv_out_extent(h, kh, sh),
                      _conv_out_extent(w, kw, sw))

        x_data = xb.data
        cols = _window_view(x_data, self.kernel, self.stride).reshape(n * to * ho * wo, -1)
        wmat = self.kernels.data.reshape(self.out_ch, -1).T
        out_data = cols @ wmat
        out_data += self.bias.data
        out_data = out_data.reshape(n, to, ho, wo, self.out_ch)

        req = xb.requires_grad or self.kernels.requires_grad or self.bias.requires_grad
        out = Tensor(out_data, requires_grad=req)
        tape = active_tape()
        if tape is not None and req:
            need_x = xb.requires_grad
            x_shape = x_data.shape

            def bw(g):
                gmat = np.ascontiguousarray(g.reshape(-1, self.out_ch))
                gk = (cols.T @ gmat).T.reshape(self.kernels.data.shape)
                gb = gmat.sum(axis=0)
                gx = None
                if need_x:
                    dcols = (gmat @ wmat.T).reshape(n, to, ho, wo, kt, kh, kw, c)
                    gx = np.zeros(x_shape, dtype=g.dtype)  # calloc; pages filled lazily
                    for i in range(kt):
                        for j in range(kh):
                            for k in range(kw):
                                gx[:, i:i + st * to:st, j:j + sh * ho:sh, k:k + sw * wo:sw, :] += \
                                    dcols[:, :, :, :, i, j, k, :]
                return (gx, gk, gb)

            tape.record(out, (xb, self.kernels, self.bias), bw)
        else:
            out.requires_grad = False
        return out.reshape(out.data.shape[1:]) if squeeze else out

    def out_shape(self, in_shape):
        t, h, w, _ = in_shape
        kt, kh, kw = self.kernel
        st, sh, sw = self.stride
        return (_conv_out_extent(t, kt, st), _conv_out_extent(h, kh, sh),
                _conv_out_extent(w, kw, sw), self.out_ch)

    def parameters(self):
        return [(f"{self.name}.kernels", self.kernels), (f"{self.name}.bias", self.bias)]

    def buffers(self):
        return []


class MaxPool3D:
    """Per-window maximum over valid windows; first-index tie-break in backward."""

    def __init__(self, kernel, stride, name="pool"):
        self.name = name
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        xb, squeeze = _as_batch(x)
        n, t, h, w, c = xb.data.shape
        kt, kh, kw = self.kernel
        if kt > t or kh > h or kw > w:
            raise ShapeError(f"{self.name}: kernel {self.kernel} exceeds input {(t, h, w)}")
        st, sh, sw = self.stride
        to, ho, wo = (_conv_out_extent(t, kt, st), _conv_out_extent(h, kh, sh),
                      _conv_out_extent(w, kw, sw))

        x_data = xb.data
        # window view [N,T',H',W',C,kT,kH,kW]; reduction streams it without a copy
        win = np.moveaxis(_window_view(x_data, self.kernel, self.stride), 7, 4)
        out_data = win.max(axis=(5, 6, 7))

        out = Tensor(out_data, requires_grad=xb.requires_grad)
        tape = active_tape()
        if tape is not None and xb.requires_grad:

            def bw(g):
                # route each window's gradient to its first maximum, sweeping the
                # window offsets in flat order so ties break on the lowest index
                gx = np.zeros(x_data.shape, dtype=g.dtype)
                remaining = np.ones(out_data.shape, dtype=bool)
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            src = x_data[:, i:i + st * to:st, j:j + sh * ho:sh,
                                         k:k + sw * wo:sw, :]
                            hit = (src == out_data) & remaining
                            gx[:, i:i + st * to:st, j:j + sh * ho:sh,
                               k:k + sw * wo:sw, :] += g * hit
                            remaining &= ~hit
                return (gx,)

            tape.record(out, (xb,), bw)
        else:
            out.requires_grad = False
        return out.reshape(out.data.shape[1:]) if squeeze else out

    def out_shape(self, in_shape):
        t, h, w, c = in_shape
        kt, kh, kw = self.kernel
        st, sh, sw = self.stride
        return (_conv_out_extent(t, kt, st), _conv_out_extent(h, kh, sh),
                _conv_out_extent(w, kw, sw), c)

    def parameters(self):
        return []

    def buffers(self):
        return []


class PReLU:
    """y = x for x >= 0 else a*x, with one learned slope per channel."""

    def __init__(self, channels, init=0.25, dtype=np.float64, name="prelu"):
        self.name = name
        self.channels = channels
        self.slope = Tensor(np.full(channels, init, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        x_data = x.data
        if x_data.shape[-1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {x_data.shape[-1]}")
        a = self.slope.data  # broadcasts over leading axes
        neg = x_data < 0
        out_data = np.where(neg, a * x_data, x_data)
        req = x.requires_grad or self.slope.requires_grad
        out = Tensor(out_data, requires_grad=req)
        tape = active_tape()
        if tape is not None and req:
            need_x = x.requires_grad

            def bw(g):
                gx = np.where(neg, g * a, g) if need_x else None
                ga = (g * x_data * neg).reshape(-1, self.channels).sum(axis=0)
                return (gx, ga)

            tape.record(out, (x, self.slope), bw)
        else:
            out.requires_grad = False
        return out

    def parameters(self):
        return [(f"{self.name}.slope", self.slope)]

    def buffers(self):
        return []


class Flatten:
    """Collapse everything after the batch axis (or the whole sample)."""

    def __init__(self, name="flatten"):
        self.name = name

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        if x.data.ndim == 5:
            return x.reshape((x.data.shape[0], -1))
        return x.reshape((-1,))

    def parameters(self):
        return []

    def buffers(self):
        return []


class Dense:
    """Affine map on flattened features: y = x W + b."""

    def __init__(self, in_features, out_features, seed=None, dtype=np.float64, name="fc"):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        self.weights = he_init((in_features, out_features), in_features, seed, dtype)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        single = x.data.ndim == 1
        xb = x.reshape((1, -1)) if single else x
        if xb.data.ndim != 2 or xb.data.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected [*, {self.in_features}], got {x.data.shape}")
        w, b = self.weights, self.bias
        out_data = xb.data @ w.data + b.data
        req = xb.requires_grad or w.requires_grad or b.requires_grad
        out = Tensor(out_data, requires_grad=req)
        tape = active_tape()
        if tape is not None and req:
            x_data, w_data = xb.data, w.data
            need_x = xb.requires_grad

            def bw(g):
                gx = g @ w_data.T if need_x else None
                gw = x_data.T @ g
                gb = g.sum(axis=0)
                return (gx, gw, gb)

            tape.record(out, (xb, w, b), bw)
        else:
            out.requires_grad = False
        return out.reshape((-1,)) if single else out

    def parameters(self):
        return [(f"{self.name}.weights", self.weights), (f"{self.name}.bias", self.bias)]

    def buffers(self):
        return []


class BatchNorm:
    """Per-channel batch normalization with running statistics for inference."""

    def __init__(self, channels, momentum=0.1, epsilon=1e-6, dtype=np.float64, name="bn"):
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        x_data = x.data
        if x_data.shape[-1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {x_data.shape[-1]}")
        if mode in ("train", "frozen"):
            if x_data.ndim < 2 or x_data.shape[0] < 2:
                raise ContractError(f"{self.name}: batch statistics need a batch of >= 2")
            axes = tuple(range(x_data.ndim - 1))
            mean = x_data.mean(axis=axes)
            var = x_data.var(axis=axes)
            if mode == "train":
                self.running_mean += self.momentum * (mean - self.running_mean)
                self.running_var += self.momentum * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var

        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x_data - mean) * inv_std
        out_data = self.gamma.data * x_hat + self.beta.data
        req = x.requires_grad or self.gamma.requires_grad or self.beta.requires_grad
        out = Tensor(out_data, requires_grad=req)
        tape = active_tape()
        if tape is not None and req:
            use_batch_stats = mode in ("train", "frozen")
            gamma_data = self.gamma.data
            m = x_data.size // self.channels
            need_x = x.requires_grad
            ch_axes = tuple(range(x_data.ndim - 1))

            def bw(g):
                gg = (g * x_hat).sum(axis=ch_axes)
                gb = g.sum(axis=ch_axes)
                gx = None
                if need_x:
                    gxh = g * gamma_data
                    if use_batch_stats:
                        # standard batch-stat backward (mean and var both depend on x)
                        t1 = gxh.sum(axis=ch_axes)
                        t2 = (gxh * x_hat).sum(axis=ch_axes)
                        gx = inv_std * (gxh - (t1 + x_hat * t2) / m)
                    else:
                        gx = gxh * inv_std
                return (gx, gg, gb)

            tape.record(out, (x, self.gamma, self.beta), bw)
        else:
            out.requires_grad = False
        return out

    def parameters(self):
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def set_buffer(self, suffix, value):
        if suffix == "running_mean":
            self.running_mean = value.astype(self.running_mean.dtype)
        elif suffix == "running_var":
            self.running_var = value.astype(self.running_var.dtype)
        else:
            raise ContractError(f"unknown buffer {suffix!r}")


class Dropout:
    """Drops each unit with probability rho in train mode, scaling survivors."""

    def __init__(self, rho, name="dropout"):
        if not 0.0 <= rho < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {rho}")
        self.name = name
        self.rho = rho

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        if mode != "train" or self.rho == 0.0:
            return x
        if rng is None:
            raise ContractError(f"{self.name}: train mode needs an rng")
        keep = 1.0 - self.rho
        mask = (rng.random(x.data.shape) >= self.rho).astype(x.data.dtype) / keep
        out = Tensor(x.data * mask, requires_grad=x.requires_grad)
        tape = active_tape()
        if tape is not None and x.requires_grad:

            def bw(g):
                return (g * mask,)

            tape.record(out, (x,), bw)
        else:
            out.requires_grad = False
        return out

    def parameters(self):
        return []

    def buffers(self):
        return []


class LayerStack:
    """Named sequence of layers applied in order."""

    def __init__(self, name, layers):
        self.name = name
        self.layers = list(layers)

    def forward(self, x: Tensor, mode="infer", rng=None) -> Tensor:
        if mode not in MODES:
            raise ContractError(f"unknown mode {mode!r}")
        for layer in self.layers:
            x = layer.forward(x, mode=mode, rng=rng)
        return x

    def trace(self, x: Tensor):
        """Run in infer mode, returning [(layer name, output shape)] per layer."""
        shapes = []
        for layer in self.layers:
            x = layer.forward(x, mode="infer")
            shapes.append((layer.name, tuple(int(s) for s in x.data.shape)))
        return shapes, x

    def parameters(self):
        out = []
        for layer in self.layers:
            for pname, p in layer.parameters():
                out.append((f"{self.name}.{pname}", p))
        return out

    def buffers(self):
        out = []
        for layer in self.layers:
            for bname, b in layer.buffers():
                out.append((f"{self.name}.{bname}", b))
        return out
