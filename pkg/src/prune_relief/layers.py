"""Layer types: dense, convolutional, max-pooling, flatten.

Dense and conv layers carry pruning masks next to their parameters. The
invariant maintained everywhere is that a masked entry holds the value 0.0
exactly; constructors validate it and ``apply_mask`` zeroes what it masks.
Conv masks have one bit per (filter, input-channel) kernel, not per tap.

``forward(x, with_cache=True)`` returns ``(output, cache)`` where the cache is
what ``backward`` needs; layers themselves stay immutable during the forward
pass so a frozen network can be evaluated from many threads.
"""

import numpy as np

from .activations import get_activation
from .errors import DimensionError
from .tensor_ops import check_stride_padding, col2im, conv2d_batch, conv_output_hw, im2col


def _as_param(a, dtype):
    out = np.array(a, dtype=dtype, order="C", copy=True)
    return out


def _check_mask(mask, shape, name):
    if mask.shape != shape:
        raise DimensionError(f"{name} shape {mask.shape} does not match {shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError(f"{name} must contain only 0/1 entries")


class DenseLayer:
    """Fully connected layer: y = act(W x + b), W of shape (out, in)."""

    kind = "dense"

    def __init__(self, weights, bias, activation="relu", weight_mask=None,
                 bias_mask=None, dtype=np.float32):
        self.weights = _as_param(weights, dtype)
        self.bias = _as_param(bias, dtype)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError(
                f"dense layer expects 2-D weights and 1-D bias, got "
                f"{self.weights.shape} and {self.bias.shape}"
            )
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} does not match "
                f"{self.weights.shape[0]} output units"
            )
        self.activation = activation
        self.act = get_activation(activation)
        if weight_mask is None:
            weight_mask = np.ones_like(self.weights)
        if bias_mask is None:
            bias_mask = np.ones_like(self.bias)
        self.weight_mask = _as_param(weight_mask, dtype)
        self.bias_mask = _as_param(bias_mask, dtype)
        _check_mask(self.weight_mask, self.weights.shape, "weight_mask")
        _check_mask(self.bias_mask, self.bias.shape, "bias_mask")
        if np.any(self.weights[self.weight_mask == 0] != 0):
            raise ValueError("masked weights must be exactly zero")
        if np.any(self.bias[self.bias_mask == 0] != 0):
            raise ValueError("masked biases must be exactly zero")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def forward(self, x, with_cache=False):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise DimensionError(
                f"dense layer with fan-in {self.fan_in} got batch of shape {x.shape}"
            )
        z = x @ self.weights.T + self.bias
        y = self.act.f(z)
        if with_cache:
            return y, (x, z)
        return y

    def backward(self, cache, d_out):
        x, z = cache
        dz = d_out * self.act.df(z)
        dw = (dz.T @ x) * self.weight_mask
        db = dz.sum(axis=0) * self.bias_mask
        dx = dz @ self.weights
        return dx, {"weights": dw, "bias": db}

    def apply_mask(self, target: int, contributors) -> None:
        """Mask contributor indices of one target unit; index fan_in is the bias."""
        if not 0 <= target < self.fan_out:
            raise IndexError(f"target {target} out of range for {self.fan_out} units")
        idx = np.asarray(contributors, dtype=np.int64).ravel()
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() > self.fan_in:
            raise IndexError(
                f"contributor indices must lie in [0, {self.fan_in}], got "
                f"[{idx.min()}, {idx.max()}]"
            )
        cols = idx[idx < self.fan_in]
        self.weight_mask[target, cols] = 0
        self.weights[target, cols] = 0
        if np.any(idx == self.fan_in):
            self.bias_mask[target] = 0
            self.bias[target] = 0

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def param_masks(self) -> dict[str, np.ndarray]:
        return {"weights": self.weight_mask, "bias": self.bias_mask}

    def stored_masks(self) -> dict[str, np.ndarray]:
        return {"weight_mask": self.weight_mask, "bias_mask": self.bias_mask}

    def clone(self) -> "DenseLayer":
        return DenseLayer(self.weights, self.bias, self.activation,
                          self.weight_mask, self.bias_mask, dtype=self.weights.dtype)

    def astype(self, dtype) -> "DenseLayer":
        return DenseLayer(self.weights, self.bias, self.activation,
                          self.weight_mask, self.bias_mask, dtype=dtype)

    def output_shape(self, in_shape):
        n = int(np.prod(in_shape))
        if n != self.fan_in:
            raise DimensionError(
                f"dense layer with fan-in {self.fan_in} got input shape {in_shape}"
            )
        if len(in_shape) != 1:
            raise DimensionError(
                f"dense layer needs a flat input, got shape {in_shape}; "
                "insert a flatten layer"
            )
        return (self.fan_out,)


class ConvLayer:
    """2-D convolution with square kernels, zero padding, per-filter bias."""

    kind = "conv"

    def __init__(self, kernels, bias, activation="relu", stride=(1, 1),
                 padding=(0, 0), kernel_mask=None, bias_mask=None, dtype=np.float32):
        self.kernels = _as_param(kernels, dtype)
        self.bias = _as_param(bias, dtype)
        if self.kernels.ndim != 4 or self.kernels.shape[2] != self.kernels.shape[3]:
            raise DimensionError(
                f"conv kernels must be (out, in, r, r), got {self.kernels.shape}"
            )
        if self.bias.shape != (self.kernels.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match "
                f"{self.kernels.shape[0]} filters"
            )
        self.stride, self.padding = check_stride_padding(stride, padding)
        self.activation = activation
        self.act = get_activation(activation)
        co, ci = self.kernels.shape[:2]
        if kernel_mask is None:
            kernel_mask = np.ones((co, ci), dtype=dtype)
        if bias_mask is None:
            bias_mask = np.ones(co, dtype=dtype)
        self.kernel_mask = _as_param(kernel_mask, dtype)
        self.bias_mask = _as_param(bias_mask, dtype)
        _check_mask(self.kernel_mask, (co, ci), "kernel_mask")
        _check_mask(self.bias_mask, (co,), "bias_mask")
        if np.any(self.kernels[self.kernel_mask == 0] != 0):
            raise ValueError("masked kernels must be exactly zero")
        if np.any(self.bias[self.bias_mask == 0] != 0):
            raise ValueError("masked biases must be exactly zero")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    # importance scoring and masking address contributors per target filter
    @property
    def fan_in(self) -> int:
        return self.in_channels

    @property
    def fan_out(self) -> int:
        return self.out_channels

    def forward(self, x, with_cache=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv layer with {self.in_channels} input channels got "
                f"batch of shape {x.shape}"
            )
        r = self.kernel_size
        ho, wo = conv_output_hw(x.shape[2], x.shape[3], r, self.stride, self.padding)
        cols = im2col(x, r, self.stride, self.padding)
        z = np.matmul(self.kernels.reshape(self.out_channels, -1), cols)
        z += self.bias[:, None]
        z = z.reshape(x.shape[0], self.out_channels, ho, wo)
        y = self.act.f(z)
        if with_cache:
            return y, (x.shape, cols, z)
        return y

    def backward(self, cache, d_out):
        x_shape, cols, z = cache
        n = x_shape[0]
        co = self.out_channels
        dz = d_out * self.act.df(z)
        dzm = dz.reshape(n, co, -1)  # (N, Co, L)
        # weight gradient: contract over samples and output positions
        dz2 = dzm.transpose(1, 0, 2).reshape(co, -1)
        cols2 = cols.transpose(0, 2, 1).reshape(-1, cols.shape[1])
        dk = (dz2 @ cols2).reshape(self.kernels.shape)
        dk *= self.kernel_mask[:, :, None, None]
        db = dz.sum(axis=(0, 2, 3)) * self.bias_mask
        dcols = np.matmul(self.kernels.reshape(co, -1).T, dzm)
        dx = col2im(dcols, x_shape, self.kernel_size, self.stride, self.padding)
        return dx, {"kernels": dk, "bias": db}

    def apply_mask(self, target: int, contributors) -> None:
        """Mask kernels feeding one target filter; index in_channels is the bias."""
        if not 0 <= target < self.out_channels:
            raise IndexError(
                f"target {target} out of range for {self.out_channels} filters"
            )
        idx = np.asarray(contributors, dtype=np.int64).ravel()
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() > self.in_channels:
            raise IndexError(
                f"contributor indices must lie in [0, {self.in_channels}], got "
                f"[{idx.min()}, {idx.max()}]"
            )
        chans = idx[idx < self.in_channels]
        self.kernel_mask[target, chans] = 0
        self.kernels[target, chans] = 0
        if np.any(idx == self.in_channels):
            self.bias_mask[target] = 0
            self.bias[target] = 0

    def params(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "bias": self.bias}

    def param_masks(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernel_mask[:, :, None, None], "bias": self.bias_mask}

    def stored_masks(self) -> dict[str, np.ndarray]:
        return {"kernel_mask": self.kernel_mask, "bias_mask": self.bias_mask}

    def clone(self) -> "ConvLayer":
        return ConvLayer(self.kernels, self.bias, self.activation, self.stride,
                         self.padding, self.kernel_mask, self.bias_mask,
                         dtype=self.kernels.dtype)

    def astype(self, dtype) -> "ConvLayer":
        return ConvLayer(self.kernels, self.bias, self.activation, self.stride,
                         self.padding, self.kernel_mask, self.bias_mask, dtype=dtype)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise DimensionError(
                f"conv layer with {self.in_channels} input channels got "
                f"input shape {in_shape}"
            )
        ho, wo = conv_output_hw(in_shape[1], in_shape[2], self.kernel_size,
                                self.stride, self.padding)
        return (self.out_channels, ho, wo)


class MaxPool2D:
    """Max pooling over non-overlapping or strided windows. No parameters."""

    kind = "maxpool"

    def __init__(self, window=(2, 2), stride=None):
        self.window, _ = check_stride_padding(window, (0, 0))
        if stride is None:
            stride = self.window
        self.stride, _ = check_stride_padding(stride, (0, 0))

    def forward(self, x, with_cache=False):
        if x.ndim != 4:
            raise DimensionError(f"maxpool expects (N, C, H, W), got {x.shape}")
        wh, ww = self.window
        sh, sw = self.stride
        n, c, h, w = x.shape
        if h < wh or w < ww:
            raise DimensionError(f"pool window {self.window} larger than map {h}x{w}")
        win = np.lib.stride_tricks.sliding_window_view(x, (wh, ww), axis=(2, 3))
        win = win[:, :, ::sh, ::sw]  # (N, C, Ho, Wo, wh, ww)
        ho, wo = win.shape[2], win.shape[3]
        flat = win.reshape(n, c, ho, wo, wh * ww)
        arg = flat.argmax(axis=4)
        y = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
        if with_cache:
            return y, (x.shape, arg)
        return y

    def backward(self, cache, d_out):
        x_shape, arg = cache
        n, c, h, w = x_shape
        wh, ww = self.window
        sh, sw = self.stride
        ho, wo = arg.shape[2], arg.shape[3]
        dx = np.zeros(x_shape, dtype=d_out.dtype)
        ni, ci, hi, wi = np.indices((n, c, ho, wo), sparse=True)
        rows = hi * sh + arg // ww
        cols = wi * sw + arg % ww
        np.add.at(dx, (np.broadcast_to(ni, arg.shape),
                       np.broadcast_to(ci, arg.shape), rows, cols), d_out)
        return dx, {}

    def params(self):
        return {}

    def param_masks(self):
        return {}

    def stored_masks(self):
        return {}

    def clone(self) -> "MaxPool2D":
        return MaxPool2D(self.window, self.stride)

    def astype(self, dtype) -> "MaxPool2D":
        return self.clone()

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"maxpool got input shape {in_shape}")
        c, h, w = in_shape
        wh, ww = self.window
        if h < wh or w < ww:
            raise DimensionError(f"pool window {self.window} larger than map {h}x{w}")
        return (c, (h - wh) // self.stride[0] + 1, (w - ww) // self.stride[1] + 1)


class Flatten:
    """Reshape (N, ...) to (N, prod). No parameters."""

    kind = "flatten"

    def forward(self, x, with_cache=False):
        y = x.reshape(x.shape[0], -1)
        if with_cache:
            return y, x.shape
        return y

    def backward(self, cache, d_out):
        return d_out.reshape(cache), {}

    def params(self):
        return {}

    def param_masks(self):
        return {}

    def stored_masks(self):
        return {}

    def clone(self) -> "Flatten":
        return Flatten()

    def astype(self, dtype) -> "Flatten":
        return Flatten()

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


PRUNABLE_KINDS = ("dense", "conv")
