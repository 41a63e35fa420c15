"""Dense tensor primitives: matrix application, 2-D convolution, norms.

Everything here is pure and dtype-preserving. Convolution follows the
cross-correlation convention (no kernel flip) with zero padding, and is
implemented by lowering patches to columns so the contraction runs as one
matrix product.
"""

import numpy as np

from .errors import DimensionError


def _as_pair(v, name: str) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        v = (int(v), int(v))
    v = tuple(int(x) for x in v)
    if len(v) != 2:
        raise DimensionError(f"{name} must be an int or a pair, got {v!r}")
    return v


def check_stride_padding(stride, padding) -> tuple[tuple[int, int], tuple[int, int]]:
    stride = _as_pair(stride, "stride")
    padding = _as_pair(padding, "padding")
    if stride[0] < 1 or stride[1] < 1:
        raise DimensionError(f"stride components must be >= 1, got {stride}")
    if padding[0] < 0 or padding[1] < 0:
        raise DimensionError(f"padding components must be >= 0, got {padding}")
    return stride, padding


def conv_output_hw(h: int, w: int, r: int, stride, padding) -> tuple[int, int]:
    """Output spatial size for an r x r kernel over an h x w map."""
    (sh, sw), (ph, pw) = check_stride_padding(stride, padding)
    if h + 2 * ph < r or w + 2 * pw < r:
        raise DimensionError(
            f"kernel {r}x{r} larger than padded input {h + 2 * ph}x{w + 2 * pw}"
        )
    return (h + 2 * ph - r) // sh + 1, (w + 2 * pw - r) // sw + 1


def matvec(weights, x) -> np.ndarray:
    w = np.asarray(weights)
    v = np.asarray(x)
    if w.ndim != 2 or v.ndim != 1:
        raise DimensionError(
            f"matvec expects a matrix and a vector, got {w.shape} and {v.shape}"
        )
    if w.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec shape mismatch: {w.shape} @ {v.shape}")
    return w @ v


def abs_elementwise(t) -> np.ndarray:
    return np.abs(np.asarray(t))


def frobenius_norm(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def im2col(x: np.ndarray, r: int, stride, padding) -> np.ndarray:
    """Lower (N, C, H, W) into patch columns of shape (N, C*r*r, Ho*Wo).

    Column k of sample n holds the receptive field of output position k,
    flattened channel-major then row-major, matching kernels reshaped with
    ``kernels.reshape(C_out, -1)``.
    """
    if x.ndim != 4:
        raise DimensionError(f"im2col expects (N, C, H, W), got shape {x.shape}")
    n, c, h, w = x.shape
    (sh, sw), (ph, pw) = check_stride_padding(stride, padding)
    ho, wo = conv_output_hw(h, w, r, stride, padding)
    if ph or pw:
        xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xp[:, :, ph : ph + h, pw : pw + w] = x
    else:
        xp = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (r, r), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]  # (N, C, Ho, Wo, r, r)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * r * r, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols: np.ndarray, x_shape, r: int, stride, padding) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input."""
    n, c, h, w = x_shape
    (sh, sw), (ph, pw) = check_stride_padding(stride, padding)
    ho, wo = conv_output_hw(h, w, r, stride, padding)
    dx = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, r, r, ho, wo)
    for q in range(r):
        for t in range(r):
            dx[:, :, q : q + sh * ho : sh, t : t + sw * wo : sw] += cols6[:, :, q, t]
    if ph or pw:
        return dx[:, :, ph : ph + h, pw : pw + w]
    return dx


def conv2d_batch(x, kernels, bias, stride=(1, 1), padding=(0, 0)) -> np.ndarray:
    """Convolve a batch (N, C_in, H, W) with kernels (C_out, C_in, r, r)."""
    x = np.asarray(x)
    k = np.asarray(kernels)
    b = np.asarray(bias)
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(
            f"conv2d_batch expects 4-D input and kernels, got {x.shape}, {k.shape}"
        )
    if k.shape[2] != k.shape[3]:
        raise DimensionError(f"kernels must be square, got {k.shape}")
    if k.shape[1] != x.shape[1]:
        raise DimensionError(
            f"input has {x.shape[1]} channels but kernels expect {k.shape[1]}"
        )
    if b.shape != (k.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match {k.shape[0]} filters")
    n = x.shape[0]
    co, _, r, _ = k.shape
    ho, wo = conv_output_hw(x.shape[2], x.shape[3], r, stride, padding)
    cols = im2col(x, r, stride, padding)  # (N, C*r*r, Ho*Wo)
    y = np.matmul(k.reshape(co, -1), cols)  # (N, Co, Ho*Wo)
    y += b[:, None]
    return y.reshape(n, co, ho, wo)


def conv2d(input, kernels, bias, stride=(1, 1), padding=(0, 0)) -> np.ndarray:
    """Single-sample convolution: (C_in, H, W) -> (C_out, H', W')."""
    x = np.asarray(input)
    if x.ndim != 3:
        raise DimensionError(f"conv2d expects (C, H, W), got shape {x.shape}")
    return conv2d_batch(x[None], kernels, bias, stride, padding)[0]
