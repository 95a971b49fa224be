"""Dense-array kernels: convolution, pooling, upsampling, nonlinearities.

Everything operates on (H, W, C) maps with direct-summation semantics; no
broadcasting tricks beyond what the operations themselves define. All
functions are pure and deterministic for a fixed dtype.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from latticeseg.errors import DimensionError

DTYPES = {"single": np.float32, "double": np.float64}


def dtype_for(precision):
    """Map a precision tag ('single' | 'double') to a numpy dtype."""
    try:
        return DTYPES[precision]
    except KeyError:
        raise ValueError(f"unknown precision tag {precision!r}") from None


def _check_map(x, name="input"):
    if x.ndim != 3:
        raise DimensionError(f"{name} must be (H, W, C), got shape {x.shape}")


def conv2d(x, kernels, bias, padding=None):
    """Same-size cross-correlation of an (H, W, Cin) map with (kh, kw, Cin, Cout) kernels.

    Kernel spatial dims must be odd; padding defaults to (k - 1) // 2 so the
    output keeps the input resolution.
    """
    _check_map(x)
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be (kh, kw, Cin, Cout), got {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel spatial dims must be odd, got {kh}x{kw}")
    if cin != x.shape[2]:
        raise DimensionError(f"kernel expects {cin} input channels, map has {x.shape[2]}")
    if bias.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {bias.shape}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    if padding is not None and padding != ph:
        raise DimensionError(f"padding must be {ph} for kernel size {kh}, got {padding}")
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))  # (H, W, Cin, kh, kw)
    out = np.einsum("xycij,ijcf->xyf", win, kernels, optimize=True)
    out += bias
    return out


def conv2d_backward(x, kernels, d_out):
    """Gradients of conv2d: returns (d_input, d_kernels, d_bias).

    `x` and `kernels` must be the forward arguments; `d_out` is the cotangent
    of the forward output.
    """
    kh, kw, cin, cout = kernels.shape
    if d_out.shape != (x.shape[0], x.shape[1], cout):
        raise DimensionError(
            f"d_out shape {d_out.shape} does not match output ({x.shape[0]}, {x.shape[1]}, {cout})"
        )
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    d_bias = d_out.sum(axis=(0, 1))
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))
    d_kernels = np.einsum("xycij,xyf->ijcf", win, d_out, optimize=True)
    # Input gradient = same-size correlation of d_out with the spatially
    # flipped kernels, input/output channel axes swapped.
    flipped = kernels[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh, kw, Cout, Cin)
    dp = np.pad(d_out, ((ph, ph), (pw, pw), (0, 0)))
    win_d = sliding_window_view(dp, (kh, kw), axis=(0, 1))
    d_input = np.einsum("xyfij,ijfc->xyc", win_d, flipped, optimize=True)
    return d_input, d_kernels, d_bias


def maxpool2d(x):
    """2x2 stride-2 max pooling. Returns (pooled, argmax) with argmax in {0..3}.

    Window order is row-major, ties resolve to the first occurrence, so the
    backward routing is deterministic.
    """
    _check_map(x)
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even dims, got {h}x{w}")
    win = x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, c, 4)
    argmax = win.argmax(axis=3)
    pooled = np.take_along_axis(win, argmax[..., None], axis=3)[..., 0]
    return pooled, argmax


def maxpool2d_backward(argmax, d_out):
    """Scatter pooled-output gradients back to the winning input cells."""
    oh, ow, c = d_out.shape
    if argmax.shape != d_out.shape:
        raise DimensionError(f"argmax shape {argmax.shape} does not match d_out {d_out.shape}")
    d_win = np.zeros((oh, ow, c, 4), dtype=d_out.dtype)
    np.put_along_axis(d_win, argmax[..., None], d_out[..., None], axis=3)
    return d_win.reshape(oh, ow, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(oh * 2, ow * 2, c)


def _interp_matrix(n_in, n_out, dtype):
    # Row r holds the two interpolation weights for output index r; sample
    # coordinate is (r + 0.5) * n_in / n_out - 0.5 clamped to [0, n_in - 1].
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    m[rows, lo] += (1.0 - frac).astype(dtype)
    m[rows, hi] += frac.astype(dtype)
    return m


def bilinear_upsample(x, target_h, target_w):
    """Separable bilinear upsampling to (target_h, target_w); identity when sizes match."""
    _check_map(x)
    h, w, c = x.shape
    if target_h < h or target_w < w:
        raise DimensionError(f"target {target_h}x{target_w} smaller than source {h}x{w}")
    rm = _interp_matrix(h, target_h, x.dtype)
    cm = _interp_matrix(w, target_w, x.dtype)
    tmp = np.einsum("oh,hwc->owc", rm, x, optimize=True)
    return np.einsum("pw,owc->opc", cm, tmp, optimize=True)


def bilinear_upsample_backward(d_out, source_h, source_w):
    """Transpose of bilinear_upsample: scatter-add of the interpolation weights."""
    _check_map(d_out, "d_out")
    th, tw, c = d_out.shape
    if th < source_h or tw < source_w:
        raise DimensionError(f"d_out {th}x{tw} smaller than source {source_h}x{source_w}")
    rm = _interp_matrix(source_h, th, d_out.dtype)
    cm = _interp_matrix(source_w, tw, d_out.dtype)
    tmp = np.einsum("oh,owc->hwc", rm, d_out, optimize=True)
    return np.einsum("pw,hpc->hwc", cm, tmp, optimize=True)


def relu(x):
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def relu_backward(x, d_y):
    """Pass d_y where x > 0; the subgradient at exactly 0 is 0."""
    return d_y * (x > 0)


def softmax_channels(x):
    """Per-position softmax over the channel axis, max-shifted for stability."""
    _check_map(x)
    shifted = x - x.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=2, keepdims=True)
