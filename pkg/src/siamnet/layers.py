"""Layer primitives: convolution, max-pooling, cross-channel
normalization, ReLU, fully-connected.  Forward and backward passes.

All arrays are 64-bit floats in row-major order.  Every forward is a
pure function of its inputs; backwards take the original input (or the
pooling argmax record) plus the upstream gradient.  Hot kernels are
dispatched through siamnet.backend.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DimensionError


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise DimensionError(f"{what} contains non-finite values")
    return x


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract for a same-size zero-padded convolution."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    zero_pad: bool = True

    def __post_init__(self):
        if self.zero_pad and (self.kernel_h % 2 == 0 or self.kernel_w % 2 == 0):
            raise DimensionError(
                f"zero-padded kernel dims must be odd, got {self.kernel_h}x{self.kernel_w}"
            )

    @classmethod
    def from_filters(cls, filters: np.ndarray, zero_pad: bool = True) -> "ConvSpec":
        k, c, kh, kw = filters.shape
        return cls(c, k, kh, kw, zero_pad)


def _check_conv_shapes(x, filters, bias, spec: ConvSpec):
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-D [N,C,H,W], got {x.ndim}-D")
    if filters.ndim != 4:
        raise DimensionError(f"conv2d filters must be 4-D [K,C,kh,kw], got {filters.ndim}-D")
    if x.shape[1] != spec.in_channels or filters.shape[1] != spec.in_channels:
        raise DimensionError(
            f"channel axis mismatch: input has {x.shape[1]}, filters expect {filters.shape[1]}"
        )
    if filters.shape[0] != spec.out_channels:
        raise DimensionError(
            f"filter-count axis mismatch: got {filters.shape[0]}, spec says {spec.out_channels}"
        )
    if filters.shape[2] != spec.kernel_h or filters.shape[3] != spec.kernel_w:
        raise DimensionError(
            f"kernel axes mismatch: filters are {filters.shape[2]}x{filters.shape[3]}, "
            f"spec says {spec.kernel_h}x{spec.kernel_w}"
        )
    if bias.shape != (spec.out_channels,):
        raise DimensionError(f"bias axis mismatch: got {bias.shape}, want ({spec.out_channels},)")


def conv2d(x: np.ndarray, filters: np.ndarray, bias: np.ndarray,
           spec: ConvSpec | None = None) -> np.ndarray:
    """Same-size cross-correlation of x [N,C,H,W] with filters [K,C,kh,kw]."""
    x, filters, bias = as_tensor(x), as_tensor(filters), as_tensor(bias)
    if spec is None:
        spec = ConvSpec.from_filters(filters)
    _check_conv_shapes(x, filters, bias, spec)
    ph, pw = spec.kernel_h // 2, spec.kernel_w // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return backend.kernels().conv2d_fwd(xp, filters, bias)


def conv2d_backward(x: np.ndarray, filters: np.ndarray, grad: np.ndarray,
                    spec: ConvSpec | None = None):
    """Gradients (d_input, d_filters, d_bias) for conv2d."""
    x, filters, grad = as_tensor(x), as_tensor(filters), as_tensor(grad)
    if spec is None:
        spec = ConvSpec.from_filters(filters)
    kh, kw = spec.kernel_h, spec.kernel_w
    ph, pw = kh // 2, kw // 2
    if grad.shape != (x.shape[0], spec.out_channels, x.shape[2], x.shape[3]):
        raise DimensionError(
            f"upstream grad shape {grad.shape} does not match output "
            f"{(x.shape[0], spec.out_channels, x.shape[2], x.shape[3])}"
        )
    kern = backend.kernels()
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    df, db = kern.conv2d_bwd_filters(xp, grad)
    gp = np.pad(grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    dxp = kern.conv2d_bwd_input(gp, filters)
    h, w = x.shape[2], x.shape[3]
    dx = dxp[:, :, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(dx), df, db


def maxpool2(x: np.ndarray):
    """2x2/stride-2 max pool of x [N,K,H,W]; H and W must be even.

    Returns (output [N,K,H/2,W/2], argmax record for the backward).
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"maxpool2 input must be 4-D, got {x.ndim}-D")
    if x.shape[2] % 2 or x.shape[3] % 2:
        axis = "H" if x.shape[2] % 2 else "W"
        raise DimensionError(f"maxpool2 needs even spatial dims, axis {axis} is odd: {x.shape}")
    return backend.kernels().maxpool2_fwd(x)


def maxpool2_backward(idx: np.ndarray, grad: np.ndarray) -> np.ndarray:
    grad = as_tensor(grad)
    if idx.shape != grad.shape:
        raise DimensionError(f"argmax record {idx.shape} vs grad {grad.shape} mismatch")
    return backend.kernels().maxpool2_bwd(idx, grad)


def _window_sum(sq: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the channel window [c-radius, c+radius], clipped at ends."""
    k = sq.shape[1]
    csum = np.zeros((sq.shape[0], k + 1) + sq.shape[2:])
    np.cumsum(sq, axis=1, out=csum[:, 1:])
    hi = np.minimum(np.arange(k) + radius + 1, k)
    lo = np.maximum(np.arange(k) - radius, 0)
    return csum[:, hi] - csum[:, lo]


def cross_channel_norm(x: np.ndarray, k0: float = 1.0, alpha_n: float = 1e-4,
                       beta_n: float = 0.75, radius: int = 2) -> np.ndarray:
    """Local response normalization across channels.

    out[c] = x[c] / (k0 + alpha_n * sum_{|c'-c|<=radius} x[c']^2) ** beta_n
    """
    x = as_tensor(x)
    if radius < 0:
        raise DimensionError(f"radius must be >= 0, got {radius}")
    t = k0 + alpha_n * _window_sum(x * x, radius)
    return x * t ** (-beta_n)


def cross_channel_norm_backward(x: np.ndarray, grad: np.ndarray, k0: float = 1.0,
                                alpha_n: float = 1e-4, beta_n: float = 0.75,
                                radius: int = 2) -> np.ndarray:
    x, grad = as_tensor(x), as_tensor(grad)
    t = k0 + alpha_n * _window_sum(x * x, radius)
    tb = t ** (-beta_n)
    # dx_e = g_e*t_e^-b - 2*a*b*x_e * winsum(g*x*t^(-b-1)); window symmetry
    # makes "e in win(c)" the same as "c in win(e)".
    u = grad * x * tb / t
    return grad * tb - 2.0 * alpha_n * beta_n * x * _window_sum(u, radius)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; the kink at 0 propagates nothing."""
    return np.where(x > 0.0, grad, 0.0)


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map per row: x [N,D_in] -> [N,D_out] with weights [D_out,D_in]."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 2:
        raise DimensionError(f"fully_connected input must be 2-D, got {x.ndim}-D")
    if x.shape[1] != weights.shape[1]:
        raise DimensionError(
            f"feature axis mismatch: input has {x.shape[1]}, weights expect {weights.shape[1]}"
        )
    if bias.shape != (weights.shape[0],):
        raise DimensionError(f"bias axis mismatch: got {bias.shape}, want ({weights.shape[0]},)")
    return x @ weights.T + bias


def fully_connected_backward(x: np.ndarray, weights: np.ndarray, grad: np.ndarray):
    """Gradients (d_input, d_weights, d_bias) for fully_connected."""
    x, weights, grad = as_tensor(x), as_tensor(weights), as_tensor(grad)
    if grad.shape != (x.shape[0], weights.shape[0]):
        raise DimensionError(
            f"upstream grad shape {grad.shape} does not match output "
            f"{(x.shape[0], weights.shape[0])}"
        )
    return grad @ weights, grad.T @ x, grad.sum(axis=0)
