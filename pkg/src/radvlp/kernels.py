"""Hot convolution kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``RADVLP_KERNELS``
environment variable (``numba`` or ``numpy``). When unset, numba is used if
it imports cleanly. Both paths compute identical quantities; they may differ
in the last float bits because summation order differs, so determinism
guarantees hold per backend, not across backends.

Arrays are NHWC float64. Weights are (KH, KW, Cin, Cout). Padding is the
"same" padding for odd kernels: pad = (K - 1) * dilation // 2 per side.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("RADVLP_KERNELS", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"RADVLP_KERNELS must be 'numba' or 'numpy', got {_env!r}")

_HAS_NUMBA = False
if _env != "numpy":
    try:
        from numba import njit

        _HAS_NUMBA = True
    except ImportError:
        if _env == "numba":
            raise

_BACKEND = "numba" if (_HAS_NUMBA and _env != "numpy") else "numpy"


def active_backend() -> str:
    """Name of the kernel backend in use ('numba' or 'numpy')."""
    return _BACKEND


def conv_output_size(size: int, k: int, stride: int, dilation: int) -> int:
    pad = (k - 1) * dilation // 2
    span = (k - 1) * dilation + 1
    return (size + 2 * pad - span) // stride + 1


def _pad_input(x, kh, kw, dilation):
    ph = (kh - 1) * dilation // 2
    pw = (kw - 1) * dilation // 2
    if ph == 0 and pw == 0:
        return x, ph, pw
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))), ph, pw


# ---------------------------------------------------------------------------
# numpy path: shift-and-matmul, one GEMM per kernel offset
# ---------------------------------------------------------------------------


def _offset_slice(base, n_out, stride):
    return slice(base, base + (n_out - 1) * stride + 1, stride)


def _conv2d_numpy(x, w, stride, dilation):
    kh, kw, cin, cout = w.shape
    xp, _, _ = _pad_input(x, kh, kw, dilation)
    b = x.shape[0]
    ho = conv_output_size(x.shape[1], kh, stride, dilation)
    wo = conv_output_size(x.shape[2], kw, stride, dilation)
    out = np.zeros((b, ho, wo, cout), dtype=x.dtype)
    for ki in range(kh):
        rs = _offset_slice(ki * dilation, ho, stride)
        for kj in range(kw):
            cs = _offset_slice(kj * dilation, wo, stride)
            out += xp[:, rs, cs, :] @ w[ki, kj]
    return out


def _conv2d_grad_input_numpy(dout, x_shape, w, stride, dilation):
    kh, kw, cin, cout = w.shape
    ph = (kh - 1) * dilation // 2
    pw = (kw - 1) * dilation // 2
    b, h, wd, _ = x_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dxp = np.zeros((b, h + 2 * ph, wd + 2 * pw, cin), dtype=dout.dtype)
    for ki in range(kh):
        rs = _offset_slice(ki * dilation, ho, stride)
        for kj in range(kw):
            cs = _offset_slice(kj * dilation, wo, stride)
            dxp[:, rs, cs, :] += dout @ w[ki, kj].T
    if ph == 0 and pw == 0:
        return dxp
    return dxp[:, ph : ph + h, pw : pw + wd, :]


def _conv2d_grad_weights_numpy(dout, x, kh, kw, stride, dilation):
    cin = x.shape[3]
    cout = dout.shape[3]
    xp, _, _ = _pad_input(x, kh, kw, dilation)
    ho, wo = dout.shape[1], dout.shape[2]
    dw = np.zeros((kh, kw, cin, cout), dtype=x.dtype)
    for ki in range(kh):
        rs = _offset_slice(ki * dilation, ho, stride)
        for kj in range(kw):
            cs = _offset_slice(kj * dilation, wo, stride)
            dw[ki, kj] = np.tensordot(xp[:, rs, cs, :], dout, axes=([0, 1, 2], [0, 1, 2]))
    return dw


# ---------------------------------------------------------------------------
# numba path: direct loops, deterministic (no fastmath, single thread)
# ---------------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True)
    def _conv2d_kernel(xp, w, stride, dilation, out):
        b, ho, wo, cout = out.shape
        kh, kw, cin, _ = w.shape
        acc = np.empty(cout, dtype=out.dtype)
        for n in range(b):
            for oh in range(ho):
                ih0 = oh * stride
                for ow in range(wo):
                    iw0 = ow * stride
                    for co in range(cout):
                        acc[co] = 0.0
                    for ki in range(kh):
                        ih = ih0 + ki * dilation
                        for kj in range(kw):
                            iw = iw0 + kj * dilation
                            for ci in range(cin):
                                v = xp[n, ih, iw, ci]
                                for co in range(cout):
                                    acc[co] += v * w[ki, kj, ci, co]
                    for co in range(cout):
                        out[n, oh, ow, co] = acc[co]

    @njit(cache=True)
    def _conv2d_grad_input_kernel(dout, w, stride, dilation, dxp):
        b, ho, wo, cout = dout.shape
        kh, kw, cin, _ = w.shape
        for n in range(b):
            for oh in range(ho):
                ih0 = oh * stride
                for ow in range(wo):
                    iw0 = ow * stride
                    for ki in range(kh):
                        ih = ih0 + ki * dilation
                        for kj in range(kw):
                            iw = iw0 + kj * dilation
                            for ci in range(cin):
                                acc = 0.0
                                for co in range(cout):
                                    acc += dout[n, oh, ow, co] * w[ki, kj, ci, co]
                                dxp[n, ih, iw, ci] += acc

    @njit(cache=True)
    def _conv2d_grad_weights_kernel(dout, xp, stride, dilation, dw):
        b, ho, wo, cout = dout.shape
        kh, kw, cin, _ = dw.shape
        for n in range(b):
            for oh in range(ho):
                ih0 = oh * stride
                for ow in range(wo):
                    iw0 = ow * stride
                    for ki in range(kh):
                        ih = ih0 + ki * dilation
                        for kj in range(kw):
                            iw = iw0 + kj * dilation
                            for ci in range(cin):
                                v = xp[n, ih, iw, ci]
                                for co in range(cout):
                                    dw[ki, kj, ci, co] += v * dout[n, oh, ow, co]


def _conv2d_numba(x, w, stride, dilation):
    kh, kw, _, cout = w.shape
    xp, _, _ = _pad_input(x, kh, kw, dilation)
    b = x.shape[0]
    ho = conv_output_size(x.shape[1], kh, stride, dilation)
    wo = conv_output_size(x.shape[2], kw, stride, dilation)
    out = np.zeros((b, ho, wo, cout), dtype=x.dtype)
    _conv2d_kernel(np.ascontiguousarray(xp), np.ascontiguousarray(w), stride, dilation, out)
    return out


def _conv2d_grad_input_numba(dout, x_shape, w, stride, dilation):
    kh, kw, cin, _ = w.shape
    ph = (kh - 1) * dilation // 2
    pw = (kw - 1) * dilation // 2
    b, h, wd, _ = x_shape
    dxp = np.zeros((b, h + 2 * ph, wd + 2 * pw, cin), dtype=dout.dtype)
    _conv2d_grad_input_kernel(
        np.ascontiguousarray(dout), np.ascontiguousarray(w), stride, dilation, dxp
    )
    if ph == 0 and pw == 0:
        return dxp
    return dxp[:, ph : ph + h, pw : pw + wd, :]


def _conv2d_grad_weights_numba(dout, x, kh, kw, stride, dilation):
    cin = x.shape[3]
    cout = dout.shape[3]
    xp, _, _ = _pad_input(x, kh, kw, dilation)
    dw = np.zeros((kh, kw, cin, cout), dtype=x.dtype)
    _conv2d_grad_weights_kernel(
        np.ascontiguousarray(dout), np.ascontiguousarray(xp), stride, dilation, dw
    )
    return dw


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def conv2d(x, w, stride=1, dilation=1):
    """2-D convolution, NHWC input, same padding."""
    if _BACKEND == "numba":
        return _conv2d_numba(x, w, stride, dilation)
    return _conv2d_numpy(x, w, stride, dilation)


def conv2d_grad_input(dout, x_shape, w, stride=1, dilation=1):
    """Gradient of conv2d w.r.t. its input, given upstream grad ``dout``."""
    if _BACKEND == "numba":
        return _conv2d_grad_input_numba(dout, x_shape, w, stride, dilation)
    return _conv2d_grad_input_numpy(dout, x_shape, w, stride, dilation)


def conv2d_grad_weights(dout, x, kh, kw, stride=1, dilation=1):
    """Gradient of conv2d w.r.t. its weights."""
    if _BACKEND == "numba":
        return _conv2d_grad_weights_numba(dout, x, kh, kw, stride, dilation)
    return _conv2d_grad_weights_numpy(dout, x, kh, kw, stride, dilation)
