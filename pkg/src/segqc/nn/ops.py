"""Convolution primitives shared by Conv and ConvTranspose layers.

All routines take batched channel-first tensors: ``x`` is (N, C_in, *S),
``w`` is (C_out, C_in, *K), spatial rank d in {2, 3}.  Convolution uses
cross-correlation semantics (no kernel flip) with zero padding; the output
extent per axis is floor((in + 2p - k) / s) + 1.

Three primitives cover every gradient path:

- ``conv_forward``          y = conv(x, w) + b
- ``conv_input_grad``       dx given dy      (also the transposed-conv forward)
- ``conv_weight_grad``      dw given dy      (shared by both layer types)

Supported padding range is 0 <= p <= k - 1 per axis.

The im2col buffer (window view materialized by tensordot) is capped at
``_IM2COL_BUDGET`` bytes by chunking over the batch axis; chunk sizes depend
only on shapes, so results are reproducible.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_IM2COL_BUDGET = 256 * 1024 * 1024


def _as_tuple(v, d, name):
    if np.isscalar(v):
        t = (int(v),) * d
    else:
        t = tuple(int(u) for u in v)
    if len(t) != d:
        raise ValueError(f"{name} must have {d} entries, got {t}")
    return t


def _check_conv_args(x, w, stride, padding):
    d = x.ndim - 2
    if d not in (2, 3):
        raise ValueError(f"expected 2D or 3D convolution input (N, C, *S), got shape {x.shape}")
    if w.ndim != d + 2:
        raise ValueError(f"weight rank {w.ndim} does not match input rank {x.ndim}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape} vs weight {w.shape}")
    stride = _as_tuple(stride, d, "stride")
    padding = _as_tuple(padding, d, "padding")
    kernel = w.shape[2:]
    if any(s < 1 for s in stride):
        raise ValueError(f"stride must be >= 1, got {stride}")
    if any(p < 0 or p > k - 1 for p, k in zip(padding, kernel)):
        raise ValueError(f"padding must satisfy 0 <= p <= k-1, got p={padding} for k={kernel}")
    return d, stride, padding, kernel


def conv_out_shape(in_shape, kernel, stride, padding):
    out = []
    for n, k, s, p in zip(in_shape, kernel, stride, padding):
        if n + 2 * p < k:
            raise ValueError(f"spatial extent {n} too small for kernel {k} with padding {p}")
        out.append((n + 2 * p - k) // s + 1)
    return tuple(out)


def _zero_pad_spatial(x, padding):
    if all(p == 0 for p in padding):
        return x
    pad = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    return np.pad(x, pad)


def _batch_chunks(n, per_sample_bytes):
    if n == 0:
        return []
    chunk = max(1, int(_IM2COL_BUDGET // max(1, per_sample_bytes)))
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def _corr_windows(xp, kernel, stride):
    """Strided window view of padded input: (N, C, *Out, *K)."""
    d = xp.ndim - 2
    win = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + d)))
    slicer = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return win[slicer]


def conv_forward(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of x (N, C_in, *S) with w (C_out, C_in, *K)."""
    d, stride, padding, kernel = _check_conv_args(x, w, stride, padding)
    conv_out_shape(x.shape[2:], kernel, stride, padding)
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match out channels {w.shape[0]}")
    xp = _zero_pad_spatial(x, padding)
    win = _corr_windows(xp, kernel, stride)
    out_sp = win.shape[2 : 2 + d]
    per_sample = x.shape[1] * int(np.prod(out_sp)) * int(np.prod(kernel)) * x.itemsize
    parts = []
    for lo, hi in _batch_chunks(x.shape[0], per_sample):
        # contract channels + kernel axes: (n, C_in, *O, *K) x (C_out, C_in, *K)
        res = np.tensordot(
            win[lo:hi],
            w,
            axes=(
                [1] + list(range(2 + d, 2 + 2 * d)),
                [1] + list(range(2, 2 + d)),
            ),
        )
        parts.append(np.moveaxis(res, -1, 1))
    y = np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]
    y = np.ascontiguousarray(y)
    if b is not None:
        y += b.reshape((1, -1) + (1,) * d)
    return y


def conv_input_grad(dy, w, stride, padding, in_spatial):
    """Gradient w.r.t. the conv input; equivalently a transposed convolution.

    dy is (N, C_out, *O), w is (C_out, C_in, *K); returns (N, C_in, *in_spatial).
    Implemented by scattering dy onto a stride-dilated grid and correlating at
    stride 1 with the spatially flipped, channel-transposed weights.
    """
    d = dy.ndim - 2
    stride = _as_tuple(stride, d, "stride")
    padding = _as_tuple(padding, d, "padding")
    in_spatial = _as_tuple(in_spatial, d, "in_spatial")
    kernel = w.shape[2:]
    if dy.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: dy {dy.shape} vs weight {w.shape}")
    expect = conv_out_shape(in_spatial, kernel, stride, padding)
    if tuple(dy.shape[2:]) != expect:
        raise ValueError(f"dy spatial {dy.shape[2:]} does not match expected {expect}")
    full = tuple(n + k - 1 for n, k in zip(in_spatial, kernel))
    z = np.zeros(dy.shape[:2] + full, dtype=dy.dtype)
    place = tuple(
        slice(k - 1 - p, k - 1 - p + s * (o - 1) + 1, s)
        for k, p, s, o in zip(kernel, padding, stride, dy.shape[2:])
    )
    z[(slice(None), slice(None)) + place] = dy
    wt = np.flip(w, axis=tuple(range(2, 2 + d)))
    wt = np.swapaxes(wt, 0, 1)  # (C_in, C_out, *K)
    win = _corr_windows(z, kernel, (1,) * d)
    per_sample = z.shape[1] * int(np.prod(in_spatial)) * int(np.prod(kernel)) * z.itemsize
    parts = []
    for lo, hi in _batch_chunks(dy.shape[0], per_sample):
        res = np.tensordot(
            win[lo:hi],
            wt,
            axes=(
                [1] + list(range(2 + d, 2 + 2 * d)),
                [1] + list(range(2, 2 + d)),
            ),
        )
        parts.append(np.moveaxis(res, -1, 1))
    dx = np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]
    return np.ascontiguousarray(dx)


def conv_weight_grad(x, dy, stride, padding, kernel):
    """Gradient w.r.t. the conv weights: (C_out, C_in, *K)."""
    d = x.ndim - 2
    stride = _as_tuple(stride, d, "stride")
    padding = _as_tuple(padding, d, "padding")
    kernel = _as_tuple(kernel, d, "kernel")
    expect = conv_out_shape(x.shape[2:], kernel, stride, padding)
    if tuple(dy.shape[2:]) != expect:
        raise ValueError(f"dy spatial {dy.shape[2:]} does not match expected {expect}")
    if x.shape[0] != dy.shape[0]:
        raise ValueError(f"batch mismatch: x {x.shape} vs dy {dy.shape}")
    xp = _zero_pad_spatial(x, padding)
    win = _corr_windows(xp, kernel, stride)
    out_sp = dy.shape[2:]
    per_sample = x.shape[1] * int(np.prod(out_sp)) * int(np.prod(kernel)) * x.itemsize
    dw = None
    for lo, hi in _batch_chunks(x.shape[0], per_sample):
        # contract batch + output axes: (n, C_out, *O) x (n, C_in, *O, *K)
        part = np.tensordot(
            dy[lo:hi],
            win[lo:hi],
            axes=(
                [0] + list(range(2, 2 + d)),
                [0] + list(range(2, 2 + d)),
            ),
        )
        dw = part if dw is None else dw + part
    return np.ascontiguousarray(dw)
