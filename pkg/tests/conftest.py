"""Shared oracle implementations for the test suite.

Every oracle here is written the dumb, obviously-correct way (explicit loops,
dense convolutions, sorting) and kept independent of the library's vectorized
implementations so that agreement is meaningful.
"""

import numpy as np
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def brute_conv(x, w, b, stride, padding):
    """Cross-correlation by explicit loops; x (N,Ci,*S), w (Co,Ci,*K)."""
    nd = x.ndim - 2
    stride = (stride,) * nd if np.isscalar(stride) else tuple(stride)
    padding = (padding,) * nd if np.isscalar(padding) else tuple(padding)
    pad = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    xp = np.pad(x, pad).astype(np.float64)
    n, ci = x.shape[:2]
    co = w.shape[0]
    kshape = w.shape[2:]
    out_spatial = tuple(
        (x.shape[2 + d] + 2 * padding[d] - kshape[d]) // stride[d] + 1
        for d in range(nd))
    out = np.zeros((n, co) + out_spatial, dtype=np.float64)
    for idx in np.ndindex(*out_spatial):
        window = xp[(slice(None), slice(None))
                    + tuple(slice(idx[d] * stride[d], idx[d] * stride[d] + kshape[d])
                            for d in range(nd))]
        for o in range(co):
            out[(slice(None), o) + idx] = np.sum(
                window * w[o].astype(np.float64), axis=tuple(range(1, nd + 2)))
    if b is not None:
        out += b.reshape((1, co) + (1,) * nd)
    return out


def reflect_pad_1d(values, radius):
    """np.pad 'reflect' written by hand for cross-checking."""
    values = list(values)
    n = len(values)
    if n == 1:
        return values * (2 * radius + 1)
    left = []
    idx, step = 1, 1
    for _ in range(radius):
        left.append(values[idx])
        idx += step
        if idx in (0, n - 1):
            step = -step
    right = []
    idx, step = n - 2, -1
    for _ in range(radius):
        right.append(values[idx])
        idx += step
        if idx in (0, n - 1):
            step = -step
    return left[::-1] + values + right


def gaussian_kernel_1d(sigma):
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def dense_gaussian_3d(data, sigma):
    """Full (non-separable) 3D Gaussian with reflect borders, triple loop."""
    if sigma == 0:
        return data.astype(np.float64)
    k1 = gaussian_kernel_1d(sigma)
    radius = (len(k1) - 1) // 2
    k3 = k1[:, None, None] * k1[None, :, None] * k1[None, None, :]
    padded = np.pad(data.astype(np.float64), radius, mode="reflect")
    nx, ny, nz = data.shape
    out = np.zeros((nx, ny, nz), dtype=np.float64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                window = padded[i:i + 2 * radius + 1,
                                j:j + 2 * radius + 1,
                                k:k + 2 * radius + 1]
                out[i, j, k] = np.sum(window * k3)
    return out


def percentile_sorted(values, q):
    """Linear-interpolation percentile on sorted data, from its definition."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 1:
        return float(v[0])
    pos = (q / 100.0) * (v.size - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return float(v[lo] * (1 - frac) + v[hi] * frac)


def concordance_auc(scores, labels):
    """Pairwise concordance with ties counted half, by explicit double loop."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def numeric_loss_grad(loss_fn, pred, eps=1e-6):
    """Central finite differences of a scalar loss over every pred element."""
    pred = pred.astype(np.float64)
    grad = np.zeros_like(pred)
    it = np.nditer(pred, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        plus = pred.copy()
        plus[idx] += eps
        minus = pred.copy()
        minus[idx] -= eps
        grad[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * eps)
        it.iternext()
    return grad
