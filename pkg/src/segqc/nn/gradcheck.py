"""Finite-difference verification of analytic backward passes.

The scalar probe loss is L = sum(r * net(x)) for a fixed random projection
r, so dL/dy = r exactly and any disagreement is the operator's fault.
Relative error is computed per tensor as max|a - n| / max(max|a|, max|n|,
1e-3) — normalizing by the tensor's gradient scale rather than elementwise
keeps finite-difference roundoff on near-zero elements from drowning the
signal, and the floor turns tensors whose true gradient is identically zero
(e.g. a conv bias feeding batch norm) into an absolute comparison at 1e-7.
The check returns the max over every trainable parameter and the input.
Run it on float64 nets/inputs — float32 rounding alone exceeds tight
tolerances.
"""

import numpy as np

REL_FLOOR = 1e-3


def _rel_err(analytic, numeric):
    num = np.abs(analytic - numeric).max(initial=0.0)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), REL_FLOOR)
    return num / denom


def finite_difference_check(net, x, eps=1e-4, train=False, rng=None):
    """Max relative error between analytic and central-difference gradients."""
    rng = rng or np.random.default_rng(0)
    y0 = net.forward(x, train=train)
    r = rng.normal(size=y0.shape)

    for p in net.params():
        p.zero_grad()
    dx_analytic = net.backward(r)

    def loss_at():
        return float(np.sum(r * net.forward(x, train=train)))

    worst = 0.0
    for p in net.params():
        if not p.trainable:
            continue
        analytic = p.grad
        numeric = np.zeros_like(p.value)
        flat_v = p.value.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + eps
            lp = loss_at()
            flat_v[i] = orig - eps
            lm = loss_at()
            flat_v[i] = orig
            flat_n[i] = (lp - lm) / (2.0 * eps)
        worst = max(worst, float(_rel_err(analytic, numeric)))

    numeric_x = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_n = numeric_x.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        lp = loss_at()
        flat_x[i] = orig - eps
        lm = loss_at()
        flat_x[i] = orig
        flat_n[i] = (lp - lm) / (2.0 * eps)
    worst = max(worst, float(_rel_err(dx_analytic, numeric_x)))
    return worst


def loss_gradient_check(loss_fn, pred, target=None, eps=1e-6):
    """Max relative error of a loss function's analytic gradient w.r.t. pred."""
    if target is None:
        _, analytic = loss_fn(pred)
    else:
        _, analytic = loss_fn(pred, target)

    def value_at():
        if target is None:
            return loss_fn(pred)[0]
        return loss_fn(pred, target)[0]

    numeric = np.zeros_like(pred)
    flat_p = pred.reshape(-1)
    flat_n = numeric.reshape(-1)
    for i in range(flat_p.size):
        orig = flat_p[i]
        flat_p[i] = orig + eps
        lp = value_at()
        flat_p[i] = orig - eps
        lm = value_at()
        flat_p[i] = orig
        flat_n[i] = (lp - lm) / (2.0 * eps)
    return float(_rel_err(analytic, numeric))
