"""Mean-reduced losses returning (scalar, gradient w.r.t. pred).

``bce`` expects probabilities (post-sigmoid) and clamps them to
[eps, 1 - eps]; the gradient is zero where the clamp is active.  The GAN
variants are binary cross-entropies against the real/fake targets: the
generator loss scores fake discriminator maps against "real" (all ones),
the discriminator loss scores a map against the supplied target map.
"""

import numpy as np

BCE_EPS = 1e-7


def _check_shapes(pred, target):
    if target is None:
        raise ValueError("loss requires a target")
    if pred.shape != target.shape:
        raise ValueError(f"loss shape mismatch: pred {pred.shape} vs target {target.shape}")


def l1_loss(pred, target):
    _check_shapes(pred, target)
    diff = pred - target
    loss = np.abs(diff).mean()
    grad = np.sign(diff) / diff.size
    return float(loss), grad


def bce_loss(pred, target):
    _check_shapes(pred, target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / pred.size
    return float(loss), grad


def gan_generator_loss(pred, target=None):
    """BCE of the discriminator's fake-map ``pred`` against all-ones."""
    return bce_loss(pred, np.ones_like(pred))


def gan_discriminator_loss(pred, target):
    """BCE of a discriminator map against its real/fake target map."""
    return bce_loss(pred, np.broadcast_to(np.asarray(target, dtype=pred.dtype), pred.shape))


_LOSSES = {
    "l1": l1_loss,
    "bce": bce_loss,
    "gan_generator": gan_generator_loss,
    "gan_discriminator": gan_discriminator_loss,
}


def compute_loss(kind, pred, target=None):
    if kind not in _LOSSES:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {sorted(_LOSSES)}")
    return _LOSSES[kind](np.asarray(pred), target if target is None else np.asarray(target))
