"""Adam optimizer and deterministic minibatch scheduling."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(values, grads, state: AdamState):
    """One Adam update over parallel lists of arrays; returns new values.

    Moments live in ``state`` (initialized to zeros on first use); the update
    uses the standard bias-corrected estimates.
    """
    if len(values) != len(grads):
        raise ValueError(f"got {len(values)} values but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(v) for v in values]
        state.v = [np.zeros_like(v) for v in values]
    for val, g, m in zip(values, grads, state.m):
        if val.shape != g.shape or val.shape != m.shape:
            raise ValueError(f"shape mismatch: value {val.shape} vs grad {g.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (val, g) in enumerate(zip(values, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / (1.0 - b1 ** t)
        vhat = state.v[i] / (1.0 - b2 ** t)
        out.append((val - state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(val.dtype))
    return out


class Adam:
    """Adam bound to a list of trainable Parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        new_values = adam_step([p.value for p in self.params],
                               [p.grad for p in self.params], self.state)
        for p, v in zip(self.params, new_values):
            p.value = v

    def zero_grads(self):
        for p in self.params:
            p.zero_grad()


def minibatch_indices(n, batch_size, rng):
    """Shuffled minibatch index arrays covering 0..n-1 exactly once.

    Yields ceil(n / batch_size) batches.  A trailing singleton is rebalanced
    with its predecessor into sizes (batch_size - 1, 2) so every batch has at
    least two samples whenever n >= 2 (train-mode batch norm needs that).
    """
    if n <= 0:
        raise ValueError("minibatch_indices requires n >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) >= 2 and len(batches[-1]) == 1:
        batches[-1] = np.concatenate([batches[-2][-1:], batches[-1]])
        batches[-2] = batches[-2][:-1]
    return batches
