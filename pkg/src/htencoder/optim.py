from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError
from .nn import ParameterStore


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store: ParameterStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> ParameterStore:
    """One bias-corrected Adam update in place; clears gradients afterwards."""
    missing = [name for name, p in store.items() if p.grad is None]
    if missing:
        raise IntegrityError(f"no gradient for trainable parameter(s): {', '.join(missing[:5])}")
    b1, b2 = betas
    store.step += 1
    t = store.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in store.items():
        g = p.grad
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
    return store
