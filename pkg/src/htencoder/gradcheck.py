from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DeterminismError
from .nn import ParameterStore
from .tensor import Tensor, backward, no_grad


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    store: ParameterStore,
    epsilon: float = 1e-5,
    samples: int = 50,
    seed: int = 0,
    details: Optional[list] = None,
) -> float:
    """Compare analytic gradients with central differences on sampled scalars.

    Scalars are drawn uniformly over all parameter entries.  Returns the max
    relative error ``|a - n| / max(|a|, |n|, 1e-8)``.  ``loss_fn`` must be
    deterministic, so dropout has to be off.  If ``details`` is a list, one
    ``(name, flat_index, analytic, numeric)`` tuple per sample is appended.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    with no_grad():
        f0 = loss_fn().item()
        f1 = loss_fn().item()
    if f0 != f1:
        raise DeterminismError("loss_fn is not deterministic (is dropout enabled?)")

    store.zero_grad()
    backward(loss_fn())
    names = store.names()
    sizes = np.array([store[n].data.size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, offsets[-1], size=samples)

    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[k], int(flat - offsets[k])
        p = store[name]
        grad = p.grad
        analytic = 0.0 if grad is None else float(grad.reshape(-1)[idx])
        at = np.unravel_index(idx, p.shape)
        orig = p.data[at]
        with no_grad():
            p.data[at] = orig + epsilon
            fp = loss_fn().item()
            p.data[at] = orig - epsilon
            fm = loss_fn().item()
        p.data[at] = orig
        numeric = (fp - fm) / (2.0 * epsilon)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
        if details is not None:
            details.append((name, idx, analytic, numeric))
    store.zero_grad()
    return worst
