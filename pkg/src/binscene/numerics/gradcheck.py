"""Central finite-difference gradient checking (run under wide precision)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-4,
                 indices=None) -> np.ndarray:
    flat = t.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = float(fn().data)
        flat[i] = old - eps
        fm = float(fn().data)
        flat[i] = old
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(t.shape)


def max_relative_error(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
                       max_entries: int | None = None, seed: int = 0, atol: float = 1e-6) -> float:
    """Worst ``|analytic - numeric| / max(|analytic| + |numeric|, atol)`` over sampled entries."""
    for t in inputs:
        t.grad = None
    backward(fn(), inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        n = t.data.size
        idx = None
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        num = numeric_grad(fn, t, eps, idx).reshape(-1)
        ana = t.grad.reshape(-1)
        sel = np.arange(n) if idx is None else idx
        denom = np.maximum(np.abs(ana[sel]) + np.abs(num[sel]), atol)
        worst = max(worst, float(np.max(np.abs(ana[sel] - num[sel]) / denom)))
    return worst
