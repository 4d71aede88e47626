"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-4,
                 indices: Optional[Sequence] = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``t.data`` at ``indices`` (default all)."""
    flat = t.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data)
        flat[i] = orig - h
        down = float(fn().data)
        flat[i] = orig
        out[k] = (up - down) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
              max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None
              ) -> Dict[int, float]:
    """Relative error per parameter (keyed by position in ``params``).

    ``max_entries`` subsamples coordinates of large tensors.
    """
    for p in params:
        p.zero_grad()
    fn().backward()
    rng = rng or np.random.default_rng(0)
    errors = {}
    for k, p in enumerate(params):
        size = p.data.size
        if max_entries is not None and size > max_entries:
            idx = np.sort(rng.choice(size, max_entries, replace=False))
        else:
            idx = np.arange(size)
        analytic = p.grad.reshape(-1)[idx].copy()
        numeric = numeric_grad(fn, p, h, idx)
        errors[k] = relative_error(analytic, numeric)
    return errors
