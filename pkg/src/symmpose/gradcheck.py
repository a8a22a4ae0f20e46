"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=float)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """``|a - n| / max(|a|, |n|)`` over the whole gradient (0 when both vanish)."""
    a = np.concatenate([np.ravel(v) for v in analytic]) if isinstance(analytic, list) else np.ravel(analytic)
    n = np.concatenate([np.ravel(v) for v in numeric]) if isinstance(numeric, list) else np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / scale) if scale > 1e-300 else 0.0


def check(f, arrays, analytic, h: float = 1e-6) -> float:
    """Relative error between ``analytic`` and central differences over ``arrays``."""
    return relative_error(list(analytic), [numeric_grad(f, x, h) for x in arrays])
