"""Uniform discretisation of the scale-invariant depth ``dz``."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

log = logging.getLogger(__name__)

DEFAULT_K = 1000


@dataclass(frozen=True)
class ZBinSpec:
    d_l: float
    d_u: float
    k: int

    @property
    def centers(self) -> np.ndarray:
        # d_i = d_l + (d_u - d_l) i / K, i = 0..K-1; the top edge d_u is never a centre
        return self.d_l + (self.d_u - self.d_l) * np.arange(self.k) / self.k

    @property
    def spacing(self) -> float:
        return (self.d_u - self.d_l) / self.k

    def normalize(self, dz):
        """Map ``dz`` to [0, 1] over ``[d_l, d_u]`` (used by the regression head)."""
        return (np.asarray(dz, dtype=float) - self.d_l) / (self.d_u - self.d_l)

    def denormalize(self, x):
        return self.d_l + np.asarray(x, dtype=float) * (self.d_u - self.d_l)


def make_bins(d_l: float, d_u: float, k: int = DEFAULT_K) -> ZBinSpec:
    if not d_u > d_l:
        raise InvalidInputError(f"upper bound {d_u} must exceed lower bound {d_l}")
    if k < 2:
        raise InvalidInputError(f"need at least two bins, got {k}")
    return ZBinSpec(float(d_l), float(d_u), int(k))


def encode(dz, spec: ZBinSpec):
    """Index of the nearest bin centre, ties to the lower index, clamped."""
    dz_arr = np.asarray(dz, dtype=float)
    if np.any(dz_arr <= 0):
        raise InvalidInputError("dz must be positive")
    pos = (dz_arr - spec.d_l) / spec.spacing
    # round half down so exact midpoints go to the lower bin
    idx = np.ceil(pos - 0.5).astype(int)
    if np.any((dz_arr < spec.d_l) | (dz_arr > spec.d_u)):
        log.warning("dz outside the bin range [%g, %g] clamped", spec.d_l, spec.d_u)
    idx = np.clip(idx, 0, spec.k - 1)
    return int(idx) if idx.ndim == 0 else idx


def expectation(probs, spec: ZBinSpec):
    """Probability-weighted bin centre ``sum_i p_i d_i`` (rows of ``probs``)."""
    p = np.asarray(probs, dtype=float)
    if p.shape[-1] != spec.k:
        raise InvalidInputError(f"expected {spec.k} probabilities, got {p.shape[-1]}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise InvalidInputError("probs must lie on the simplex")
    out = p @ spec.centers
    return float(out) if np.ndim(out) == 0 else out


def argmax_decode(probs, spec: ZBinSpec):
    idx = np.argmax(np.asarray(probs), axis=-1)
    out = spec.centers[idx]
    return float(out) if np.ndim(out) == 0 else out
