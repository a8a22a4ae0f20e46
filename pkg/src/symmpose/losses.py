"""Training objectives: contrastive rotation loss, L1 offset loss, focal
z-bin loss and their weighted sum. Each loss returns its value together with
exact gradients."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericError

log = logging.getLogger(__name__)

UNIT_TOL = 1e-5
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_m: float = 1.0
    lambda_xy: float = 10.0
    lambda_z: float = 1.0
    tau: float = 0.1
    alpha: float = 0.5
    gamma: float = 2.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        if min(self.lambda_r, self.lambda_m, self.lambda_xy, self.lambda_z) < 0:
            raise InvalidInputError("loss weights must be non-negative")
        if self.gamma < 0 or not 0 < self.alpha <= 1:
            raise InvalidInputError("focal parameters need gamma >= 0 and 0 < alpha <= 1")


def _check_unit(name, x):
    n = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise InvalidInputError(f"{name} embeddings must be unit-norm (max deviation {np.max(np.abs(n - 1.0)):.2e})")


def info_nce(b_emb, pos_emb, neg_embs, tau=0.1):
    """Contrastive loss of each query against its positive and shared negatives.

    ``b_emb`` and ``pos_emb`` are ``(D,)`` or ``(B, D)``; ``neg_embs`` is
    ``(M, D)`` and shared by every row. The positive is always part of the
    denominator. Returns ``(mean_loss, (d_b, d_pos, d_negs))``.
    """
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    b = np.asarray(b_emb, dtype=float)
    pos = np.asarray(pos_emb, dtype=float)
    single = b.ndim == 1
    b, pos = np.atleast_2d(b), np.atleast_2d(pos)
    negs = np.asarray(neg_embs, dtype=float).reshape(-1, b.shape[1])
    for name, x in (("query", b), ("positive", pos), ("negative", negs)):
        _check_unit(name, x)
    n = len(b)
    logits = np.concatenate([np.sum(b * pos, axis=1, keepdims=True), b @ negs.T], axis=1) / tau
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    loss = float(np.mean(-np.log(p[:, 0])))
    # d loss / d logit = (p - onehot) / n, then through the 1/tau scaling
    g = p / (n * tau)
    g[:, 0] -= 1.0 / (n * tau)
    d_b = g[:, :1] * pos + g[:, 1:] @ negs
    d_pos = g[:, :1] * b
    d_negs = g[:, 1:].T @ b
    if single:
        d_b, d_pos = d_b[0], d_pos[0]
    return loss, (d_b, d_pos, d_negs)


def l1_offset(pred, target):
    """Summed absolute error over (dx, dy), averaged over rows.

    Returns ``(loss, grad_pred)``; the subgradient at exact equality is 0.
    """
    pred = np.asarray(pred, dtype=float)
    diff = pred - np.asarray(target, dtype=float)
    n = 1 if pred.ndim == 1 else len(pred)
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def focal_loss(probs, target_index, alpha=0.5, gamma=2.0):
    """``-alpha (1 - p)^gamma log p`` with ``p`` the target-class probability.

    ``probs`` are softmax outputs, ``(K,)`` or ``(B, K)``; the returned
    gradient is with respect to the logits that produced them, averaged over
    rows.
    """
    probs = np.asarray(probs, dtype=float)
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    idx = np.atleast_1d(np.asarray(target_index))
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidInputError("probs must lie on the simplex")
    if idx.shape != (len(probs),) or np.any(idx < 0) or np.any(idx >= probs.shape[1]):
        raise InvalidInputError("target index out of range")
    n = len(probs)
    rows = np.arange(n)
    p = probs[rows, idx]
    if np.any(p <= PROB_FLOOR):
        log.warning("focal loss: target probability below %g clamped", PROB_FLOOR)
        p = np.maximum(p, PROB_FLOOR)
    q = 1.0 - p
    logp = np.log(p)
    loss = -alpha * q ** gamma * logp
    # dL/dp, written so gamma < 1 stays finite at p = 1
    with np.errstate(divide="ignore", invalid="ignore"):
        mod = np.where(q > 0, gamma * q ** (gamma - 1.0) * logp, 0.0) if gamma > 0 else 0.0
    dl_dp = alpha * (mod - q ** gamma / p)
    # dp_t/dz_j = p_t (delta_tj - p_j)
    grad = -(dl_dp * p)[:, None] * probs
    grad[rows, idx] += dl_dp * p
    grad /= n
    return float(loss.mean()), (grad[0] if single else grad)


def cross_entropy(probs, target_index) -> float:
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    idx = np.atleast_1d(target_index)
    return float(np.mean(-np.log(np.maximum(probs[np.arange(len(probs)), idx], PROB_FLOOR))))


def total_loss(components: dict, weights: LossWeights) -> float:
    """Weighted sum of ``rot``, ``mask``, ``xy`` and ``z`` components.

    The mask term is a hook: absent components count as 0.
    """
    terms = {"rot": weights.lambda_r, "mask": weights.lambda_m, "xy": weights.lambda_xy, "z": weights.lambda_z}
    unknown = set(components) - set(terms)
    if unknown:
        raise InvalidInputError(f"unknown loss components {sorted(unknown)}")
    total = 0.0
    for name, lam in terms.items():
        value = float(components.get(name, 0.0))
        if not math.isfinite(value):
            raise NumericError(f"loss component {name!r} is not finite")
        total += lam * value
    return total
