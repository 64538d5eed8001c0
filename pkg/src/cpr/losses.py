"""InfoNCE and multi-positive (MIL-NCE) contrastive losses with analytic gradients.

Logits are ``q . k / temperature`` for a unit query ``q``. The query
passed in may be unnormalized; it is normalized here and the gradient
returned is with respect to the raw query, i.e. it includes the
derivative of the L2 normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cpr.store import UNIT_TOL, ValidationError

DEFAULT_TEMPERATURE = 0.07


@dataclass
class ContrastiveBatch:
    query: np.ndarray
    positive_feats: np.ndarray  # (P, dim)
    negative_feats: np.ndarray  # (N, dim)
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64)
        self.positive_feats = np.atleast_2d(np.asarray(self.positive_feats, dtype=np.float64))
        neg = np.asarray(self.negative_feats, dtype=np.float64)
        self.negative_feats = neg.reshape(-1, self.query.size) if neg.size == 0 else np.atleast_2d(neg)
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.query.ndim != 1:
            raise ValidationError("query must be a vector")
        dim = self.query.size
        for name, m in (("positive", self.positive_feats), ("negative", self.negative_feats)):
            if m.size and m.shape[1] != dim:
                raise ValidationError(f"{name} dim {m.shape[1]} != query dim {dim}")
            if m.size and np.any(np.abs(np.linalg.norm(m, axis=1) - 1.0) > UNIT_TOL):
                raise ValidationError(f"{name} features must be unit-norm")
        if not np.all(np.isfinite(self.query)) or np.linalg.norm(self.query) == 0:
            raise ValidationError("degenerate query")


def _lse(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def mil_nce_from_logits(pos_logits: np.ndarray, neg_logits: np.ndarray) -> float:
    """``-log(sum exp(pos) / (sum exp(pos) + sum exp(neg)))``, overflow-safe."""
    pos = np.asarray(pos_logits, dtype=np.float64)
    neg = np.asarray(neg_logits, dtype=np.float64)
    if pos.size == 0:
        raise ValidationError("empty positive set")
    if neg.size == 0:
        raise ValidationError("empty negative set")
    return float(np.logaddexp(0.0, _lse(neg) - _lse(pos)))


def mil_nce_value_and_grad(
    query: np.ndarray, positives: np.ndarray, negatives: np.ndarray, temperature: float
) -> tuple[float, np.ndarray]:
    """Unchecked core used by the trainer's inner loop."""
    norm = np.sqrt(query @ query)
    q = query / norm
    pos = positives @ q / temperature
    neg = negatives @ q / temperature
    lse_pos, lse_neg = _lse(pos), _lse(neg)
    gap = lse_neg - lse_pos
    loss = float(np.logaddexp(0.0, gap))
    # Probability mass on negatives; the unit-query gradient factors through it.
    neg_mass = 0.5 * (1.0 + np.tanh(0.5 * gap))
    g_unit = neg_mass * (_softmax(neg) @ negatives - _softmax(pos) @ positives) / temperature
    grad = (g_unit - q * (q @ g_unit)) / norm
    return loss, grad


def info_nce(batch: ContrastiveBatch) -> float:
    if len(batch.positive_feats) != 1:
        raise ValidationError("info_nce needs exactly one positive")
    return mil_nce(batch)


def mil_nce(batch: ContrastiveBatch) -> float:
    return mil_nce_grad(batch)[0]


def mil_nce_grad(batch: ContrastiveBatch) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to ``batch.query``."""
    if batch.positive_feats.size == 0:
        raise ValidationError("empty positive set")
    if batch.negative_feats.size == 0:
        raise ValidationError("empty negative set")
    return mil_nce_value_and_grad(
        batch.query, batch.positive_feats, batch.negative_feats, batch.temperature
    )
