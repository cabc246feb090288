"""Training objective: negative-log-likelihood over gold and sampled
negatives, temporal smoothness over adjacent timestamps, and their
weighted combination."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

PROB_EPS = 1e-7


@dataclass
class LossBreakdown:
    main: float
    temporal: float
    total: float
    alpha: float


def main_loss(probs, gold_idx, neg_idx, weighting="mean"):
    """Binary cross entropy over one gold and n negatives per query.

    probs: (batch, K) probabilities; gold_idx: (batch,) column of the gold;
    neg_idx: (batch, n) columns of the negatives. The per-query loss is
    -log p(gold) - w * sum(log(1 - p(neg))) with w = 1/n ("mean", default)
    or w = n ("literal"); the batch loss is the mean over queries.
    """
    if weighting not in ("mean", "literal"):
        raise ConfigError(f"unknown negative weighting {weighting!r}")
    gold_idx = np.asarray(gold_idx).reshape(-1, 1)
    neg_idx = np.asarray(neg_idx)
    n = neg_idx.shape[1]
    p = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    gold_term = ad.log(ad.gather_cols(p, gold_idx))                    # (B, 1)
    neg_term = ad.sum_(ad.log(1.0 - ad.gather_cols(p, neg_idx)),
                       axis=1, keepdims=True)                          # (B, 1)
    w = (1.0 / n) if weighting == "mean" else float(n)
    return ad.mean(-(gold_term + w * neg_term))


def temporal_loss(time_table, mode="smooth"):
    """Regularizer over chronologically adjacent composed time embeddings.

    "smooth" (default) averages the squared L2 distance of neighbours, which
    pulls them together. "literal" averages |t_{i+1} . t_i| instead, which
    pushes neighbours toward orthogonality; it is kept for comparison runs.
    """
    if mode not in ("smooth", "literal"):
        raise ConfigError(f"unknown temporal mode {mode!r}")
    n = time_table.shape[0]
    if n < 2:
        warnings.warn("temporal loss needs at least 2 timestamps; returning 0")
        return Tensor(0.0)
    nxt = ad.narrow(time_table, 0, 1, n - 1)
    cur = ad.narrow(time_table, 0, 0, n - 1)
    if mode == "smooth":
        diff = nxt - cur
        per_pair = ad.sum_(ad.mul(diff, diff), axis=1)
    else:
        per_pair = ad.abs_(ad.sum_(ad.mul(nxt, cur), axis=1))
    return ad.mean(per_pair)


def combine(main, temporal, alpha):
    """Total objective main + alpha * temporal, reported per component."""
    if alpha < 0:
        raise ConfigError(f"temporal coefficient alpha must be >= 0, got {alpha}")
    main = float(main)
    temporal = float(temporal)
    return LossBreakdown(main=main, temporal=temporal,
                         total=main + alpha * temporal, alpha=alpha)
