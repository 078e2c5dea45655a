"""Bag-level and dataset-level loss estimates for label-proportion learning.

Every rule is expressed through the per-bag prediction sum
``s = sum_j f(x_j)`` and the label count ``c = k * alpha``. For binary
predictors both are integers, which keeps the EPRM mismatch test exact.
The kernels use plain arithmetic so they also accept ``Fraction`` scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .core import Bag, BagDataset

__all__ = [
    "DSQRisk",
    "LossRule",
    "bag_losses",
    "dsq_empirical_risk",
    "empirical_risk",
    "eprm_bag_loss",
    "ez_bag_loss",
    "ez_empirical_risk",
    "ez_offset",
    "pm_log_bag_loss",
    "pm_sq_bag_loss",
    "predicted_count",
    "predicted_mean",
    "predictions",
    "risks_from_sums",
    "split_indices",
    "zero_one_risk",
]

RULE_TAGS = ("EPRM01", "PM_SQ", "PM_LOG", "DSQ", "EZ")
P_MODES = ("known", "plugin", "split")
DEFAULT_LOG_EPS = 1e-7

_ALIASES = {
    "eprm": "EPRM01",
    "eprm01": "EPRM01",
    "pm_sq": "PM_SQ",
    "pmsq": "PM_SQ",
    "sq": "PM_SQ",
    "pm_log": "PM_LOG",
    "pmlog": "PM_LOG",
    "log": "PM_LOG",
    "dsq": "DSQ",
    "debiased_sq": "DSQ",
    "debiasedsq": "DSQ",
    "ez": "EZ",
    "easyllp": "EZ",
}


@dataclass(frozen=True)
class LossRule:
    """A learning rule and its parameters.

    Parameters
    ----------
    tag : {"EPRM01", "PM_SQ", "PM_LOG", "DSQ", "EZ"}
        Common spellings such as ``"pm-sq"`` or ``"eprm"`` are accepted.
    p_mode : {"known", "plugin", "split"}
        How EZ obtains the marginal label proportion.
    p : float, optional
        Marginal label proportion for ``p_mode="known"``.
    log_eps : float
        Predicted proportions are clamped to ``[log_eps, 1 - log_eps]`` before logs.
    k_scaled : bool
        Multiply the proportional square loss by ``k``.
    split_seed : int
        Seed of the shuffle that assigns bags to the two halves in split mode.
    """

    tag: str
    p_mode: str = "known"
    p: Optional[float] = None
    log_eps: float = DEFAULT_LOG_EPS
    k_scaled: bool = False
    split_seed: int = 0

    def __post_init__(self):
        tag = _ALIASES.get(self.tag.strip().lower().replace("-", "_").replace(".", "_"), self.tag)
        if tag not in RULE_TAGS:
            raise ValueError(f"unknown rule {self.tag!r}; expected one of {RULE_TAGS}")
        object.__setattr__(self, "tag", tag)
        if self.p_mode not in P_MODES:
            raise ValueError(f"p_mode must be one of {P_MODES}, got {self.p_mode!r}")
        if self.p is not None and not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if not 0.0 < self.log_eps < 0.5:
            raise ValueError("log_eps must lie in (0, 1/2)")

    def with_p(self, p: float) -> "LossRule":
        return replace(self, p=p, p_mode="known")

    def __str__(self):
        if self.tag == "EZ":
            return f"EZ[{self.p_mode}]"
        return self.tag


def _as_rule(rule) -> LossRule:
    return rule if isinstance(rule, LossRule) else LossRule(rule)


def _is_binary(f) -> bool:
    return bool(getattr(f, "is_binary", False))


def predictions(f: Callable, X) -> np.ndarray:
    """Evaluate ``f`` on an (N, d) array, clamping real-valued outputs to [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    out = np.asarray(f(X))
    if out.shape != (X.shape[0],):
        raise ValueError(f"predictor returned shape {out.shape}, expected ({X.shape[0]},)")
    if _is_binary(f):
        return out
    return np.clip(out.astype(np.float64), 0.0, 1.0)


def _dataset_predictions(f, D: BagDataset) -> np.ndarray:
    return predictions(f, D.instances).reshape(D.n, D.k)


def predicted_mean(f, bag: Bag) -> float:
    """Mean prediction over the bag."""
    return float(np.mean(predictions(f, bag.instances)))


def predicted_count(f, bag: Bag) -> int:
    """Exact number of positive predictions in the bag; binary predictors only."""
    if not _is_binary(f):
        raise TypeError("predicted_count needs a binary (finite-class) predictor")
    return int(predictions(f, bag.instances).sum())


# Kernels on prediction sums s and label counts c.


def eprm_kernel(s, c):
    return (s != c) * 1.0


def sq_kernel(s, c, k, k_scaled=False):
    d = (s - c) / k
    return d * d * k if k_scaled else d * d


def log_kernel(s, c, k, eps=DEFAULT_LOG_EPS):
    q = np.clip(np.asarray(s, dtype=np.float64) / k, eps, 1.0 - eps)
    a = np.asarray(c, dtype=np.float64) / k
    return -a * np.log(q) - (1.0 - a) * np.log1p(-q)


def ez_kernel(s, c, k, p):
    fbar = s / k
    alpha = c / k
    return (k * (alpha - p) + p) * (1 - fbar) + (k * (p - alpha) + (1 - p)) * fbar


def bag_losses(rule, s, c, k: int, p=None):
    """Per-bag loss for the bag-separable rules (everything except DSQ's bias term).

    For DSQ this returns the k-scaled square term only.
    """
    rule = _as_rule(rule)
    if rule.tag == "EPRM01":
        return eprm_kernel(s, c)
    if rule.tag == "PM_SQ":
        return sq_kernel(s, c, k, rule.k_scaled)
    if rule.tag == "DSQ":
        return sq_kernel(s, c, k, True)
    if rule.tag == "PM_LOG":
        return log_kernel(s, c, k, rule.log_eps)
    if p is None:
        p = rule.p
    if p is None:
        raise ValueError("EZ loss needs the marginal label proportion p")
    return ez_kernel(s, c, k, p)


def eprm_bag_loss(f, bag: Bag) -> int:
    """1 if the predicted count differs from the label count, else 0."""
    return int(predicted_count(f, bag) != bag.label_count)


def pm_sq_bag_loss(f, bag: Bag, k_scaled: bool = False) -> float:
    s = predictions(f, bag.instances).sum()
    return float(sq_kernel(s, bag.label_count, bag.k, k_scaled))


def pm_log_bag_loss(f, bag: Bag, log_eps: float = DEFAULT_LOG_EPS) -> float:
    """Cross-entropy between the bag proportion and the clamped mean prediction."""
    s = predictions(f, bag.instances).sum()
    return float(log_kernel(s, bag.label_count, bag.k, log_eps))


def ez_bag_loss(f, bag: Bag, p: float) -> float:
    """EasyLLP estimate of the 0-1 loss on one bag."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    s = predictions(f, bag.instances).sum()
    return float(ez_kernel(s, bag.label_count, bag.k, p))


def split_indices(n: int, seed: int = 0):
    """Seeded split of ``n`` bags into an estimation half and an evaluation half.

    After a seeded shuffle, even positions estimate ``p`` and odd positions
    are used for the risk.
    """
    if n < 2:
        raise ValueError("sample splitting needs at least two bags")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[0::2]), np.sort(perm[1::2])


def _bag_weights(rule: LossRule, D: BagDataset, p=None):
    """Return ``(p, weights)`` for averaging per-bag losses under ``rule``."""
    n = D.n
    w = np.full(n, 1.0 / n)
    if rule.tag != "EZ":
        return None, w
    if p is not None:
        return p, w
    if rule.p_mode == "known":
        if rule.p is None:
            raise ValueError("EZ with p_mode='known' needs p")
        return rule.p, w
    if rule.p_mode == "plugin":
        return D.p_hat, w
    est, ev = split_indices(n, rule.split_seed)
    w = np.zeros(n)
    w[ev] = 1.0 / ev.size
    return float(D.counts[est].sum() / (est.size * D.k)), w


def risks_from_sums(rule, S: np.ndarray, D: BagDataset, p=None) -> np.ndarray:
    """Dataset-level risks for a stack of prediction sums.

    Parameters
    ----------
    S : ndarray of shape (..., n)
        Per-bag prediction sums, one row per predictor.

    Returns
    -------
    ndarray of shape (...)
    """
    rule = _as_rule(rule)
    S = np.asarray(S, dtype=np.float64)
    p_used, w = _bag_weights(rule, D, p)
    # elementwise product and sum rather than a BLAS matvec, so results do
    # not depend on the thread count
    risks = (bag_losses(rule, S, D.counts, D.k, p_used) * w).sum(axis=-1)
    if rule.tag == "DSQ":
        risks = risks - _bias(S, D)
    return risks


def _bias(S, D: BagDataset):
    k = D.k
    ef = S.sum(axis=-1) / (D.n * k)
    return (k - 1) * (ef - D.p_hat) ** 2


def empirical_risk(rule, f, D: BagDataset, p=None) -> float:
    """Dataset-level empirical risk of predictor ``f`` under ``rule``."""
    rule = _as_rule(rule)
    if rule.tag == "EPRM01" and not _is_binary(f):
        raise TypeError("EPRM is only defined for binary (finite-class) predictors")
    S = _dataset_predictions(f, D).sum(axis=1)
    return float(risks_from_sums(rule, S, D, p))


class DSQRisk(NamedTuple):
    dsq: float
    sq: float
    bias: float


def dsq_empirical_risk(f, D: BagDataset) -> DSQRisk:
    """Debiased square risk together with its two parts.

    ``sq`` is the k-scaled proportional square risk and ``bias`` is
    ``(k - 1) * (mean prediction - p_hat)**2``; ``dsq = sq - bias``.
    """
    S = _dataset_predictions(f, D).sum(axis=1)
    sq = float(np.mean(sq_kernel(S, D.counts, D.k, True)))
    bias = float(_bias(S, D))
    return DSQRisk(sq - bias, sq, bias)


def ez_empirical_risk(f, D: BagDataset, p_mode: str = "known", p: Optional[float] = None, split_seed: int = 0) -> float:
    """Mean EasyLLP bag loss with ``p`` known, plugged in, or estimated on a held-out half."""
    if p_mode == "known" and p is None:
        raise ValueError("p_mode='known' needs p")
    rule = LossRule("EZ", p_mode=p_mode, p=p if p_mode == "known" else None, split_seed=split_seed)
    return empirical_risk(rule, f, D)


def ez_offset(f, f_star, D: BagDataset, p: float) -> float:
    """EasyLLP risk of ``f`` minus that of ``f_star``, computed in offset form."""
    k = D.k
    s = _dataset_predictions(f, D).sum(axis=1)
    s_star = _dataset_predictions(f_star, D).sum(axis=1)
    weight = k * (2 * D.alphas - 2 * p) + (2 * p - 1)
    return float(np.mean(weight * (s_star - s) / k))


def zero_one_risk(f, D: BagDataset) -> float:
    """Fraction of misclassified instances; real-valued outputs are thresholded at 0.5."""
    if not D.has_labels:
        raise ValueError("zero_one_risk needs a dataset with true labels")
    F = _dataset_predictions(f, D)
    yhat = F if _is_binary(f) else (F >= 0.5)
    return float(np.mean(yhat != D.labels))
