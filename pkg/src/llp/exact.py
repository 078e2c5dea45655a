"""Brute-force minimisation over finite classes and exact expectation oracles.

The oracles enumerate bags drawn i.i.d. from a :class:`DiscreteDistribution`,
either over all ``m**k`` ordered draws or over the compositions of ``k``
into ``m`` parts weighted by multinomial coefficients. They are the ground
truth for the statistical claims tested elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .core import BagDataset, DiscreteDistribution, HypothesisClass
from .losses import LossRule, _as_rule, _is_binary, bag_losses, ez_kernel, predictions, risks_from_sums, sq_kernel
from .validation import check_bags, check_instances

__all__ = [
    "FiniteClassLLP",
    "MinimizationResult",
    "class_exact_risks",
    "class_risks",
    "compositions",
    "exact_bag_expectation",
    "exact_expected_bag_loss",
    "exact_instance_loss",
    "exact_proportional_risk",
    "exact_risk",
    "minimize",
]

TIE_TOL = 1e-12
PRODUCT_LIMIT = 10**7
COMPOSITION_LIMIT = 5 * 10**6


@dataclass(frozen=True)
class MinimizationResult:
    best_index: int
    best_value: float
    all_values: np.ndarray
    tie_set: tuple


def class_risks(rule, cls: HypothesisClass, D: BagDataset, p=None, chunk: int = 4096) -> np.ndarray:
    """Empirical risk of every hypothesis in ``cls`` on ``D``."""
    rule = _as_rule(rule)
    fast = getattr(cls, "empirical_risks", None)
    if fast is not None:
        return fast(rule, D, p)
    P_all = cls.predict_all(D.instances)
    out = np.empty(cls.size)
    for lo in range(0, cls.size, chunk):
        P = P_all[lo : lo + chunk]
        if rule.tag == "EPRM01" and not np.isin(P, (0, 1)).all():
            raise ValueError("EPRM needs a class of binary hypotheses")
        S = P.reshape(P.shape[0], D.n, D.k).sum(axis=2, dtype=np.float64)
        out[lo : lo + P.shape[0]] = risks_from_sums(rule, S, D, p)
    return out


def minimize(rule, cls: HypothesisClass, D: BagDataset, p: Optional[float] = None) -> MinimizationResult:
    """Evaluate every hypothesis and return the empirical risk minimiser.

    Ties (values within ``1e-12`` of the minimum) go to the lowest index.
    """
    rule = _as_rule(rule)
    if cls.size == 0:
        raise ValueError("hypothesis class is empty")
    if rule.tag == "EZ" and rule.p_mode == "known" and p is None and rule.p is None:
        raise ValueError("EZ with p_mode='known' needs p")
    values = class_risks(rule, cls, D, p)
    best = float(values.min())
    ties = np.flatnonzero(values <= best + TIE_TOL)
    return MinimizationResult(int(ties[0]), float(values[ties[0]]), values, tuple(int(t) for t in ties))


def exact_risk(f, dist: DiscreteDistribution) -> float:
    """Population 0-1 risk. Real-valued predictors are thresholded at 0.5 (ties predict 1)."""
    out = predictions(f, dist.points)
    yhat = out if _is_binary(f) else (out >= 0.5).astype(np.int64)
    return float(dist.probs @ (yhat != dist.labels))


def exact_instance_loss(f, dist: DiscreteDistribution, loss: str = "abs") -> float:
    """Expected instance loss ``E|f(x) - y|`` or ``E(f(x) - y)**2``.

    Both coincide with the 0-1 risk for binary predictors.
    """
    diff = predictions(f, dist.points).astype(np.float64) - dist.labels
    if loss == "abs":
        return float(dist.probs @ np.abs(diff))
    if loss == "sq":
        return float(dist.probs @ diff**2)
    raise ValueError(f"loss must be 'abs' or 'sq', got {loss!r}")


def class_exact_risks(cls: HypothesisClass, dist: DiscreteDistribution) -> np.ndarray:
    fast = getattr(cls, "exact_risks", None)
    if fast is not None:
        return fast(dist)
    return (cls.predict_all(dist.points) != dist.labels[None, :]).astype(np.float64) @ dist.probs


def compositions(k: int, m: int) -> np.ndarray:
    """All ways of writing ``k`` as an ordered sum of ``m`` nonnegative integers, shape (C, m)."""
    if m == 1:
        return np.array([[k]], dtype=np.int64)
    parts = []
    for first in range(k, -1, -1):
        rest = compositions(k - first, m - 1)
        parts.append(np.column_stack([np.full(rest.shape[0], first, dtype=np.int64), rest]))
    return np.concatenate(parts)


def _n_compositions(k: int, m: int) -> int:
    return math.comb(k + m - 1, m - 1)


def _multinomials(N: np.ndarray, k: int) -> np.ndarray:
    fact = np.array([math.factorial(i) for i in range(k + 1)], dtype=object)
    denom = np.prod(fact[N], axis=1)
    return (math.factorial(k) // denom).astype(np.float64)


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=np.float64).ravel())


def exact_bag_expectation(
    fn: Callable, fvals, dist: DiscreteDistribution, k: int, method: str = "auto"
) -> float:
    """Expectation of ``fn(s, c)`` over a bag of ``k`` i.i.d. draws from ``dist``.

    ``s`` is the bag's prediction sum (``fvals`` gives the prediction at each
    support point) and ``c`` its label count. ``fn`` must be vectorised.

    Parameters
    ----------
    method : {"auto", "product", "compositions"}
        ``product`` walks all ``m**k`` ordered draws; ``compositions`` walks
        the multisets with multinomial weights. ``auto`` picks ``product``
        when ``m**k <= 1e7``.
    """
    fvals = np.asarray(fvals, dtype=np.float64)
    y = dist.labels.astype(np.float64)
    probs = dist.probs
    m = dist.m
    if method == "auto":
        method = "product" if m**k <= PRODUCT_LIMIT else "compositions"
    if method == "product":
        if m**k > PRODUCT_LIMIT:
            raise ValueError(f"full enumeration of {m}**{k} = {m**k:.3g} bags exceeds the limit {PRODUCT_LIMIT:.0e}")
        total = []
        step = 1 << 16
        for lo in range(0, m**k, step):
            digits = np.unravel_index(np.arange(lo, min(lo + step, m**k)), (m,) * k)
            s = sum(fvals[d] for d in digits)
            c = sum(y[d] for d in digits)
            w = np.prod([probs[d] for d in digits], axis=0)
            total.append(_fsum(w * fn(s, c)))
        return math.fsum(total)
    if method != "compositions":
        raise ValueError(f"unknown method {method!r}")
    size = _n_compositions(k, m)
    if size > COMPOSITION_LIMIT:
        raise ValueError(f"{size:.3g} compositions of k={k} into m={m} parts exceed the limit {COMPOSITION_LIMIT:.0e}")
    N = compositions(k, m)
    w = _multinomials(N, k) * np.prod(probs[None, :] ** N, axis=1)
    return _fsum(w * fn(N @ fvals, N @ y))


def _exact_rational(fn, fvals, dist: DiscreteDistribution, k: int) -> Fraction:
    probs = dist.probs_exact
    fq = [Fraction(float(v)) for v in fvals]
    y = [int(v) for v in dist.labels]
    total = Fraction(0)
    for row in compositions(k, dist.m):
        coef = math.factorial(k)
        weight = Fraction(1)
        s = Fraction(0)
        c = 0
        for j, cnt in enumerate(row):
            if cnt:
                coef //= math.factorial(int(cnt))
                weight *= probs[j] ** int(cnt)
                s += fq[j] * int(cnt)
                c += y[j] * int(cnt)
        total += coef * weight * fn(s, c)
    return total


def exact_expected_bag_loss(
    rule, f, dist: DiscreteDistribution, k: int, p: Optional[float] = None, method: str = "auto", exact: bool = False
) -> float:
    """Exact expectation of a bag-level loss under i.i.d. bags of size ``k``.

    For DSQ the population debiased loss ``E[k-scaled square] - (k - 1)(Ef - p)**2``
    is returned, with ``Ef`` and ``p`` taken from ``dist``. EZ defaults to
    ``p = dist.p``. ``exact=True`` runs the composition walk in rational
    arithmetic (not available for PM_LOG).
    """
    rule = _as_rule(rule)
    if rule.tag == "EPRM01" and not _is_binary(f):
        raise TypeError("EPRM is only defined for binary predictors")
    fvals = predictions(f, dist.points)
    if rule.tag == "EZ":
        p = p if p is not None else (rule.p if rule.p is not None else dist.p)
    if exact:
        if rule.tag == "PM_LOG":
            raise ValueError("the log loss has no rational expectation")
        pq = None if p is None else Fraction(p)
        kern = {
            "EPRM01": lambda s, c: Fraction(int(s != c)),
            "PM_SQ": lambda s, c: sq_kernel(s, c, k, rule.k_scaled),
            "DSQ": lambda s, c: sq_kernel(s, c, k, True),
            "EZ": lambda s, c: ez_kernel(s, c, k, pq),
        }[rule.tag]
        value = _exact_rational(kern, fvals, dist, k)
        if rule.tag == "DSQ":
            ef = sum(Fraction(float(v)) * q for v, q in zip(fvals, dist.probs_exact))
            pp = sum(q for q, lab in zip(dist.probs_exact, dist.labels) if lab == 1)
            value -= (k - 1) * (ef - pp) ** 2
        return float(value)
    value = exact_bag_expectation(lambda s, c: bag_losses(rule, s, c, k, p), fvals, dist, k, method)
    if rule.tag == "DSQ":
        ef = float(dist.probs @ fvals)
        value -= (k - 1) * (ef - dist.p) ** 2
    return value


def exact_proportional_risk(q: float, k: int) -> float:
    """Probability that a bag holds an odd number of disagreement points.

    With per-instance disagreement rate ``q`` between ``f`` and a realizable
    target this lower-bounds the EPRM bag mismatch probability.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"disagreement rate must lie in [0, 1], got {q}")
    if k < 1:
        raise ValueError("k must be at least 1")
    return 0.5 - 0.5 * (1.0 - 2.0 * q) ** k


class FiniteClassLLP(ClassifierMixin, BaseEstimator):
    """Empirical risk minimisation over a finite hypothesis class from bag proportions.

    Parameters
    ----------
    hypothesis_class : HypothesisClass
        Class to search; evaluated exhaustively.
    rule : str or LossRule, default="EPRM01"
        Learning rule. Strings are parsed by :class:`~llp.losses.LossRule`.
    k : int, optional
        Bag size, needed when ``X`` is passed as a flat instance array.
    p_mode : {"known", "plugin", "split"}, default="plugin"
        Marginal label proportion handling for EZ.
    p : float, optional
        Known marginal label proportion.
    log_eps : float, default=1e-7
    k_scaled : bool, default=False
    split_seed : int, default=0

    Attributes
    ----------
    result_ : MinimizationResult
    best_index_ : int
    hypothesis_ : FiniteHypothesis
    classes_ : ndarray of shape (2,)
    """

    def __init__(self, hypothesis_class=None, rule="EPRM01", k=None, p_mode="plugin", p=None, log_eps=1e-7, k_scaled=False, split_seed=0):
        self.hypothesis_class = hypothesis_class
        self.rule = rule
        self.k = k
        self.p_mode = p_mode
        self.p = p
        self.log_eps = log_eps
        self.k_scaled = k_scaled
        self.split_seed = split_seed

    def _rule(self) -> LossRule:
        if isinstance(self.rule, LossRule):
            return self.rule
        p_mode = "known" if self.p is not None else self.p_mode
        return LossRule(self.rule, p_mode=p_mode, p=self.p, log_eps=self.log_eps, k_scaled=self.k_scaled, split_seed=self.split_seed)

    def fit(self, X, y=None):
        """Fit on bags; ``y`` holds per-bag label counts unless ``X`` is a BagDataset."""
        if self.hypothesis_class is None:
            raise ValueError("hypothesis_class must be set")
        D = check_bags(X, y, self.k)
        self.result_ = minimize(self._rule(), self.hypothesis_class, D)
        self.best_index_ = self.result_.best_index
        self.hypothesis_ = self.hypothesis_class.hypothesis(self.best_index_)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = D.feature_dim
        return self

    def predict(self, X):
        check_is_fitted(self, "hypothesis_")
        return self.hypothesis_(check_instances(X, self.n_features_in_))

    def predict_proportions(self, X):
        """Predicted label proportion of each bag in a BagDataset or (n, k, d) array."""
        check_is_fitted(self, "hypothesis_")
        X = X.X if isinstance(X, BagDataset) else np.asarray(X, dtype=np.float64)
        n, k, d = X.shape
        return self.predict(X.reshape(n * k, d)).reshape(n, k).mean(axis=1)
