"""Distributions and hypothesis classes used to probe the learning rules.

Every constructor is deterministic. Finite instance spaces use the index
encoding of :class:`~llp.core.FiniteClass` (one feature holding the point
index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from itertools import product
from typing import Callable, Optional

import numpy as np

from .core import BagDataset, DiscreteDistribution, FiniteClass, FiniteHypothesis, HypothesisClass, make_bags, sample_dataset
from .losses import LossRule, _bag_weights, bag_losses

__all__ = [
    "CoordinateClass",
    "LowerBoundFamily",
    "Problem",
    "ThresholdClass",
    "INSTANCE_NAMES",
    "eprm_expfail_instance",
    "eprm_tie_probability",
    "get_problem",
    "loglossfail_instance",
    "lower_bound_sample",
    "prop32_instance",
    "prop41_instance",
    "separable_sample",
    "separation_check",
    "threshold_class",
]

MAX_LOWER_BOUND_D = 16


def prop32_instance():
    """Two points, two hypotheses; proportion matching prefers the worse one.

    Support is uniform over ``(x1, 1), (x1, 0), (x2, 1)`` with ``x1 = 0`` and
    ``x2 = 1``. Row 0 is ``f1 = 1{x = x1}`` (0-1 risk 2/3, matches ``p``),
    row 1 is ``f2 = 1{x = x2}`` (0-1 risk 1/3).
    """
    third = Fraction(1, 3)
    dist = DiscreteDistribution([[0.0], [0.0], [1.0]], [1, 0, 1], [third, third, third])
    cls = FiniteClass([[1, 0], [0, 1]], symmetric=True, vc_dim=1, names=("f1", "f2"))
    return dist, cls


def loglossfail_instance():
    """Same construction as :func:`prop32_instance`.

    Proportional log loss picks ``f1`` with high probability once
    ``k >= 18 log(2n / delta)``.
    """
    return prop32_instance()


def prop41_instance():
    """Realizable two-point problem where EasyLLP estimates of ``f_star`` concentrate slowly.

    ``(x0, 0)`` and ``(x1, 1)`` each with probability 1/2 and
    ``f_star = 1{x = x1}``. The returned hypothesis lives in the two-element
    class ``[1 - f_star, f_star]``, so ``f_star`` has index 1 and lowest-index
    tie breaking favours the wrong hypothesis.
    """
    half = Fraction(1, 2)
    dist = DiscreteDistribution([[0.0], [1.0]], [0, 1], [half, half])
    cls = FiniteClass([[1, 0], [0, 1]], symmetric=True, vc_dim=1, names=("1-f_star", "f_star"))
    return dist, cls.hypothesis(1)


def eprm_expfail_instance(eps: float):
    """Single point labelled 1 with probability ``1/2 + eps``; class ``{f0 = 0, f1 = 1}``."""
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if isinstance(eps, Fraction):
        probs = [Fraction(1, 2) + eps, Fraction(1, 2) - eps]
    else:
        probs = [0.5 + eps, 0.5 - eps]
    dist = DiscreteDistribution([[0.0], [0.0]], [1, 0], probs)
    cls = FiniteClass([[0], [1]], symmetric=True, vc_dim=1, names=("f0", "f1"))
    return dist, cls


def eprm_tie_probability(eps: float, k: int, n: int) -> float:
    """Probability that none of ``n`` bags is pure, leaving ``f0`` and ``f1`` tied."""
    pure = (0.5 + eps) ** k + (0.5 - eps) ** k
    return float((1.0 - pure) ** n)


class ThresholdClass(HypothesisClass):
    """Thresholds on ``m`` grid points and their complements.

    Point ``i`` stands for ``x = i / m`` and is encoded by its index. Row
    ``t < m`` is ``1{i >= t}``; row ``m + t`` is its complement ``1{i < t}``.
    Risks for all ``2m`` rows are computed in one sorted sweep, so very fine
    grids are cheap.
    """

    symmetric = True
    vc_dim = 2
    one_sided_vc_dim = 1

    def __init__(self, m: int):
        if m < 2:
            raise ValueError("threshold grid needs at least two points")
        self.m = int(m)

    @property
    def size(self) -> int:
        return 2 * self.m

    def _index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, 0]
        idx = np.rint(X).astype(np.int64)
        if np.any(idx != X) or np.any(idx < 0) or np.any(idx >= self.m):
            raise ValueError(f"instance indices must be integers in [0, {self.m})")
        return idx

    def predict(self, index: int, X) -> np.ndarray:
        idx = self._index(X)
        t = index % self.m
        out = (idx >= t).astype(np.int64)
        return out if index < self.m else 1 - out

    def predict_all(self, X) -> np.ndarray:
        idx = self._index(X)
        if self.size * idx.size > 5e7:
            raise MemoryError("predict_all would materialise too many predictions; use empirical_risks")
        one = (idx[None, :] >= np.arange(self.m)[:, None]).astype(np.int8)
        return np.concatenate([one, 1 - one])

    @property
    def table(self) -> np.ndarray:
        return self.predict_all(np.arange(self.m))

    def empirical_risks(self, rule, D: BagDataset, p=None) -> np.ndarray:
        """Dataset-level risk of every row under ``rule``."""
        rule = rule if isinstance(rule, LossRule) else LossRule(rule)
        n, k = D.n, D.k
        p_used, w = _bag_weights(rule, D, p)
        xs = np.sort(self._index(D.instances).reshape(n, k), axis=1)
        c = D.counts[:, None]
        r = np.arange(k)[None, :]

        def g(s):
            return bag_losses(rule, s, c, k, p_used)

        exact = rule.tag == "EPRM01" and np.all(w == w[0])
        if exact:
            # integer mismatch counts keep ties exact
            d_one = (g(k - r - 1) - g(k - r)).astype(np.int64)
            d_cmp = (g(r + 1) - g(r)).astype(np.int64)
            base_one = int(g(np.full((n, 1), k)).sum())
            base_cmp = int(g(np.zeros((n, 1))).sum())
        else:
            wc = w[:, None]
            d_one = (g(k - r - 1) - g(k - r)) * wc
            d_cmp = (g(r + 1) - g(r)) * wc
            base_one = float((g(np.full((n, 1), k))[:, 0] * w).sum())
            base_cmp = float((g(np.zeros((n, 1)))[:, 0] * w).sum())
        flat = xs.ravel()
        order = np.argsort(flat, kind="stable")
        vals = flat[order]
        # passed[t] = number of sample points strictly below t
        passed = np.concatenate([[0], np.cumsum(np.bincount(vals, minlength=self.m))[:-1]])
        cum_one = np.concatenate([[0], np.cumsum(d_one.ravel()[order])])
        cum_cmp = np.concatenate([[0], np.cumsum(d_cmp.ravel()[order])])
        one = base_one + cum_one[passed]
        cmp_ = base_cmp + cum_cmp[passed]
        if exact:
            one, cmp_ = one / n, cmp_ / n
        if rule.tag == "DSQ":
            nk = n * k
            one = one - (k - 1) * ((nk - passed) / nk - D.p_hat) ** 2
            cmp_ = cmp_ - (k - 1) * (passed / nk - D.p_hat) ** 2
        return np.concatenate([one, cmp_]).astype(np.float64)

    def exact_risks(self, dist: DiscreteDistribution) -> np.ndarray:
        """Population 0-1 risk of every row under ``dist``."""
        idx = self._index(dist.points)
        w1 = np.bincount(idx, weights=dist.probs * (dist.labels == 1), minlength=self.m)
        w0 = np.bincount(idx, weights=dist.probs * (dist.labels == 0), minlength=self.m)
        c1 = np.concatenate([[0.0], np.cumsum(w1)])[: self.m]
        c0 = np.concatenate([[0.0], np.cumsum(w0)])[: self.m]
        one = c1 + (w0.sum() - c0)
        cmp_ = c0 + (w1.sum() - c1)
        return np.concatenate([one, cmp_])

    def __repr__(self):
        return f"ThresholdClass(m={self.m})"


def threshold_class(m: int, noise: float = 0.0, seed: int = 0):
    """Threshold class on ``m`` grid points plus a uniform-x distribution.

    The target threshold ``t_star`` is drawn from the middle half of the grid
    using ``seed``; labels are ``1{i >= t_star}`` flipped independently with
    probability ``noise``.

    Returns
    -------
    cls : ThresholdClass
    dist : DiscreteDistribution
    f_star : FiniteHypothesis
    """
    if not 0.0 <= noise < 0.5:
        raise ValueError("noise must lie in [0, 1/2)")
    cls = ThresholdClass(m)
    t_star = int(np.random.default_rng(seed).integers(m // 4, max(m // 4 + 1, 3 * m // 4)))
    grid = np.arange(m, dtype=np.float64)
    clean = (grid >= t_star).astype(np.int64)
    if noise == 0.0:
        dist = DiscreteDistribution(grid, clean, np.full(m, 1.0 / m))
    else:
        points = np.concatenate([grid, grid])
        labels = np.concatenate([clean, 1 - clean])
        probs = np.concatenate([np.full(m, (1.0 - noise) / m), np.full(m, noise / m)])
        dist = DiscreteDistribution(points, labels, probs)
    return cls, dist, cls.hypothesis(t_star)


def threshold_sample(n: int, k: int, seed, m: int, t_star: int, noise: float = 0.0) -> BagDataset:
    """Bags from the distribution built by :func:`threshold_class`, drawn directly.

    Equivalent in law to ``sample_dataset`` on that distribution, but avoids
    a search over the ``2m``-point support.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = rng.integers(0, m, n * k)
    y = (x >= t_star).astype(np.int64)
    if noise > 0:
        y ^= (rng.random(n * k) < noise).astype(np.int64)
    return make_bags(x.astype(np.float64)[:, None], y, k, seed=None)


class CoordinateClass(HypothesisClass):
    """Hypotheses ``f_i(x) = x[i]`` over bit vectors of length ``M``."""

    symmetric = False

    def __init__(self, M: int):
        self.M = int(M)
        self.vc_dim = int(np.floor(np.log2(M)))

    @property
    def size(self) -> int:
        return self.M

    def predict_all(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.M:
            raise ValueError(f"instances must be bit vectors of length {self.M}")
        return X.T.astype(np.int8)

    def predict(self, index: int, X) -> np.ndarray:
        return np.asarray(X)[:, index].astype(np.int64)


@dataclass(frozen=True)
class LowerBoundFamily:
    """Hard family: ``x`` uniform on ``{0,1}^(2^d)`` and ``y = x[index]`` w.p. ``1/2 + gamma``."""

    d: int
    gamma: float
    index: int = 0

    def __post_init__(self):
        if not 3 <= self.d <= MAX_LOWER_BOUND_D:
            raise ValueError(f"d must lie in [3, {MAX_LOWER_BOUND_D}]")
        if not 0.0 <= self.gamma <= 0.5:
            raise ValueError("gamma must lie in [0, 1/2]")
        if not 0 <= self.index < self.M:
            raise ValueError(f"index must lie in [0, {self.M})")

    @property
    def M(self) -> int:
        return 2**self.d

    @property
    def hypothesis_class(self) -> CoordinateClass:
        return CoordinateClass(self.M)

    def exact_risks(self, i: Optional[int] = None) -> np.ndarray:
        """0-1 risk of each ``f_j`` under the member ``i`` (default: ``self.index``)."""
        i = self.index if i is None else i
        risks = np.full(self.M, 0.5)
        risks[i] = 0.5 - self.gamma
        return risks


def lower_bound_sample(fam: LowerBoundFamily, n: int, k: int, seed) -> BagDataset:
    """Draw ``n`` bags from member ``fam.index`` of the family."""
    if n * k * fam.M > 5e7:
        raise MemoryError(f"{n * k} instances of {fam.M} bits exceed the materialisation budget")
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n * k, fam.M), dtype=np.int8)
    agree = rng.random(n * k) < 0.5 + fam.gamma
    y = np.where(agree, X[:, fam.index], 1 - X[:, fam.index])
    return make_bags(X.astype(np.float64), y, k, seed=None)


def separation_check(fam: LowerBoundFamily, j: int, i: int, i2: int) -> Fraction:
    """Summed excess risk of ``f_j`` under members ``i`` and ``i2``.

    Each excess is ``2 * gamma * Pr[x[j] != x[i]]``; the probability is
    computed exactly by enumerating the joint values of the coordinates
    involved. The separation condition asks for a value of at least
    ``gamma`` whenever ``i != i2``.
    """
    for v in (i, j, i2):
        if not 0 <= v < fam.M:
            raise ValueError(f"coordinate {v} out of range [0, {fam.M})")
    gamma = Fraction(fam.gamma)

    def disagree(a: int, b: int) -> Fraction:
        coords = sorted({a, b})
        hits = sum(bits[coords.index(a)] != bits[coords.index(b)] for bits in product((0, 1), repeat=len(coords)))
        return Fraction(hits, 2 ** len(coords))

    return 2 * gamma * (disagree(j, i) + disagree(j, i2))


def separable_sample(n: int, k: int, seed, dim: int = 2, margin: float = 0.5, truth_seed: int = 0) -> BagDataset:
    """Linearly separable bags with a gap of ``margin`` around the boundary.

    The boundary ``w . x + b = 0`` (unit ``w``) is fixed by ``truth_seed``;
    points are uniform on ``[-2, 2]^dim`` conditioned on
    ``|w . x + b| >= margin``.
    """
    trng = np.random.default_rng(truth_seed)
    w = trng.normal(size=dim)
    w /= np.linalg.norm(w)
    b = trng.uniform(-0.5, 0.5)
    rng = np.random.default_rng(seed)
    need = n * k
    kept = []
    while need > 0:
        X = rng.uniform(-2.0, 2.0, size=(2 * need + 16, dim))
        X = X[np.abs(X @ w + b) >= margin][:need]
        kept.append(X)
        need -= X.shape[0]
    X = np.concatenate(kept)
    y = (X @ w + b > 0).astype(np.int64)
    return make_bags(X, y, k, seed=None)


@dataclass
class Problem:
    """A named instance: hypothesis class, data sampler, and exact class risks."""

    name: str
    cls: HypothesisClass
    sampler: Callable[[int, int, object], BagDataset] = field(repr=False)
    risks: Optional[np.ndarray] = field(default=None, repr=False)
    p: Optional[float] = None
    dist: Optional[DiscreteDistribution] = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    def sample(self, n: int, k: int, seed) -> BagDataset:
        return self.sampler(n, k, seed)

    @property
    def best_risk(self) -> float:
        return float(np.min(self.risks))

    def excess_risk(self, index: int) -> float:
        return float(self.risks[index] - self.best_risk)


INSTANCE_NAMES = ("prop32", "prop41", "eprm-expfail", "logloss-fail", "lower-bound", "threshold", "separable")


def _table_risks(cls: FiniteClass, dist: DiscreteDistribution) -> np.ndarray:
    return (cls.predict_all(dist.points) != dist.labels[None, :]).astype(np.float64) @ dist.probs


def get_problem(name: str, **params) -> Problem:
    """Build a named instance.

    Recognised parameters: ``eps`` (eprm-expfail), ``m``, ``noise``,
    ``truth_seed`` (threshold), ``d``, ``gamma``, ``index`` (lower-bound),
    ``dim``, ``margin``, ``truth_seed`` (separable).
    """
    if name in ("prop32", "logloss-fail"):
        dist, cls = prop32_instance()
    elif name == "prop41":
        dist, f_star = prop41_instance()
        cls = f_star.cls
    elif name == "eprm-expfail":
        dist, cls = eprm_expfail_instance(float(params.get("eps", 0.01)))
    elif name == "threshold":
        m = int(params.get("m", 2**20))
        noise = float(params.get("noise", 0.0))
        cls, dist, f_star = threshold_class(m, noise, int(params.get("truth_seed", 0)))
        sampler = partial(threshold_sample, m=m, t_star=f_star.index, noise=noise)
        return Problem(name, cls, sampler, cls.exact_risks(dist), dist.p, dist, params)
    elif name == "lower-bound":
        fam = LowerBoundFamily(int(params.get("d", 6)), float(params.get("gamma", 0.5)), int(params.get("index", 0)))
        return Problem(name, fam.hypothesis_class, lambda n, k, s: lower_bound_sample(fam, n, k, s), fam.exact_risks(), 0.5, None, params)
    elif name == "separable":
        dim = int(params.get("dim", 2))
        margin = float(params.get("margin", 0.5))
        truth = int(params.get("truth_seed", 0))
        return Problem(name, None, lambda n, k, s: separable_sample(n, k, s, dim, margin, truth), None, None, None, params)
    else:
        raise ValueError(f"unknown instance {name!r}; expected one of {INSTANCE_NAMES}")
    return Problem(name, cls, lambda n, k, s: sample_dataset(dist, n, k, s), _table_risks(cls, dist), dist.p, dist, params)


def hypothesis_by_name(cls: FiniteClass, name: str) -> FiniteHypothesis:
    return cls.hypothesis(cls.names.index(name))
