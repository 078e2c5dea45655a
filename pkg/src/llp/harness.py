"""Experiment orchestration: seeded sweeps, rate fits and the self-check suite.

Every trial draws its data from a generator seeded by
``SeedSequence([seed_base, n, trial])``, so results depend only on the
sweep specification and never on scheduling or thread count.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .core import BagDataset, DiscreteDistribution, sample_dataset
from .exact import exact_bag_expectation, exact_expected_bag_loss, exact_instance_loss, minimize
from .gradient import GRAD_RULES, ParametricModel, TrainConfig, TrainState, grad_check, parse_grad_rule, train
from .losses import LossRule, empirical_risk, ez_kernel, ez_offset, sq_kernel, zero_one_risk
from .synthetic import LowerBoundFamily, get_problem, lower_bound_sample, prop32_instance, prop41_instance, separable_sample, separation_check

__all__ = [
    "SWEEP_COLUMNS",
    "RateFit",
    "SweepSpec",
    "estimation_vs_learning",
    "fit_rate",
    "run_sweep",
    "trial_seed",
    "verify_suite",
    "write_table",
]

SWEEP_COLUMNS = ["instance", "rule", "k", "n", "trial", "seed", "excess_risk", "emp_risk", "chosen_index", "wall_ms"]
FAULTS = ("dsq-bias-sign", "ez-wrong-p")
SEPARABLE_TEST_BAGS = 2000


def trial_seed(seed_base: int, n: int, trial: int) -> int:
    """Integer seed derived from (seed_base, n, trial)."""
    return int(np.random.SeedSequence([seed_base, n, trial]).generate_state(1)[0])


@dataclass(frozen=True)
class SweepSpec:
    """Parameters of one sample-complexity sweep.

    Parameters
    ----------
    instance : str
        A name accepted by :func:`llp.synthetic.get_problem`.
    rules : sequence of str
        Loss rules such as ``"EPRM01"``, ``"DSQ"`` or ``"EZ"`` for finite
        classes; gradient rules (``"PM.Sq"`` ...) for the separable instance.
    k : int
    n_grid : sequence of int
        Strictly increasing bag counts.
    trials : int
    eps, delta : float
        Target accuracy and failure probability, used by :meth:`success_rate`.
    seed_base : int
    p_mode : {"known", "plugin", "split"}
        How EZ gets the marginal proportion. ``known`` uses the instance's true ``p``.
    params : dict
        Instance parameters forwarded to ``get_problem``.
    train : dict
        Trainer settings for the separable instance (``lr``, ``epochs``,
        ``batch_bags``, ``beta``).
    """

    instance: str
    rules: Tuple[str, ...]
    k: int
    n_grid: Tuple[int, ...]
    trials: int = 1
    eps: float = 0.05
    delta: float = 0.05
    seed_base: int = 0
    p_mode: str = "known"
    params: Dict = field(default_factory=dict)
    train: Dict = field(default_factory=dict)

    def __post_init__(self):
        rules = (self.rules,) if isinstance(self.rules, str) else tuple(self.rules)
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if not rules:
            raise ValueError("at least one rule is required")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n grid must be nonempty and strictly increasing")
        if min(self.n_grid) < 1:
            raise ValueError("n values must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.k < 1:
            raise ValueError("k must be positive")
        if not (0 < self.eps < 1 and 0 < self.delta < 1):
            raise ValueError("eps and delta must lie in (0, 1)")


def _loss_rule(name: str, p_mode: str, p) -> LossRule:
    rule = LossRule(name)
    if rule.tag == "EZ":
        return LossRule("EZ", p_mode=p_mode, p=p if p_mode == "known" else None)
    return rule


def _run_trial(spec: SweepSpec, problem, n: int, trial: int, timing: bool) -> List[dict]:
    seed = trial_seed(spec.seed_base, n, trial)
    rows = []
    if problem.name == "separable":
        D = problem.sample(n, spec.k, seed)
        test = problem.sample(SEPARABLE_TEST_BAGS, spec.k, seed + 1)
        for r in spec.rules:
            t0 = time.perf_counter()
            cfg = TrainConfig(
                rule=r,
                learning_rate=float(spec.train.get("lr", 1.0)),
                batch_bags=int(spec.train.get("batch_bags", 16)),
                epochs=int(spec.train.get("epochs", 200)),
                beta=float(spec.train.get("beta", 0.9)),
                seed=seed,
                p_mode="plugin" if spec.p_mode == "known" else spec.p_mode,
            )
            model, trace = train(ParametricModel(D.feature_dim, spec.train.get("hidden_units"), seed=seed), D, None, cfg)
            err = zero_one_risk(model, test)
            loss = trace.records[-1].train_loss if trace.records else float("nan")
            ms = 1000.0 * (time.perf_counter() - t0) if timing else 0.0
            rows.append(_row(spec, parse_grad_rule(r), n, trial, seed, err, loss, -1, ms))
        return rows
    D = problem.sample(n, spec.k, seed)
    for r in spec.rules:
        t0 = time.perf_counter()
        rule = _loss_rule(r, spec.p_mode, problem.p)
        res = minimize(rule, problem.cls, D)
        ms = 1000.0 * (time.perf_counter() - t0) if timing else 0.0
        rows.append(_row(spec, str(rule), n, trial, seed, problem.excess_risk(res.best_index), res.best_value, res.best_index, ms))
    return rows


def _row(spec, rule, n, trial, seed, excess, emp, idx, ms) -> dict:
    return dict(
        instance=spec.instance,
        rule=rule,
        k=spec.k,
        n=n,
        trial=trial,
        seed=seed,
        excess_risk=float(excess),
        emp_risk=float(emp),
        chosen_index=int(idx),
        wall_ms=float(ms),
    )


def run_sweep(spec: SweepSpec, n_jobs: int = 1, timing: bool = False, problem=None) -> pd.DataFrame:
    """Run every (n, trial) of ``spec`` and return one row per rule.

    ``problem`` overrides the instance named in ``spec`` with a custom
    :class:`~llp.synthetic.Problem`.

    Excess risk is measured against the exact class optimum for finite
    classes. For the separable instance it is the 0-1 error on a large
    independent test sample (the optimum is 0).

    ``wall_ms`` is filled only when ``timing=True``; it is 0 otherwise so the
    table is a pure function of the spec.
    """
    if problem is None:
        problem = get_problem(spec.instance, **spec.params)
    jobs = [(n, t) for n in spec.n_grid for t in range(spec.trials)]
    if n_jobs == 1:
        chunks = [_run_trial(spec, problem, n, t, timing) for n, t in jobs]
    else:
        chunks = Parallel(n_jobs=n_jobs)(delayed(_run_trial)(spec, problem, n, t, timing) for n, t in jobs)
    table = pd.DataFrame([row for rows in chunks for row in rows], columns=SWEEP_COLUMNS)
    order = {r: i for i, r in enumerate(dict.fromkeys(table["rule"]))}
    table = table.assign(_r=table["rule"].map(order)).sort_values(["n", "trial", "_r"], kind="stable")
    return table.drop(columns="_r").reset_index(drop=True)


def success_rate(table: pd.DataFrame, eps: float) -> pd.Series:
    """Fraction of trials with excess risk at most ``eps``, per (rule, n)."""
    return (table["excess_risk"] <= eps).groupby([table["rule"], table["n"]]).mean()


def write_table(table: pd.DataFrame, path) -> None:
    """Write a table as CSV, or JSON records when ``path`` ends in ``.json``."""
    path = str(path)
    if path.endswith(".json"):
        with open(path, "w") as fh:
            json.dump(json.loads(table.to_json(orient="records", double_precision=15)), fh, indent=1, sort_keys=True)
            fh.write("\n")
    else:
        table.to_csv(path, index=False, lineterminator="\n")


@dataclass(frozen=True)
class RateFit:
    """OLS fit of ``log(mean excess) = intercept + slope * log(n)``."""

    slope: float
    intercept: float
    r2: float
    slope_se: float
    n: np.ndarray
    mean: np.ndarray
    se: np.ndarray

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "slope_se": self.slope_se,
            "n": [int(v) for v in self.n],
            "mean_excess": [float(v) for v in self.mean],
            "se_excess": [float(v) for v in self.se],
        }


def _ols(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_rate(table, value: str = "excess_risk", n_boot: int = 1000, seed: int = 0) -> RateFit:
    """Log-log slope of the per-n mean of ``value``.

    Parameters
    ----------
    table : DataFrame
        Needs columns ``n`` and ``value``; one row per trial.
    n_boot : int
        Bootstrap resamples (trials resampled within each n) for the slope's
        standard error.

    Only n values with a positive mean enter the fit; at least two are needed.
    """
    groups = [(int(n), g[value].to_numpy(dtype=np.float64)) for n, g in table.groupby("n", sort=True)]
    ns = np.array([n for n, _ in groups])
    means = np.array([v.mean() for _, v in groups])
    ses = np.array([v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0 for _, v in groups])
    keep = means > 0
    if keep.sum() < 2:
        raise ValueError("need at least two n values with positive mean for a rate fit")
    x = np.log(ns[keep])
    slope, intercept, r2 = _ols(x, np.log(means[keep]))
    rng = np.random.default_rng(seed)
    kept = [v for (_, v), k in zip(groups, keep) if k]
    boots = []
    for _ in range(n_boot):
        m = np.array([v[rng.integers(0, v.size, v.size)].mean() for v in kept])
        if np.all(m > 0):
            boots.append(np.polyfit(x, np.log(m), 1)[0])
    se = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    return RateFit(slope, intercept, r2, se, ns[keep], means[keep], ses[keep])


def estimation_vs_learning(
    n_grid_estimation: Sequence[int] = (16, 64, 256, 1024, 4096),
    n_grid_learning: Sequence[int] = (1, 2, 3, 4, 5, 6, 8),
    trials: int = 400,
    seed: int = 0,
) -> dict:
    """Contrast estimating the EasyLLP risk of f* with learning f* itself.

    On the two-point instance with ``k = 2`` the per-bag loss of ``f*`` is
    ``+-1/2``, so the estimate's standard deviation shrinks like ``n**-0.5``.
    Selecting between ``f*`` and ``1 - f*`` fails only when every bag has
    proportion 1/2, which is exponentially rare.
    """
    dist, f_star = prop41_instance()
    cls = f_star.cls
    k = 2
    rule = LossRule("EZ", p_mode="known", p=dist.p)
    est_rows, learn_rows = [], []
    for n in n_grid_estimation:
        for t in range(trials):
            D = sample_dataset(dist, n, k, trial_seed(seed, n, t))
            est_rows.append((n, empirical_risk(rule, f_star, D)))
    for n in n_grid_learning:
        for t in range(trials):
            D = sample_dataset(dist, n, k, trial_seed(seed + 1, n, t))
            res = minimize(rule, cls, D)
            learn_rows.append((n, 1.0 if res.best_index != f_star.index else 0.0))
    est = pd.DataFrame(est_rows, columns=["n", "value"])
    stats = est.groupby("n")["value"].agg(["mean", "std"])
    std_fit = _ols(np.log(stats.index.to_numpy(dtype=float)), np.log(stats["std"].to_numpy()))
    learn = pd.DataFrame(learn_rows, columns=["n", "excess_risk"])
    lfit = fit_rate(learn, seed=seed)
    zscores = stats["mean"] / (stats["std"] / np.sqrt(trials))
    return {
        "estimation": {
            "n": [int(v) for v in stats.index],
            "mean": [float(v) for v in stats["mean"]],
            "std": [float(v) for v in stats["std"]],
            "std_slope": std_fit[0],
            "max_abs_z": float(np.abs(zscores).max()),
        },
        "learning": {
            "n": [int(v) for v in lfit.n],
            "mean_excess": [float(v) for v in lfit.mean],
            "slope": lfit.slope,
        },
    }


# Self-check suite


def _random_dist(rng, m: int) -> DiscreteDistribution:
    probs = rng.dirichlet(np.ones(m))
    labels = rng.integers(0, 2, m)
    return DiscreteDistribution(np.arange(m, dtype=np.float64), labels, probs)


def _lookup(values):
    values = np.asarray(values)

    def f(X):
        return values[np.asarray(X, dtype=np.float64).reshape(len(X), -1)[:, 0].astype(np.int64)]

    return f


def _check(name, ok, **details) -> dict:
    return {"name": name, "passed": bool(ok), **details}


def _dsq_bounds(seed: int, cases: int, fault: bool) -> List[dict]:
    rng = np.random.default_rng(seed)
    worst = [0.0, 0.0, 0.0]
    for _ in range(cases):
        k = int(rng.integers(1, 9))
        n = int(rng.integers(1, 30))
        F = rng.uniform(0, 1, (n, k))
        if rng.random() < 0.5:
            F = np.round(F)
        counts = rng.integers(0, k + 1, n)
        S = F.sum(axis=1)
        sq_unscaled = float(np.mean(sq_kernel(S, counts, k)))
        sq_scaled = k * sq_unscaled
        ef = S.sum() / (n * k)
        p_hat = counts.sum() / (n * k)
        bias = (k - 1) * ((ef + p_hat) if fault else (ef - p_hat)) ** 2
        dsq = sq_scaled - bias
        worst[0] = max(worst[0], bias - (k - 1) / k * sq_scaled)
        worst[1] = max(worst[1], -dsq)
        worst[2] = max(worst[2], sq_scaled - k * dsq)
    tol = 1e-9
    labels = ("bias_bounded_by_sq", "dsq_nonnegative", "sq_bounded_by_k_dsq")
    return [_check(f"dsq_bounds.{lab}", w <= tol, worst_violation=w) for lab, w in zip(labels, worst)]


def _two_point_square_loss(tol=1e-12) -> dict:
    dist, cls = prop32_instance()
    worst = 0.0
    for k in range(2, 11):
        for idx, target in ((0, 2 / (3 * k)), (1, (k + 2) / (9 * k))):
            v = exact_expected_bag_loss("PM_SQ", cls.hypothesis(idx), dist, k)
            worst = max(worst, abs(v - target))
    return _check("two_point_expected_square_loss", worst <= tol, max_error=worst)


def _enumeration(seed: int, predictors: int, wrong_p: Optional[float]) -> List[dict]:
    """Square-loss identity and EZ unbiasedness, by exhaustive enumeration."""
    rng = np.random.default_rng(seed)
    sq_err, ez_err, worst_bias, bias_gap = 0.0, 0.0, 0.0, 0.0
    for i in range(predictors):
        m = int(rng.integers(1, 5))
        k = int(rng.integers(1, 7))
        dist = _random_dist(rng, m)
        fvals = rng.uniform(0, 1, m) if i % 2 else rng.integers(0, 2, m).astype(np.float64)
        f = _lookup(fvals)
        p = dist.p
        ef = float(dist.probs @ fvals)
        sq = exact_bag_expectation(lambda s, c, k=k: sq_kernel(s, c, k), fvals, dist, k)
        sq_err = max(sq_err, abs(k * sq - (k - 1) * (ef - p) ** 2 - exact_instance_loss(f, dist, "sq")))
        q = p if wrong_p is None else min(1.0, p + wrong_p)
        ez = exact_bag_expectation(lambda s, c, k=k, q=q: ez_kernel(s, c, k, q), fvals, dist, k)
        bias = ez - exact_instance_loss(f, dist, "abs")
        ez_err = max(ez_err, abs(bias))
        if wrong_p is not None:
            # substituting q for p shifts the expected loss by (q - p)(k - 1)(2 E f - 1)
            analytic = (q - p) * (k - 1) * (2 * ef - 1)
            bias_gap = max(bias_gap, abs(bias - analytic))
            worst_bias = max(worst_bias, abs(bias))
    tol = 1e-12
    out = [
        _check("square_loss_expectation_identity", sq_err <= tol, max_error=sq_err),
        _check("ez_unbiased_by_enumeration", ez_err <= tol, max_error=ez_err),
    ]
    if wrong_p is not None:
        out[1]["max_abs_bias"] = worst_bias
        out[1]["bias_matches_analytic_offset"] = bias_gap <= tol
    return out


def _offset(seed: int, cases: int) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        k = int(rng.integers(1, 8))
        n = int(rng.integers(1, 20))
        m = int(rng.integers(2, 7))
        X = rng.integers(0, m, (n, k, 1)).astype(np.float64)
        D = BagDataset(X, rng.integers(0, k + 1, n))
        p = float(rng.uniform())
        f, g = _lookup(rng.uniform(0, 1, m)), _lookup(rng.uniform(0, 1, m))
        rule = LossRule("EZ", p=p)
        diff = empirical_risk(rule, f, D) - empirical_risk(rule, g, D)
        worst = max(worst, abs(ez_offset(f, g, D, p) - diff))
    return _check("ez_offset_equals_risk_difference", worst <= 1e-10, max_error=worst)


def _separation(seed: int, cases: int) -> List[dict]:
    rng = np.random.default_rng(seed)
    out = []
    for gamma in (Fraction(1, 2), Fraction(1, 16)):
        M = LowerBoundFamily(6, float(gamma)).M
        worst = None
        for _ in range(cases):
            i, i2 = (int(v) for v in rng.choice(M, 2, replace=False))
            j = int(rng.integers(0, M))
            margin = separation_check(LowerBoundFamily(6, float(gamma), i), j, i, i2) - gamma
            worst = margin if worst is None else min(worst, margin)
        out.append(_check(f"separation_condition.gamma_{gamma.numerator}_{gamma.denominator}", worst >= -1e-12, min_margin=float(worst)))
    # at gamma = 1/2 labels copy coordinate i, so each alpha is fixed by the features
    fam = LowerBoundFamily(6, 0.5, int(rng.integers(0, 64)))
    D = lower_bound_sample(fam, 50, 5, seed)
    det = bool(np.array_equal(D.counts, D.X[:, :, fam.index].sum(axis=1).astype(np.int64)))
    out.append(_check("lower_bound_deterministic_alpha", det))
    return out


def _gradients(seed: int) -> List[dict]:
    D = separable_sample(6, 4, seed)
    out = []
    for hidden in (None, 3):
        model = ParametricModel(2, hidden, seed=seed)
        worst = 0.0
        for r in GRAD_RULES:
            cfg = TrainConfig(rule=r, beta=0.9)
            rep = grad_check(model, D, cfg, TrainState(p_hat=D.p_hat, v_hat=0.45))
            worst = max(worst, rep.max_rel_err)
        arch = "linear" if hidden is None else "mlp"
        out.append(_check(f"gradient_check.{arch}", worst < 1e-5, max_rel_err=worst))
    return out


def verify_suite(seed: int = 0, faults: Sequence[str] = (), cases: int = 1000) -> dict:
    """Run the built-in property checks with fixed seeds.

    Parameters
    ----------
    faults : sequence of str
        Deliberate errors to inject: ``"dsq-bias-sign"`` flips the sign inside
        the DSQ bias term, ``"ez-wrong-p"`` feeds EZ a proportion shifted by 0.1.

    Returns
    -------
    dict
        ``{"passed": bool, "seed": int, "faults": [...], "checks": [...]}``;
        serialise with :func:`verdict_json` for byte-stable output.
    """
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown faults {sorted(unknown)}; expected some of {FAULTS}")
    checks = []
    checks += _dsq_bounds(seed, cases, "dsq-bias-sign" in faults)
    checks.append(_two_point_square_loss())
    checks += _enumeration(seed + 1, 50, 0.1 if "ez-wrong-p" in faults else None)
    checks.append(_offset(seed + 2, cases))
    checks += _separation(seed + 3, cases)
    checks += _gradients(seed + 4)
    return {
        "passed": all(c["passed"] for c in checks),
        "seed": seed,
        "faults": sorted(faults),
        "checks": checks,
    }


def verdict_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"
