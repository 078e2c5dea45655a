"""Minibatch SGD for sigmoid predictors trained from bag proportions.

Forward and backward passes are written out by hand for two architectures,
a linear model ``sigmoid(w . x + b)`` and a one-hidden-layer ReLU network
``sigmoid(w2 . relu(W1 x + b1) + b2)``. Parameters live in one flat vector.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .core import BagDataset
from .losses import DEFAULT_LOG_EPS, split_indices, zero_one_risk
from .validation import check_bags, check_instances

__all__ = [
    "GRAD_RULES",
    "GradCheckReport",
    "LLPClassifier",
    "ParametricModel",
    "TrainConfig",
    "TrainState",
    "TrainTrace",
    "batch_loss_and_grad",
    "grad_check",
    "train",
]

logger = logging.getLogger(__name__)

GRAD_RULES = ("EZ.Log", "EZ.Sq", "PM.Log", "PM.Sq", "DebiasedSq")
DIVERGENCE_LIMIT = 1e12

_GRAD_ALIASES = {r.lower().replace(".", "").replace("_", "").replace("-", ""): r for r in GRAD_RULES}
_GRAD_ALIASES.update({"dsq": "DebiasedSq", "debiased": "DebiasedSq"})


def parse_grad_rule(name: str) -> str:
    key = name.lower().replace(".", "").replace("_", "").replace("-", "")
    if key not in _GRAD_ALIASES:
        raise ValueError(f"unknown gradient rule {name!r}; expected one of {GRAD_RULES}")
    return _GRAD_ALIASES[key]


class ParametricModel:
    """Sigmoid-output predictor with a flat parameter vector.

    Parameters
    ----------
    feature_dim : int
    hidden_units : int, optional
        Width of the ReLU hidden layer; ``None`` gives the linear model.
    params : array-like, optional
        Flat parameters. Drawn uniformly from ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``
        with ``seed`` when omitted.
    seed : int
    """

    def __init__(self, feature_dim: int, hidden_units: Optional[int] = None, params=None, seed: int = 0):
        if feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if hidden_units is not None and hidden_units < 1:
            raise ValueError("hidden_units must be positive")
        self.feature_dim = int(feature_dim)
        self.hidden_units = None if hidden_units is None else int(hidden_units)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        params = np.array(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        self.params = params

    @property
    def arch(self) -> str:
        return "linear" if self.hidden_units is None else "mlp"

    @property
    def n_params(self) -> int:
        d, h = self.feature_dim, self.hidden_units
        return d + 1 if h is None else h * d + h + h + 1

    def _init_params(self, rng) -> np.ndarray:
        d, h = self.feature_dim, self.hidden_units
        if h is None:
            bound = 1.0 / np.sqrt(d)
            return rng.uniform(-bound, bound, d + 1)
        b1 = 1.0 / np.sqrt(d)
        b2 = 1.0 / np.sqrt(h)
        return np.concatenate([rng.uniform(-b1, b1, h * d + h), rng.uniform(-b2, b2, h + 1)])

    def unpack(self, params=None):
        params = self.params if params is None else params
        d, h = self.feature_dim, self.hidden_units
        if h is None:
            return params[:d], params[d]
        W1 = params[: h * d].reshape(h, d)
        b1 = params[h * d : h * d + h]
        w2 = params[h * d + h : h * d + 2 * h]
        return W1, b1, w2, params[-1]

    def forward_with_cache(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.hidden_units is None:
            w, b = self.unpack()
            out = expit(X @ w + b)
            return out, (X, None, out)
        W1, b1, w2, b2 = self.unpack()
        H = np.maximum(X @ W1.T + b1, 0.0)
        out = expit(H @ w2 + b2)
        return out, (X, H, out)

    def forward(self, X) -> np.ndarray:
        return self.forward_with_cache(X)[0]

    __call__ = forward

    def backward(self, cache, d_out) -> np.ndarray:
        """Gradient of ``sum(d_out * output)`` with respect to the flat parameters."""
        X, H, out = cache
        d_logit = d_out * out * (1.0 - out)
        if self.hidden_units is None:
            return np.concatenate([X.T @ d_logit, [d_logit.sum()]])
        _, _, w2, _ = self.unpack()
        d_H = np.outer(d_logit, w2) * (H > 0)
        return np.concatenate([(d_H.T @ X).ravel(), d_H.sum(axis=0), H.T @ d_logit, [d_logit.sum()]])

    def copy(self) -> "ParametricModel":
        return ParametricModel(self.feature_dim, self.hidden_units, self.params.copy())

    def to_dict(self) -> dict:
        arch = "linear" if self.hidden_units is None else {"mlp": self.hidden_units}
        return {"arch": arch, "feature_dim": self.feature_dim, "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParametricModel":
        arch = d["arch"]
        hidden = None if arch == "linear" else int(arch["mlp"])
        return cls(int(d["feature_dim"]), hidden, d["params"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ParametricModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self):
        return f"ParametricModel(arch={self.arch!r}, feature_dim={self.feature_dim}, hidden_units={self.hidden_units})"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``beta`` is the EMA weight on the previous running mean for DebiasedSq;
    ``beta = 0`` uses the current batch mean only.
    """

    rule: str = "PM.Sq"
    learning_rate: float = 0.1
    batch_bags: int = 32
    epochs: int = 50
    beta: float = 0.99
    seed: int = 0
    p_mode: str = "plugin"
    p: Optional[float] = None
    log_eps: float = DEFAULT_LOG_EPS
    k_scaled: bool = False
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rule", parse_grad_rule(self.rule))
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.batch_bags < 1 or self.epochs < 0:
            raise ValueError("batch_bags must be positive and epochs nonnegative")
        if self.p_mode not in ("known", "plugin", "split"):
            raise ValueError(f"unknown p_mode {self.p_mode!r}")
        if self.p_mode == "known" and self.p is None:
            raise ValueError("p_mode='known' needs p")


@dataclass
class TrainState:
    p_hat: float
    v_hat: float = float("nan")


def _split_batch(batch):
    if isinstance(batch, BagDataset):
        return batch.X, batch.counts
    X = np.stack([b.instances for b in batch])
    return X, np.array([b.label_count for b in batch])


def batch_loss_and_grad(model: ParametricModel, batch, cfg: TrainConfig, state: TrainState):
    """Surrogate loss of a minibatch and its gradient.

    Parameters
    ----------
    batch : BagDataset or list of Bag
    state : TrainState
        ``p_hat`` feeds the EZ and DebiasedSq losses; ``v_hat`` is the running
        mean prediction used by DebiasedSq.

    Returns
    -------
    loss : float
    grad : ndarray of shape (model.n_params,)
    new_state : TrainState
    """
    X, counts = _split_batch(batch)
    nb, k, d = X.shape
    out, cache = model.forward_with_cache(X.reshape(nb * k, d))
    F = out.reshape(nb, k)
    alpha = counts / k
    fbar = F.mean(axis=1)
    rule, eps, p = cfg.rule, cfg.log_eps, state.p_hat
    new_state = state
    if rule == "PM.Sq":
        scale = k if cfg.k_scaled else 1.0
        r = fbar - alpha
        loss = scale * np.mean(r**2)
        dF = np.repeat((2.0 * scale * r / (nb * k))[:, None], k, axis=1)
    elif rule == "PM.Log":
        q = np.clip(fbar, eps, 1.0 - eps)
        loss = np.mean(-alpha * np.log(q) - (1.0 - alpha) * np.log1p(-q))
        dq = (-alpha / q + (1.0 - alpha) / (1.0 - q)) * ((fbar > eps) & (fbar < 1.0 - eps))
        dF = np.repeat((dq / (nb * k))[:, None], k, axis=1)
    elif rule in ("EZ.Sq", "EZ.Log"):
        w1 = (k * (alpha - p) + p)[:, None]
        w0 = (k * (p - alpha) + (1.0 - p))[:, None]
        if rule == "EZ.Sq":
            per = w1 * (1.0 - F) ** 2 + w0 * F**2
            dper = -2.0 * w1 * (1.0 - F) + 2.0 * w0 * F
        else:
            Fc = np.clip(F, eps, 1.0 - eps)
            per = -w1 * np.log(Fc) - w0 * np.log1p(-Fc)
            dper = (-w1 / Fc + w0 / (1.0 - Fc)) * ((F > eps) & (F < 1.0 - eps))
        loss = per.mean()
        dF = dper / (nb * k)
    elif rule == "DebiasedSq":
        v_prev = state.p_hat if np.isnan(state.v_hat) else state.v_hat
        v_new = cfg.beta * v_prev + (1.0 - cfg.beta) * F.mean()
        r = fbar - alpha
        gap = v_new - state.p_hat
        loss = k * np.mean(r**2) - (k - 1) * gap**2
        # v_prev is a constant; only the batch mean inside v_new is differentiated
        dF = np.repeat((2.0 * r / nb)[:, None], k, axis=1) - 2.0 * (k - 1) * gap * (1.0 - cfg.beta) / (nb * k)
        new_state = replace(state, v_hat=float(v_new))
    else:
        raise ValueError(f"unknown rule {rule!r}")
    grad = model.backward(cache, dF.ravel())
    loss = float(loss)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite {'loss' if not np.isfinite(loss) else 'gradient'} under {rule}")
    return loss, grad, new_state


class EpochRecord(NamedTuple):
    epoch: int
    train_loss: float
    test_err01: float
    v_hat: float
    ms: float


@dataclass
class TrainTrace:
    records: List[EpochRecord] = field(default_factory=list)
    status: str = "ok"

    def append(self, *values) -> None:
        self.records.append(EpochRecord(*values))

    def values(self) -> np.ndarray:
        """Trace without wall times, shape (epochs, 4)."""
        return np.array([r[:4] for r in self.records], dtype=np.float64).reshape(-1, 4)

    def to_csv(self, path=None, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EpochRecord._fields)
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.test_err01), repr(r.v_hat), f"{r.ms:.3f}" if timing else 0])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _p_and_train_set(train_ds: BagDataset, cfg: TrainConfig):
    if cfg.p_mode == "known":
        return cfg.p, train_ds
    if cfg.p_mode == "plugin":
        return train_ds.p_hat, train_ds
    est, ev = split_indices(train_ds.n, cfg.split_seed)
    return train_ds[est].p_hat, train_ds[ev]


def train(model: ParametricModel, train_ds: BagDataset, test_ds: Optional[BagDataset], cfg: TrainConfig):
    """Plain minibatch SGD; returns ``(trained_model, trace)``.

    The input model is not modified. Bags are reshuffled every epoch with a
    generator seeded by ``cfg.seed``. A non-finite or exploding loss stops
    training early and is recorded in ``trace.status``.
    """
    if test_ds is not None and not test_ds.has_labels:
        raise ValueError("test dataset needs true labels for 0-1 evaluation")
    model = model.copy()
    p_hat, data = _p_and_train_set(train_ds, cfg)
    state = TrainState(p_hat=p_hat)
    rng = np.random.default_rng(cfg.seed)
    trace = TrainTrace()
    n = data.n
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        total = 0.0
        try:
            for lo in range(0, n, cfg.batch_bags):
                idx = perm[lo : lo + cfg.batch_bags]
                loss, grad, state = batch_loss_and_grad(model, data[idx], cfg, state)
                if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
                    raise FloatingPointError(f"loss {loss:.3g} is non-finite or beyond the divergence limit")
                model.params = model.params - cfg.learning_rate * grad
                total += loss * idx.size
        except FloatingPointError as exc:
            logger.warning("epoch %d aborted: %s", epoch, exc)
            trace.status = f"aborted at epoch {epoch}: {exc}"
            break
        err = zero_one_risk(model, test_ds) if test_ds is not None else float("nan")
        trace.append(epoch, total / n, err, state.v_hat, 1000.0 * (time.perf_counter() - t0))
    return model, trace


class GradCheckReport(NamedTuple):
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max())

    @property
    def componentwise_rel_err(self) -> np.ndarray:
        """``|a - n| / max(|a|, |n|, 1e-8)``; unreliable for entries near the difference noise floor."""
        a, n = self.analytic, self.numeric
        return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    model: ParametricModel,
    batch,
    cfg: TrainConfig,
    state: Optional[TrainState] = None,
    step: float = 1e-5,
    loss_and_grad: Callable = batch_loss_and_grad,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences, per parameter.

    Entry ``i`` of the relative error is ``|a_i - n_i| / max(|a|_inf, |n|_inf, 1e-8)``,
    measured against the largest gradient entry. Central differences in
    float64 carry an absolute round-off of about ``eps * |loss| / step``, so
    entries far below the gradient scale cannot be resolved on their own.
    """
    if state is None:
        _, counts = _split_batch(batch)
        X, _ = _split_batch(batch)
        state = TrainState(p_hat=float(counts.sum() / counts.size / X.shape[1]))
    _, analytic, _ = loss_and_grad(model, batch, cfg, state)
    numeric = np.empty_like(model.params)
    probe = model.copy()
    for i in range(model.n_params):
        orig = probe.params[i]
        probe.params[i] = orig + step
        up = batch_loss_and_grad(probe, batch, cfg, state)[0]
        probe.params[i] = orig - step
        down = batch_loss_and_grad(probe, batch, cfg, state)[0]
        probe.params[i] = orig
        numeric[i] = (up - down) / (2 * step)
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), 1e-8)
    rel = np.abs(analytic - numeric) / scale
    return GradCheckReport(analytic, numeric, rel)


class LLPClassifier(ClassifierMixin, BaseEstimator):
    """Sigmoid classifier trained from bag label proportions by minibatch SGD.

    Parameters
    ----------
    rule : {"EZ.Log", "EZ.Sq", "PM.Log", "PM.Sq", "DebiasedSq"}, default="PM.Sq"
    hidden_units : int, optional
        ReLU hidden layer width; ``None`` trains a linear model.
    learning_rate : float, default=0.1
    batch_bags : int, default=32
    epochs : int, default=50
    beta : float, default=0.99
        EMA weight for DebiasedSq.
    p_mode : {"known", "plugin", "split"}, default="plugin"
    p : float, optional
    log_eps : float, default=1e-7
    k_scaled : bool, default=False
    k : int, optional
        Bag size when ``X`` is a flat instance array.
    random_state : int, default=0
        Seeds both initialisation and the per-epoch shuffles.

    Attributes
    ----------
    model_ : ParametricModel
    trace_ : TrainTrace
    classes_ : ndarray of shape (2,)
    """

    def __init__(
        self,
        rule="PM.Sq",
        hidden_units=None,
        learning_rate=0.1,
        batch_bags=32,
        epochs=50,
        beta=0.99,
        p_mode="plugin",
        p=None,
        log_eps=DEFAULT_LOG_EPS,
        k_scaled=False,
        k=None,
        random_state=0,
    ):
        self.rule = rule
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.batch_bags = batch_bags
        self.epochs = epochs
        self.beta = beta
        self.p_mode = p_mode
        self.p = p
        self.log_eps = log_eps
        self.k_scaled = k_scaled
        self.k = k
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            rule=self.rule,
            learning_rate=self.learning_rate,
            batch_bags=self.batch_bags,
            epochs=self.epochs,
            beta=self.beta,
            seed=self.random_state,
            p_mode=self.p_mode,
            p=self.p,
            log_eps=self.log_eps,
            k_scaled=self.k_scaled,
        )

    def fit(self, X, y=None, eval_set=None):
        """Train on bags. ``eval_set`` is a labelled BagDataset scored every epoch."""
        D = check_bags(X, y, self.k)
        model = ParametricModel(D.feature_dim, self.hidden_units, seed=self.random_state)
        self.model_, self.trace_ = train(model, D, eval_set, self._config())
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = D.feature_dim
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        pos = self.model_(check_instances(X, self.n_features_in_))
        return np.column_stack([1.0 - pos, pos])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)
