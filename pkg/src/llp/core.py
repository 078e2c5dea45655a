"""Data model for label-proportion learning.

Instances are 1-D float arrays. A bag stores its ``k`` instances together
with the integer number of positive labels, never the float proportion, so
that proportion equality tests stay exact.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Bag",
    "BagDataset",
    "BagFormatError",
    "DiscreteDistribution",
    "FiniteClass",
    "FiniteHypothesis",
    "HypothesisClass",
    "as_instance",
    "load_bags",
    "load_csv",
    "make_bags",
    "sample_dataset",
    "save_bags",
]


class BagFormatError(ValueError):
    """Raised when a bag file or CSV violates its schema.

    ``lineno`` is 1-based and refers to the offending line of the input file.
    """

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def as_instance(x) -> np.ndarray:
    """Validate a single feature vector and return it as a float array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"instance must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("instance contains NaN or Inf")
    return x


@dataclass(frozen=True, eq=False)
class Bag:
    """``k`` instances released with the number of positive labels among them."""

    instances: np.ndarray
    label_count: int
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.instances, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"bag instances must have shape (k, d), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("bag contains NaN or Inf features")
        count = int(self.label_count)
        if count != self.label_count or not 0 <= count <= X.shape[0]:
            raise ValueError(f"label_count must be an integer in [0, {X.shape[0]}], got {self.label_count}")
        object.__setattr__(self, "instances", _readonly(X))
        object.__setattr__(self, "label_count", count)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (X.shape[0],) or not np.isin(y, (0, 1)).all():
                raise ValueError("labels must be a 0/1 vector of length k")
            if int(y.sum()) != count:
                raise ValueError("label_count disagrees with the sum of labels")
            object.__setattr__(self, "labels", _readonly(y.astype(np.int64)))

    @property
    def k(self) -> int:
        return self.instances.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.instances.shape[1]

    def alpha(self) -> float:
        return self.label_count / self.k

    def __eq__(self, other):
        if not isinstance(other, Bag):
            return NotImplemented
        if self.label_count != other.label_count or not np.array_equal(self.instances, other.instances):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


class BagDataset:
    """``n`` bags of equal size ``k``.

    Parameters
    ----------
    X : array-like of shape (n, k, d)
        Instances, bag-major.
    counts : array-like of shape (n,)
        Number of positive labels in each bag.
    labels : array-like of shape (n, k), optional
        Per-instance labels. Only used for evaluation; learners never read them.
    """

    def __init__(self, X, counts, labels=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3:
            raise ValueError(f"X must have shape (n, k, d), got {X.shape}")
        n, k, _ = X.shape
        if k < 1:
            raise ValueError("bag size k must be at least 1")
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset contains NaN or Inf features")
        counts = np.asarray(counts)
        if counts.shape != (n,):
            raise ValueError(f"counts must have shape ({n},), got {counts.shape}")
        if counts.size and not np.all(counts == np.round(counts)):
            raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0) or np.any(counts > k):
            raise ValueError(f"counts must lie in [0, {k}]")
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (n, k) or not np.isin(labels, (0, 1)).all():
                raise ValueError(f"labels must be a 0/1 array of shape ({n}, {k})")
            labels = labels.astype(np.int64)
            if not np.array_equal(labels.sum(axis=1), counts):
                raise ValueError("counts disagree with the per-bag sum of labels")
            labels = _readonly(labels)
        self.X = _readonly(X)
        self.counts = _readonly(counts)
        self.labels = labels

    @classmethod
    def from_bags(cls, bags: Sequence[Bag]) -> "BagDataset":
        if not bags:
            raise ValueError("at least one bag is required")
        ks = {b.k for b in bags}
        dims = {b.feature_dim for b in bags}
        if len(ks) > 1:
            raise ValueError(f"bags have heterogeneous sizes {sorted(ks)}")
        if len(dims) > 1:
            raise ValueError(f"bags have heterogeneous feature dims {sorted(dims)}")
        has = [b.labels is not None for b in bags]
        labels = np.stack([b.labels for b in bags]) if all(has) else None
        return cls(np.stack([b.instances for b in bags]), [b.label_count for b in bags], labels)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[2]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def alphas(self) -> np.ndarray:
        return self.counts / self.k

    @property
    def p_hat(self) -> float:
        """Empirical marginal label proportion, the mean of the bag proportions."""
        return float(self.counts.sum() / (self.n * self.k))

    @property
    def instances(self) -> np.ndarray:
        """All instances flattened to shape (n * k, d)."""
        return self.X.reshape(-1, self.feature_dim)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Bag]:
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            labels = None if self.labels is None else self.labels[idx]
            return Bag(self.X[idx], int(self.counts[idx]), labels)
        idx = np.arange(self.n)[idx]
        labels = None if self.labels is None else self.labels[idx]
        return BagDataset(self.X[idx], self.counts[idx], labels)

    def without_labels(self) -> "BagDataset":
        return BagDataset(self.X, self.counts)

    def __eq__(self, other):
        if not isinstance(other, BagDataset):
            return NotImplemented
        if self.X.shape != other.X.shape:
            return False
        if not (np.array_equal(self.X, other.X) and np.array_equal(self.counts, other.counts)):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)

    def __repr__(self):
        return f"BagDataset(n={self.n}, k={self.k}, feature_dim={self.feature_dim}, labels={self.has_labels})"


class DiscreteDistribution:
    """Finite-support distribution over labelled instances.

    Probabilities may be passed as :class:`fractions.Fraction` to keep an
    exact copy for the enumeration oracles; a float copy is always stored.
    """

    def __init__(self, points, labels, probs):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        labels = np.asarray(labels)
        if points.shape[0] == 0:
            raise ValueError("distribution support is empty")
        if labels.shape != (points.shape[0],) or not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be a 0/1 vector aligned with the support")
        if not np.all(np.isfinite(points)):
            raise ValueError("support contains NaN or Inf features")
        exact = None
        if all(isinstance(q, (Fraction, int)) for q in probs):
            exact = tuple(Fraction(q) for q in probs)
        probs_f = np.asarray([float(q) for q in probs] if exact else probs, dtype=np.float64)
        if probs_f.shape != labels.shape:
            raise ValueError("probs must align with the support")
        if np.any(probs_f < 0):
            raise ValueError("probabilities must be nonnegative")
        if exact is not None and sum(exact) != 1:
            raise ValueError(f"probabilities sum to {sum(exact)}, not 1")
        if abs(probs_f.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs_f.sum()!r}, not 1")
        self.points = _readonly(points)
        self.labels = _readonly(labels.astype(np.int64))
        self.probs = _readonly(probs_f)
        self._exact = exact

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def probs_exact(self) -> tuple:
        """Exact rational probabilities (binary expansions of the floats if none were given)."""
        return self._exact if self._exact is not None else tuple(Fraction(float(q)) for q in self.probs)

    @property
    def p(self) -> float:
        """Marginal label proportion Pr[y = 1]."""
        return float(self.probs @ self.labels)

    def sample(self, size: int, rng: np.random.Generator):
        """Draw ``size`` i.i.d. labelled instances; returns ``(X, y)``."""
        # inverse-CDF draw; the cumulative table is built once per distribution
        idx = np.searchsorted(self._cdf, rng.random(size), side="right")
        np.minimum(idx, self.m - 1, out=idx)
        return self.points[idx], self.labels[idx]

    @cached_property
    def _cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        return cdf / cdf[-1]

    def __repr__(self):
        return f"DiscreteDistribution(m={self.m}, p={self.p:.6g})"


class HypothesisClass:
    """Common surface for finite classes of binary hypotheses.

    Subclasses implement :meth:`predict_all`; ``predict`` and
    :meth:`hypothesis` come for free.
    """

    symmetric: bool = False
    vc_dim: Optional[int] = None

    @property
    def size(self) -> int:
        raise NotImplementedError

    @property
    def size_log2(self) -> float:
        return math.log2(self.size)

    def __len__(self) -> int:
        return self.size

    def predict_all(self, X) -> np.ndarray:
        """Predictions of every hypothesis, shape (size, N) with entries in {0, 1}."""
        raise NotImplementedError

    def predict(self, index: int, X) -> np.ndarray:
        return self.predict_all(X)[index]

    def hypothesis(self, index: int) -> "FiniteHypothesis":
        if not 0 <= index < self.size:
            raise IndexError(f"hypothesis index {index} out of range for class of size {self.size}")
        return FiniteHypothesis(self, int(index))


class FiniteClass(HypothesisClass):
    """Explicit table of binary hypotheses over a finite instance space.

    Instances are encoded as their index into ``instance_space`` (a single
    feature), so hypotheses only need the identity of each point.

    Parameters
    ----------
    table : array-like of shape (n_hypotheses, m)
        Row ``h`` holds the labels hypothesis ``h`` assigns to the ``m`` points.
    instance_space : array-like of shape (m, d), optional
        Descriptive features for the points; defaults to ``arange(m)``.
    symmetric : bool
        Assert the class is closed under complement. Checked on construction.
    vc_dim : int, optional
        Known VC dimension, kept as metadata.
    names : sequence of str, optional
    """

    def __init__(self, table, instance_space=None, symmetric=False, vc_dim=None, names=None):
        table = np.asarray(table)
        if table.ndim != 2 or table.shape[0] == 0:
            raise ValueError("table must be a nonempty 2-D 0/1 array")
        if not np.isin(table, (0, 1)).all():
            raise ValueError("table entries must be 0 or 1")
        table = table.astype(np.int8)
        rows = {r.tobytes() for r in table}
        if len(rows) != table.shape[0]:
            raise ValueError("table contains duplicate hypotheses")
        if symmetric and any((1 - r).astype(np.int8).tobytes() not in rows for r in table):
            raise ValueError("class flagged symmetric but is not closed under complement")
        m = table.shape[1]
        if instance_space is None:
            instance_space = np.arange(m, dtype=np.float64)[:, None]
        instance_space = np.asarray(instance_space, dtype=np.float64)
        if instance_space.ndim == 1:
            instance_space = instance_space[:, None]
        if instance_space.shape[0] != m:
            raise ValueError("instance_space length must match the table width")
        if names is not None and len(names) != table.shape[0]:
            raise ValueError("one name per hypothesis is required")
        self.table = _readonly(table)
        self.instance_space = _readonly(instance_space)
        self.symmetric = bool(symmetric)
        self.vc_dim = vc_dim
        self.names = None if names is None else tuple(names)

    @property
    def size(self) -> int:
        return self.table.shape[0]

    @property
    def m(self) -> int:
        return self.table.shape[1]

    def _index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError("finite-class instances are encoded as a single index feature")
            X = X[:, 0]
        idx = np.rint(X).astype(np.int64)
        if np.any(idx != X) or np.any(idx < 0) or np.any(idx >= self.m):
            raise ValueError(f"instance indices must be integers in [0, {self.m})")
        return idx

    def predict_all(self, X) -> np.ndarray:
        return self.table[:, self._index(X)]

    def predict(self, index: int, X) -> np.ndarray:
        return self.table[index, self._index(X)]

    def __repr__(self):
        return f"FiniteClass(size={self.size}, m={self.m}, symmetric={self.symmetric})"


@dataclass(frozen=True)
class FiniteHypothesis:
    """A single member of a hypothesis class, usable as a predictor."""

    cls: HypothesisClass = field(repr=False)
    index: int

    is_binary = True

    def __call__(self, X) -> np.ndarray:
        return np.asarray(self.cls.predict(self.index, X), dtype=np.int64)


def make_bags(instances, labels, k: int, seed: Optional[int] = 0) -> BagDataset:
    """Shuffle labelled instances with ``seed`` and chunk them into bags of ``k``.

    ``seed=None`` keeps the input order.
    """
    X = np.asarray(instances, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be at least 1")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"got {X.shape[0]} instances but {y.shape[0]} labels")
    if X.shape[0] == 0 or X.shape[0] % k:
        raise ValueError(f"number of instances ({X.shape[0]}) is not a positive multiple of k={k}")
    if seed is not None:
        perm = np.random.default_rng(seed).permutation(X.shape[0])
        X, y = X[perm], y[perm]
    n = X.shape[0] // k
    y = y.reshape(n, k)
    return BagDataset(X.reshape(n, k, -1), y.sum(axis=1), y)


def sample_dataset(dist: DiscreteDistribution, n: int, k: int, seed) -> BagDataset:
    """Draw ``n`` bags of ``k`` i.i.d. instances from ``dist``."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X, y = dist.sample(n * k, rng)
    return make_bags(X, y, k, seed=None)


def load_csv(path, label_column: str, k: int, seed: Optional[int] = 0) -> BagDataset:
    """Read a headed CSV of numeric features plus one binary label column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BagFormatError("CSV is empty", 1) from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise BagFormatError(f"label column {label_column!r} not found in header {header}", 1)
        li = header.index(label_column)
        feats, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise BagFormatError(f"expected {len(header)} cells, got {len(row)}", lineno)
            values = []
            for name, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise BagFormatError(f"non-numeric cell {cell!r} in column {name!r}", lineno) from None
            label = values.pop(li)
            if label not in (0.0, 1.0):
                raise BagFormatError(f"label {label!r} in column {label_column!r} is not 0 or 1", lineno)
            if not all(math.isfinite(v) for v in values):
                raise BagFormatError("non-finite feature value", lineno)
            feats.append(values)
            ys.append(int(label))
    if not feats:
        raise BagFormatError("CSV has no data rows")
    if len(feats) % k:
        raise BagFormatError(f"{len(feats)} rows is not divisible by k={k}")
    return make_bags(np.array(feats).reshape(len(feats), -1), np.array(ys), k, seed)


def _bag_record(X, count, labels) -> str:
    rec = {"k": int(X.shape[0]), "alpha_count": int(count), "instances": X.tolist()}
    if labels is not None:
        rec["labels"] = [int(v) for v in labels]
    return json.dumps(rec, separators=(",", ":"))


def save_bags(dataset: BagDataset, path, include_labels: bool = True) -> None:
    """Write one JSON object per bag."""
    labels = dataset.labels if include_labels else None
    with Path(path).open("w") as fh:
        for i in range(dataset.n):
            fh.write(_bag_record(dataset.X[i], dataset.counts[i], None if labels is None else labels[i]))
            fh.write("\n")


def load_bags(path) -> BagDataset:
    """Read a JSON-Lines bag file written by :func:`save_bags`."""
    X, counts, labels = [], [], []
    k = dim = None
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BagFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict) or not {"k", "alpha_count", "instances"} <= rec.keys():
                raise BagFormatError("record needs keys 'k', 'alpha_count', 'instances'", lineno)
            bk, count = rec["k"], rec["alpha_count"]
            if not isinstance(bk, int) or bk < 1:
                raise BagFormatError(f"k must be a positive integer, got {bk!r}", lineno)
            if k is None:
                k = bk
            elif bk != k:
                raise BagFormatError(f"bag size {bk} differs from earlier bags (k={k})", lineno)
            if not isinstance(count, int) or not 0 <= count <= k:
                raise BagFormatError(f"alpha_count {count!r} outside [0, {k}]", lineno)
            try:
                inst = np.array(rec["instances"], dtype=np.float64)
            except (TypeError, ValueError):
                raise BagFormatError("instances must be a list of numeric vectors", lineno) from None
            if inst.ndim != 2 or inst.shape[0] != k:
                raise BagFormatError(f"expected {k} instance vectors", lineno)
            if dim is None:
                dim = inst.shape[1]
            elif inst.shape[1] != dim:
                raise BagFormatError(f"feature dimension {inst.shape[1]} differs from earlier bags ({dim})", lineno)
            lab = rec.get("labels")
            if lab is not None:
                if not isinstance(lab, list) or len(lab) != k or any(v not in (0, 1) for v in lab):
                    raise BagFormatError("labels must be a list of k values in {0, 1}", lineno)
                if sum(lab) != count:
                    raise BagFormatError("labels do not sum to alpha_count", lineno)
            X.append(inst)
            counts.append(count)
            labels.append(lab)
    if not X:
        raise BagFormatError("bag file is empty")
    has = [lab is not None for lab in labels]
    if any(has) and not all(has):
        raise BagFormatError("labels must be present on every line or on none")
    return BagDataset(np.stack(X), counts, np.array(labels) if all(has) else None)
