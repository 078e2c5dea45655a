"""Learning from label proportions: loss estimators, exact oracles and learners."""

from .core import (
    Bag,
    BagDataset,
    BagFormatError,
    DiscreteDistribution,
    FiniteClass,
    FiniteHypothesis,
    load_bags,
    load_csv,
    make_bags,
    sample_dataset,
    save_bags,
)
from .exact import FiniteClassLLP, MinimizationResult, exact_expected_bag_loss, exact_risk, minimize
from .gradient import LLPClassifier, ParametricModel, TrainConfig, train
from .losses import LossRule, dsq_empirical_risk, empirical_risk, ez_empirical_risk, ez_offset, zero_one_risk

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "BagDataset",
    "BagFormatError",
    "DiscreteDistribution",
    "FiniteClass",
    "FiniteClassLLP",
    "FiniteHypothesis",
    "LLPClassifier",
    "LossRule",
    "MinimizationResult",
    "ParametricModel",
    "TrainConfig",
    "dsq_empirical_risk",
    "empirical_risk",
    "exact_expected_bag_loss",
    "exact_risk",
    "ez_empirical_risk",
    "ez_offset",
    "load_bags",
    "load_csv",
    "make_bags",
    "minimize",
    "sample_dataset",
    "save_bags",
    "train",
    "zero_one_risk",
]
