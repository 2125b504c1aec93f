"""Evaluation battery: accuracy, probes, patterns, noise, attacks, transfer."""

from .attack import (
    AttackResult,
    attack_accuracy,
    feature_scorer,
    language_scorer,
    zoo_attack,
)
from .classifiers import (
    DegenerateTaskError,
    FeatureBaseline,
    MessageProbe,
    TransferReport,
    feature_accuracy,
    feature_predict,
    fit_linear_head,
    guess_accuracy,
    probe_accuracy,
    probe_predict,
    speak_corpus,
    train_feature_baseline,
    train_probe,
    transfer_eval,
)
from .patterns import (
    CorrespondenceStat,
    PatternRule,
    UndefinedRateError,
    correspondence_rate,
    mine_patterns,
)
from .perturb import (
    gaussian_kernel,
    perturb_dataset,
    perturb_gaussian,
    perturb_salt_pepper,
)
from .suites import (
    RobustnessCell,
    cached_train,
    config_hash,
    robustness_table,
    stratified_fraction,
    transfer_suite,
    write_robustness_reports,
)

__all__ = [
    "AttackResult", "CorrespondenceStat", "DegenerateTaskError",
    "FeatureBaseline", "MessageProbe", "PatternRule", "RobustnessCell",
    "TransferReport", "UndefinedRateError", "attack_accuracy", "cached_train",
    "config_hash", "correspondence_rate", "feature_accuracy", "feature_predict",
    "feature_scorer", "fit_linear_head", "gaussian_kernel", "guess_accuracy",
    "language_scorer", "mine_patterns", "perturb_dataset", "perturb_gaussian",
    "perturb_salt_pepper", "probe_accuracy", "probe_predict", "robustness_table",
    "speak_corpus", "stratified_fraction", "train_feature_baseline",
    "train_probe", "transfer_eval", "transfer_suite", "write_robustness_reports",
    "zoo_attack",
]
