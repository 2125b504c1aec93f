"""Shared fixtures over cached training runs.

Heavy artifacts (game checkpoints, robustness tables, attack outcomes)
live under .cache/ at the repository root. A cold cache trains them on
first use, which takes hours at the default presets; warm reruns load in
seconds. Derived numbers are JSON-cached next to the runs, keyed by the
training config hash, so a config change invalidates them automatically.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from emlang.analysis.suites import cached_train, config_hash, robustness_table
from emlang.corpus import load_digits_dataset
from emlang.game import TrainConfig, load_checkpoint, train

CACHE = Path(__file__).resolve().parent.parent / ".cache"


def desk_config(seed: int) -> TrainConfig:
    return TrainConfig(scale="desk", seed=seed).resolved()


@pytest.fixture(scope="session")
def digits_train():
    return load_digits_dataset("train")


@pytest.fixture(scope="session")
def digits_test():
    return load_digits_dataset("test")


def _timed_cached_train(config, data, name):
    """cached_train plus a wall-clock marker for runtime criteria.

    Returns (checkpoint, seconds); seconds is None when the run was
    reused from cache and no marker was recorded at training time.
    """
    config = config.resolved()
    run_dir = CACHE / name
    marker = run_dir / "elapsed.json"
    ckpt_dir = run_dir / "checkpoint"
    if ckpt_dir.exists():
        try:
            ck = load_checkpoint(ckpt_dir)
        except Exception:
            ck = None
        if ck is not None and ck.config == config and ck.epoch == config.epochs:
            seconds = None
            if marker.exists():
                seconds = json.loads(marker.read_text())["seconds"]
            return ck, seconds
    t0 = time.monotonic()
    ck = train(config, data, sink=run_dir)
    seconds = time.monotonic() - t0
    marker.write_text(json.dumps({
        "seconds": seconds,
        "steps": config.epochs * config.batches_per_epoch,
    }))
    return ck, seconds


@pytest.fixture(scope="session")
def desk_runs(digits_train):
    """Seed -> finished desk-preset checkpoint (trains on cache miss)."""
    runs = {}

    def get(seed: int):
        if seed not in runs:
            ck, _ = _timed_cached_train(
                desk_config(seed), digits_train, f"desk_s{seed}")
            runs[seed] = ck
        return runs[seed]

    return get


@pytest.fixture(scope="session")
def desk_ckpt(desk_runs):
    return desk_runs(0)


@pytest.fixture(scope="session")
def paper_run(digits_train):
    """(checkpoint, wall seconds or None) for the full-scale preset."""
    return _timed_cached_train(
        TrainConfig(scale="paper", seed=0), digits_train, "paper_s0")


@pytest.fixture(scope="session")
def robustness_rows(digits_train, digits_test):
    """Seed -> list of {fraction, perturbation, representation, accuracy}.

    Reads the table written by a previous robustness run when present;
    otherwise computes it (the underlying game run is itself cached).
    """

    def get(seed: int):
        base = TrainConfig(scale="desk")
        path = CACHE / "reports" / f"robustness_{config_hash(base)}_s{seed}.csv"
        if not path.exists():
            robustness_table(
                digits_train, digits_test, base, fractions=(0.10,),
                seed=seed, cache_dir=CACHE, out_dir=CACHE / "reports")
        rows = []
        for line in path.read_text().splitlines()[1:]:
            fraction, pert, rep, acc = line.split(",")
            rows.append({
                "fraction": float(fraction), "perturbation": pert,
                "representation": rep, "accuracy": float(acc),
            })
        return rows

    return get


@pytest.fixture(scope="session")
def transfer_report(digits_train, digits_test):
    base = TrainConfig(scale="desk")
    path = CACHE / f"transfer_report_s0_{config_hash(base)}.json"
    if path.exists():
        return json.loads(path.read_text())
    from emlang.analysis.suites import transfer_suite

    rep = transfer_suite(
        digits_train, digits_test, base, seed=0, cache_dir=CACHE)
    out = {
        "language_known": rep.language_known,
        "language_new": rep.language_new,
        "feature_known": rep.feature_known,
        "feature_new": rep.feature_new,
        "backbones_frozen": rep.backbones_frozen,
    }
    path.write_text(json.dumps(out))
    return out


def derived_cache(name: str, config: TrainConfig, compute):
    """JSON memo for numbers derived from a finished run of `config`."""
    path = CACHE / f"{name}_{config_hash(config)}.json"
    if path.exists():
        return json.loads(path.read_text())
    value = compute()
    path.write_text(json.dumps(value))
    return value
