"""Score estimation from repeated stochastic judgments.

A model queried at high temperature gives a different five-point answer on
each draw; the score of an example is the expectation of the numeric scale
value under that answer distribution, estimated by the sample mean of K
draws. The population standard deviation of the draws is surfaced as a
confidence proxy and never asserted against.

``bootstrap_k_curve`` studies how a metric moves as K grows, by resampling
k of the collected draws per example (with replacement) and scoring the
resampled means against gold.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import LIKERT_TO_NUMERIC, LikertLabel, likert_to_numeric
from .metrics import mae, pearson

SCALE_VALUES = frozenset(LIKERT_TO_NUMERIC.values())


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreEstimate:
    example_id: str
    samples: tuple[float, ...]
    k_used: int
    mean: float
    std: float


def estimate(
    samples: Sequence[LikertLabel | float], example_id: str = ""
) -> ScoreEstimate:
    """Estimate one example's score from its sampled judgments.

    Accepts five-point labels or their numeric values; anything off the
    scale grid is rejected.
    """
    if not samples:
        raise ScoringError(f"no samples for example {example_id!r}")
    values = []
    for s in samples:
        if isinstance(s, LikertLabel):
            values.append(likert_to_numeric(s))
        elif float(s) in SCALE_VALUES:
            values.append(float(s))
        else:
            raise ScoringError(f"sample {s!r} is not on the five-point grid")
    arr = np.array(values)
    return ScoreEstimate(
        example_id=example_id,
        samples=tuple(values),
        k_used=len(values),
        mean=float(arr.mean()),
        std=float(arr.std()),
    )


@dataclass(frozen=True)
class KCurvePoint:
    k: int
    mean: float
    std: float


_METRICS = {"pearson": pearson, "mae": mae}


def bootstrap_k_curve(
    samples_per_example: Mapping[str, Sequence[float]],
    gold: Mapping[str, float],
    metric: str = "mae",
    k_max: int | None = None,
    resamples: int = 100,
    seed: int = 0,
) -> list[KCurvePoint]:
    """Metric value as a function of samples-per-example k = 1..k_max.

    For each k and each resample, k scores are drawn per example with
    replacement from that example's own samples, averaged, and the metric is
    computed against gold; the point carries mean and population std over
    resamples. ``resamples=0`` disables resampling: each point uses the
    first k recorded samples once, so the k_max point equals the plain
    full-sample metric.
    """
    if metric not in _METRICS:
        raise ScoringError(f"unknown metric {metric!r} (expected pearson or mae)")
    if not samples_per_example:
        raise ScoringError("no examples")
    missing_gold = sorted(set(samples_per_example) - set(gold))
    if missing_gold:
        raise ScoringError(f"no gold score for examples: {missing_gold[:5]}")
    counts = {ex_id: len(s) for ex_id, s in samples_per_example.items()}
    if k_max is None:
        k_max = min(counts.values())
    if k_max < 1:
        raise ScoringError("k_max must be at least 1")
    short = {ex_id: c for ex_id, c in counts.items() if c < k_max}
    if short:
        raise ScoringError(
            f"every example needs at least k_max={k_max} samples; short: {short}"
        )
    ids = sorted(samples_per_example)
    matrix = np.array([list(samples_per_example[i])[:k_max] for i in ids], dtype=float)
    gold_vec = [float(gold[i]) for i in ids]
    metric_fn = _METRICS[metric]
    rng = np.random.default_rng(seed)
    n = len(ids)
    points = []
    for k in range(1, k_max + 1):
        if resamples == 0:
            value = metric_fn(matrix[:, :k].mean(axis=1), gold_vec)
            points.append(KCurvePoint(k=k, mean=float(value), std=0.0))
            continue
        values = np.empty(resamples)
        for r in range(resamples):
            idx = rng.integers(0, k_max, size=(n, k))
            means = np.take_along_axis(matrix, idx, axis=1).mean(axis=1)
            values[r] = metric_fn(means, gold_vec)
        # identical resamples must report exactly zero spread, not summation noise
        std = 0.0 if np.all(values == values[0]) else float(values.std())
        points.append(KCurvePoint(k=k, mean=float(values.mean()), std=std))
    return points


def curve_to_csv(points: Sequence[KCurvePoint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mean", "std"])
        for p in points:
            writer.writerow([p.k, f"{p.mean:.10g}", f"{p.std:.10g}"])
