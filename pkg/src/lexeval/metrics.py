"""Evaluation statistics: classification and regression scores, the
prediction-distribution histogram, and the echo-fidelity audit.

All score functions return fractions in [0, 1] (or raw correlation);
percentage formatting belongs to the report layer. The positive class of
the binary task is "complex".
"""
from __future__ import annotations

import math
import re
import unicodedata
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import LIKERT_ORDER, Example, discretize
from .parsing import ParsedJudgment


class MetricError(ValueError):
    """Mismatched id sets or unusable inputs."""


class MetricUndefinedError(MetricError):
    """The statistic does not exist for this input (e.g. constant vector)."""


def _check_same_ids(preds: Mapping, gold: Mapping) -> None:
    missing = sorted(set(gold) - set(preds))
    extra = sorted(set(preds) - set(gold))
    if missing or extra:
        raise MetricError(
            f"prediction/gold id mismatch: missing={missing[:5]} extra={extra[:5]} "
            f"(counts {len(missing)}/{len(extra)})"
        )


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def f1(self) -> float:
        """Harmonic mean of precision and recall for the positive (complex)
        class; defined as 0 when precision + recall is 0."""
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


@dataclass(frozen=True)
class BinaryMetrics:
    f1: float
    accuracy: float
    confusion: ConfusionMatrix


def binary_metrics(preds: Mapping[str, bool], gold: Mapping[str, bool]) -> BinaryMetrics:
    if not preds:
        raise MetricError("no predictions to score")
    _check_same_ids(preds, gold)
    tp = fp = tn = fn = 0
    for ex_id, g in gold.items():
        p = preds[ex_id]
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    cm = ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)
    return BinaryMetrics(f1=cm.f1, accuracy=cm.accuracy, confusion=cm)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation; raises MetricUndefinedError on a constant vector."""
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise MetricError("inputs must be equal-length 1-d vectors")
    if xs.size < 2:
        raise MetricError("correlation needs at least 2 points")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise MetricUndefinedError("correlation undefined: constant input vector")
    return float(xc @ yc) / denom


def mae(x: Sequence[float], y: Sequence[float]) -> float:
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size == 0:
        raise MetricError("inputs must be equal-length non-empty 1-d vectors")
    return float(np.mean(np.abs(xs - ys)))


@dataclass(frozen=True)
class RegressionMetrics:
    pearson: float | None
    mae: float
    pearson_undefined: str | None = None


def regression_metrics(
    preds: Mapping[str, float], gold: Mapping[str, float]
) -> RegressionMetrics:
    """Correlation and mean absolute error over matched ids. A constant
    vector leaves the correlation undefined (with the reason recorded); the
    error is still returned."""
    if len(preds) < 2:
        raise MetricError("need at least 2 points")
    _check_same_ids(preds, gold)
    ids = sorted(preds)
    p = [preds[i] for i in ids]
    g = [gold[i] for i in ids]
    try:
        r: float | None = pearson(p, g)
        reason = None
    except MetricUndefinedError as exc:
        r = None
        reason = str(exc)
    return RegressionMetrics(pearson=r, mae=mae(p, g), pearson_undefined=reason)


@dataclass(frozen=True)
class DistributionHistogram:
    """Counts of predicted scores per gold five-point row.

    ``counts[row][bin]`` follows the canonical scale order; ``bands[row]``
    is the inclusive (first, last) range of prediction bins overlapping the
    gold row's own interval, i.e. where a correct prediction lands.
    """

    bins: int
    counts: tuple[tuple[int, ...], ...]
    bands: tuple[tuple[int, int], ...]

    @property
    def row_labels(self) -> tuple[str, ...]:
        return tuple(label.value for label in LIKERT_ORDER)


def _gold_interval(row: int) -> tuple[float, float]:
    # division, not 0.2 multiples, so edges compare exactly against j/bins
    return row / 5, (row + 1) / 5


def distribution_histogram(
    preds: Mapping[str, float], gold: Mapping[str, float], bins: int = 20
) -> DistributionHistogram:
    if bins < 5:
        raise MetricError(f"need at least 5 prediction bins, got {bins}")
    _check_same_ids(preds, gold)
    counts = [[0] * bins for _ in range(5)]
    for ex_id, g in gold.items():
        if not 0.0 <= g <= 1.0:
            raise MetricError(f"gold score for {ex_id} outside [0, 1]: {g!r}")
        p = preds[ex_id]
        if not 0.0 <= p <= 1.0:
            raise MetricError(f"prediction for {ex_id} outside [0, 1]: {p!r}")
        row = LIKERT_ORDER.index(discretize(g))
        col = min(int(p * bins), bins - 1)
        counts[row][col] += 1
    bands = []
    for row in range(5):
        lo, hi = _gold_interval(row)
        overlapping = [
            j for j in range(bins) if max(j / bins, lo) < min((j + 1) / bins, hi)
        ]
        bands.append((overlapping[0], overlapping[-1]))
    return DistributionHistogram(
        bins=bins,
        counts=tuple(tuple(r) for r in counts),
        bands=tuple(bands),
    )


_WHITESPACE = re.compile(r"\s+")


def normalize_echo(text: str) -> str:
    """Normalization under which an echoed field must match its source:
    Unicode NFC, trimmed, inner whitespace collapsed, case folded."""
    return _WHITESPACE.sub(" ", unicodedata.normalize("NFC", text).strip()).casefold()


@dataclass(frozen=True)
class AuditResult:
    """Echo-fidelity error rates as percentages over audited judgments."""

    sentence_error_pct: float
    word_error_pct: float
    audited: int


@dataclass(frozen=True)
class AuditAggregate:
    """Per-run audit summary: mean and population spread across runs."""

    sentence_error_pct: float
    sentence_error_std: float
    word_error_pct: float
    word_error_std: float
    runs: int


def hallucination_audit(pairs: Sequence[tuple[ParsedJudgment, Example]]) -> AuditResult:
    """Count judgments whose echoed sentence or word does not reproduce the
    prompt under ``normalize_echo``. An absent echo is an error: silence is
    not fidelity.
    """
    if not pairs:
        return AuditResult(0.0, 0.0, 0)
    s_err = w_err = 0
    for judgment, example in pairs:
        if (
            judgment.echoed_sentence is None
            or normalize_echo(judgment.echoed_sentence) != normalize_echo(example.sentence)
        ):
            s_err += 1
        if (
            judgment.echoed_word is None
            or normalize_echo(judgment.echoed_word) != normalize_echo(example.target)
        ):
            w_err += 1
    n = len(pairs)
    return AuditResult(100.0 * s_err / n, 100.0 * w_err / n, n)


def hallucination_audit_per_run(
    runs: Sequence[Sequence[tuple[ParsedJudgment, Example]]],
) -> AuditAggregate:
    """Audit each sampling run separately and aggregate mean and population
    std of the error rates across runs (the multi-sample regime)."""
    if not runs:
        return AuditAggregate(0.0, 0.0, 0.0, 0.0, 0)
    results = [hallucination_audit(run) for run in runs]
    s = np.array([r.sentence_error_pct for r in results])
    w = np.array([r.word_error_pct for r in results])
    return AuditAggregate(
        sentence_error_pct=float(s.mean()),
        sentence_error_std=float(s.std()),
        word_error_pct=float(w.mean()),
        word_error_std=float(w.std()),
        runs=len(results),
    )


@dataclass(frozen=True)
class EvaluationReport:
    """Everything one run reports, with exactly one metric family populated:
    binary (confusion + F1/accuracy) or continuous (histogram + Pearson/MAE).

    Percentages are stored scaled (F1 80.0 means 80%); correlation and MAE
    stay raw. ``cost`` is the journal-derived token/cost summary.
    """

    fingerprint: str
    task: str
    language: str
    model: str
    regime: str
    cot: bool
    k: int
    examples_loaded: int
    examples_scored: int
    transport_errors: int
    parse_failure_rate: float
    f1: float | None = None
    accuracy: float | None = None
    confusion: ConfusionMatrix | None = None
    pearson: float | None = None
    mae: float | None = None
    pearson_undefined: str | None = None
    histogram: DistributionHistogram | None = None
    audit: AuditResult | None = None
    audit_per_run: AuditAggregate | None = None
    cost: Mapping[str, object] | None = None

    def __post_init__(self) -> None:
        binary = self.confusion is not None
        continuous = self.histogram is not None
        if binary == continuous:
            raise MetricError(
                "exactly one metric family (binary or continuous) must be populated"
            )
        if binary and (self.pearson is not None or self.mae is not None):
            raise MetricError("binary report must not carry continuous scores")
        if continuous and (self.f1 is not None or self.accuracy is not None):
            raise MetricError("continuous report must not carry binary scores")


def _fmt(value: float, places: int) -> str:
    return f"{value:.{places}f}"


def audit_markdown(report: EvaluationReport) -> list[str]:
    """The echo-audit section: error percentages per model, with the
    across-run spread when the run sampled more than once."""
    lines = ["## Echo audit", ""]
    agg = report.audit_per_run
    single = report.audit
    if agg is not None and agg.runs > 0:
        lines += [
            "| Model | S | W |",
            "| --- | --- | --- |",
            f"| {report.model} | {_fmt(agg.sentence_error_pct, 2)} ± "
            f"{_fmt(agg.sentence_error_std, 2)} | {_fmt(agg.word_error_pct, 2)} ± "
            f"{_fmt(agg.word_error_std, 2)} |",
            "",
            f"Audited {agg.runs} sampling run(s) separately; "
            "values are mean ± std across runs.",
        ]
    elif single is not None and single.audited > 0:
        lines += [
            "| Model | S | W |",
            "| --- | --- | --- |",
            f"| {report.model} | {_fmt(single.sentence_error_pct, 2)} | "
            f"{_fmt(single.word_error_pct, 2)} |",
            "",
            f"Audited {single.audited} parsed response(s).",
        ]
    else:
        lines.append("No parsed responses carried echo fields; not audited.")
    return lines


def report_markdown(report: EvaluationReport) -> str:
    """Render the run report as Markdown: a scores table, the confusion
    matrix or prediction-distribution table, the echo audit, parse-failure
    and cost summaries. Deterministic for a given report."""
    task_kind = "binary" if report.confusion is not None else "continuous"
    lines = [
        "# Evaluation report",
        "",
        f"- fingerprint: `{report.fingerprint}`",
        f"- task: {report.task} ({task_kind})",
        f"- language: {report.language}",
        f"- model: {report.model}",
        f"- regime: {report.regime}, cot: {str(report.cot).lower()}",
        f"- samples per example (K): {report.k}",
        f"- examples: {report.examples_loaded} loaded, {report.examples_scored} scored",
        "",
        "## Scores",
        "",
    ]
    if report.confusion is not None:
        lines += [
            "| Model | F1 | Acc. |",
            "| --- | --- | --- |",
            f"| {report.model} | {_fmt(report.f1, 2)} | {_fmt(report.accuracy, 2)} |",
            "",
            "## Confusion matrix",
            "",
            "| | pred. complex | pred. simple |",
            "| --- | --- | --- |",
            f"| gold complex | {report.confusion.tp} | {report.confusion.fn} |",
            f"| gold simple | {report.confusion.fp} | {report.confusion.tn} |",
        ]
    else:
        p_text = _fmt(report.pearson, 4) if report.pearson is not None else "undefined"
        mae_text = _fmt(report.mae, 4) if report.mae is not None else "n/a"
        lines += [
            "| Model | P | MAE |",
            "| --- | --- | --- |",
            f"| {report.model} | {p_text} | {mae_text} |",
        ]
        if report.pearson is None and report.pearson_undefined:
            lines += ["", f"Pearson undefined: {report.pearson_undefined}."]
        hist = report.histogram
        edges = [f"{j / hist.bins:.2f}-{(j + 1) / hist.bins:.2f}" for j in range(hist.bins)]
        lines += [
            "",
            "## Prediction distribution",
            "",
            "| gold \\ predicted mean | " + " | ".join(edges) + " |",
            "| --- |" + " --- |" * hist.bins,
        ]
        for row, label in enumerate(hist.row_labels):
            first, last = hist.bands[row]
            cells = [
                f"**{count}**" if first <= j <= last else str(count)
                for j, count in enumerate(hist.counts[row])
            ]
            lines.append(f"| {label} | " + " | ".join(cells) + " |")
        lines += ["", "Bold cells mark each row's correct prediction band."]
    lines += ["", *audit_markdown(report), "", "## Parse failures", ""]
    lines += [
        f"- parse_failure_rate: {_fmt(report.parse_failure_rate, 2)}% "
        "(failed extractions / transport-successful samples)",
        f"- transport errors (pairs with no successful response): {report.transport_errors}",
    ]
    cost = dict(report.cost or {})
    lines += [
        "",
        "## Cost",
        "",
        "| input tokens | output tokens | cost (USD) |",
        "| --- | --- | --- |",
        f"| {cost.get('input_tokens', 0)} | {cost.get('output_tokens', 0)} "
        f"| {cost.get('cost_usd', '0')} |",
        "",
    ]
    return "\n".join(lines)


def metrics_csv(report: EvaluationReport) -> str:
    """Flat metric,value rows at full precision (floats via %.10g)."""
    def num(value: float) -> str:
        return f"{value:.10g}"

    rows: list[tuple[str, str]] = [
        ("fingerprint", report.fingerprint),
        ("task", report.task),
        ("language", report.language),
        ("model", report.model),
        ("regime", report.regime),
        ("cot", str(report.cot).lower()),
        ("k", str(report.k)),
        ("examples_loaded", str(report.examples_loaded)),
        ("examples_scored", str(report.examples_scored)),
        ("transport_errors", str(report.transport_errors)),
        ("parse_failure_rate_pct", num(report.parse_failure_rate)),
    ]
    if report.confusion is not None:
        rows += [
            ("f1_pct", num(report.f1)),
            ("accuracy_pct", num(report.accuracy)),
            ("tp", str(report.confusion.tp)),
            ("fp", str(report.confusion.fp)),
            ("tn", str(report.confusion.tn)),
            ("fn", str(report.confusion.fn)),
        ]
    else:
        rows.append(("pearson", "" if report.pearson is None else num(report.pearson)))
        rows.append(("mae", "" if report.mae is None else num(report.mae)))
    if report.audit_per_run is not None and report.audit_per_run.runs > 0:
        agg = report.audit_per_run
        rows += [
            ("sentence_error_pct", num(agg.sentence_error_pct)),
            ("sentence_error_std", num(agg.sentence_error_std)),
            ("word_error_pct", num(agg.word_error_pct)),
            ("word_error_std", num(agg.word_error_std)),
            ("audited_runs", str(agg.runs)),
        ]
    elif report.audit is not None and report.audit.audited > 0:
        rows += [
            ("sentence_error_pct", num(report.audit.sentence_error_pct)),
            ("word_error_pct", num(report.audit.word_error_pct)),
            ("audited", str(report.audit.audited)),
        ]
    cost = dict(report.cost or {})
    rows += [
        ("input_tokens", str(cost.get("input_tokens", 0))),
        ("output_tokens", str(cost.get("output_tokens", 0))),
        ("cost_usd", str(cost.get("cost_usd", "0"))),
    ]
    return "\n".join(["metric,value"] + [f"{k},{v}" for k, v in rows]) + "\n"


def confusion_csv(matrix: ConfusionMatrix) -> str:
    return (
        ",pred_complex,pred_simple\n"
        f"gold_complex,{matrix.tp},{matrix.fn}\n"
        f"gold_simple,{matrix.fp},{matrix.tn}\n"
    )


def histogram_csv(hist: DistributionHistogram) -> str:
    edges = [f"{j / hist.bins:.2f}-{(j + 1) / hist.bins:.2f}" for j in range(hist.bins)]
    lines = ["gold_label," + ",".join(edges) + ",band_first,band_last"]
    for row, label in enumerate(hist.row_labels):
        first, last = hist.bands[row]
        counts = ",".join(str(c) for c in hist.counts[row])
        lines.append(f"{label},{counts},{first},{last}")
    return "\n".join(lines) + "\n"
