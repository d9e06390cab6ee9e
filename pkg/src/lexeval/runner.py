"""Run orchestration: resolve one configuration into a fingerprinted run
directory, drive the batch dispatcher (or replay its journal offline), and
assemble the report artifacts.

A run directory contains:
  run.yaml      the fully resolved configuration (sorted keys)
  journal.jsonl the append-only transport log
  report.md     the rendered report
  metrics.csv   flat metric,value rows at full precision
  confusion.csv / histogram.csv  the task-specific matrix

Reports never include wall-clock data, so replaying a journal reproduces
them byte for byte.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .corpus import Example, likert_to_numeric, load_cwi_tsv, load_lcp_tsv
from .gateway import (
    ChatClient,
    GenerationParams,
    Journal,
    JournalRecord,
    ledger_from_journal,
    run_batch,
)
from .metrics import (
    ConfusionMatrix,
    EvaluationReport,
    binary_metrics,
    confusion_csv,
    distribution_histogram,
    hallucination_audit,
    hallucination_audit_per_run,
    histogram_csv,
    metrics_csv,
    regression_metrics,
    report_markdown,
)
from .parsing import ParsedJudgment, ParseStatus, extract
from .promptkit import PromptConfig, assemble, load_exemplar_catalog
from .scoring import estimate

TASKS = ("cwi", "lcp")
K_DEFAULTS = {"cwi": 1, "lcp": 20}


class ConfigError(ValueError):
    """Unusable run configuration."""


@dataclass
class RunConfig:
    """Every knob of one evaluation run; the fingerprint hashes all of them.

    The sampling count ``k`` defaults per task: a single draw suffices for
    the binary task, the continuous task averages 20 high-temperature draws.
    """

    task: str
    data: str = ""
    endpoint: str = ""
    model: str = ""
    language: str = "en"
    regime: str = "zero_shot"
    cot: bool = True
    column_map: str = ""
    domain: str = "other"
    track: str = "single"
    k: int | None = None
    limit: int = 4
    seed: int = 0
    max_examples: int | None = None
    output_dir: str = "runs"
    temperature: float = 0.8
    top_p: float = 0.95
    top_k: int | None = 10
    repetition_penalty: float | None = 1.2
    max_tokens: int = 4096
    timeout: float = 120.0
    max_attempts: int = 5
    max_regens: int = 2
    bins: int = 5

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r} (expected one of {TASKS})")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.limit < 1:
            raise ConfigError("concurrency limit must be >= 1")
        if self.bins < 5:
            raise ConfigError("need at least 5 prediction bins")
        if not self.column_map:
            self.column_map = "cwi2018" if self.task == "cwi" else "complex"

    @property
    def resolved_k(self) -> int:
        return self.k if self.k is not None else K_DEFAULTS[self.task]

    def to_dict(self) -> dict:
        resolved = asdict(self)
        resolved["k"] = self.resolved_k
        return resolved

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "task" not in raw:
            raise ConfigError("config must name a task")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"{self.task}-{self.language}-{self.fingerprint()}"


def load_config_mapping(path: str | Path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw


def load_run_config(path: str | Path) -> RunConfig:
    return RunConfig.from_dict(load_config_mapping(path))


def load_examples(config: RunConfig) -> list[Example]:
    if not config.data:
        raise ConfigError("config must name a data file")
    if config.task == "cwi":
        examples = load_cwi_tsv(
            config.data, config.language, column_map=config.column_map, domain=config.domain
        )
    else:
        examples = load_lcp_tsv(config.data, track=config.track, column_map=config.column_map)
    if config.max_examples is not None:
        examples = examples[: config.max_examples]
    return examples


def build_prompt_config(config: RunConfig) -> PromptConfig:
    """Inference prompt settings for the run; the few-shot regime attaches
    the shipped curated exemplars for the run's template key."""
    exemplars = None
    if config.regime == "few_shot":
        exemplars = load_exemplar_catalog(
            config.task,
            language=config.language,
            domain=config.domain if config.task == "cwi" else None,
            track=config.track if config.task == "lcp" else None,
        )
    return PromptConfig(
        task=config.task,
        language=config.language,
        regime=config.regime,
        cot=config.cot,
        phase="inference",
        exemplars=exemplars,
        shuffle_seed=config.seed,
    )


def generation_params(config: RunConfig) -> GenerationParams:
    return GenerationParams(
        model=config.model,
        temperature=config.temperature,
        top_p=config.top_p,
        top_k=config.top_k,
        repetition_penalty=config.repetition_penalty,
        max_tokens=config.max_tokens,
    )


def _judgments(
    records: list[JournalRecord], task: str
) -> tuple[dict[str, dict[int, ParsedJudgment]], int, int]:
    """Parse every transport-successful sample once.

    Returns (judgments by example id and sample index, transport-ok sample
    count, failed-extraction count).
    """
    done = Journal.completed(records)
    parsed: dict[str, dict[int, ParsedJudgment]] = {}
    failures = 0
    for (example_id, sample_index), record in done.items():
        judgment = extract(record.text or "", task)
        if judgment.parse_status is ParseStatus.FAILED:
            failures += 1
        parsed.setdefault(example_id, {})[sample_index] = judgment
    return parsed, len(done), failures


def _binary_family(
    examples: list[Example], parsed: dict[str, dict[int, ParsedJudgment]]
) -> tuple[dict, int, list[tuple[ParsedJudgment, Example]]]:
    """One judgment per example: the lowest-index sample that parsed."""
    preds: dict[str, bool] = {}
    audit_pairs: list[tuple[ParsedJudgment, Example]] = []
    for example in examples:
        for index in sorted(parsed.get(example.id, {})):
            judgment = parsed[example.id][index]
            if judgment.parse_status is not ParseStatus.FAILED:
                preds[example.id] = judgment.binary_label
                audit_pairs.append((judgment, example))
                break
    gold = {ex.id: ex.gold_binary for ex in examples if ex.id in preds}
    if preds:
        scores = binary_metrics(preds, gold)
        confusion = scores.confusion
        f1, accuracy = scores.f1, scores.accuracy
    else:
        confusion = ConfusionMatrix(tp=0, fp=0, tn=0, fn=0)
        f1 = accuracy = 0.0
    family = {"f1": 100.0 * f1, "accuracy": 100.0 * accuracy, "confusion": confusion}
    return family, len(preds), audit_pairs


def _continuous_family(
    examples: list[Example], parsed: dict[str, dict[int, ParsedJudgment]], bins: int
) -> tuple[dict, int, list[list[tuple[ParsedJudgment, Example]]]]:
    """Eq.-style estimates over every parse-successful sample per example;
    audit pairs grouped per sampling run (sample index)."""
    preds: dict[str, float] = {}
    runs: dict[int, list[tuple[ParsedJudgment, Example]]] = {}
    for example in examples:
        values = []
        for index in sorted(parsed.get(example.id, {})):
            judgment = parsed[example.id][index]
            if judgment.parse_status is ParseStatus.FAILED:
                continue
            values.append(judgment.likert_label)
            runs.setdefault(index, []).append((judgment, example))
        if values:
            preds[example.id] = estimate(values, example.id).mean
    gold = {ex.id: ex.gold_probability for ex in examples if ex.id in preds}
    if len(preds) >= 2:
        scores = regression_metrics(preds, gold)
        pearson, mae_value = scores.pearson, scores.mae
        reason = scores.pearson_undefined
    elif len(preds) == 1:
        (only,) = preds
        pearson, mae_value = None, abs(preds[only] - gold[only])
        reason = "fewer than 2 scored examples"
    else:
        pearson, mae_value, reason = None, None, "no scored examples"
    family = {
        "pearson": pearson,
        "mae": mae_value,
        "pearson_undefined": reason,
        "histogram": distribution_histogram(preds, gold, bins=bins),
    }
    run_pairs = [runs[index] for index in sorted(runs) if runs[index]]
    return family, len(preds), run_pairs


def likert_samples(
    config: RunConfig, examples: list[Example], records: list[JournalRecord]
) -> tuple[dict[str, list[float]], dict[str, float]]:
    """Numeric five-point draws per example (journal order) and the gold
    scores restricted to examples that produced at least one parsed sample.
    Feedstock for the sample-count bootstrap."""
    if config.task != "lcp":
        raise ConfigError("sample curves need five-point sampled runs (continuous task)")
    parsed, _, _ = _judgments(records, config.task)
    samples: dict[str, list[float]] = {}
    for example in examples:
        values = [
            likert_to_numeric(parsed[example.id][index].likert_label)
            for index in sorted(parsed.get(example.id, {}))
            if parsed[example.id][index].parse_status is not ParseStatus.FAILED
        ]
        if values:
            samples[example.id] = values
    gold = {ex.id: ex.gold_probability for ex in examples if ex.id in samples}
    return samples, gold


def build_report(
    config: RunConfig, examples: list[Example], records: list[JournalRecord]
) -> EvaluationReport:
    """Aggregate a journal against its gold examples into one report."""
    parsed, transport_ok, parse_failures = _judgments(records, config.task)
    expected = len(examples) * config.resolved_k
    fields_common = dict(
        fingerprint=config.fingerprint(),
        task=config.task,
        language=config.language,
        model=config.model,
        regime=config.regime,
        cot=config.cot,
        k=config.resolved_k,
        examples_loaded=len(examples),
        transport_errors=expected - transport_ok,
        parse_failure_rate=100.0 * parse_failures / transport_ok if transport_ok else 0.0,
        cost=ledger_from_journal(records).summary(),
    )
    if config.task == "cwi":
        family, scored, audit_pairs = _binary_family(examples, parsed)
        audit = hallucination_audit(audit_pairs)
        return EvaluationReport(
            examples_scored=scored, audit=audit, **family, **fields_common
        )
    family, scored, run_pairs = _continuous_family(examples, parsed, config.bins)
    aggregate = hallucination_audit_per_run(run_pairs)
    return EvaluationReport(
        examples_scored=scored, audit_per_run=aggregate, **family, **fields_common
    )


def write_artifacts(report: EvaluationReport, run_dir: str | Path) -> list[Path]:
    """Write report.md, metrics.csv, and the task matrix CSV; returns the
    written paths."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    written = []
    def emit(name: str, text: str) -> None:
        path = run_dir / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    emit("report.md", report_markdown(report))
    emit("metrics.csv", metrics_csv(report))
    if report.confusion is not None:
        emit("confusion.csv", confusion_csv(report.confusion))
    else:
        emit("histogram.csv", histogram_csv(report.histogram))
    return written


def write_run_config(config: RunConfig, run_dir: str | Path) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "run.yaml"
    path.write_text(
        yaml.safe_dump(config.to_dict(), sort_keys=True, allow_unicode=True),
        encoding="utf-8",
    )
    return path


def run_evaluation(
    config: RunConfig,
    replay: bool = False,
    run_dir: str | Path | None = None,
    client: ChatClient | None = None,
) -> tuple[EvaluationReport, Path]:
    """Execute (or replay) one run end to end and write its artifacts.

    With ``replay`` set, no client is constructed and no request is sent;
    the journal already in the run directory is the sole input, so the
    rerendered report is byte-identical to the original.
    """
    out = Path(run_dir) if run_dir is not None else config.run_dir()
    journal_path = out / "journal.jsonl"
    examples = load_examples(config)
    prompt_config = build_prompt_config(config)
    write_run_config(config, out)
    if replay:
        records = Journal.load(journal_path)
        if not records:
            raise ConfigError(f"{journal_path}: nothing to replay")
    else:
        jobs = [(example.id, assemble(prompt_config, example)) for example in examples]
        if client is None:
            client = ChatClient(
                config.endpoint, timeout=config.timeout, max_attempts=config.max_attempts
            )
        def parse_ok(text: str) -> bool:
            return extract(text, config.task).parse_status is not ParseStatus.FAILED

        records = run_batch(
            jobs,
            generation_params(config),
            client,
            journal_path,
            limit=config.limit,
            samples_per_example=config.resolved_k,
            validate=parse_ok,
            max_regens=config.max_regens,
        )
    report = build_report(config, examples, records)
    write_artifacts(report, out)
    return report, out
