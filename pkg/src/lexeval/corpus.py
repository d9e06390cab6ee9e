"""Corpus loading and label algebra for word-complexity datasets.

Covers the tab-separated corpora for the binary task (is the target phrase
complex?) and the continuous task (difficulty in [0, 1]), the five-point
difficulty scale with its numeric mapping, and stratified few-shot
exemplar selection from a training partition.
"""
from __future__ import annotations

import csv
import random
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml

LANGUAGES = ("en", "de", "es")
DOMAINS = ("news", "wikinews", "wikipedia", "europarl", "bible", "biomed", "other")


class CorpusError(ValueError):
    """Malformed rows, bad column maps, or label-rule violations."""


class LikertLabel(Enum):
    VERY_EASY = "very easy"
    EASY = "easy"
    NEUTRAL = "neutral"
    DIFFICULT = "difficult"
    VERY_DIFFICULT = "very difficult"


# Canonical scale order, shared by binning, histograms, and data prep.
LIKERT_ORDER = (
    LikertLabel.VERY_EASY,
    LikertLabel.EASY,
    LikertLabel.NEUTRAL,
    LikertLabel.DIFFICULT,
    LikertLabel.VERY_DIFFICULT,
)

LIKERT_TO_NUMERIC = {
    LikertLabel.VERY_EASY: 0.0,
    LikertLabel.EASY: 0.25,
    LikertLabel.NEUTRAL: 0.5,
    LikertLabel.DIFFICULT: 0.75,
    LikertLabel.VERY_DIFFICULT: 1.0,
}

NUMERIC_TO_LIKERT = {v: k for k, v in LIKERT_TO_NUMERIC.items()}


def likert_to_numeric(label: LikertLabel) -> float:
    return LIKERT_TO_NUMERIC[label]


def numeric_to_likert(value: float) -> LikertLabel:
    """Inverse of the scale mapping; only the five exact grid values map back."""
    label = NUMERIC_TO_LIKERT.get(float(value))
    if label is None:
        raise CorpusError(f"{value!r} is not one of the five scale values")
    return label


def discretize(probability: float) -> LikertLabel:
    """Bin a [0, 1] score into the five-point scale.

    Bins are half-open ([0, 0.2) -> very easy, ... [0.6, 0.8) -> difficult)
    except the top bin, which closes at 1.0.
    """
    p = float(probability)
    if not 0.0 <= p <= 1.0:
        raise CorpusError(f"probability {p!r} outside [0, 1]")
    if p < 0.2:
        return LikertLabel.VERY_EASY
    if p < 0.4:
        return LikertLabel.EASY
    if p < 0.6:
        return LikertLabel.NEUTRAL
    if p < 0.8:
        return LikertLabel.DIFFICULT
    return LikertLabel.VERY_DIFFICULT


@dataclass(frozen=True)
class Example:
    """One annotated target phrase in its sentence context.

    Multi-word targets are stored as-is; nothing downstream splits them.
    """

    id: str
    sentence: str
    target: str
    language: str
    domain: str = "other"
    target_span: tuple[int, int] | None = None
    gold_binary: bool | None = None
    gold_probability: float | None = None

    def __post_init__(self) -> None:
        if self.language not in LANGUAGES:
            raise CorpusError(f"unknown language {self.language!r} (example {self.id})")
        if self.domain not in DOMAINS:
            raise CorpusError(f"unknown domain {self.domain!r} (example {self.id})")
        if self.gold_probability is not None and not 0.0 <= self.gold_probability <= 1.0:
            raise CorpusError(
                f"gold probability {self.gold_probability!r} outside [0, 1] (example {self.id})"
            )
        if self.target_span is not None:
            start, end = self.target_span
            spanned = unicodedata.normalize("NFC", self.sentence[start:end])
            target = unicodedata.normalize("NFC", self.target)
            if spanned != target:
                raise CorpusError(
                    f"span [{start}:{end}] does not match target for example {self.id}: "
                    f"{spanned!r} != {target!r}"
                )


@dataclass
class DataSplit:
    name: str
    train: list[Example]
    validation: list[Example]
    test: list[Example]

    def summary(self) -> dict:
        return {
            "name": self.name,
            "train": len(self.train),
            "validation": len(self.validation),
            "test": len(self.test),
        }


@dataclass(frozen=True)
class ColumnMap:
    """Where each field lives in a TSV file.

    Values are header names (str) or 0-based indices (int). ``id`` may be
    omitted, in which case row-number ids are synthesized; explicit ids are
    validated unique. ``domain`` may name a column; otherwise the loader's
    ``domain`` argument applies to the whole file.
    """

    sentence: str | int
    target: str | int
    id: str | int | None = None
    start: str | int | None = None
    end: str | int | None = None
    binary: str | int | None = None
    probability: str | int | None = None
    domain: str | int | None = None
    has_header: bool = True


# Presets for the two public corpus layouts: the 2018 shared-task release
# (headerless, 11 columns, repeated HIT ids) and the 2021 single/multi-word
# release (5 named columns).
COLUMN_MAP_PRESETS = {
    "cwi2018": ColumnMap(
        sentence=1, start=2, end=3, target=4, binary=9, probability=10, has_header=False
    ),
    "complex": ColumnMap(
        id="id", domain="corpus", sentence="sentence", target="token",
        probability="complexity", has_header=True,
    ),
}


def load_column_map(path: str | Path) -> ColumnMap:
    """Read a column map from a YAML key-value file."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CorpusError(f"cannot read column map {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise CorpusError(f"column map file {path} must hold a key-value mapping")
    known = {f for f in ColumnMap.__dataclass_fields__}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise CorpusError(f"column map file {path} has unknown keys: {unknown}")
    if "sentence" not in raw or "target" not in raw:
        raise CorpusError(f"column map file {path} must name sentence and target columns")
    return ColumnMap(**raw)


def resolve_column_map(spec: str | Path | ColumnMap) -> ColumnMap:
    if isinstance(spec, ColumnMap):
        return spec
    if isinstance(spec, str) and spec in COLUMN_MAP_PRESETS:
        return COLUMN_MAP_PRESETS[spec]
    return load_column_map(spec)


class _RowReader:
    """Resolves ColumnMap fields against one TSV file."""

    def __init__(self, path: Path, column_map: ColumnMap):
        self.path = path
        self.column_map = column_map
        self.header: list[str] | None = None

    def rows(self):
        try:
            fh = open(self.path, encoding="utf-8", newline="")
        except OSError as exc:
            raise CorpusError(f"cannot read {self.path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
            for line_num, row in enumerate(reader, start=1):
                if line_num == 1 and self.column_map.has_header:
                    self.header = row
                    continue
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                yield line_num, row

    def index_of(self, key: str | int) -> int:
        if isinstance(key, int):
            return key
        if self.header is None:
            raise CorpusError(
                f"{self.path}: column {key!r} named by header but the file has no header row"
            )
        try:
            return self.header.index(key)
        except ValueError:
            raise CorpusError(f"{self.path}: no column named {key!r} in header") from None

    def cell(self, row: list[str], key: str | int, line_num: int) -> str:
        idx = self.index_of(key)
        if idx >= len(row):
            raise CorpusError(
                f"{self.path}: row {line_num} has {len(row)} columns, "
                f"column {key!r} (index {idx}) is missing"
            )
        return row[idx]


def _parse_binary(raw: str, path: Path, line_num: int) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true"):
        return True
    if value in ("0", "false"):
        return False
    raise CorpusError(f"{path}: row {line_num}: bad binary label {raw!r}")


def _parse_float(raw: str, name: str, path: Path, line_num: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise CorpusError(f"{path}: row {line_num}: bad {name} value {raw!r}") from None


def _parse_int(raw: str, name: str, path: Path, line_num: int) -> int:
    try:
        return int(raw)
    except ValueError:
        raise CorpusError(f"{path}: row {line_num}: bad {name} value {raw!r}") from None


def _check_unique_ids(examples: list[Example], path: Path, explicit: bool) -> None:
    if not explicit:
        return
    seen: dict[str, int] = {}
    for i, ex in enumerate(examples):
        if ex.id in seen:
            raise CorpusError(f"{path}: duplicate example id {ex.id!r}")
        seen[ex.id] = i


def load_cwi_tsv(
    path: str | Path,
    language: str,
    column_map: str | Path | ColumnMap = "cwi2018",
    domain: str = "other",
) -> list[Example]:
    """Load one partition of a binary complexity corpus.

    Every row must carry a binary label and an annotator probability; a row
    with probability 0 but a positive binary label is rejected.
    """
    path = Path(path)
    cmap = resolve_column_map(column_map)
    if cmap.binary is None or cmap.probability is None:
        raise CorpusError(
            f"{path}: column map for the binary task must name binary and probability columns"
        )
    reader = _RowReader(path, cmap)
    examples: list[Example] = []
    for line_num, row in reader.rows():
        ex_id = (
            reader.cell(row, cmap.id, line_num).strip()
            if cmap.id is not None
            else f"r{len(examples):06d}"
        )
        sentence = reader.cell(row, cmap.sentence, line_num)
        target = reader.cell(row, cmap.target, line_num)
        span = None
        if cmap.start is not None and cmap.end is not None:
            span = (
                _parse_int(reader.cell(row, cmap.start, line_num), "start offset", path, line_num),
                _parse_int(reader.cell(row, cmap.end, line_num), "end offset", path, line_num),
            )
        binary = _parse_binary(reader.cell(row, cmap.binary, line_num), path, line_num)
        probability = _parse_float(
            reader.cell(row, cmap.probability, line_num), "probability", path, line_num
        )
        row_domain = (
            reader.cell(row, cmap.domain, line_num).strip() if cmap.domain is not None else domain
        )
        example = Example(
            id=ex_id,
            sentence=sentence,
            target=target,
            language=language,
            domain=row_domain,
            target_span=span,
            gold_binary=binary,
            gold_probability=probability,
        )
        if probability == 0.0 and binary:
            raise CorpusError(
                f"{path}: example {ex_id} has probability 0 but a positive binary label"
            )
        examples.append(example)
    _check_unique_ids(examples, path, explicit=cmap.id is not None)
    return examples


def load_lcp_tsv(
    path: str | Path,
    track: str = "single",
    column_map: str | Path | ColumnMap = "complex",
) -> list[Example]:
    """Load one partition of a continuous complexity corpus.

    ``track`` labels the partition (single- or multi-word targets); targets
    are stored opaque either way. These corpora are English-only.
    """
    if track not in ("single", "multi"):
        raise CorpusError(f"unknown track {track!r} (expected single or multi)")
    path = Path(path)
    cmap = resolve_column_map(column_map)
    if cmap.probability is None:
        raise CorpusError(
            f"{path}: column map for the continuous task must name a probability column"
        )
    reader = _RowReader(path, cmap)
    examples: list[Example] = []
    for line_num, row in reader.rows():
        ex_id = (
            reader.cell(row, cmap.id, line_num).strip()
            if cmap.id is not None
            else f"r{len(examples):06d}"
        )
        complexity = _parse_float(
            reader.cell(row, cmap.probability, line_num), "complexity", path, line_num
        )
        if not 0.0 <= complexity <= 1.0:
            raise CorpusError(
                f"{path}: example {ex_id} has complexity {complexity!r} outside [0, 1]"
            )
        row_domain = (
            reader.cell(row, cmap.domain, line_num).strip() if cmap.domain is not None else "other"
        )
        examples.append(
            Example(
                id=ex_id,
                sentence=reader.cell(row, cmap.sentence, line_num),
                target=reader.cell(row, cmap.target, line_num),
                language="en",
                domain=row_domain,
                gold_probability=complexity,
            )
        )
    _check_unique_ids(examples, path, explicit=cmap.id is not None)
    return examples


def load_split(
    name: str,
    loader,
    train: str | Path | None = None,
    validation: str | Path | None = None,
    test: str | Path | None = None,
    **kwargs,
) -> DataSplit:
    """Assemble a DataSplit from per-partition files (one file = one partition)."""
    def load(p):
        return loader(p, **kwargs) if p is not None else []

    return DataSplit(name, load(train), load(validation), load(test))


def _positive_bins(train: list[Example]) -> dict[LikertLabel, list[Example]]:
    bins: dict[LikertLabel, list[Example]] = {label: [] for label in LIKERT_ORDER}
    for ex in train:
        if ex.gold_probability is not None and ex.gold_probability > 0.0:
            bins[discretize(ex.gold_probability)].append(ex)
    return bins


def select_fewshot_cwi(train: list[Example], seed: int = 0) -> list[Example]:
    """Pick 7 binary-task exemplars: two with annotator probability exactly 0,
    one from each five-point bin of the strictly positive probabilities.

    Stratification runs on the raw probability, not the binary label.
    """
    zero = [ex for ex in train if ex.gold_probability == 0.0]
    if len(zero) < 2:
        raise CorpusError(
            f"need 2 exemplars with probability 0, the training partition has {len(zero)}"
        )
    bins = _positive_bins(train)
    for label in LIKERT_ORDER:
        if not bins[label]:
            raise CorpusError(f"training partition has no positive example in the "
                              f"{label.value!r} bin")
    rng = random.Random(seed)
    picked = rng.sample(zero, 2)
    picked.extend(rng.choice(bins[label]) for label in LIKERT_ORDER)
    return picked


def select_fewshot_lcp(train: list[Example], seed: int = 0) -> list[Example]:
    """Pick 5 continuous-task exemplars, one per five-point bin."""
    bins: dict[LikertLabel, list[Example]] = {label: [] for label in LIKERT_ORDER}
    for ex in train:
        if ex.gold_probability is None:
            continue
        bins[discretize(ex.gold_probability)].append(ex)
    for label in LIKERT_ORDER:
        if not bins[label]:
            raise CorpusError(f"training partition has no example in the {label.value!r} bin")
    rng = random.Random(seed)
    return [rng.choice(bins[label]) for label in LIKERT_ORDER]
