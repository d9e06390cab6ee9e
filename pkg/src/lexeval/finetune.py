"""Fine-tuning corpus construction.

Training examples tune better when the answer labels are balanced, so the
builder samples uniformly per label under a size cap and emits the common
chat-format JSONL (one {"messages": [...]} object per line). Binary-task
sets are half negatives (annotator probability exactly 0) and half
positives spread uniformly over the five-point bins of the positive
probabilities; continuous-task sets are uniform over the five labels.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import LIKERT_ORDER, CorpusError, Example, LikertLabel, discretize
from .promptkit import ChatTurn, PromptConfig, render_system_prompt, render_user_prompt


class FinetuneError(ValueError):
    pass


# Localized answer words for the binary task, per prompt language.
BINARY_ANSWERS = {
    "en": ("yes", "no"),
    "de": ("ja", "nein"),
    "es": ("sí", "no"),
}


@dataclass(frozen=True)
class FinetuneRecord:
    messages: tuple[ChatTurn, ...]

    def to_json(self) -> str:
        return json.dumps(
            {"messages": [{"role": t.role, "content": t.content} for t in self.messages]},
            ensure_ascii=False,
        )


def _record(config: PromptConfig, example: Example, answer: str) -> FinetuneRecord:
    return FinetuneRecord(
        messages=(
            ChatTurn("system", render_system_prompt(config)),
            ChatTurn("user", render_user_prompt(config, example)),
            ChatTurn("assistant", answer),
        )
    )


def _quotas(total: int, n_strata: int) -> list[int]:
    """Split ``total`` into n quotas differing by at most 1 (largest first)."""
    base, rest = divmod(total, n_strata)
    return [base + (1 if i < rest else 0) for i in range(n_strata)]


def _take(
    stratum_name: str, pool: list[Example], quota: int, rng: random.Random
) -> list[Example]:
    if not pool:
        raise FinetuneError(f"no training examples in the {stratum_name!r} stratum")
    if len(pool) < quota:
        raise FinetuneError(
            f"the {stratum_name!r} stratum has {len(pool)} examples, quota is {quota}"
        )
    return rng.sample(pool, quota)


def build_finetune_set(
    train: Sequence[Example],
    task: str,
    language: str,
    cap: int = 250,
    seed: int = 0,
) -> list[FinetuneRecord]:
    """Sample a balanced fine-tuning set of at most ``cap`` records.

    Every example needs a gold probability; the binary task additionally
    answers from the localized yes/no pair. Output order is a seeded
    shuffle, so a (train, task, language, cap, seed) tuple is reproducible
    byte for byte.
    """
    if task not in ("cwi", "lcp"):
        raise FinetuneError(f"unknown task {task!r}")
    if task == "lcp" and language != "en":
        raise FinetuneError("the continuous task is English-only")
    if task == "cwi" and language not in BINARY_ANSWERS:
        raise FinetuneError(f"no answer words for language {language!r}")
    missing = [ex.id for ex in train if ex.gold_probability is None]
    if missing:
        raise FinetuneError(f"examples without gold probability: {missing[:5]}")

    rng = random.Random(seed)
    config = PromptConfig(task=task, language=language, phase="finetune")
    chosen: list[tuple[Example, str]] = []

    if task == "lcp":
        if cap < len(LIKERT_ORDER):
            raise FinetuneError(f"cap {cap} is below the label count {len(LIKERT_ORDER)}")
        bins: dict[LikertLabel, list[Example]] = {label: [] for label in LIKERT_ORDER}
        for ex in train:
            bins[discretize(ex.gold_probability)].append(ex)
        for label, quota in zip(LIKERT_ORDER, _quotas(cap, len(LIKERT_ORDER))):
            for ex in _take(label.value, bins[label], quota, rng):
                chosen.append((ex, label.value))
    else:
        if cap < 2:
            raise FinetuneError(f"cap {cap} is below the label count 2")
        yes_word, no_word = BINARY_ANSWERS[language]
        negatives = [ex for ex in train if ex.gold_probability == 0.0]
        positive_bins: dict[LikertLabel, list[Example]] = {
            label: [] for label in LIKERT_ORDER
        }
        for ex in train:
            if ex.gold_probability > 0.0:
                positive_bins[discretize(ex.gold_probability)].append(ex)
        negative_quota = cap // 2
        for ex in _take("probability zero", negatives, negative_quota, rng):
            chosen.append((ex, no_word))
        positive_quotas = _quotas(cap - negative_quota, len(LIKERT_ORDER))
        for label, quota in zip(LIKERT_ORDER, positive_quotas):
            for ex in _take(f"positive {label.value}", positive_bins[label], quota, rng):
                chosen.append((ex, yes_word))

    rng.shuffle(chosen)
    return [_record(config, ex, answer) for ex, answer in chosen]


def emit_jsonl(records: Sequence[FinetuneRecord], path: str | Path) -> None:
    if not records:
        raise FinetuneError("refusing to write an empty fine-tuning file")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def parse_jsonl(path: str | Path) -> list[FinetuneRecord]:
    """Read a chat-format JSONL file back; inverse of ``emit_jsonl``."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_num, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                turns = tuple(ChatTurn(m["role"], m["content"]) for m in obj["messages"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FinetuneError(f"{path}: bad record on line {line_num}: {exc}") from exc
            records.append(FinetuneRecord(messages=turns))
    return records
