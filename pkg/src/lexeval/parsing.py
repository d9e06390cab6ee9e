"""Structured-judgment extraction from raw model output.

Models are asked for a JSON object but frequently wrap it in prose, use
single quotes, or leave trailing commas. ``extract`` pulls the first
balanced ``{...}`` block out of the text, tries a strict parse, then a
small set of repairs, and maps the answer vocabulary onto labels. It is
total: any hopeless input comes back as a failed judgment, never an
exception.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .corpus import LikertLabel


class ParseStatus(Enum):
    OK = "ok"
    RECOVERED = "recovered"
    FAILED = "failed"


class LabelError(ValueError):
    """Answer text outside the known label vocabulary."""


# Answer vocabulary observed across languages and finetuned answer styles.
_TRUE_WORDS = frozenset({"true", "yes", "complex", "ja", "sí", "si"})
_FALSE_WORDS = frozenset({"false", "no", "simple", "nein"})

_LIKERT_WORDS = {label.value: label for label in LikertLabel}

_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


@dataclass(frozen=True)
class ParsedJudgment:
    echoed_sentence: str | None = None
    echoed_word: str | None = None
    proof: str | None = None
    binary_label: bool | None = None
    likert_label: LikertLabel | None = None
    parse_status: ParseStatus = ParseStatus.FAILED


def normalize_binary(value: object) -> bool:
    """Map an answer value onto the binary label."""
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        word = value.strip().casefold()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
    raise LabelError(f"not a recognized yes/no answer: {value!r}")


def normalize_likert(value: object) -> LikertLabel:
    """Map an answer value onto the five-point scale (case and inner
    whitespace insensitive)."""
    if isinstance(value, LikertLabel):
        return value
    if isinstance(value, str):
        phrase = re.sub(r"\s+", " ", value.strip()).casefold()
        if phrase in _LIKERT_WORDS:
            return _LIKERT_WORDS[phrase]
    raise LabelError(f"not a recognized difficulty answer: {value!r}")


def _first_balanced_block(text: str) -> str | None:
    """Return the first balanced top-level {...} substring, honoring quoted
    strings and escapes inside it. Unclosed candidates are skipped."""
    pos = 0
    while True:
        start = text.find("{", pos)
        if start < 0:
            return None
        depth = 0
        in_str = False
        quote = ""
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == quote:
                    in_str = False
            elif ch in "\"'":
                in_str = True
                quote = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        pos = start + 1


def _swap_single_quotes(block: str) -> str:
    # Last-ditch repair for fully single-quoted JSON; embedded apostrophes
    # are unrecoverable either way, so only applied when no double quote exists.
    if '"' in block:
        return block
    return block.replace("'", '"')


def _lenient_load(block: str) -> tuple[object, bool]:
    """Parse a candidate block; returns (object, repairs_used)."""
    try:
        return json.loads(block), False
    except json.JSONDecodeError:
        pass
    for repaired in (
        _TRAILING_COMMA.sub(r"\1", block),
        _TRAILING_COMMA.sub(r"\1", _swap_single_quotes(block)),
    ):
        try:
            return json.loads(repaired), True
        except json.JSONDecodeError:
            continue
    raise json.JSONDecodeError("unrepairable block", block, 0)


def _opt_str(value: object) -> str | None:
    return value if isinstance(value, str) else None


def extract(text: str, task: str) -> ParsedJudgment:
    """Extract a judgment from raw model text.

    ``task`` selects the label family: "cwi" for binary, "lcp" for the
    five-point scale. A failed status always carries no labels; echo fields
    are preserved when the JSON was readable.
    """
    if task not in ("cwi", "lcp"):
        raise ValueError(f"unknown task {task!r}")
    block = _first_balanced_block(text or "")
    if block is None:
        return ParsedJudgment()
    try:
        obj, repaired = _lenient_load(block)
    except json.JSONDecodeError:
        return ParsedJudgment()
    if not isinstance(obj, dict):
        return ParsedJudgment()
    echoes = {
        "echoed_sentence": _opt_str(obj.get("sentence")),
        "echoed_word": _opt_str(obj.get("word")),
        "proof": _opt_str(obj.get("proof")),
    }
    answer = obj.get("complex")
    if answer is None:
        return ParsedJudgment(**echoes)
    try:
        if task == "cwi":
            labels = {"binary_label": normalize_binary(answer)}
        else:
            labels = {"likert_label": normalize_likert(answer)}
    except LabelError:
        return ParsedJudgment(**echoes)
    status = ParseStatus.RECOVERED if repaired else ParseStatus.OK
    return ParsedJudgment(parse_status=status, **echoes, **labels)
