"""Chat prompt assembly from the shipped template catalog.

Templates live as data files under ``prompts/templates/<phase>/<task>_<language>/``
(one ``system.txt`` plus one ``user.txt`` each). The catalog ships the
chain-of-thought wording only; the non-CoT variant is derived here by
dropping the proof line from the JSON schema and appending
"Do not explain." to the system turn. That derivation is a reconstruction,
not catalog text, and is the single place it happens.

Placeholders ``{token}`` and ``{sentence}`` are substituted literally (no
format-string semantics), so braces in corpus text are safe.
"""
from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from importlib import resources

from .corpus import Example, LikertLabel

logger = logging.getLogger(__name__)

TASKS = ("cwi", "lcp")
REGIMES = ("zero_shot", "few_shot")
PHASES = ("inference", "finetune")
ROLES = ("system", "user", "assistant")

# (task, language) pairs with shipped templates. The continuous task is
# English-only by design.
TEMPLATE_KEYS = (("cwi", "en"), ("cwi", "de"), ("cwi", "es"), ("lcp", "en"))

_PLACEHOLDER = re.compile(r"\{(token|sentence)\}")
_PROOF_LINE = re.compile(r"^\s*\"proof\":.*\n", re.MULTILINE)

NO_EXPLAIN_SUFFIX = "Do not explain."


class PromptError(ValueError):
    """Unsupported template key or inconsistent prompt configuration."""


@dataclass(frozen=True)
class ChatTurn:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise PromptError(f"unknown chat role {self.role!r}")


@dataclass(frozen=True)
class FewShotExemplar:
    """A worked example for few-shot prompting: the input, the expected
    answer text ("true"/"false" or a difficulty phrase), and a short proof."""

    example: Example
    answer: str
    proof: str = ""


@dataclass(frozen=True)
class PromptConfig:
    task: str
    language: str
    regime: str = "zero_shot"
    cot: bool = True
    phase: str = "inference"
    exemplars: tuple[FewShotExemplar, ...] | None = None
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise PromptError(f"unknown task {self.task!r}")
        if self.regime not in REGIMES:
            raise PromptError(f"unknown regime {self.regime!r}")
        if self.phase not in PHASES:
            raise PromptError(f"unknown phase {self.phase!r}")
        if (self.task, self.language) not in TEMPLATE_KEYS:
            raise PromptError(
                f"no shipped template for task {self.task!r} in language {self.language!r}"
            )
        if self.regime == "few_shot" and not self.exemplars:
            raise PromptError("few_shot regime requires exemplars")
        if self.regime == "zero_shot" and self.exemplars:
            raise PromptError("zero_shot regime must not carry exemplars")
        if self.phase == "finetune" and self.regime == "few_shot":
            raise PromptError("finetune prompts are minimal; few_shot does not apply")


def _template_text(phase: str, task: str, language: str, name: str) -> str:
    root = resources.files("lexeval").joinpath("prompts", "templates")
    path = root.joinpath(phase, f"{task}_{language}", name)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise PromptError(f"no shipped template {phase}/{task}_{language}/{name}") from None
    return text[:-1] if text.endswith("\n") else text


def render_system_prompt(config: PromptConfig) -> str:
    text = _template_text(config.phase, config.task, config.language, "system.txt")
    if config.phase == "inference" and not config.cot:
        text = _PROOF_LINE.sub("", text)
        text = f"{text}\n{NO_EXPLAIN_SUFFIX}"
    return text


def _fill(template: str, token: str, sentence: str) -> str:
    values = {"token": token, "sentence": sentence}
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def render_user_prompt(config: PromptConfig, example: Example) -> str:
    if example.language != config.language:
        raise PromptError(
            f"example {example.id} is {example.language!r}, prompt is {config.language!r}"
        )
    if "`" in example.target or "`" in example.sentence:
        logger.warning(
            "example %s contains a backtick; template quoting is literal", example.id
        )
    template = _template_text(config.phase, config.task, config.language, "user.txt")
    return _fill(template, example.target, example.sentence)


def exemplar_answer(exemplar: FewShotExemplar, cot: bool) -> str:
    """Render the assistant turn for one exemplar as a JSON object matching
    the schema the system prompt announces. Values stay English ("true",
    "false", difficulty phrases) in every language."""
    answer: object = exemplar.answer
    if exemplar.answer in ("true", "false"):
        answer = exemplar.answer == "true"
    obj: dict[str, object] = {
        "sentence": exemplar.example.sentence,
        "word": exemplar.example.target,
    }
    if cot:
        obj["proof"] = exemplar.proof
    obj["complex"] = answer
    return json.dumps(obj, ensure_ascii=False, indent=4)


def assemble(config: PromptConfig, example: Example) -> list[ChatTurn]:
    """Build the full chat for one example: system turn, optional shuffled
    exemplar pairs, then the query turn."""
    turns = [ChatTurn("system", render_system_prompt(config))]
    if config.regime == "few_shot":
        order = list(config.exemplars)
        random.Random(config.shuffle_seed).shuffle(order)
        for ex in order:
            turns.append(ChatTurn("user", render_user_prompt(config, ex.example)))
            turns.append(ChatTurn("assistant", exemplar_answer(ex, config.cot)))
    turns.append(ChatTurn("user", render_user_prompt(config, example)))
    return turns


def validate_turns(turns: list[ChatTurn]) -> None:
    """Check the shape every assembled chat must have: one leading system
    turn, user/assistant alternation, a final user turn."""
    if not turns or turns[0].role != "system":
        raise PromptError("chat must start with a system turn")
    expected = "user"
    for turn in turns[1:]:
        if turn.role != expected:
            raise PromptError(f"expected {expected} turn, found {turn.role}")
        expected = "assistant" if expected == "user" else "user"
    if turns[-1].role != "user":
        raise PromptError("chat must end with a user turn")


def load_exemplar_catalog(
    task: str,
    language: str = "en",
    domain: str | None = None,
    track: str | None = None,
) -> tuple[FewShotExemplar, ...]:
    """Load the shipped curated exemplars (with proofs) for one template key.

    Binary-task English exemplars are per-domain (news, wikinews, wikipedia);
    continuous-task exemplars are per-track (single, multi).
    """
    if task == "cwi":
        if language == "en":
            if domain not in ("news", "wikinews", "wikipedia"):
                raise PromptError(
                    "English binary-task exemplars are per-domain "
                    f"(news, wikinews, wikipedia); got {domain!r}"
                )
            name = f"cwi_en_{domain}.json"
        elif language in ("de", "es"):
            name = f"cwi_{language}.json"
        else:
            raise PromptError(f"no shipped exemplars for language {language!r}")
    elif task == "lcp":
        if track not in ("single", "multi"):
            raise PromptError(f"continuous-task exemplars are per-track; got {track!r}")
        name = f"lcp_{track}.json"
    else:
        raise PromptError(f"unknown task {task!r}")
    path = resources.files("lexeval").joinpath("prompts", "exemplars", name)
    data = json.loads(path.read_text(encoding="utf-8"))
    exemplars = []
    for row in data["exemplars"]:
        exemplars.append(
            FewShotExemplar(
                example=Example(
                    id=row["id"],
                    sentence=row["sentence"],
                    target=row["token"],
                    language=data["language"],
                    domain=data.get("domain", "other"),
                ),
                answer=row["answer"],
                proof=row["proof"],
            )
        )
    return tuple(exemplars)
