"""HTTP dispatch to chat-completion endpoints.

One client speaks the common chat-completions wire shape (POST
``<endpoint>/chat/completions``) with bounded retries; a thread pool drives
batches under a concurrency cap; every transport outcome is appended to a
fsync'd JSONL journal so an interrupted batch resumes without re-spending,
and a finished journal replays offline byte-for-byte.

Journal record fields: example_id, sample_index, status ("ok" transport
success, "error" exhausted retries or hard HTTP failure), text,
input_tokens, output_tokens, latency_s, attempt (attempts used by the last
generation), regens (extra generations triggered by a validate callback),
error, model, ts. Replay keys on (example_id, sample_index); the last ok
record for a pair wins.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

from .promptkit import ChatTurn

logger = logging.getLogger(__name__)

# Published per-1k-token prices for the hosted models used in the study.
DEFAULT_PRICE_TABLE: dict[str, tuple[Decimal, Decimal]] = {
    "gpt-3.5-turbo": (Decimal("0.0005"), Decimal("0.0015")),
    "gpt-4o": (Decimal("0.005"), Decimal("0.015")),
}

# Sampling knobs some endpoints reject with a 400; they are dropped and the
# request retried, once per client, with a warning.
_DROPPABLE_PARAMS = ("top_k", "repetition_penalty")


class GatewayError(Exception):
    pass


class HTTPStatusError(GatewayError):
    """Non-retryable HTTP failure; carries status and response body."""

    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class RetryExhaustedError(GatewayError):
    """All attempts failed on retryable errors; carries the last one."""

    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


@dataclass(frozen=True)
class GenerationParams:
    """Decoding parameters; the defaults are the study's sampling setup."""

    model: str
    temperature: float = 0.8
    top_p: float = 0.95
    top_k: int | None = 10
    repetition_penalty: float | None = 1.2
    max_tokens: int = 4096


@dataclass(frozen=True)
class RawResponse:
    example_id: str
    sample_index: int
    text: str
    input_tokens: int
    output_tokens: int
    latency_s: float
    attempt: int
    model: str


class CostLedger:
    """Thread-safe token and cost accumulator (exact decimal arithmetic).

    Model names match the price table by longest prefix, so dated variants
    of a published model price correctly. Unknown models cost 0.
    """

    def __init__(self, price_table: Mapping[str, tuple[Decimal, Decimal]] | None = None):
        self.price_table = dict(DEFAULT_PRICE_TABLE if price_table is None else price_table)
        self.input_tokens = 0
        self.output_tokens = 0
        self.accrued_cost = Decimal("0")
        self._lock = threading.Lock()

    def price_for(self, model: str) -> tuple[Decimal, Decimal]:
        if model in self.price_table:
            return self.price_table[model]
        prefixes = [name for name in self.price_table if model.startswith(name)]
        if prefixes:
            return self.price_table[max(prefixes, key=len)]
        return Decimal("0"), Decimal("0")

    def record(self, model: str, input_tokens: int, output_tokens: int) -> None:
        price_in, price_out = self.price_for(model)
        cost = (input_tokens * price_in + output_tokens * price_out) / 1000
        with self._lock:
            self.input_tokens += input_tokens
            self.output_tokens += output_tokens
            self.accrued_cost += cost

    def summary(self) -> dict:
        # Positional formatting of the normalized value, so the string is
        # independent of how the total was accrued (no trailing zeros, no
        # exponent notation).
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "cost_usd": format(self.accrued_cost.normalize(), "f"),
        }


@dataclass(frozen=True)
class JournalRecord:
    example_id: str
    sample_index: int
    status: str
    text: str | None
    input_tokens: int
    output_tokens: int
    latency_s: float
    attempt: int
    regens: int
    error: str | None
    model: str
    ts: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


class Journal:
    """Append-only JSONL transport log, fsync'd per record."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._fh = None

    def append(self, record: JournalRecord) -> None:
        with self._lock:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "a", encoding="utf-8")
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "Journal":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @staticmethod
    def load(path: str | Path) -> list[JournalRecord]:
        path = Path(path)
        if not path.exists():
            return []
        records = []
        with open(path, encoding="utf-8") as fh:
            for line_num, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(JournalRecord(**json.loads(line)))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise GatewayError(f"{path}: bad journal line {line_num}: {exc}") from exc
        return records

    @staticmethod
    def completed(records: Sequence[JournalRecord]) -> dict[tuple[str, int], JournalRecord]:
        """Transport-successful records keyed by (example_id, sample_index);
        the last ok record for a pair wins."""
        done: dict[tuple[str, int], JournalRecord] = {}
        for rec in records:
            if rec.status == "ok":
                done[(rec.example_id, rec.sample_index)] = rec
        return done


class ChatClient:
    """One chat-completions endpoint with retry and cost accounting.

    Retries 429, 5xx, timeouts, and connection failures with exponential
    backoff; other HTTP failures surface immediately with status and body.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        ledger: CostLedger | None = None,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get("OPENAI_API_KEY")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.ledger = ledger if ledger is not None else CostLedger()
        self.session = session if session is not None else requests.Session()
        self._sleep = sleep
        self._dropped_params: set[str] = set()

    def _payload(self, turns: Sequence[ChatTurn], params: GenerationParams) -> dict:
        payload = {
            "model": params.model,
            "messages": [{"role": t.role, "content": t.content} for t in turns],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        if params.top_k is not None and "top_k" not in self._dropped_params:
            payload["top_k"] = params.top_k
        if (
            params.repetition_penalty is not None
            and "repetition_penalty" not in self._dropped_params
        ):
            payload["repetition_penalty"] = params.repetition_penalty
        return payload

    def _rejected_param(self, status: int, body: str, payload: dict) -> str | None:
        if status != 400:
            return None
        for name in _DROPPABLE_PARAMS:
            if name in payload and name in body:
                return name
        return None

    def send_chat(
        self,
        turns: Sequence[ChatTurn],
        params: GenerationParams,
        example_id: str = "",
        sample_index: int = 0,
    ) -> RawResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        attempt = 0
        last_error: Exception | None = None
        while attempt < self.max_attempts:
            attempt += 1
            payload = self._payload(turns, params)
            started = time.monotonic()
            try:
                resp = self.session.post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = exc
                self._sleep(min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))
                continue
            latency = time.monotonic() - started
            if resp.status_code == 200:
                data = resp.json()
                usage = data.get("usage") or {}
                input_tokens = int(usage.get("prompt_tokens", 0))
                output_tokens = int(usage.get("completion_tokens", 0))
                self.ledger.record(params.model, input_tokens, output_tokens)
                return RawResponse(
                    example_id=example_id,
                    sample_index=sample_index,
                    text=data["choices"][0]["message"]["content"],
                    input_tokens=input_tokens,
                    output_tokens=output_tokens,
                    latency_s=latency,
                    attempt=attempt,
                    model=params.model,
                )
            rejected = self._rejected_param(resp.status_code, resp.text, payload)
            if rejected is not None:
                logger.warning("endpoint rejected %r; dropping it for this client", rejected)
                self._dropped_params.add(rejected)
                attempt -= 1  # a config probe, not a transport failure
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = HTTPStatusError(resp.status_code, resp.text)
                self._sleep(min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))
                continue
            raise HTTPStatusError(resp.status_code, resp.text)
        raise RetryExhaustedError(self.max_attempts, last_error or GatewayError("no attempt ran"))


def run_batch(
    jobs: Sequence[tuple[str, Sequence[ChatTurn]]],
    params: GenerationParams,
    client: ChatClient,
    journal_path: str | Path,
    limit: int = 4,
    samples_per_example: int = 1,
    validate: Callable[[str], bool] | None = None,
    max_regens: int = 2,
) -> list[JournalRecord]:
    """Run (example, sample) generations through ``client`` with at most
    ``limit`` requests in flight, journaling every outcome.

    Pairs already ok in the journal are skipped, so a killed batch resumes
    where it stopped. When ``validate`` rejects a response text, up to
    ``max_regens`` fresh generations are tried; the pair gets one record
    carrying the final text and the token totals of every generation spent
    on it (transport status stays "ok" even if still rejected; what the
    text means is the parser's business, not the transport's). Transport
    failures are journaled as "error" and never abort the batch.

    Returns the complete journal contents after the run.
    """
    if limit < 1:
        raise ValueError("limit must be at least 1")
    if samples_per_example < 1:
        raise ValueError("samples_per_example must be at least 1")
    existing = Journal.load(journal_path)
    done = set(Journal.completed(existing))
    pending = [
        (example_id, turns, s)
        for example_id, turns in jobs
        for s in range(samples_per_example)
        if (example_id, s) not in done
    ]

    def generate(example_id: str, turns: Sequence[ChatTurn], sample_index: int) -> JournalRecord:
        regens = 0
        spent_in = 0
        spent_out = 0
        while True:
            try:
                resp = client.send_chat(turns, params, example_id, sample_index)
            except GatewayError as exc:
                return JournalRecord(
                    example_id=example_id,
                    sample_index=sample_index,
                    status="error",
                    text=None,
                    input_tokens=spent_in,
                    output_tokens=spent_out,
                    latency_s=0.0,
                    attempt=getattr(exc, "attempts", 0),
                    regens=regens,
                    error=str(exc),
                    model=params.model,
                    ts=time.time(),
                )
            spent_in += resp.input_tokens
            spent_out += resp.output_tokens
            if validate is None or validate(resp.text) or regens >= max_regens:
                return JournalRecord(
                    example_id=example_id,
                    sample_index=sample_index,
                    status="ok",
                    text=resp.text,
                    input_tokens=spent_in,
                    output_tokens=spent_out,
                    latency_s=resp.latency_s,
                    attempt=resp.attempt,
                    regens=regens,
                    error=None,
                    model=resp.model,
                    ts=time.time(),
                )
            regens += 1

    with Journal(journal_path) as journal:
        with ThreadPoolExecutor(max_workers=limit) as pool:
            futures = [pool.submit(generate, ex_id, turns, s) for ex_id, turns, s in pending]
            for future in as_completed(futures):
                journal.append(future.result())
    return Journal.load(journal_path)


def ledger_from_journal(
    records: Sequence[JournalRecord],
    price_table: Mapping[str, tuple[Decimal, Decimal]] | None = None,
) -> CostLedger:
    """Rebuild cost totals from a journal; the result matches what the live
    ledger accrued, independent of request interleaving."""
    ledger = CostLedger(price_table)
    for rec in records:
        # Error records can still carry tokens spent on discarded
        # regenerations, so every record counts.
        ledger.record(rec.model, rec.input_tokens, rec.output_tokens)
    return ledger
