"""Shared fixtures and tiny corpus builders for the test suite."""
from __future__ import annotations

import json
import re

import pytest

from mockserver import MockEndpoint


@pytest.fixture
def make_endpoint():
    """Factory for live mock endpoints, torn down after the test."""
    servers: list[MockEndpoint] = []

    def _make(responder) -> MockEndpoint:
        server = MockEndpoint(responder).start()
        servers.append(server)
        return server

    yield _make
    for server in servers:
        server.stop()


# One row of the 11-column 2018 shared-task layout (headerless):
# hit_id, sentence, start, end, target, 4 annotator counters, binary, prob.
def cwi_line(
    sentence: str,
    target: str,
    binary: bool,
    probability: float,
    hit: str = "H1",
) -> str:
    start = sentence.index(target)
    end = start + len(target)
    cells = [
        hit, sentence, str(start), str(end), target,
        "10", "10", "1", "1", str(int(binary)), repr(probability),
    ]
    return "\t".join(cells)


LCP_HEADER = "id\tcorpus\tsentence\ttoken\tcomplexity"


def lcp_line(
    ex_id: str, sentence: str, token: str, complexity: float, corpus: str = "bible"
) -> str:
    return "\t".join([ex_id, corpus, sentence, token, repr(complexity)])


def write_lines(path, lines) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_BACKTICKED = re.compile(r"`([^`]*)`")


def query_fields(payload: dict) -> tuple[str, str]:
    """(target, sentence) recovered from the final user turn of a request."""
    content = payload["messages"][-1]["content"]
    fields = _BACKTICKED.findall(content)
    if len(fields) != 2:
        raise AssertionError(f"expected 2 backticked fields, got {fields!r}")
    return fields[0], fields[1]


def judgment_json(sentence: str, word: str, answer, proof: str = "short reason") -> str:
    """A canonical response body in the requested schema."""
    return json.dumps(
        {"sentence": sentence, "word": word, "proof": proof, "complex": answer},
        ensure_ascii=False,
    )
