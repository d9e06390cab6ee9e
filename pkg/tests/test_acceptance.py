"""Acceptance gate: one test per release criterion, each printing a single
PASS/FAIL line with its measured numbers.

Criteria 1-9 are self-contained (property checks and mock-endpoint runs).
Criterion 10 needs a live endpoint and is skipped unless
LEXEVAL_LIVE_ENDPOINT and LEXEVAL_LIVE_MODEL are set.
"""
from __future__ import annotations

import math
import os
import time
from decimal import Decimal
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from lexeval.cli import main
from lexeval.corpus import LIKERT_ORDER, Example
from lexeval.finetune import build_finetune_set, emit_jsonl, parse_jsonl
from lexeval.fomaml import (
    MetaConfig,
    MetaTask,
    adaptation_win_rate,
    fomaml_step,
    gradient_check,
    inner_adapt,
    meta_train,
    numerical_gradient,
    toy_task_sampler,
)
from lexeval.gateway import CostLedger, ChatClient, GenerationParams, ledger_from_journal, run_batch
from lexeval.metrics import ConfusionMatrix, binary_metrics, hallucination_audit, mae, pearson
from lexeval.parsing import ParsedJudgment, ParseStatus
from lexeval.promptkit import ChatTurn, PromptConfig, assemble, load_exemplar_catalog
from lexeval.scoring import bootstrap_k_curve, estimate

from conftest import cwi_line, judgment_json, query_fields, write_lines
from mockserver import chat_body, content_usage

GOLDEN = Path(__file__).parent / "golden"
GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@pytest.fixture
def check(capsys):
    """Emit the criterion verdict on the real stdout, then enforce it."""

    def _check(num: int, description: str, passed: bool) -> None:
        verdict = "PASS" if passed else "FAIL"
        with capsys.disabled():
            print(f"criterion {num:02d} {verdict}: {description}")
        assert passed, f"criterion {num:02d} FAIL: {description}"

    return _check


def test_criterion_01_metric_oracles(check):
    started = time.perf_counter()
    rng = np.random.default_rng(101)

    gold_b = {f"e{i:04d}": bool(rng.integers(2)) for i in range(1000)}
    pred_b = {k: (not v if rng.random() < 0.3 else v) for k, v in gold_b.items()}
    result = binary_metrics(pred_b, gold_b)
    tp = sum(1 for k in gold_b if pred_b[k] and gold_b[k])
    fp = sum(1 for k in gold_b if pred_b[k] and not gold_b[k])
    fn = sum(1 for k in gold_b if not pred_b[k] and gold_b[k])
    tn = sum(1 for k in gold_b if not pred_b[k] and not gold_b[k])
    counts_ok = result.confusion == ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)
    f1_ref = 2 * tp / (2 * tp + fp + fn)
    acc_ref = (tp + tn) / 1000
    binary_ok = abs(result.f1 - f1_ref) <= 1e-12 and abs(result.accuracy - acc_ref) <= 1e-12

    gold_c = rng.uniform(0.0, 1.0, 1000)
    pred_c = np.clip(gold_c + rng.normal(0.0, 0.2, 1000), 0.0, 1.0)
    p = pearson(pred_c, gold_c)
    m = mae(pred_c, gold_c)
    mx, my = math.fsum(pred_c) / 1000, math.fsum(gold_c) / 1000
    cov = math.fsum((x - mx) * (y - my) for x, y in zip(pred_c, gold_c))
    sx = math.sqrt(math.fsum((x - mx) ** 2 for x in pred_c))
    sy = math.sqrt(math.fsum((y - my) ** 2 for y in gold_c))
    p_ref = cov / (sx * sy)
    m_ref = math.fsum(abs(x - y) for x, y in zip(pred_c, gold_c)) / 1000
    continuous_ok = abs(p - p_ref) <= 1e-12 * abs(p_ref) and abs(m - m_ref) <= 1e-12 * abs(m_ref)

    elapsed = time.perf_counter() - started
    check(
        1,
        f"1000-instance oracle match: counts {counts_ok}, f1/acc {binary_ok}, "
        f"pearson/mae {continuous_ok}, {elapsed:.2f}s < 5s",
        counts_ok and binary_ok and continuous_ok and elapsed < 5.0,
    )


def test_criterion_02_score_estimator_concentration(check):
    started = time.perf_counter()
    probabilities = (0.1, 0.2, 0.4, 0.2, 0.1)
    mean_true = sum(v * p for v, p in zip(GRID, probabilities))
    sigma = math.sqrt(sum(p * (v - mean_true) ** 2 for v, p in zip(GRID, probabilities)))
    bound = 3 * sigma / math.sqrt(20)
    rng = np.random.default_rng(202)
    hits = 0
    for _ in range(1000):
        draws = rng.choice(GRID, size=20, p=probabilities)
        if abs(estimate([float(v) for v in draws]).mean - mean_true) <= bound:
            hits += 1
    elapsed = time.perf_counter() - started
    check(
        2,
        f"K=20 mean within 3*sigma/sqrt(20)={bound:.4f} of {mean_true} in "
        f"{hits}/1000 trials (need >= 990), {elapsed:.2f}s < 10s",
        hits >= 990 and elapsed < 10.0,
    )


def test_criterion_03_bootstrap_k_flattens_by_15(check):
    started = time.perf_counter()
    rng = np.random.default_rng(303)
    gold, samples = {}, {}
    for i in range(60):
        truth = float(rng.uniform(0.05, 0.95))
        gold[f"e{i:03d}"] = truth
        noisy = truth + rng.normal(0.0, 0.15, 20)
        samples[f"e{i:03d}"] = [min(GRID, key=lambda g: abs(g - x)) for x in noisy]
    curve = bootstrap_k_curve(samples, gold, metric="mae", k_max=20, resamples=100, seed=303)
    means = {point.k: point.mean for point in curve}
    deltas = {k: abs(means[k] - means[k - 1]) for k in range(2, 21)}
    threshold = 0.1 * deltas[2]
    settled = [k for k in range(2, 21) if all(deltas[j] < threshold for j in range(k, 21))]
    settle_k = settled[0] if settled else None
    elapsed = time.perf_counter() - started
    check(
        3,
        f"MAE curve deltas stay below 10% of the k=1->2 delta from k={settle_k} "
        f"(need <= 15), {elapsed:.2f}s < 30s",
        settle_k is not None and settle_k <= 15 and elapsed < 30.0,
    )


def test_criterion_04_audit_counts_exactly(check):
    examples = [
        Example(
            id=f"e{i:03d}",
            sentence=(
                "Rivers cross America quietly."
                if i == 10
                else f"Sentence number {i} holds a word."
            ),
            target="America" if i == 10 else "word",
            language="en",
            domain="news",
        )
        for i in range(100)
    ]
    pairs = []
    for i, ex in enumerate(examples):
        sentence = "a corrupted sentence" if i < 7 else ex.sentence
        if 10 <= i < 23:
            # index 10 is the region-name substitution; the rest invent words
            word = "South America" if i == 10 else "invented"
        else:
            word = ex.target
        pairs.append(
            (
                ParsedJudgment(
                    echoed_sentence=sentence,
                    echoed_word=word,
                    binary_label=True,
                    parse_status=ParseStatus.OK,
                ),
                ex,
            )
        )
    result = hallucination_audit(pairs)
    check(
        4,
        f"audited 100 responses: S={result.sentence_error_pct} (want 7.0), "
        f"W={result.word_error_pct} (want 13.0)",
        result.sentence_error_pct == 7.0
        and result.word_error_pct == 13.0
        and result.audited == 100,
    )


def test_criterion_05_mock_run_replay_and_concurrency(check, tmp_path, make_endpoint, capsys):
    started = time.perf_counter()
    gold = {f"word{i:02d}": i < 25 for i in range(50)}
    pred = dict(gold)
    for i in range(20, 30):
        pred[f"word{i:02d}"] = not gold[f"word{i:02d}"]  # 5 misses, 5 false alarms

    def responder(payload, index):
        target, sentence = query_fields(payload)
        return 200, chat_body(judgment_json(sentence, target, pred[target]))

    data = tmp_path / "cwi50.tsv"
    write_lines(
        data,
        [
            cwi_line(f"Robust reviews kept word{i:02d} visible.", f"word{i:02d}", gold[f"word{i:02d}"], 0.4 if gold[f"word{i:02d}"] else 0.0)
            for i in range(50)
        ],
    )
    server = make_endpoint(responder)
    out = tmp_path / "runs"
    code = main([
        "evaluate", "--task", "cwi", "--data", str(data),
        "--endpoint", server.url, "--model", "gpt-3.5-turbo",
        "--output-dir", str(out), "--limit", "4",
    ])
    run_dir = next(out.glob("cwi-en-*"))
    metrics = dict(
        line.split(",", 1)
        for line in (run_dir / "metrics.csv").read_text().splitlines()[1:]
    )
    scores_ok = (
        code == 0
        and float(metrics["f1_pct"]) == 80.0
        and float(metrics["accuracy_pct"]) == 80.0
        and (run_dir / "confusion.csv").read_text()
        == ",pred_complex,pred_simple\ngold_complex,20,5\ngold_simple,5,20\n"
    )
    concurrency_ok = server.max_in_flight <= 4

    artifacts = ("run.yaml", "report.md", "metrics.csv", "confusion.csv", "journal.jsonl")
    before = {name: (run_dir / name).read_bytes() for name in artifacts}
    calls = server.calls
    replay_code = main(["evaluate", "--replay", str(run_dir)])
    replay_ok = (
        replay_code == 0
        and server.calls == calls
        and all((run_dir / name).read_bytes() == before[name] for name in artifacts)
    )
    elapsed = time.perf_counter() - started
    check(
        5,
        f"50-example mock run: scores {scores_ok}, replay byte-identical {replay_ok}, "
        f"max in flight {server.max_in_flight} <= 4, {elapsed:.2f}s < 20s",
        scores_ok and replay_ok and concurrency_ok and elapsed < 20.0,
    )


def quadratic_loss(theta, target):
    diff = theta - target
    return 0.5 * float(diff @ diff), diff


def test_criterion_06_meta_learning(check):
    started = time.perf_counter()
    task = MetaTask(support=np.array([1.0]), query=np.array([1.0]), loss=quadratic_loss)
    config = MetaConfig(alpha=0.5, beta=0.1, inner_steps=1, optimizer="sgd", outer_steps=1)
    closed_form_ok = abs(fomaml_step(np.array([0.0]), task, config)[0] - 0.05) <= 1e-12

    fd_ok = True
    probe = MetaConfig(alpha=0.01, beta=0.01, inner_steps=5, optimizer="sgd", outer_steps=1)
    for kind in ("sine_regression", "logistic_2class"):
        sampler = toy_task_sampler(kind, seed=66)
        theta = sampler.init_params(np.random.default_rng(66))
        for _ in range(3):
            sampled = sampler.sample()
            fd_ok &= gradient_check(sampled.loss, theta, sampled.support) <= 1e-4
            fd_ok &= gradient_check(sampled.loss, theta, sampled.query) <= 1e-4
            adapted = inner_adapt(theta, sampled, probe.alpha, probe.inner_steps)
            numeric = numerical_gradient(lambda v: sampled.loss(v, sampled.query)[0], adapted)
            update = (theta - fomaml_step(theta, sampled, probe)) / probe.beta
            fd_ok &= float(np.linalg.norm(update - numeric)) <= 1e-4 * float(np.linalg.norm(numeric))

    train_config = MetaConfig(alpha=0.02, beta=0.01, inner_steps=5, outer_steps=3000, optimizer="adam")
    result = meta_train(toy_task_sampler("sine_regression", seed=0), train_config, seed=0)
    held_out = toy_task_sampler("sine_regression", seed=1)
    tasks = [held_out.sample() for _ in range(100)]
    baseline = held_out.init_params(np.random.default_rng(2))
    win_rate = adaptation_win_rate(result.theta, baseline, tasks, alpha=0.02, inner_steps=5)
    elapsed = time.perf_counter() - started
    check(
        6,
        f"closed form {closed_form_ok}, finite differences {fd_ok}, "
        f"win rate {win_rate:.2f} >= 0.90 on 100 held-out tasks, {elapsed:.1f}s < 120s",
        closed_form_ok and fd_ok and win_rate >= 0.90 and elapsed < 120.0,
    )


def test_criterion_07_finetune_prep(check, tmp_path):
    from test_finetune import golden_lcp_train, lcp_train

    records = build_finetune_set(lcp_train(per_bin=60), task="lcp", language="en", cap=250)
    counts = {label.value: 0 for label in LIKERT_ORDER}
    for record in records:
        counts[record.messages[2].content] += 1
    balance_ok = counts == {label.value: 50 for label in LIKERT_ORDER}

    path = tmp_path / "tune.jsonl"
    emit_jsonl(records, path)
    roundtrip_ok = parse_jsonl(path) == records

    golden_records = build_finetune_set(golden_lcp_train(), task="lcp", language="en", cap=10, seed=7)
    regenerated = tmp_path / "golden.jsonl"
    emit_jsonl(golden_records, regenerated)
    golden_ok = (
        regenerated.read_bytes() == (GOLDEN / "finetune" / "lcp_en_cap10_seed7.jsonl").read_bytes()
    )
    check(
        7,
        f"cap-250 export 50 per label {balance_ok}, JSONL roundtrip {roundtrip_ok}, "
        f"golden byte-stable {golden_ok}",
        balance_ok and roundtrip_ok and golden_ok,
    )


def test_criterion_08_prompt_fidelity(check):
    shipped_root = resources.files("lexeval") / "prompts" / "templates"
    templates_ok = True
    for pair in ("cwi_en", "cwi_de", "cwi_es", "lcp_en"):
        for name in ("system.txt", "user.txt"):
            shipped = (shipped_root / "inference" / pair / name).read_bytes()
            golden = (GOLDEN / "templates" / "inference" / pair / name).read_bytes()
            templates_ok &= shipped == golden

    catalog = load_exemplar_catalog("cwi", language="en", domain="news")
    example = Example(
        id="q0", sentence="The MP was ejected.", target="MP", language="en", domain="news"
    )
    config7 = PromptConfig(
        task="cwi", language="en", regime="few_shot", exemplars=catalog, shuffle_seed=7
    )
    turns = assemble(config7, example)
    structure_ok = (
        len(turns) == 16
        and [t.role for t in turns[1:]] == ["user", "assistant"] * 7 + ["user"]
    )
    # With the proof request on, assistant turns echo the sentence too, so
    # count appearances in user turns only.
    exemplar_sentences = [ex.example.sentence for ex in catalog]
    coverage_ok = all(
        sum(sentence in turn.content for turn in turns if turn.role == "user") == 1
        for sentence in exemplar_sentences
    )

    def pairs(assembled: tuple[ChatTurn, ...]):
        body = assembled[1:-1]
        return sorted((body[i].content, body[i + 1].content) for i in range(0, len(body), 2))

    other = assemble(
        PromptConfig(task="cwi", language="en", regime="few_shot", exemplars=catalog, shuffle_seed=8),
        example,
    )
    multiset_ok = pairs(turns) == pairs(other) and turns != other
    check(
        8,
        f"8 templates byte-match {templates_ok}, 16-turn assembly {structure_ok}, "
        f"every exemplar used once {coverage_ok}, shuffles multiset-equal {multiset_ok}",
        templates_ok and structure_ok and coverage_ok and multiset_ok,
    )


def test_criterion_09_cost_ledger(check, tmp_path, make_endpoint):
    text = "a fixed judgment body"

    def responder(payload, index):
        prompt_tokens, completion_tokens = content_usage(payload, text)
        return 200, chat_body(text, prompt_tokens, completion_tokens)

    jobs = [(f"e{i:02d}", (ChatTurn("user", f"call number {i} asks about word{i}"),)) for i in range(37)]
    expected_in = sum(len(turns[0].content) for _, turns in jobs)
    expected_out = 37 * len(text)
    expected = (expected_in * Decimal("0.0005") + expected_out * Decimal("0.0015")) / 1000

    totals = []
    for limit in (1, 5):
        server = make_endpoint(responder)
        client = ChatClient(server.url, timeout=5.0, ledger=CostLedger())
        records = run_batch(
            jobs,
            GenerationParams(model="gpt-3.5-turbo"),
            client,
            tmp_path / f"journal-{limit}.jsonl",
            limit=limit,
        )
        assert server.calls == 37
        totals.append(ledger_from_journal(records).accrued_cost)
    exact_ok = totals[0] == expected and totals[1] == expected
    cents_ok = all(t.quantize(Decimal("0.01")) == expected.quantize(Decimal("0.01")) for t in totals)
    check(
        9,
        f"37-call session cost {totals[0]} == analytic {expected} at limit 1 and 5 "
        f"(cent-rounded match {cents_ok})",
        exact_ok and cents_ok,
    )


def test_criterion_10_live_smoke(check, tmp_path, capsys):
    endpoint = os.environ.get("LEXEVAL_LIVE_ENDPOINT")
    model = os.environ.get("LEXEVAL_LIVE_MODEL")
    if not endpoint or not model:
        with capsys.disabled():
            print(
                "criterion 10 SKIP: set LEXEVAL_LIVE_ENDPOINT and "
                "LEXEVAL_LIVE_MODEL to run the live smoke test"
            )
        pytest.skip("no live endpoint configured")

    words = ("table", "ubiquitous", "run", "ephemeral", "house",
             "sycophant", "green", "perfunctory", "road", "obsequious")
    data = tmp_path / "live.tsv"
    write_lines(
        data,
        [cwi_line(f"The essay called the plan {w}.", w, False, 0.0) for w in words],
    )
    out = tmp_path / "runs"
    code = main([
        "evaluate", "--task", "cwi", "--data", str(data),
        "--endpoint", endpoint, "--model", model,
        "--output-dir", str(out), "--max-attempts", "2",
    ])
    run_dir = next(out.glob("cwi-en-*"), None)
    journal_ok = run_dir is not None and (run_dir / "journal.jsonl").exists()
    rate_ok = run_dir is not None and "parse_failure_rate_pct" in (run_dir / "metrics.csv").read_text()
    check(
        10,
        f"live 10-example run exit {code}, resumable journal {journal_ok}, "
        f"parse failure rate reported {rate_ok}",
        code in (0, 4) and journal_ok and rate_ok,
    )
