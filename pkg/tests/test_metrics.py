"""Score functions against independent oracles, plus the echo audit and
report rendering."""
from __future__ import annotations

import math
import random

import pytest

from lexeval.corpus import LIKERT_ORDER, Example
from lexeval.metrics import (
    AuditResult,
    ConfusionMatrix,
    EvaluationReport,
    MetricError,
    MetricUndefinedError,
    binary_metrics,
    confusion_csv,
    distribution_histogram,
    hallucination_audit,
    hallucination_audit_per_run,
    histogram_csv,
    mae,
    metrics_csv,
    normalize_echo,
    pearson,
    regression_metrics,
    report_markdown,
)
from lexeval.parsing import ParsedJudgment, ParseStatus


def example(i: int, sentence: str = "", target: str = "word") -> Example:
    return Example(
        id=f"e{i:03d}", sentence=sentence or f"Sentence number {i} holds a word.",
        target=target, language="en", domain="news", gold_binary=True,
        gold_probability=0.5,
    )


def judgment(sentence: str | None, word: str | None) -> ParsedJudgment:
    return ParsedJudgment(
        echoed_sentence=sentence, echoed_word=word, binary_label=True,
        parse_status=ParseStatus.OK,
    )


def test_binary_metrics_arithmetic():
    preds, gold = {}, {}
    layout = [(True, True)] * 2 + [(True, False)] * 1 + [(False, True)] * 1 + [(False, False)] * 6
    for i, (p, g) in enumerate(layout):
        preds[f"e{i}"] = p
        gold[f"e{i}"] = g
    result = binary_metrics(preds, gold)
    assert result.f1 == pytest.approx(2 / 3)
    assert result.accuracy == pytest.approx(0.8)
    assert result.confusion == ConfusionMatrix(tp=2, fp=1, tn=6, fn=1)


def test_binary_metrics_identity():
    gold = {f"e{i}": i % 2 == 0 for i in range(10)}
    result = binary_metrics(dict(gold), gold)
    assert result.f1 == 1.0 and result.accuracy == 1.0


def test_binary_metrics_f1_zero_when_undefined():
    preds = {"a": False, "b": False}
    gold = {"a": False, "b": False}
    result = binary_metrics(preds, gold)
    assert result.f1 == 0.0 and result.accuracy == 1.0


def test_binary_metrics_against_recount_oracle():
    rng = random.Random(17)
    preds = {f"e{i}": rng.random() < 0.5 for i in range(200)}
    gold = {f"e{i}": rng.random() < 0.5 for i in range(200)}
    result = binary_metrics(preds, gold)
    tp = sum(preds[k] and gold[k] for k in gold)
    fp = sum(preds[k] and not gold[k] for k in gold)
    fn = sum(not preds[k] and gold[k] for k in gold)
    tn = sum(not preds[k] and not gold[k] for k in gold)
    assert (result.confusion.tp, result.confusion.fp,
            result.confusion.fn, result.confusion.tn) == (tp, fp, fn, tn)
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    assert result.f1 == pytest.approx(2 * precision * recall / (precision + recall))
    assert result.accuracy == pytest.approx((tp + tn) / 200)
    # internal consistency with the matrix's own properties
    assert result.f1 == result.confusion.f1
    assert result.accuracy == result.confusion.accuracy


def test_mismatched_ids_reported():
    with pytest.raises(MetricError) as err:
        binary_metrics({"a": True, "x": False}, {"a": True, "b": False})
    message = str(err.value)
    assert "b" in message and "x" in message


def test_pearson_identity_and_inversion():
    gold = [0.1, 0.4, 0.5, 0.9, 0.3]
    assert pearson(gold, gold) == pytest.approx(1.0)
    assert pearson([1 - g for g in gold], gold) == pytest.approx(-1.0)


def test_pearson_against_two_pass_oracle():
    rng = random.Random(23)
    xs = [rng.uniform(0, 1) for _ in range(100)]
    ys = [0.6 * x + rng.uniform(-0.2, 0.2) for x in xs]
    mean_x = sum(xs) / len(xs)
    mean_y = sum(ys) / len(ys)
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    var_x = sum((x - mean_x) ** 2 for x in xs)
    var_y = sum((y - mean_y) ** 2 for y in ys)
    oracle = cov / math.sqrt(var_x * var_y)
    assert abs(pearson(xs, ys) - oracle) <= 1e-12 * abs(oracle)


def test_pearson_affine_invariance_and_mae_translation():
    rng = random.Random(29)
    xs = [rng.uniform(0, 1) for _ in range(50)]
    ys = [rng.uniform(0, 1) for _ in range(50)]
    base = pearson(xs, ys)
    scaled = pearson([3.7 * x + 0.2 for x in xs], ys)
    assert abs(scaled - base) <= 1e-12
    assert mae([x + 0.3 for x in xs], [y + 0.3 for y in ys]) == pytest.approx(mae(xs, ys))


def test_pearson_undefined_on_constant_vector():
    with pytest.raises(MetricUndefinedError):
        pearson([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])
    with pytest.raises(MetricError):
        pearson([0.5], [0.1])


def test_regression_metrics_catches_undefined():
    preds = {"a": 0.5, "b": 0.5}
    gold = {"a": 0.2, "b": 0.4}
    result = regression_metrics(preds, gold)
    assert result.pearson is None
    assert "constant" in result.pearson_undefined
    assert result.mae == pytest.approx(0.2)


def test_histogram_mass_inside_bands_on_perfect_predictions():
    rng = random.Random(31)
    preds = {f"e{i}": rng.uniform(0, 1) for i in range(100)}
    hist = distribution_histogram(preds, dict(preds), bins=10)
    for row in range(5):
        first, last = hist.bands[row]
        for j, count in enumerate(hist.counts[row]):
            if count and not first <= j <= last:
                raise AssertionError(f"mass outside band: row {row} bin {j}")


def test_histogram_matches_hand_binned_oracle():
    preds = {
        "a": 0.05, "b": 0.19, "c": 0.21, "d": 0.55, "e": 0.61, "f": 0.99, "g": 1.0,
    }
    gold = {
        "a": 0.1,   # very easy row
        "b": 0.3,   # easy row
        "c": 0.3,
        "d": 0.5,   # neutral row
        "e": 0.7,   # difficult row
        "f": 0.9,   # very difficult row
        "g": 0.9,
    }
    hist = distribution_histogram(preds, gold, bins=5)
    assert hist.counts[0] == (1, 0, 0, 0, 0)
    assert hist.counts[1] == (1, 1, 0, 0, 0)
    assert hist.counts[2] == (0, 0, 1, 0, 0)
    assert hist.counts[3] == (0, 0, 0, 1, 0)
    assert hist.counts[4] == (0, 0, 0, 0, 2)  # 1.0 lands in the top bin
    assert hist.bands == ((0, 0), (1, 1), (2, 2), (3, 3), (4, 4))


def test_histogram_rows_sum_to_row_counts():
    rng = random.Random(37)
    preds = {f"e{i}": rng.uniform(0, 1) for i in range(80)}
    gold = {f"e{i}": rng.uniform(0, 1) for i in range(80)}
    hist = distribution_histogram(preds, gold, bins=7)
    from lexeval.corpus import discretize
    for row, label in enumerate(LIKERT_ORDER):
        expected = sum(1 for k in gold if discretize(gold[k]) is label)
        assert sum(hist.counts[row]) == expected


def test_histogram_requires_five_bins():
    with pytest.raises(MetricError):
        distribution_histogram({"a": 0.5}, {"a": 0.5}, bins=4)


def test_normalize_echo():
    assert normalize_echo("  The\tWord  here ") == "the word here"
    assert normalize_echo("café") == normalize_echo("café")
    assert normalize_echo("STRASSE") == normalize_echo("strasse")


def test_audit_exact_echoes():
    pairs = [(judgment(ex.sentence, ex.target), ex) for ex in (example(i) for i in range(10))]
    result = hallucination_audit(pairs)
    assert result == AuditResult(0.0, 0.0, 10)


def test_audit_word_substitution_counts():
    ex = example(0, sentence="Rivers cross America quietly.", target="America")
    pairs = [(judgment(ex.sentence, "South America"), ex)]
    result = hallucination_audit(pairs)
    assert result.word_error_pct == 100.0
    assert result.sentence_error_pct == 0.0


def test_audit_fixture_rates():
    examples = [example(i) for i in range(10)]
    pairs = []
    for i, ex in enumerate(examples):
        sentence = "different sentence" if i == 0 else ex.sentence
        word = "other" if i in (1, 2) else ex.target
        pairs.append((judgment(sentence, word), ex))
    result = hallucination_audit(pairs)
    assert result.sentence_error_pct == 10.0
    assert result.word_error_pct == 20.0


def test_audit_absent_echo_is_error():
    ex = example(0)
    result = hallucination_audit([(judgment(None, ex.target), ex)])
    assert result.sentence_error_pct == 100.0 and result.word_error_pct == 0.0


def test_audit_order_invariant_and_idempotent():
    examples = [example(i) for i in range(20)]
    rng = random.Random(3)
    pairs = []
    for i, ex in enumerate(examples):
        word = "wrong" if i % 4 == 0 else ex.target
        pairs.append((judgment(ex.sentence, word), ex))
    baseline = hallucination_audit(pairs)
    for _ in range(5):
        rng.shuffle(pairs)
        assert hallucination_audit(pairs) == baseline


def test_audit_per_run_aggregation():
    examples = [example(i) for i in range(4)]
    perfect = [(judgment(ex.sentence, ex.target), ex) for ex in examples]
    half_bad = [
        (judgment(ex.sentence, "oops" if i < 2 else ex.target), ex)
        for i, ex in enumerate(examples)
    ]
    agg = hallucination_audit_per_run([perfect, half_bad])
    assert agg.runs == 2
    assert agg.word_error_pct == pytest.approx(25.0)  # mean of 0 and 50
    assert agg.word_error_std == pytest.approx(25.0)  # population std of {0, 50}
    assert agg.sentence_error_pct == 0.0


def _binary_report(**overrides) -> EvaluationReport:
    fields = dict(
        fingerprint="abc123", task="cwi", language="en", model="gpt-4o",
        regime="zero_shot", cot=True, k=1, examples_loaded=10, examples_scored=10,
        transport_errors=0, parse_failure_rate=0.0, f1=80.0, accuracy=80.0,
        confusion=ConfusionMatrix(tp=4, fp=1, tn=4, fn=1),
        audit=AuditResult(7.0, 13.0, 10), cost={"input_tokens": 5, "output_tokens": 3,
                                                "cost_usd": "0.001"},
    )
    fields.update(overrides)
    return EvaluationReport(**fields)


def test_report_family_exclusivity():
    report = _binary_report()
    assert report.f1 == 80.0
    with pytest.raises(MetricError):
        _binary_report(confusion=None)  # no family at all
    with pytest.raises(MetricError):
        _binary_report(mae=0.1)  # both families


def test_report_markdown_and_csv():
    report = _binary_report()
    text = report_markdown(report)
    assert "| gpt-4o | 80.00 | 80.00 |" in text
    assert "| gold complex | 4 | 1 |" in text
    assert "| gpt-4o | 7.00 | 13.00 |" in text
    assert "parse_failure_rate: 0.00%" in text
    assert "0.001" in text
    csv_text = metrics_csv(report)
    assert "f1_pct,80" in csv_text
    assert "cost_usd,0.001" in csv_text
    assert confusion_csv(report.confusion) == (
        ",pred_complex,pred_simple\ngold_complex,4,1\ngold_simple,1,4\n"
    )


def test_histogram_csv_layout():
    preds = {"a": 0.1, "b": 0.9}
    gold = {"a": 0.1, "b": 0.9}
    hist = distribution_histogram(preds, gold, bins=5)
    text = histogram_csv(hist)
    lines = text.splitlines()
    assert lines[0] == "gold_label,0.00-0.20,0.20-0.40,0.40-0.60,0.60-0.80,0.80-1.00,band_first,band_last"
    assert lines[1] == "very easy,1,0,0,0,0,0,0"
    assert lines[5] == "very difficult,0,0,0,0,1,4,4"
