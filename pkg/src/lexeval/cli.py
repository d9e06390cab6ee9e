"""Command-line front end.

Subcommands:
  evaluate       run (or replay) one evaluation end to end
  bootstrap-k    score-vs-sample-count curve from a finished run
  audit          echo-fidelity audit of a finished run
  prep-finetune  build a balanced chat-format fine-tuning JSONL
  fomaml-demo    meta-train on a toy task family and report the win rate
  report         rerender a finished run's report artifacts

Exit codes: 0 success, 2 configuration error, 3 data validation error,
4 network retries exhausted.
"""
from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import requests

from .corpus import CorpusError, load_cwi_tsv, load_lcp_tsv
from .finetune import FinetuneError, build_finetune_set, emit_jsonl
from .fomaml import (
    FomamlError,
    MetaConfig,
    adaptation_win_rate,
    meta_train,
    toy_task_sampler,
    trace_to_csv,
)
from .gateway import GatewayError, HTTPStatusError, Journal, RetryExhaustedError
from .metrics import MetricError, audit_markdown
from .parsing import LabelError
from .promptkit import PromptError
from .runner import (
    ConfigError,
    RunConfig,
    build_report,
    load_config_mapping,
    load_examples,
    load_run_config,
    likert_samples,
    run_evaluation,
    write_artifacts,
)
from .scoring import ScoringError, bootstrap_k_curve, curve_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NETWORK = 4

_CONFIG_FIELDS = tuple(f.name for f in fields(RunConfig))


def _merged_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, command-line flags on top."""
    raw: dict = {}
    if args.config:
        raw.update(load_config_mapping(args.config))
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    return RunConfig.from_dict(raw)


def _print_report_summary(report, run_dir: Path) -> None:
    print(f"run dir: {run_dir}")
    if report.confusion is not None:
        print(f"F1 {report.f1:.2f}  Acc {report.accuracy:.2f}")
    else:
        p_text = f"{report.pearson:.4f}" if report.pearson is not None else "undefined"
        mae_text = f"{report.mae:.4f}" if report.mae is not None else "n/a"
        print(f"P {p_text}  MAE {mae_text}")
    cost = dict(report.cost or {})
    print(
        f"scored {report.examples_scored}/{report.examples_loaded} examples, "
        f"parse_failure_rate {report.parse_failure_rate:.2f}%, "
        f"cost {cost.get('cost_usd', '0')} USD"
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.replay:
        source = Path(args.replay)
        config = load_run_config(source / "run.yaml")
        journal = source / "journal.jsonl"
        if not journal.exists():
            raise ConfigError(f"{source}: no journal to replay")
        target = Path(args.to) if args.to else source
        if target.resolve() != source.resolve():
            target.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(journal, target / "journal.jsonl")
        report, run_dir = run_evaluation(config, replay=True, run_dir=target)
    else:
        config = _merged_config(args)
        if not config.endpoint:
            raise ConfigError("evaluate needs an endpoint (flag or config file)")
        if not config.model:
            raise ConfigError("evaluate needs a model name (flag or config file)")
        report, run_dir = run_evaluation(config)
        expected = report.examples_loaded * report.k
        if expected and report.transport_errors == expected:
            # Nothing got through; the journal is resumable once the
            # endpoint recovers.
            print(f"network error: every request failed; rerun to resume {run_dir}",
                  file=sys.stderr)
            return EXIT_NETWORK
    _print_report_summary(report, run_dir)
    return EXIT_OK


def cmd_bootstrap_k(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    config = load_run_config(run_dir / "run.yaml")
    records = Journal.load(run_dir / "journal.jsonl")
    if not records:
        raise ConfigError(f"{run_dir}: no journal to analyze")
    samples, gold = likert_samples(config, load_examples(config), records)
    curve = bootstrap_k_curve(
        samples,
        gold,
        metric=args.metric,
        k_max=args.k_max,
        resamples=args.resamples,
        seed=args.seed,
    )
    out = Path(args.out) if args.out else run_dir / "bootstrap_k.csv"
    curve_to_csv(curve, out)
    print(f"wrote {len(curve)} curve points to {out}")
    print(f"{args.metric} at k=1: {curve[0].mean:.6g}, at k={curve[-1].k}: {curve[-1].mean:.6g}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    config = load_run_config(run_dir / "run.yaml")
    records = Journal.load(run_dir / "journal.jsonl")
    if not records:
        raise ConfigError(f"{run_dir}: no journal to audit")
    report = build_report(config, load_examples(config), records)
    print("\n".join(audit_markdown(report)))
    print()
    print(f"parse_failure_rate: {report.parse_failure_rate:.2f}%")
    return EXIT_OK


def _load_train_partition(args: argparse.Namespace) -> list:
    if args.task == "cwi":
        return load_cwi_tsv(
            args.train,
            args.language,
            column_map=args.column_map or "cwi2018",
            domain=args.domain,
        )
    return load_lcp_tsv(args.train, track=args.track, column_map=args.column_map or "complex")


def cmd_prep_finetune(args: argparse.Namespace) -> int:
    train = _load_train_partition(args)
    records = build_finetune_set(train, args.task, args.language, cap=args.cap, seed=args.seed)
    emit_jsonl(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    if args.validation:
        if not args.validation_out:
            raise ConfigError("--validation requires --validation-out")
        args.train = args.validation
        val_records = build_finetune_set(
            _load_train_partition(args), args.task, args.language,
            cap=args.cap, seed=args.seed,
        )
        emit_jsonl(val_records, args.validation_out)
        print(f"wrote {len(val_records)} records to {args.validation_out}")
    return EXIT_OK


_DEMO_KINDS = {"sine": "sine_regression", "logistic": "logistic_2class"}


def cmd_fomaml_demo(args: argparse.Namespace) -> int:
    kind = _DEMO_KINDS[args.kind]
    if args.eval_tasks < 1:
        raise ConfigError("eval-tasks must be >= 1")
    sampler = toy_task_sampler(kind, seed=args.seed)
    try:
        config = MetaConfig(
            alpha=args.alpha,
            beta=args.beta,
            inner_steps=args.inner_steps,
            outer_steps=args.outer_steps,
            optimizer=args.optimizer,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = meta_train(sampler, config, seed=args.seed)
    if args.out:
        trace_to_csv(result.trace, args.out)
        print(f"wrote {len(result.trace)} trace points to {args.out}")
    if result.trace:
        print(f"final query loss: {result.trace[-1][1]:.6g} ({result.stopped})")
    eval_sampler = toy_task_sampler(kind, seed=args.seed + 1)
    tasks = [eval_sampler.sample() for _ in range(args.eval_tasks)]
    baseline = eval_sampler.init_params(np.random.default_rng(args.seed + 2))
    win = adaptation_win_rate(
        result.theta, baseline, tasks, alpha=args.alpha, inner_steps=args.inner_steps
    )
    print(
        f"win rate vs random init after {args.inner_steps} adaptation steps: "
        f"{win:.2f} on {args.eval_tasks} held-out tasks"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    config = load_run_config(run_dir / "run.yaml")
    records = Journal.load(run_dir / "journal.jsonl")
    if not records:
        raise ConfigError(f"{run_dir}: no journal to report on")
    report = build_report(config, load_examples(config), records)
    out_dir = Path(args.output_dir) if args.output_dir else run_dir
    for path in write_artifacts(report, out_dir):
        print(f"wrote {path}")
    return EXIT_OK


def _add_evaluate_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="YAML run configuration; flags override its keys")
    sub.add_argument("--replay", metavar="RUN_DIR", help="recompute a run from its journal")
    sub.add_argument(
        "--to", metavar="DIR", help="with --replay: write the replayed run here instead"
    )
    sub.add_argument("--task", choices=("cwi", "lcp"))
    sub.add_argument("--data", help="evaluation TSV")
    sub.add_argument("--endpoint", help="chat-completions base URL")
    sub.add_argument("--model")
    sub.add_argument("--language", choices=("en", "de", "es"))
    sub.add_argument("--regime", choices=("zero_shot", "few_shot"))
    cot = sub.add_mutually_exclusive_group()
    cot.add_argument("--cot", dest="cot", action="store_true", default=None,
                     help="ask for echo fields and a proof (default)")
    cot.add_argument("--no-cot", dest="cot", action="store_false",
                     help="strip the proof request from the schema")
    sub.add_argument("--column-map", help="column-map preset name or YAML path")
    sub.add_argument("--domain", help="corpus domain label (binary task)")
    sub.add_argument("--track", choices=("single", "multi"), help="continuous-task track")
    sub.add_argument("--k", type=int, help="samples per example (default: 1 binary, 20 continuous)")
    sub.add_argument("--limit", type=int, help="max requests in flight")
    sub.add_argument("--seed", type=int, help="few-shot shuffle seed")
    sub.add_argument("--max-examples", type=int, help="evaluate only the first N examples")
    sub.add_argument("--output-dir", help="parent directory for run directories")
    sub.add_argument("--temperature", type=float)
    sub.add_argument("--top-p", type=float)
    sub.add_argument("--top-k", type=int)
    sub.add_argument("--repetition-penalty", type=float)
    sub.add_argument("--max-tokens", type=int)
    sub.add_argument("--timeout", type=float)
    sub.add_argument("--max-attempts", type=int)
    sub.add_argument("--max-regens", type=int, help="regenerations per unparseable sample")
    sub.add_argument("--bins", type=int, help="prediction bins in the distribution table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexeval",
        description="Measure chat models on word-complexity judgments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("evaluate", help="run (or replay) one evaluation")
    _add_evaluate_flags(sub)
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("bootstrap-k", help="score-vs-sample-count curve from a run")
    sub.add_argument("--run-dir", required=True)
    sub.add_argument("--metric", choices=("mae", "pearson"), default="mae")
    sub.add_argument("--k-max", type=int)
    sub.add_argument("--resamples", type=int, default=100)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", help="curve CSV path (default: RUN_DIR/bootstrap_k.csv)")
    sub.set_defaults(func=cmd_bootstrap_k)

    sub = commands.add_parser("audit", help="echo-fidelity audit of a run")
    sub.add_argument("--run-dir", required=True)
    sub.set_defaults(func=cmd_audit)

    sub = commands.add_parser("prep-finetune", help="build a balanced fine-tuning JSONL")
    sub.add_argument("--task", choices=("cwi", "lcp"), required=True)
    sub.add_argument("--language", choices=("en", "de", "es"), default="en")
    sub.add_argument("--train", required=True, help="training-partition TSV")
    sub.add_argument("--column-map", help="column-map preset name or YAML path")
    sub.add_argument("--domain", default="other", help="corpus domain label (binary task)")
    sub.add_argument("--track", choices=("single", "multi"), default="single")
    sub.add_argument("--cap", type=int, default=250, help="total records to emit")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True, help="output JSONL path")
    sub.add_argument("--validation", help="validation-partition TSV (optional)")
    sub.add_argument("--validation-out", help="JSONL path for the validation set")
    sub.set_defaults(func=cmd_prep_finetune)

    sub = commands.add_parser("fomaml-demo", help="meta-train on a toy task family")
    sub.add_argument("--kind", choices=("sine", "logistic"), default="sine")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--outer-steps", type=int, default=3000)
    sub.add_argument("--alpha", type=float, default=0.02, help="inner-loop learning rate")
    sub.add_argument("--beta", type=float, default=0.01, help="outer-loop learning rate")
    sub.add_argument("--inner-steps", type=int, default=5)
    sub.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    sub.add_argument("--eval-tasks", type=int, default=100)
    sub.add_argument("--out", help="trace CSV path")
    sub.set_defaults(func=cmd_fomaml_demo)

    sub = commands.add_parser("report", help="rerender a run's report artifacts")
    sub.add_argument("--run-dir", required=True)
    sub.add_argument("--output-dir", help="write artifacts here instead of RUN_DIR")
    sub.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PromptError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RetryExhaustedError, HTTPStatusError, requests.RequestException) as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (
        CorpusError,
        FinetuneError,
        ScoringError,
        MetricError,
        FomamlError,
        LabelError,
        GatewayError,
    ) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
