"""Command-line front end: ``roma train|eval|ablate|selftest|gen-data``.

Exit codes: 0 success, 1 self-test failure, 2 invalid input (config, data or
checkpoint), 3 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint, config as config_mod, selftest
from .ablation import AXES, run_axis
from .config import ExperimentConfig
from .data import RMDS_MAGIC, Dataset, load_cifar_binary, load_rmds, save_rmds
from .encoder import from_state
from .errors import ConfigError, FormatError, RomaError
from .evaluation import EvalReport, collapse_diagnostics, export_embeddings, knn_eval, linear_probe
from .experiment import load_datasets, probe_config
from .plotting import plot_metrics
from .trainer import TrainingAborted, train

log = logging.getLogger("roma")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3


def _resolve(args) -> ExperimentConfig:
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    seed = args.seed if getattr(args, "seed", None) is not None else os.environ.get("ROMA_SEED")
    if seed is not None:
        try:
            cfg = cfg.replace(**{"train.seed": int(seed)})
        except ValueError as exc:
            raise ConfigError(f"seed must be an integer, got {seed!r}", key="seed") from exc
    return cfg


def _error(exc: Exception) -> None:
    key = getattr(exc, "key", None)
    suffix = f" (key: {key})" if key else ""
    print(f"error: {exc}{suffix}", file=sys.stderr)


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_mod.dumps(cfg))
    train_set, _ = load_datasets(cfg)
    try:
        _, records = train(cfg, train_set, out)
    except TrainingAborted as exc:
        (out / "abort.json").write_text(json.dumps(exc.record, indent=2, sort_keys=True) + "\n")
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    if records:
        plot_metrics(records, out / "metrics.png")
        last = records[-1]
        print(f"trained {last['epoch']} epochs, final loss {last['loss']:.6f}")
    else:
        print("trained 0 epochs; wrote initial parameters")
    return EXIT_OK


def _load_data_file(path) -> Dataset:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return load_rmds(path) if head == RMDS_MAGIC else load_cifar_binary(path)


def cmd_eval(args) -> int:
    params = from_state(checkpoint.load(args.checkpoint))
    cfg = _resolve(args)
    if args.data:
        train_set = _load_data_file(args.data)
        test_set = _load_data_file(args.test_data) if args.test_data else train_set
    else:
        train_set, test_set = load_datasets(cfg)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    report = EvalReport(config=cfg.to_dict())
    feats = params.features(test_set.flat())
    report.emb_std, report.mean_offdiag_cos = collapse_diagnostics(feats)
    if args.mode in ("linear", "all"):
        report.probe_top1 = linear_probe(params, train_set, test_set, probe_config(cfg), cfg.train.seed)
    if args.mode in ("knn", "all"):
        report.knn_top1 = knn_eval(params, train_set, test_set, args.k or cfg.eval.knn_k)
    if args.mode in ("export", "all"):
        export_embeddings(params, test_set, out / "embeddings.csv")
    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(report.csv_header() + "\n" + report.csv_row() + "\n")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_mod.dumps(cfg))
    for axis in (AXES if args.axis == "all" else [args.axis]):
        rows = run_axis(cfg, axis, out)
        for r in rows:
            print(f"{axis:9s} {r['variant']:10s} probe={r['probe_top1']:.4f} knn={r['knn_top1']:.4f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = selftest.run_all(faithful_eq1=args.faithful_eq1, grad_trials=args.grad_trials)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    if failed:
        print("failing: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    train_set, test_set = load_datasets(cfg)
    save_rmds(train_set, args.out)
    if args.test_out:
        save_rmds(test_set, args.test_out)
    print(f"wrote {len(train_set)} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roma", description="Triplet + random-mapping self-supervised learning")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an encoder")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--data", help="RMDS or CIFAR binary file with probe training samples")
    e.add_argument("--test-data")
    e.add_argument("--mode", choices=("linear", "knn", "export", "all"), default="all")
    e.add_argument("--k", type=int)
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="sweep one ablation axis")
    a.add_argument("--config")
    a.add_argument("--axis", required=True, choices=(*AXES, "all"))
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("selftest", help="run the built-in property suites")
    s.add_argument("--faithful-eq1", action="store_true", help="use the printed hinge sign convention")
    s.add_argument("--grad-trials", type=int, default=20)
    s.set_defaults(func=cmd_selftest)

    g = sub.add_parser("gen-data", help="write the configured synthetic dataset as RMDS")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--test-out")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, RomaError, OSError) as exc:
        _error(exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
