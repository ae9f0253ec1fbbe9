"""Command-line entry point: ``optideq <verb> [flags]``.

Verbs: synth, encode, split, train, eval, compare, latency, pipeline. Every verb
writes its outputs under ``--out`` together with a ``manifest.json``. Flags
override values from ``--config``. Failures exit nonzero with a message that
names the stage.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from optideq import pipeline
from optideq.config import ExperimentConfig, load_config
from optideq.errors import OptiDeqError, StageError
from optideq.evalkit import (
    OPTICAL_PASS_NS,
    EvalReport,
    compare_predictions,
    latency_projection,
    read_predictions,
)
from optideq.fileio import atomic_write_text, sha256_file
from optideq.synth import TASKS, SyntheticSpec, cmd_synth

log = logging.getLogger("optideq")


def _common(p: argparse.ArgumentParser, config=True) -> None:
    if config:
        p.add_argument("--config", help="INI experiment config; flags below override it")
        p.add_argument("--mode", choices=("raw-ising", "raw-onehot", "binarized"))
        p.add_argument("--model", help="comma-separated model families (deq, mlp-small, mlp-large, logreg)")
        p.add_argument("--cell", choices=("SimpleCell", "AOCCell"))
        p.add_argument("--csv", help="input table (overrides [data] csv)")
        p.add_argument("--schema", help="schema path, 'hmda' or 'synth:<task>'")
    p.add_argument("--seed", type=int, action="append",
                   help="run seed; repeat for several (synth: generator seed)")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optideq", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="write a synthetic table with a known labelling rule")
    _common(p, config=False)
    p.add_argument("--task", choices=TASKS, default="xor-like")
    p.add_argument("--rows", type=int, default=10_000)
    p.add_argument("--noise", type=float, default=0.02)

    for verb, text in (("split", "stratify, downsample, pool and group-split the input table"),
                       ("encode", "split, then fit encoders on train rows and encode every partition"),
                       ("train", "split, encode and train the configured families and seeds"),
                       ("eval", "evaluate checkpoints of a previous train run in --out"),
                       ("pipeline", "run every stage end to end")):
        _common(sub.add_parser(verb, help=text))

    p = sub.add_parser("compare", help="pairwise overlap, McNemar and majority vote of prediction files")
    p.add_argument("predictions", nargs="+", help="prediction CSVs (row_id,label,pred,...)")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("latency", help="project optical recurrence latency")
    p.add_argument("--blocks", type=int, default=4, help="blocks run one after another on the optical core")
    p.add_argument("--iters", type=float, default=9.0, help="fixed-point iterations per block")
    p.add_argument("--pass-ns", type=float, default=OPTICAL_PASS_NS, help="time per optical pass in ns")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config(args) -> ExperimentConfig:
    overrides = {"mode": args.mode, "cell": args.cell, "out": args.out, "csv": args.csv,
                 "schema": args.schema, "families": args.model}
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    return load_config(args.config, overrides)


def _verb_manifest(cfg: ExperimentConfig, verb: str, rejected) -> None:
    out = Path(cfg.out)
    pipeline.write_manifest(out, pipeline.build_manifest(cfg, out, rejected, command=verb))


def _run_synth(args) -> int:
    seed = args.seed[0] if args.seed else 0
    spec = SyntheticSpec(args.rows, seed, args.task, args.noise)
    out = Path(args.out or ".")
    path = cmd_synth(spec, out / f"synth_{spec.task}_seed{seed}.csv")
    pipeline.write_manifest(out, {
        "format": "optideq-manifest", "version": 1, "command": "synth",
        "synthetic": {"rows": spec.rows, "seed": spec.seed, "task": spec.task, "noise": spec.noise,
                      "bayes_balanced_accuracy": spec.bayes_balanced_accuracy},
        "versions": pipeline._versions(),
        "outputs": {path.name: sha256_file(path)},
    })
    print(path)
    return 0


def _run_stages(args) -> int:
    cfg = _config(args)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    if args.verb == "pipeline":
        res = pipeline.cmd_pipeline(cfg)
        print(res.report.to_text(), end="")
        return 0
    if args.verb == "eval":
        report = pipeline.run_eval(cfg)
        _verb_manifest(cfg, "eval", {})
        print(report.to_text(), end="")
        return 0
    if args.verb == "split":
        *_, rejected, res = pipeline.run_split(cfg)
        print(res.report.to_text(), end="")
    elif args.verb == "encode":
        encoded, rejected = pipeline.run_encode(cfg)
        for mode, mats in encoded.items():
            print(mode, " ".join(f"{k}={v[0].shape}" for k, v in mats.items()))
    else:
        _, histories, rejected = pipeline.run_train(cfg)
        for (family, seed), h in histories.items():
            print(f"{family} seed {seed}: best epoch {h.best_epoch}, val BACc {h.best_metric:.4f} ({h.stop_reason})")
    _verb_manifest(cfg, args.verb, rejected)
    return 0


def _run_compare(args) -> int:
    preds = [read_predictions(p) for p in args.predictions]
    rows = compare_predictions(preds)
    report = EvalReport(pairs=rows, include_published=False)
    text = report.to_text()
    print(text, end="")
    if args.out:
        out = Path(args.out)
        atomic_write_text(out / "compare.txt", text)
        atomic_write_text(out / "compare.kv", report.to_keyvalue())
        pipeline.write_manifest(out, {
            "format": "optideq-manifest", "version": 1, "command": "compare",
            "inputs": {str(p): sha256_file(p) for p in args.predictions},
            "versions": pipeline._versions(),
            "outputs": {n: sha256_file(out / n) for n in ("compare.txt", "compare.kv")},
        })
    return 0


def _run_latency(args) -> int:
    ns = latency_projection(args.blocks, args.iters, args.pass_ns)
    line = f"{args.blocks} block(s) x {args.iters:g} iterations x {args.pass_ns:g} ns = {ns:g} ns"
    print(line)
    if args.out:
        out = Path(args.out)
        atomic_write_text(out / "latency.txt", line + "\n")
        pipeline.write_manifest(out, {
            "format": "optideq-manifest", "version": 1, "command": "latency",
            "parameters": {"blocks": args.blocks, "iterations": args.iters, "pass_ns": args.pass_ns},
            "latency_ns": ns,
            "outputs": {"latency.txt": sha256_file(out / "latency.txt")},
        })
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "synth":
            return _run_synth(args)
        if args.verb == "compare":
            return _run_compare(args)
        if args.verb == "latency":
            return _run_latency(args)
        return _run_stages(args)
    except StageError as exc:
        print(f"optideq {args.verb}: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return 2
    except (OptiDeqError, ValueError, OSError) as exc:
        print(f"optideq {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
