"""End-to-end experiment runner.

Stages, each persisted under the run directory:

``ingest``    read the CSV against the schema, drop rows with missing fields
``split``     stratified split, downsampling, pooling, group split
              (group keys from a binarized encoder fitted on stratified-train rows)
``encode``    fit one encoder per needed mode on the group-split train rows only
``train``     every model family x seed
``evaluate``  test-set predictions, metrics, pairwise overlap, latency projection
``manifest``  input digests, seeds, versions and digests of deterministic outputs
"""

from __future__ import annotations

import json
import logging
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from optideq import checkpoint
from optideq.baselines import LogRegParams, MlpParams
from optideq.config import ExperimentConfig
from optideq.deq import ModelConfig, count_parameters, forward_batch, init_ensemble
from optideq.encoding import encode_rows, fit_encoder, group_keys, read_table
from optideq.errors import StageError
from optideq.evalkit import (
    OPTICAL_PASS_NS,
    EvalReport,
    latency_projection,
    wallclock_bench,
    write_predictions,
)
from optideq.fileio import atomic_write_text, derive_seed, sha256_file
from optideq.splitter import PARTITIONS, split_protocol
from optideq.training import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    out: Path
    report: EvalReport
    manifest: dict
    models: dict = field(default_factory=dict)    # (family, seed) -> trained model


def _subset(frame, idx):
    return frame.iloc[np.asarray(idx)].reset_index(drop=True)


def build_model(family: str, cfg: ExperimentConfig, d_in: int, seed: int):
    if family == "deq":
        mc = ModelConfig(d_in, cfg.d_hidden, cfg.n_blocks, cfg.alpha, cfg.beta, cfg.tol,
                         cfg.max_iters, cfg.cell_spec())
        return init_ensemble(mc, seed, cfg.init_gain, cfg.ip_scale)
    if family == "mlp-small":
        return MlpParams.init(d_in, 48, seed)
    if family == "mlp-large":
        return MlpParams.init(d_in, 128, seed)
    return LogRegParams.init(d_in, seed, cfg.logreg_l2)


def model_parameters(model) -> tuple:
    if hasattr(model, "config"):
        counts = count_parameters(model.config)
        return counts["total"], counts["optical"]
    return model.parameter_count(), None


def _stage(name):
    def wrap(fn):
        def run(*args, **kw):
            log.info("stage %s", name)
            try:
                return fn(*args, **kw)
            except StageError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
                raise StageError(name, exc) from exc
        return run
    return wrap


@_stage("ingest")
def _ingest(cfg: ExperimentConfig):
    cfg.validate_files()
    schema = cfg.load_schema()
    frame, labels, row_ids, rejected = read_table(cfg.csv, schema)
    return schema, frame, labels, row_ids, rejected


@_stage("split")
def _split(cfg, schema, frame, labels, row_ids, out: Path):
    def key_fn(pool, strat_train):
        key_fit = fit_encoder(_subset(frame, strat_train), schema, "binarized")
        key_fit.save(out / "encoder_group_keys.json")
        return group_keys(encode_rows(key_fit, _subset(frame, pool)))

    res = split_protocol(labels, key_fn, cfg.master_seed, cfg.stratified_ratios, cfg.group_ratios)
    lines = ["row_id,partition"]
    tags = {}
    for name, idx in zip(PARTITIONS, res.parts):
        for i in idx:
            tags[int(i)] = name
    for i in res.holdout:
        tags[int(i)] = "holdout"
    lines += [f"{row_ids[i]},{tags[i]}" for i in sorted(tags)]
    atomic_write_text(out / "assignments.csv", "\n".join(lines) + "\n")
    atomic_write_text(out / "split_report.txt", res.report.to_text())
    return res


@_stage("encode")
def _encode(cfg, schema, frame, labels, parts, out: Path):
    modes = sorted({cfg.family_mode(f) for f in cfg.families})
    encoded = {}
    train_rows = _subset(frame, parts[0])
    for mode in modes:
        fit = fit_encoder(train_rows, schema, mode, ising=cfg.ising)
        fit.save(out / f"encoder_{mode}.json")
        mats = {}
        for name, idx in zip(PARTITIONS, parts):
            X = encode_rows(fit, _subset(frame, idx))
            np.save(out / f"encoded_{mode}_{name}_X.npy", X)
            np.save(out / f"encoded_{mode}_{name}_y.npy", labels[idx])
            mats[name] = (X, labels[idx])
        encoded[mode] = mats
    return encoded


@_stage("train")
def _train(cfg, encoded, out: Path):
    models, histories = {}, {}
    for family in cfg.families:
        mats = encoded[cfg.family_mode(family)]
        d_in = mats["train"][0].shape[1]
        for seed in cfg.seeds:
            model = build_model(family, cfg, d_in, derive_seed(seed, f"init:{family}"))
            tc = TrainConfig(cfg.family_lr(family), cfg.batch_size, cfg.patience, cfg.max_epochs,
                             derive_seed(seed, f"shuffle:{family}"),
                             through_impairments=cfg.through_impairments,
                             max_recurrent_gain=cfg.max_recurrent_gain,
                             calib_lr_scale=cfg.calib_lr_scale)
            best, hist = train(model, mats["train"], mats["val"], tc)
            checkpoint.save(best, out / "models" / f"{family}_seed{seed}.ckpt")
            atomic_write_text(out / "models" / f"{family}_seed{seed}_history.tsv", hist.to_text())
            models[(family, seed)] = best
            histories[(family, seed)] = hist
            log.info("trained %s seed %s: best epoch %d, val BACc %.4f",
                     family, seed, hist.best_epoch, hist.best_metric)
    return models, histories


@_stage("evaluate")
def _evaluate(cfg, encoded, models, test_ids, out: Path):
    report = EvalReport()
    preds = {}
    for (family, seed), model in models.items():
        X, y = encoded[cfg.family_mode(family)]["test"]
        if family == "deq":
            fb = forward_batch(model, X)
            logits = fb.logits
            mean_iters = float(fb.iterations.max(axis=0).mean())
            nb = model.config.n_blocks
            report.latency.append((f"deq_seed{seed}_multiplexed({nb}x{mean_iters:.2f}it)",
                                   latency_projection(nb, mean_iters, OPTICAL_PASS_NS)))
            report.latency.append((f"deq_seed{seed}_single_module({mean_iters:.2f}it)",
                                   latency_projection(1, mean_iters, OPTICAL_PASS_NS)))
        else:
            logits = model.predict_logits(X)
        p = (logits[:, 1] > logits[:, 0]).astype(np.int64)
        preds[(family, seed)] = (p, y)
        total, optical = model_parameters(model)
        report.add_seed(family, seed, p, y, total, optical)
        write_predictions(out / "predictions" / f"{family}_seed{seed}.csv", test_ids, y, p, logits)
    keys = sorted(preds)
    firsts = {}
    for fam, seed in keys:
        firsts.setdefault(fam, seed)
    fams = list(firsts)
    for i in range(len(fams)):
        for j in range(i + 1, len(fams)):
            a, b = fams[i], fams[j]
            pa, y = preds[(a, firsts[a])]
            pb, _ = preds[(b, firsts[b])]
            report.add_pair(a, firsts[a], b, firsts[b], pa, pb, y)
    report.write(out)
    if cfg.bench_rows > 0:
        lines = []
        for (family, seed), model in models.items():
            X = encoded[cfg.family_mode(family)]["test"][0][: cfg.bench_rows]
            for mode in ("batch", "single"):
                b = wallclock_bench(model, X, mode)
                report.benches.append((f"{family}_seed{seed}", b))
                lines.append(f"{family}\t{seed}\t{b.mode}\t{b.rows}\t{b.per_sample_ns:.1f}\t{b.platform}")
        atomic_write_text(out / "bench.tsv", "family\tseed\tmode\trows\tns_per_sample\tplatform\n"
                          + "\n".join(lines) + "\n")
    return report


def run_split(cfg: ExperimentConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    schema, frame, labels, row_ids, rejected = _ingest(cfg)
    res = _split(cfg, schema, frame, labels, row_ids, out)
    atomic_write_text(out / "test_row_ids.txt", "\n".join(map(str, row_ids[res.parts[2]])) + "\n")
    return schema, frame, labels, row_ids, rejected, res


def run_encode(cfg: ExperimentConfig):
    schema, frame, labels, row_ids, rejected, res = run_split(cfg)
    encoded = _encode(cfg, schema, frame, labels, res.parts, Path(cfg.out))
    return encoded, rejected


def run_train(cfg: ExperimentConfig):
    encoded, rejected = run_encode(cfg)
    models, histories = _train(cfg, encoded, Path(cfg.out))
    return models, histories, rejected


def load_encoded(cfg: ExperimentConfig) -> dict:
    """Encoded partitions written by a previous encode stage in ``cfg.out``."""
    out = Path(cfg.out)
    encoded = {}
    for mode in sorted({cfg.family_mode(f) for f in cfg.families}):
        mats = {}
        for name in PARTITIONS:
            xp, yp = out / f"encoded_{mode}_{name}_X.npy", out / f"encoded_{mode}_{name}_y.npy"
            if not xp.exists() or not yp.exists():
                raise FileNotFoundError(f"{xp.name} missing; run the encode stage first")
            mats[name] = (np.load(xp), np.load(yp))
        encoded[mode] = mats
    return encoded


@_stage("evaluate")
def _load_models(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    models = {}
    for family in cfg.families:
        for seed in cfg.seeds:
            path = out / "models" / f"{family}_seed{seed}.ckpt"
            if not path.exists():
                raise FileNotFoundError(f"checkpoint {path} missing; run the train stage first")
            models[(family, seed)] = checkpoint.load(path)
    return models


def run_eval(cfg: ExperimentConfig) -> EvalReport:
    out = Path(cfg.out)
    encoded = _stage("evaluate")(load_encoded)(cfg)
    models = _load_models(cfg)
    ids_path = out / "test_row_ids.txt"
    test_ids = np.array(ids_path.read_text().split(), dtype=object)
    return _evaluate(cfg, encoded, models, test_ids, out)


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"optideq": pkg, "numpy": np.__version__, "python": platform.python_version()}


DETERMINISTIC_OUTPUTS = ("assignments.csv", "split_report.txt", "report.kv", "report.txt", "scores_long.csv")


def output_digests(out: Path) -> dict:
    outputs = {}
    for path in sorted(Path(out).rglob("*")):
        rel = path.relative_to(out).as_posix()
        if path.is_file() and rel not in ("manifest.json", "bench.tsv") and not rel.startswith("."):
            outputs[rel] = sha256_file(path)
    return outputs


def write_manifest(out, manifest: dict) -> dict:
    atomic_write_text(Path(out) / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def build_manifest(cfg: ExperimentConfig, out: Path, rejected: dict, command: str = "pipeline") -> dict:
    outputs = output_digests(out)
    return {
        "format": "optideq-manifest",
        "version": 1,
        "command": command,
        # the run directory is where outputs go, not an input; leaving it out
        # lets two runs of one config in different directories be compared
        "config": "\n".join(ln for ln in cfg.to_ini().splitlines() if not ln.startswith("out = ")) + "\n",
        "inputs": {"csv": {"path": str(cfg.csv), "sha256": sha256_file(cfg.csv)},
                   "schema": {"name": cfg.schema, "text_sha256": _schema_digest(cfg)}},
        "rejected_rows": rejected,
        "seeds": {"master": cfg.master_seed, "runs": list(cfg.seeds),
                  "stratified_split": derive_seed(cfg.master_seed, "stratified_split"),
                  "group_split": derive_seed(cfg.master_seed, "group_split")},
        "versions": _versions(),
        "outputs": outputs,
    }


def _schema_digest(cfg) -> str:
    import hashlib

    return hashlib.sha256(cfg.load_schema().to_text().encode()).hexdigest()


def cmd_pipeline(cfg: ExperimentConfig) -> RunResult:
    """Run every stage; on failure a :class:`StageError` names the stage and partial outputs stay on disk."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    schema, frame, labels, row_ids, rejected = _ingest(cfg)
    res = _split(cfg, schema, frame, labels, row_ids, out)
    encoded = _encode(cfg, schema, frame, labels, res.parts, out)
    models, _ = _train(cfg, encoded, out)
    atomic_write_text(out / "test_row_ids.txt", "\n".join(map(str, row_ids[res.parts[2]])) + "\n")
    report = _evaluate(cfg, encoded, models, row_ids[res.parts[2]], out)
    try:
        manifest = write_manifest(out, build_manifest(cfg, out, rejected))
    except Exception as exc:  # noqa: BLE001
        raise StageError("manifest", exc) from exc
    log.info("pipeline finished in %.1f s", time.perf_counter() - t0)
    return RunResult(out, report, manifest, models)
