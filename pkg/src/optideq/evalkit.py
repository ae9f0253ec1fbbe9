"""Metrics and comparative analyses: balanced accuracy, error overlap,
McNemar's test, seed aggregation, latency projection and wall-clock timing."""

from __future__ import annotations

import csv
import itertools
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from optideq.errors import ConfigurationError
from optideq.fileio import atomic_write_text

# Values reported for the HMDA study. They are carried into reports for
# reference only and never enter computed aggregates.
PUBLISHED_RAW = {
    # name: (features, parameters, optical, mean BACc %, std %)
    "XGBoost": ("19 raw", 31500, None, 97.91, 0.00),
    "MLP-large": ("60 (one-hot)", 24578, None, 97.46, 0.04),
    "MLP-small": ("60 (one-hot)", 5378, None, 97.21, 0.17),
    "Ens-4x-AOC-48": ("60 (Ising)", 21510, 9216, 95.14, 0.46),
    "Ens-4x-AOC-16": ("60 (Ising)", 5126, 1024, 94.64, 0.53),
    "Ens-4x-AOC-16 (SimpleCell)": ("60 (Ising)", 5122, None, 93.85, 1.58),
    "Logistic regression": ("60", 122, None, 70.04, None),
}
PUBLISHED_BINARISED = {
    "XGBoost": 89.51,
    "MLP-large": 89.57,
    "MLP-small": 89.56,
    "Ens-4x-AOC-16": 89.43,
    "Logistic regression": 76.54,
}
# per-sample inference time in microseconds
PUBLISHED_LATENCY_US = {
    ("XGBoost", "cpu", "batch"): 3.7,
    ("XGBoost", "cpu", "single"): 190.0,
    ("XGBoost", "gpu", "batch"): 0.14,
    ("XGBoost", "gpu", "single"): 1731.0,
    ("MLP-small", "cpu", "batch"): 0.31,
    ("MLP-small", "cpu", "single"): 11.8,
    ("MLP-small", "gpu", "single"): 39.0,
}
OPTICAL_PASS_NS = 20.0
TYPICAL_ITERATIONS = 9


def _binary(a, name):
    a = np.asarray(a)
    if a.ndim != 1:
        raise ConfigurationError(f"{name} must be one-dimensional")
    if a.size and not np.isin(a, (0, 1)).all():
        raise ConfigurationError(f"{name} must contain only 0/1")
    return a.astype(np.int64)


def confusion_counts(preds, labels) -> dict:
    """TP/FN/TN/FP with class 1 as the positive class."""
    p = _binary(preds, "preds")
    y = _binary(labels, "labels")
    if p.shape != y.shape:
        raise ConfigurationError("preds and labels must be aligned")
    return {
        "tp": int(np.sum((p == 1) & (y == 1))),
        "fn": int(np.sum((p == 0) & (y == 1))),
        "tn": int(np.sum((p == 0) & (y == 0))),
        "fp": int(np.sum((p == 1) & (y == 0))),
    }


def balanced_accuracy(preds, labels) -> float:
    """Mean of the per-class recalls."""
    c = confusion_counts(preds, labels)
    pos, neg = c["tp"] + c["fn"], c["tn"] + c["fp"]
    if pos == 0 or neg == 0:
        raise ConfigurationError("balanced accuracy needs both classes present in labels")
    return 0.5 * (c["tp"] / pos + c["tn"] / neg)


def error_set(preds, labels) -> np.ndarray:
    """Sorted indices of misclassified rows."""
    return np.flatnonzero(_binary(preds, "preds") != _binary(labels, "labels"))


@dataclass(frozen=True)
class Overlap:
    shared: int
    only_a: int
    only_b: int
    jaccard: float


def error_overlap(err_a, err_b) -> Overlap:
    a = set(np.asarray(list(err_a)).tolist())
    b = set(np.asarray(list(err_b)).tolist())
    shared = len(a & b)
    union = len(a | b)
    return Overlap(shared, len(a) - shared, len(b) - shared, 1.0 if union == 0 else shared / union)


def overlap_from_counts(n_a: int, n_b: int, shared: int) -> Overlap:
    """Overlap record from set sizes alone (as reported in figure captions)."""
    if not 0 <= shared <= min(n_a, n_b):
        raise ConfigurationError("shared count must lie in [0, min(|A|, |B|)]")
    union = n_a + n_b - shared
    return Overlap(shared, n_a - shared, n_b - shared, 1.0 if union == 0 else shared / union)


def chi2_sf_df1(x: float) -> float:
    """Upper tail of the chi-square distribution with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


def binomial_two_sided(k: int, n: int) -> float:
    """Exact two-sided p-value for ``k`` successes out of ``n`` at p = 1/2."""
    if n == 0:
        return 1.0
    lo = min(k, n - k)
    tail = sum(math.comb(n, i) for i in range(lo + 1)) / 2.0 ** n
    return min(1.0, 2.0 * tail)


@dataclass(frozen=True)
class McNemarResult:
    b: int
    c: int
    statistic: float
    p: float
    exact: bool


def mcnemar(preds_a, preds_b, labels, exact_below: int = 10) -> McNemarResult:
    """McNemar's test on the discordant pairs of two classifiers.

    ``b`` counts rows A gets right and B wrong, ``c`` the reverse. The
    statistic is the continuity-corrected ``(|b - c| - 1)^2 / (b + c)``;
    the p-value comes from the chi-square(1) tail, or from the exact
    binomial when ``b + c < exact_below``.
    """
    pa = _binary(preds_a, "preds_a")
    pb = _binary(preds_b, "preds_b")
    y = _binary(labels, "labels")
    if not (pa.shape == pb.shape == y.shape):
        raise ConfigurationError("predictions and labels must be aligned")
    ra, rb = pa == y, pb == y
    return mcnemar_from_counts(int(np.sum(ra & ~rb)), int(np.sum(~ra & rb)), exact_below)


def mcnemar_from_counts(b: int, c: int, exact_below: int = 10) -> McNemarResult:
    n = b + c
    if n == 0:
        return McNemarResult(b, c, 0.0, 1.0, True)
    stat = (abs(b - c) - 1.0) ** 2 / n
    if n < exact_below:
        return McNemarResult(b, c, stat, binomial_two_sided(b, n), True)
    return McNemarResult(b, c, stat, chi2_sf_df1(stat), False)


def aggregate_seeds(values):
    """Mean and sample standard deviation; std is ``None`` for a single value."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ConfigurationError("no values to aggregate")
    mean = float(np.mean(v))
    std = float(np.std(v, ddof=1)) if v.size > 1 else None
    return mean, std


def latency_projection(n_blocks, iterations, pass_time_ns) -> float:
    """Optical recurrence time: time-multiplexed blocks x iterations x pass time."""
    if n_blocks <= 0 or iterations <= 0 or pass_time_ns <= 0:
        raise ConfigurationError("latency inputs must be positive")
    return n_blocks * iterations * pass_time_ns


def platform_descriptor() -> str:
    return f"{platform.system()} {platform.machine()} {platform.processor() or 'unknown-cpu'} python-{platform.python_version()}"


@dataclass
class BenchResult:
    mode: str
    rows: int
    per_sample_ns: float
    repeats: int
    platform: str


def wallclock_bench(model, rows, mode: str = "batch", warmup: int = 3, repeats: int = 5) -> BenchResult:
    """Per-sample inference time of ``model.predict_logits`` on ``rows``.

    Batch mode times whole-array calls and divides by the row count (best of
    ``repeats``); single mode takes the median over per-row calls.
    """
    X = np.atleast_2d(np.asarray(rows, dtype=float))
    n = X.shape[0]
    if n == 0:
        raise ConfigurationError("need at least one row to benchmark")
    warmup = max(3, warmup)
    if mode == "batch":
        for _ in range(warmup):
            model.predict_logits(X)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            model.predict_logits(X)
            times.append(time.perf_counter_ns() - t0)
        per = min(times) / n
    elif mode == "single":
        for i in range(warmup):
            model.predict_logits(X[i % n:i % n + 1])
        times = []
        for i in range(n):
            row = X[i:i + 1]
            t0 = time.perf_counter_ns()
            model.predict_logits(row)
            times.append(time.perf_counter_ns() - t0)
        per = float(np.median(times))
    else:
        raise ConfigurationError(f"mode must be 'batch' or 'single', got {mode!r}")
    return BenchResult(mode, n, max(float(per), 1.0), repeats, platform_descriptor())


def majority_vote(pred_lists) -> np.ndarray:
    """Row-wise majority over several prediction vectors; ties go to the first model."""
    P = np.stack([_binary(p, "preds") for p in pred_lists])
    ones = P.sum(axis=0)
    k = P.shape[0]
    out = (2 * ones > k).astype(np.int64)
    tie = 2 * ones == k
    out[tie] = P[0, tie]
    return out


# -- predictions files -----------------------------------------------------

@dataclass
class Predictions:
    row_ids: np.ndarray
    labels: np.ndarray
    preds: np.ndarray
    logits: np.ndarray
    name: str = ""


def write_predictions(path, row_ids, labels, preds, logits) -> Path:
    lines = ["row_id,label,pred,logit0,logit1"]
    for rid, y, p, z in zip(row_ids, labels, preds, np.asarray(logits, dtype=float)):
        lines.append(f"{rid},{int(y)},{int(p)},{z[0]:.17g},{z[1]:.17g}")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_predictions(path, name: str | None = None) -> Predictions:
    ids, ys, ps, zs = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"row_id", "label", "pred"} - set(reader.fieldnames or [])
        if missing:
            raise ConfigurationError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            ids.append(rec["row_id"])
            ys.append(int(rec["label"]))
            ps.append(int(rec["pred"]))
            zs.append((float(rec.get("logit0") or "nan"), float(rec.get("logit1") or "nan")))
    return Predictions(np.array(ids, dtype=object), np.array(ys), np.array(ps),
                       np.array(zs).reshape(-1, 2), name or Path(path).stem)


@dataclass
class PairRow:
    model_a: str
    model_b: str
    overlap: Overlap
    mcnemar: McNemarResult
    vote_bacc: float


def compare_predictions(preds: list) -> list:
    """Pairwise overlap, McNemar and majority-vote accuracy for aligned prediction sets."""
    if len(preds) < 2:
        raise ConfigurationError("need at least two prediction sets to compare")
    ref = preds[0]
    for other in preds[1:]:
        if len(other.row_ids) != len(ref.row_ids) or np.any(other.row_ids != ref.row_ids):
            n = min(len(other.row_ids), len(ref.row_ids))
            bad = next((i for i in range(n) if other.row_ids[i] != ref.row_ids[i]), n)
            first = ref.row_ids[bad] if bad < len(ref.row_ids) else "<end>"
            theirs = other.row_ids[bad] if bad < len(other.row_ids) else "<end>"
            raise ConfigurationError(
                f"row ids of {other.name!r} diverge from {ref.name!r} at position {bad}: {theirs} vs {first}")
        if np.any(other.labels != ref.labels):
            raise ConfigurationError(f"labels of {other.name!r} differ from {ref.name!r}")
    rows = []
    for a, b in itertools.combinations(preds, 2):
        ov = error_overlap(error_set(a.preds, a.labels), error_set(b.preds, b.labels))
        mc = mcnemar(a.preds, b.preds, a.labels)
        vote = balanced_accuracy(majority_vote([a.preds, b.preds]), a.labels)
        rows.append(PairRow(a.name, b.name, ov, mc, vote))
    return rows


# -- reports ---------------------------------------------------------------

@dataclass
class ModelSummary:
    name: str
    seed_scores: dict = field(default_factory=dict)     # seed -> BACc
    confusion: dict = field(default_factory=dict)       # seed -> counts
    errors: dict = field(default_factory=dict)          # seed -> error index array
    parameters: int | None = None
    optical: int | None = None

    @property
    def mean_std(self):
        return aggregate_seeds(self.seed_scores.values())


@dataclass
class EvalReport:
    models: dict = field(default_factory=dict)
    pairs: list = field(default_factory=list)
    latency: list = field(default_factory=list)          # (label, ns)
    benches: list = field(default_factory=list)          # (model, BenchResult)
    include_published: bool = True

    def add_seed(self, name, seed, preds, labels, parameters=None, optical=None):
        m = self.models.setdefault(name, ModelSummary(name))
        m.seed_scores[seed] = balanced_accuracy(preds, labels)
        m.confusion[seed] = confusion_counts(preds, labels)
        m.errors[seed] = error_set(preds, labels)
        m.parameters = parameters if parameters is not None else m.parameters
        m.optical = optical if optical is not None else m.optical

    def add_pair(self, name_a, seed_a, name_b, seed_b, preds_a, preds_b, labels):
        ov = error_overlap(error_set(preds_a, labels), error_set(preds_b, labels))
        mc = mcnemar(preds_a, preds_b, labels)
        vote = balanced_accuracy(majority_vote([preds_a, preds_b]), labels)
        self.pairs.append(PairRow(f"{name_a}[{seed_a}]", f"{name_b}[{seed_b}]", ov, mc, vote))

    def key_values(self) -> list:
        kv = []
        for name, m in sorted(self.models.items()):
            mean, std = m.mean_std
            kv.append((f"model.{name}.bacc_mean", f"{mean:.17g}"))
            kv.append((f"model.{name}.bacc_std", "absent" if std is None else f"{std:.17g}"))
            kv.append((f"model.{name}.seeds", ",".join(str(s) for s in m.seed_scores)))
            for seed, score in m.seed_scores.items():
                kv.append((f"model.{name}.seed{seed}.bacc", f"{score:.17g}"))
                kv.append((f"model.{name}.seed{seed}.errors", str(len(m.errors[seed]))))
            if m.parameters is not None:
                kv.append((f"model.{name}.parameters", str(m.parameters)))
            if m.optical is not None:
                kv.append((f"model.{name}.optical", str(m.optical)))
        for p in self.pairs:
            key = f"pair.{p.model_a}~{p.model_b}"
            kv += [(f"{key}.jaccard", f"{p.overlap.jaccard:.17g}"),
                   (f"{key}.shared", str(p.overlap.shared)),
                   (f"{key}.only_a", str(p.overlap.only_a)),
                   (f"{key}.only_b", str(p.overlap.only_b)),
                   (f"{key}.mcnemar_stat", f"{p.mcnemar.statistic:.17g}"),
                   (f"{key}.mcnemar_p", f"{p.mcnemar.p:.17g}"),
                   (f"{key}.vote_bacc", f"{p.vote_bacc:.17g}")]
        for label, ns in self.latency:
            kv.append((f"latency.{label}.ns", f"{ns:.17g}"))
        for model, b in self.benches:
            kv.append((f"bench.{model}.{b.mode}.ns_per_sample", f"{b.per_sample_ns:.6g}"))
        if self.include_published:
            for name, (_, params, optical, mean, std) in PUBLISHED_RAW.items():
                kv.append((f"published.raw.{name}.bacc_mean", repr(mean)))
            for name, val in PUBLISHED_BINARISED.items():
                kv.append((f"published.binarised.{name}.bacc_mean", repr(val)))
        return kv

    def to_keyvalue(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.key_values())

    def to_text(self) -> str:
        out = ["Evaluation report", "=================", "", "Models (balanced accuracy, mean +- sample std over seeds)"]
        for name, m in sorted(self.models.items()):
            mean, std = m.mean_std
            spread = "" if std is None else f" +- {100 * std:.2f}"
            params = "" if m.parameters is None else f"  params={m.parameters}"
            optical = "" if m.optical is None else f" optical={m.optical}"
            out.append(f"  {name:<34} {100 * mean:6.2f}{spread}  (n_seeds={len(m.seed_scores)}){params}{optical}")
        if self.pairs:
            out += ["", "Pairwise error overlap"]
            out.append(f"  {'A':<28} {'B':<28} {'shared':>7} {'onlyA':>7} {'onlyB':>7} {'jaccard':>8} {'mcnemar p':>10} {'vote':>7}")
            for p in self.pairs:
                out.append(f"  {p.model_a:<28} {p.model_b:<28} {p.overlap.shared:>7} {p.overlap.only_a:>7} "
                           f"{p.overlap.only_b:>7} {p.overlap.jaccard:>8.3f} {p.mcnemar.p:>10.3g} {100 * p.vote_bacc:>7.2f}")
        if self.latency:
            out += ["", "Projected optical recurrence latency"]
            for label, ns in self.latency:
                out.append(f"  {label:<40} {ns:10.1f} ns")
        if self.benches:
            out += ["", "Measured wall-clock inference (this machine)"]
            for model, b in self.benches:
                out.append(f"  {model:<28} {b.mode:<7} {b.per_sample_ns / 1000:10.3f} us/sample over {b.rows} rows  [{b.platform}]")
        if self.include_published:
            out += ["", "Published reference values (published, not reproduced)"]
            for name, (feat, params, optical, mean, std) in PUBLISHED_RAW.items():
                spread = "" if std is None else f" +- {std:.2f}"
                bin_ = PUBLISHED_BINARISED.get(name)
                bin_txt = "" if bin_ is None else f"  binarised {bin_:.2f}"
                out.append(f"  {name:<28} raw {mean:.2f}{spread}{bin_txt}  params~{params}")
        return "\n".join(out) + "\n"

    def write(self, directory) -> None:
        directory = Path(directory)
        atomic_write_text(directory / "report.txt", self.to_text())
        atomic_write_text(directory / "report.kv", self.to_keyvalue())
        atomic_write_text(directory / "scores_long.csv", self.long_table())

    def long_table(self) -> str:
        """Plot-ready long format: one row per (model, seed)."""
        lines = ["model,seed,bacc,errors,parameters,source"]
        for name, m in sorted(self.models.items()):
            for seed, score in m.seed_scores.items():
                lines.append(f"{name},{seed},{score:.17g},{len(m.errors[seed])},{m.parameters or ''},computed")
        if self.include_published:
            for name, (_, params, _, mean, _) in PUBLISHED_RAW.items():
                lines.append(f"{name} [raw],,{mean / 100:.6g},,{params},published")
            for name, val in PUBLISHED_BINARISED.items():
                lines.append(f"{name} [binarised],,{val / 100:.6g},,,published")
        return "\n".join(lines) + "\n"


def limitation_layers(reference_raw: float, model_raw: float, model_binarised: float,
                      ideal_raw: float | None = None, impaired_raw: float | None = None) -> dict:
    """Split an accuracy gap into architecture, encoding and hardware terms (percentage points).

    architecture = reference_raw - model_raw; encoding = model_raw - model_binarised;
    hardware = ideal_raw - impaired_raw when both are given.
    """
    out = {"architecture_pp": reference_raw - model_raw, "encoding_pp": model_raw - model_binarised}
    if ideal_raw is not None and impaired_raw is not None:
        out["hardware_pp"] = ideal_raw - impaired_raw
    return out
