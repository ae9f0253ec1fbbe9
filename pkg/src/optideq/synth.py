"""Synthetic labelled tables with a known generating rule.

Every task draws a clean label from a deterministic rule and flips it with
probability ``noise``, so the Bayes balanced accuracy is ``1 - noise``.

``separable``       sign of a fixed linear combination of z1..z4
``xor-like``        sign of z1 * z2 (z1, z2 uniform on [-1, 1]); continuous
                    columns only, z3 and z4 are distractors
``binned-boundary`` z1 falls in one of a fixed set of quantile bins (stripes
                    aligned with the 11-bin binarisation; not monotone in z1)
``sparse-onehot``   categorical-only table (one-hot inputs ~88% zeros); label
                    mixes an interaction of two categoricals with a vote of
                    three others

``separable`` and ``binned-boundary`` share a mixed schema (four continuous,
two categorical, two binary columns); see :func:`synth_schema`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from optideq.encoding import FeatureSchema, FeatureSpec
from optideq.errors import ConfigurationError
from optideq.fileio import atomic_write_text

TASKS = ("separable", "xor-like", "binned-boundary", "sparse-onehot")
LEVELS = "abcdefgh"
STRIPE_BINS = 11


@dataclass(frozen=True)
class SyntheticSpec:
    rows: int = 10_000
    seed: int = 0
    task: str = "xor-like"
    noise: float = 0.02

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not 0 <= self.noise < 0.5:
            raise ConfigurationError("noise rate must lie in [0, 0.5)")
        if self.rows < 1:
            raise ConfigurationError("rows must be positive")

    @property
    def bayes_balanced_accuracy(self) -> float:
        return 1.0 - self.noise


def synth_schema(task: str = "xor-like") -> FeatureSchema:
    if task == "sparse-onehot":
        feats = tuple(FeatureSpec(f"c{i}", "categorical", cap=len(LEVELS)) for i in range(1, 7))
    elif task == "xor-like":
        feats = tuple(FeatureSpec(f"z{i}", "continuous") for i in range(1, 5))
    else:
        feats = (
            FeatureSpec("z1", "continuous"), FeatureSpec("z2", "continuous"),
            FeatureSpec("z3", "continuous"), FeatureSpec("z4", "continuous"),
            FeatureSpec("cat1", "categorical", cap=len(LEVELS)),
            FeatureSpec("cat2", "categorical", cap=len(LEVELS)),
            FeatureSpec("flag1", "binary"), FeatureSpec("flag2", "binary"),
        )
    return FeatureSchema(feats, target="label", row_id="row_id")


def _level_signs(rng) -> np.ndarray:
    signs = np.array([1] * (len(LEVELS) // 2) + [-1] * (len(LEVELS) // 2))
    return rng.permutation(signs)


def generate(spec: SyntheticSpec) -> dict:
    """Columns of a synthetic table (``row_id``, features, ``label``) as arrays."""
    rng = np.random.default_rng(spec.seed)
    n = spec.rows
    cols = {"row_id": np.array([f"r{i:07d}" for i in range(n)], dtype=object)}
    if spec.task == "sparse-onehot":
        levels = rng.integers(0, len(LEVELS), size=(n, 6))
        signs = np.stack([_level_signs(rng) for _ in range(6)])
        s = signs[np.arange(6), levels]             # (n, 6) per-feature level signs
        score = s[:, 0] * s[:, 1] + 0.6 * (s[:, 2] + s[:, 3] + s[:, 4])
        clean = (score > 0).astype(np.int64)
        for j in range(6):
            cols[f"c{j + 1}"] = np.array([LEVELS[v] for v in levels[:, j]], dtype=object)
    else:
        z = rng.uniform(-1.0, 1.0, size=(n, 4))
        cat = rng.integers(0, len(LEVELS), size=(n, 2))
        flags = rng.integers(0, 2, size=(n, 2))
        if spec.task == "xor-like":
            clean = (z[:, 0] * z[:, 1] > 0).astype(np.int64)
        elif spec.task == "separable":
            w = np.array([1.0, -0.8, 0.6, 0.4])
            clean = (z @ w > 0).astype(np.int64)
        else:
            stripes = rng.permutation(STRIPE_BINS)[: STRIPE_BINS // 2 + 1]
            bins = np.minimum(np.floor((z[:, 0] + 1.0) / 2.0 * STRIPE_BINS), STRIPE_BINS - 1).astype(int)
            clean = np.isin(bins, stripes).astype(np.int64)
        for j in range(4):
            cols[f"z{j + 1}"] = z[:, j]
        cols["cat1"] = np.array([LEVELS[v] for v in cat[:, 0]], dtype=object)
        cols["cat2"] = np.array([LEVELS[v] for v in cat[:, 1]], dtype=object)
        cols["flag1"] = flags[:, 0]
        cols["flag2"] = flags[:, 1]
    flip = rng.random(n) < spec.noise
    cols["label"] = np.where(flip, 1 - clean, clean)
    cols["clean_label"] = clean
    return cols


def to_csv_text(cols: dict, schema: FeatureSchema) -> str:
    names = ["row_id"] + schema.names + ["label"]
    lines = [",".join(names)]
    n = len(cols["label"])
    fmt = {}
    for name in names:
        col = cols[name]
        if isinstance(col, np.ndarray) and col.dtype.kind == "f":
            fmt[name] = [format(v, ".17g") for v in col]
        else:
            fmt[name] = [str(v) for v in col]
    for i in range(n):
        lines.append(",".join(fmt[name][i] for name in names))
    return "\n".join(lines) + "\n"


def cmd_synth(spec: SyntheticSpec, out) -> Path:
    """Write the synthetic table for ``spec`` as CSV; output is byte-identical per spec."""
    cols = generate(spec)
    return atomic_write_text(out, to_csv_text(cols, synth_schema(spec.task)))
