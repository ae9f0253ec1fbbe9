"""Leakage-free splitting: stratified split, majority downsampling, group split.

The full protocol (:func:`split_protocol`) runs

1. stratified 70/20/10 split of all rows,
2. majority-class downsampling of the train and validation parts separately,
3. pooling of the two balanced parts,
4. a group split of the pool, where rows sharing a group key (the packed
   binarised feature vector) always land in the same partition.

The original 10% test part is kept aside as ``holdout`` and is not used by
the group split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from optideq.errors import SplitError
from optideq.fileio import atomic_write_text, derive_seed

PARTITIONS = ("train", "val", "test")
STRATIFIED_RATIOS = (0.7, 0.2, 0.1)
GROUP_RATIOS = (0.8, 0.1, 0.1)


def _check_ratios(ratios):
    r = np.asarray(ratios, dtype=float)
    if r.ndim != 1 or r.size < 2 or np.any(r <= 0) or not np.isclose(r.sum(), 1.0):
        raise SplitError(f"ratios must be positive and sum to 1, got {tuple(ratios)}")
    return r


def stratified_split(labels, ratios=STRATIFIED_RATIOS, seed: int = 0) -> list:
    """Split row indices so each class keeps its proportion in every partition.

    Each class is shuffled on its own and cut at ``round(cumsum(ratios) * n_class)``.
    """
    r = _check_ratios(ratios)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise SplitError("stratified split needs at least two classes")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in r]
    for c in classes:
        idx = rng.permutation(np.flatnonzero(y == c))
        if idx.size < r.size:
            raise SplitError(f"class {c!r} has {idx.size} rows, fewer than {r.size} partitions")
        cuts = np.rint(np.cumsum(r) * idx.size).astype(int)
        cuts[-1] = idx.size
        start = 0
        for k, stop in enumerate(cuts):
            parts[k].append(idx[start:stop])
            start = stop
    return [np.sort(np.concatenate(p)) for p in parts]


def downsample_majority(labels, seed: int = 0) -> np.ndarray:
    """Indices of a class-balanced subset: the majority class is subsampled without replacement."""
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size != 2:
        raise SplitError("downsampling needs exactly two classes present")
    rng = np.random.default_rng(seed)
    minority = counts.min()
    keep = []
    for c, n in zip(classes, counts):
        idx = np.flatnonzero(y == c)
        keep.append(idx if n == minority else rng.choice(idx, size=minority, replace=False))
    return np.sort(np.concatenate(keep))


@dataclass
class SplitReport:
    sizes: dict
    groups: dict
    class_balance: dict          # partition -> (share of class 0, share of class 1)
    leakage: str
    seed: int
    n_input: int
    targets: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["split report", f"seed = {self.seed}", f"input_rows = {self.n_input}",
                 f"leakage = {self.leakage}"]
        for key, val in self.extra.items():
            lines.append(f"{key} = {val}")
        lines.append("partition\tsamples\ttarget\tunique_groups\tclass0\tclass1")
        for p in self.sizes:
            bal = self.class_balance.get(p)
            c0, c1 = ("", "") if bal is None else (f"{100 * bal[0]:.1f}%", f"{100 * bal[1]:.1f}%")
            lines.append(f"{p}\t{self.sizes[p]}\t{self.targets.get(p, '')}\t{self.groups[p]}\t{c0}\t{c1}")
        for w in self.warnings:
            lines.append(f"warning = {w}")
        return "\n".join(lines) + "\n"


def _group_ids(keys):
    """Dense group ids for a key array (n, octets) or a sequence of hashable keys."""
    arr = np.asarray(keys) if not isinstance(keys, np.ndarray) else keys
    if isinstance(arr, np.ndarray) and arr.ndim == 2 and arr.dtype != object:
        arr = np.ascontiguousarray(arr)
        view = arr.view(np.dtype((np.void, arr.dtype.itemsize * arr.shape[1]))).ravel()
        _, inverse = np.unique(view, return_inverse=True)
        return inverse.ravel()
    lookup = {}
    return np.array([lookup.setdefault(k, len(lookup)) for k in list(keys)], dtype=np.int64)


def group_split(keys, ratios=GROUP_RATIOS, seed: int = 0, labels=None):
    """Assign whole groups to partitions by greedy deficit filling.

    Groups are shuffled (seeded), then taken largest first (stable, so equal
    sizes keep the shuffled order). Each goes to the partition furthest below
    its target row count; ties go to the earlier partition. Returns the list
    of partition index arrays and a :class:`SplitReport`.
    """
    r = _check_ratios(ratios)
    gid = _group_ids(keys)
    n = gid.size
    if n == 0:
        raise SplitError("nothing to split")
    sizes = np.bincount(gid)
    rng = np.random.default_rng(seed)
    order = rng.permutation(sizes.size)
    order = order[np.argsort(-sizes[order], kind="stable")]
    targets = r * n
    filled = np.zeros(r.size)
    part_of_group = np.empty(sizes.size, dtype=np.int64)
    for g in order.tolist():
        k = int(np.argmax(targets - filled))
        part_of_group[g] = k
        filled[k] += sizes[g]
    assignment = part_of_group[gid]
    parts = [np.flatnonzero(assignment == k) for k in range(r.size)]

    names = PARTITIONS if r.size == 3 else tuple(f"part{k}" for k in range(r.size))
    group_sets = [np.unique(gid[p]) for p in parts]
    leak = any(np.intersect1d(group_sets[i], group_sets[j]).size
               for i in range(r.size) for j in range(i + 1, r.size))
    if leak:
        raise SplitError("group leakage detected between partitions")
    report = SplitReport(
        sizes={nm: int(p.size) for nm, p in zip(names, parts)},
        groups={nm: int(gs.size) for nm, gs in zip(names, group_sets)},
        class_balance={},
        leakage="none",
        seed=seed,
        n_input=n,
        targets={nm: float(t) for nm, t in zip(names, targets)},
    )
    if labels is not None:
        y = np.asarray(labels)
        for nm, p in zip(names, parts):
            share1 = float(np.mean(y[p] == 1)) if p.size else float("nan")
            report.class_balance[nm] = (1.0 - share1, share1)
    if sizes.max() > targets.max():
        report.warnings.append(f"largest group ({int(sizes.max())} rows) exceeds the largest target ({targets.max():.0f})")
    return parts, report


@dataclass
class ProtocolResult:
    pool: np.ndarray          # original row indices of the pooled balanced rows
    parts: list               # per partition, indices into the original rows
    holdout: np.ndarray       # original stratified test part, unused downstream
    strat_train: np.ndarray   # original stratified train part (after downsampling)
    report: SplitReport


def split_protocol(labels, key_fn, master_seed: int = 0,
                   stratified_ratios=STRATIFIED_RATIOS, group_ratios=GROUP_RATIOS) -> ProtocolResult:
    """Run stratify -> downsample -> pool -> group split.

    ``key_fn(pool_indices, strat_train_indices)`` returns group keys for the
    pooled rows; it receives the balanced stratified-train indices so a key
    encoder can be fitted on training rows only.
    """
    y = np.asarray(labels)
    tr, va, te = stratified_split(y, stratified_ratios, derive_seed(master_seed, "stratified_split"))
    tr = tr[downsample_majority(y[tr], derive_seed(master_seed, "downsample_train"))]
    va = va[downsample_majority(y[va], derive_seed(master_seed, "downsample_val"))]
    pool = np.sort(np.concatenate([tr, va]))
    keys = key_fn(pool, tr)
    gseed = derive_seed(master_seed, "group_split")
    parts, report = group_split(keys, group_ratios, gseed, labels=y[pool])
    report.seed = master_seed
    report.extra = {"group_seed": gseed, "pooled_rows": int(pool.size),
                    "holdout_rows": int(te.size), "input_rows_total": int(y.size)}
    return ProtocolResult(pool, [pool[p] for p in parts], te, tr, report)


def write_assignments(path, row_ids, parts, names=PARTITIONS) -> Path:
    """Two-column ``row_id,partition`` file, rows in ascending index order."""
    rows = []
    for name, idx in zip(names, parts):
        rows += [(int(i), name) for i in idx]
    rows.sort()
    lines = ["row_id,partition"] + [f"{row_ids[i]},{name}" for i, name in rows]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_assignments(path) -> dict:
    with open(path, newline="") as fh:
        return {rec["row_id"]: rec["partition"] for rec in csv.DictReader(fh)}
