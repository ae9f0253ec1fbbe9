"""Tabular feature encodings and group keys.

Three modes share one fitted object:

``raw-ising``
    continuous -> empirical CDF position mapped to [-1, 1]; categorical one-hot
    and binary columns as spins (2x - 1). With ``ising=False`` the one-hot and
    binary columns stay in {0, 1}, which is the centring ablation.
``raw-onehot``
    continuous standardised with training mean/std; categorical one-hot and
    binary columns in {0, 1}. Input for the digital baselines.
``binarized``
    continuous -> one-hot over quantile bins; categorical -> one-hot over the
    vocabulary plus a catch-all bucket; binary passed through. All columns are
    spins.

Categorical vocabularies hold the ``cap`` most frequent training values.
In the raw modes values outside the vocabulary leave their one-hot group
empty; in binarized mode they go to the catch-all bucket.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from optideq.errors import ConfigurationError, EncodingError
from optideq.fileio import atomic_write_text

MODES = ("raw-ising", "raw-onehot", "binarized")
KINDS = ("continuous", "categorical", "binary")
ENCODER_FORMAT = "optideq-encoder"
ENCODER_VERSION = 1
DEFAULT_BINS = 11
MAX_GRID = 1001


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    bins: int = DEFAULT_BINS
    cap: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "continuous" and self.bins < 2:
            raise ConfigurationError(f"feature {self.name!r}: need at least 2 bins")
        if self.kind == "categorical" and (self.cap is None or self.cap < 1):
            raise ConfigurationError(f"feature {self.name!r}: categorical features need cap >= 1")

    def width(self, mode: str) -> int:
        if self.kind == "binary":
            return 1
        if self.kind == "continuous":
            return self.bins if mode == "binarized" else 1
        return self.cap + 1 if mode == "binarized" else self.cap


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple
    target: str = "label"
    row_id: str | None = None

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate feature names in schema")
        if not names:
            raise ConfigurationError("schema has no features")

    @property
    def names(self) -> list:
        return [f.name for f in self.features]

    def of_kind(self, kind: str) -> list:
        return [f for f in self.features if f.kind == kind]

    def width(self, mode: str) -> int:
        _check_mode(mode)
        return sum(f.width(mode) for f in self.features)

    def to_text(self) -> str:
        lines = ["# optideq feature schema v1", f"@target = {self.target}"]
        if self.row_id:
            lines.append(f"@row_id = {self.row_id}")
        for f in self.features:
            if f.kind == "continuous":
                lines.append(f"{f.name} = continuous bins={f.bins}")
            elif f.kind == "categorical":
                lines.append(f"{f.name} = categorical cap={f.cap}")
            else:
                lines.append(f"{f.name} = binary")
        return "\n".join(lines) + "\n"


def parse_schema(text: str) -> FeatureSchema:
    """Parse the ``name = kind [key=value ...]`` schema grammar.

    Blank lines and ``#`` comments are ignored; ``@target`` and ``@row_id``
    name the label and identifier columns.
    """
    feats, target, row_id = [], "label", None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"schema line {lineno}: expected 'name = kind ...'")
        name, rest = (part.strip() for part in line.split("=", 1))
        if name == "@target":
            target = rest
            continue
        if name == "@row_id":
            row_id = rest
            continue
        tokens = rest.split()
        if not tokens:
            raise ConfigurationError(f"schema line {lineno}: missing kind for {name!r}")
        opts = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ConfigurationError(f"schema line {lineno}: bad option {tok!r}")
            k, v = tok.split("=", 1)
            opts[k] = int(v)
        feats.append(FeatureSpec(name, tokens[0], bins=opts.get("bins", DEFAULT_BINS), cap=opts.get("cap")))
    return FeatureSchema(tuple(feats), target, row_id)


def load_schema(path) -> FeatureSchema:
    return parse_schema(Path(path).read_text())


def hmda_schema() -> FeatureSchema:
    """HMDA preset: 6 continuous (11 bins), 7 categorical (48 vocabulary slots), 6 binary."""
    text = resources.files("optideq").joinpath("data/hmda_schema.txt").read_text()
    return parse_schema(text)


def _check_mode(mode):
    if mode not in MODES:
        raise ConfigurationError(f"unknown encoding mode {mode!r}; expected one of {MODES}")


# -- scalar maps -----------------------------------------------------------

_BIT_TEXT = {"0": 0, "1": 1, "0.0": 0, "1.0": 1, "false": 0, "true": 1}


def parse_bit(value, name: str = "value") -> int:
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)) and value in (0, 1):
        return int(value)
    if isinstance(value, (float, np.floating)) and value in (0.0, 1.0):
        return int(value)
    if isinstance(value, str) and value.strip().lower() in _BIT_TEXT:
        return _BIT_TEXT[value.strip().lower()]
    raise EncodingError(f"{name}: expected a 0/1 value, got {value!r}")


def ising_map(x):
    """Map bits {0, 1} to spins {-1, +1} via s = 2x - 1."""
    arr = np.asarray(x)
    if not np.isin(arr, (0, 1)).all():
        raise EncodingError(f"ising_map expects 0/1 input, got {x!r}")
    out = 2 * arr.astype(np.int64) - 1
    return int(out) if out.ndim == 0 else out


def _missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, str):
        return v.strip() == "" or v.strip().lower() in ("na", "nan")
    try:
        return bool(np.isnan(v))
    except TypeError:
        return False


def _column(rows, name):
    """Values of one field from a DataFrame, a dict of columns or a list of row mappings."""
    if hasattr(rows, "columns"):
        if name not in rows.columns:
            raise EncodingError(f"missing field {name!r}")
        return list(rows[name].to_numpy())
    if isinstance(rows, dict):
        if name not in rows:
            raise EncodingError(f"missing field {name!r}")
        return list(rows[name])
    out = []
    for r in rows:
        if name not in r:
            raise EncodingError(f"missing field {name!r}")
        out.append(r[name])
    return out


def _n_rows(rows) -> int:
    if hasattr(rows, "columns"):
        return len(rows)
    if isinstance(rows, dict):
        return len(next(iter(rows.values()))) if rows else 0
    return len(rows)


def _floats(values, name) -> np.ndarray:
    out = np.empty(len(values))
    for i, v in enumerate(values):
        if _missing(v):
            raise EncodingError(f"row {i}: missing value for field {name!r}")
        try:
            out[i] = float(v)
        except (TypeError, ValueError):
            raise EncodingError(f"row {i}: field {name!r} is not numeric: {v!r}") from None
    if not np.all(np.isfinite(out)):
        raise EncodingError(f"field {name!r} has non-finite values")
    return out


def _labels(values, name) -> list:
    out = []
    for i, v in enumerate(values):
        if _missing(v):
            raise EncodingError(f"row {i}: missing value for field {name!r}")
        out.append(_category_text(v))
    return out


def _category_text(v) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v).strip()


# -- fitted encoder --------------------------------------------------------

@dataclass
class EncoderFit:
    schema: FeatureSchema
    mode: str
    ising: bool = True
    grids: dict = field(default_factory=dict)      # raw-ising quantile grids
    edges: dict = field(default_factory=dict)      # binarized interior bin edges
    vocab: dict = field(default_factory=dict)      # categorical value lists
    mean: dict = field(default_factory=dict)       # raw-onehot standardisation
    std: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.schema.width(self.mode)

    def layout(self) -> list:
        """(feature, start column, width) for every feature in output order."""
        out, start = [], 0
        for f in self.schema.features:
            w = f.width(self.mode)
            out.append((f, start, w))
            start += w
        return out

    def column_names(self) -> list:
        names = []
        for f, _, w in self.layout():
            if w == 1:
                names.append(f.name)
            elif f.kind == "continuous":
                names += [f"{f.name}[bin{i}]" for i in range(w)]
            else:
                vocab = self.vocab[f.name]
                for i in range(w):
                    if i < len(vocab):
                        names.append(f"{f.name}={vocab[i]}")
                    elif self.mode == "binarized" and i == w - 1:
                        names.append(f"{f.name}=<other>")
                    else:
                        names.append(f"{f.name}[slot{i}]")
        return names

    def to_json(self) -> str:
        doc = {
            "format": ENCODER_FORMAT,
            "version": ENCODER_VERSION,
            "mode": self.mode,
            "ising": self.ising,
            "schema": self.schema.to_text(),
            "grids": {k: v.tolist() for k, v in self.grids.items()},
            "edges": {k: v.tolist() for k, v in self.edges.items()},
            "vocab": self.vocab,
            "mean": self.mean,
            "std": self.std,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EncoderFit":
        doc = json.loads(text)
        if doc.get("format") != ENCODER_FORMAT or doc.get("version") != ENCODER_VERSION:
            raise ConfigurationError("not an optideq encoder file (format/version mismatch)")
        return cls(parse_schema(doc["schema"]), doc["mode"], bool(doc["ising"]),
                   {k: np.array(v, dtype=float) for k, v in doc["grids"].items()},
                   {k: np.array(v, dtype=float) for k, v in doc["edges"].items()},
                   {k: list(v) for k, v in doc["vocab"].items()},
                   dict(doc["mean"]), dict(doc["std"]))

    def save(self, path) -> Path:
        return atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "EncoderFit":
        return cls.from_json(Path(path).read_text())


def fit_encoder(train_rows, schema: FeatureSchema, mode: str, ising: bool = True,
                max_grid: int = MAX_GRID) -> EncoderFit:
    """Fit quantile grids, bin edges, vocabularies and moments on training rows only."""
    _check_mode(mode)
    if _n_rows(train_rows) == 0:
        raise ConfigurationError("cannot fit an encoder on zero rows")
    fit = EncoderFit(schema, mode, ising)
    for f in schema.features:
        if f.kind == "continuous":
            x = _floats(_column(train_rows, f.name), f.name)
            if np.unique(x).size < 2:
                raise ConfigurationError(f"continuous feature {f.name!r} is constant in the training data")
            if mode == "raw-ising":
                if x.size <= max_grid:
                    fit.grids[f.name] = np.sort(x)
                else:
                    fit.grids[f.name] = np.quantile(x, np.linspace(0.0, 1.0, max_grid))
            elif mode == "binarized":
                fit.edges[f.name] = np.quantile(x, np.arange(1, f.bins) / f.bins)
            else:
                fit.mean[f.name] = float(np.mean(x))
                fit.std[f.name] = float(np.std(x))
        elif f.kind == "categorical":
            counts = Counter(_labels(_column(train_rows, f.name), f.name))
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            fit.vocab[f.name] = [v for v, _ in ranked[:f.cap]]
        else:
            for i, v in enumerate(_column(train_rows, f.name)):
                if _missing(v):
                    raise EncodingError(f"row {i}: missing value for field {f.name!r}")
                parse_bit(v, f.name)
    return fit


def quantile_position(grid: np.ndarray, x) -> np.ndarray:
    """Empirical CDF position in [0, 1] with linear interpolation between grid points.

    Grid point i of m sits at i / (m - 1); runs of tied grid values map to
    the middle of the run.
    """
    refs = np.linspace(0.0, 1.0, grid.size)
    x = np.asarray(x, dtype=float)
    up = np.interp(x, grid, refs)
    down = -np.interp(-x, -grid[::-1], -refs[::-1])
    return 0.5 * (up + down)


def encode_rows(fit: EncoderFit, rows) -> np.ndarray:
    """Encode many rows at once; returns an (n, width) float matrix."""
    n = _n_rows(rows)
    out = np.zeros((n, fit.width))
    on = 1.0
    off = -1.0 if (fit.mode == "binarized" or (fit.mode == "raw-ising" and fit.ising)) else 0.0
    if fit.mode == "binarized" and not fit.ising:
        off = 0.0
    for f, start, w in fit.layout():
        col = _column(rows, f.name)
        if f.kind == "continuous":
            x = _floats(col, f.name)
            if fit.mode == "raw-ising":
                out[:, start] = np.clip(2.0 * quantile_position(fit.grids[f.name], x) - 1.0, -1.0, 1.0)
            elif fit.mode == "raw-onehot":
                out[:, start] = (x - fit.mean[f.name]) / fit.std[f.name]
            else:
                idx = np.searchsorted(fit.edges[f.name], x, side="right")
                block = np.full((n, w), off)
                block[np.arange(n), idx] = on
                out[:, start:start + w] = block
        elif f.kind == "categorical":
            index = {v: i for i, v in enumerate(fit.vocab[f.name])}
            labels = _labels(col, f.name)
            catch_all = w - 1 if fit.mode == "binarized" else -1
            idx = np.array([index.get(v, catch_all) for v in labels], dtype=np.int64)
            block = np.full((n, w), off)
            hit = idx >= 0
            block[np.flatnonzero(hit), idx[hit]] = on
            out[:, start:start + w] = block
        else:
            bits = np.array([_bit_or_missing(v, f.name, i) for i, v in enumerate(col)], dtype=float)
            out[:, start] = np.where(bits == 1, on, off)
    return out


def _bit_or_missing(v, name, i):
    if _missing(v):
        raise EncodingError(f"row {i}: missing value for field {name!r}")
    return parse_bit(v, name)


def encode(fit: EncoderFit, row) -> np.ndarray:
    """Encode a single row mapping (field name -> value)."""
    for name in fit.schema.names:
        if name not in row or _missing(row[name]):
            raise EncodingError(f"row rejected: missing field {name!r}")
    return encode_rows(fit, [row])[0]


# -- group keys ------------------------------------------------------------

def _spins_to_bits(v) -> np.ndarray:
    v = np.asarray(v)
    if not np.isin(v, (-1, 1)).all():
        raise EncodingError("group keys need spin-valued (+-1) vectors")
    return (v > 0).astype(np.uint8)


def group_key(vector) -> bytes:
    """Pack a spin vector into bytes: bit i (1 for +1) goes to bit i % 8 of octet i // 8."""
    return np.packbits(_spins_to_bits(vector), bitorder="little").tobytes()


def group_keys(matrix) -> np.ndarray:
    """Packed keys for every row of a spin matrix, as an (n, octets) uint8 array."""
    return np.packbits(_spins_to_bits(np.atleast_2d(matrix)), axis=1, bitorder="little")


def unpack_key(key: bytes, length: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(key, dtype=np.uint8), bitorder="little")[:length]
    return 2 * bits.astype(np.int64) - 1


# -- datasets --------------------------------------------------------------

@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray
    keys: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    def subset(self, idx, **provenance) -> "LabeledDataset":
        idx = np.asarray(idx)
        prov = dict(self.provenance, **provenance)
        return LabeledDataset(self.X[idx], self.y[idx], self.row_ids[idx],
                              None if self.keys is None else self.keys[idx], prov)


def read_table(path, schema: FeatureSchema):
    """Load a CSV whose header names the schema fields.

    Returns ``(frame, labels, row_ids, rejected)``; rows with a missing
    schema field or label are dropped and counted per field in ``rejected``.
    """
    import pandas as pd

    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    needed = schema.names + [schema.target]
    absent = [c for c in needed if c not in frame.columns]
    if absent:
        raise EncodingError(f"{path}: missing columns {absent}")
    rejected = {}
    bad = np.zeros(len(frame), dtype=bool)
    for name in needed:
        col = frame[name].str.strip()
        miss = (col == "") | col.str.lower().isin(["na", "nan"])
        if miss.any():
            rejected[name] = int(miss.sum())
            bad |= miss.to_numpy()
    if schema.row_id and schema.row_id in frame.columns:
        row_ids = frame[schema.row_id].to_numpy(dtype=object)
    else:
        row_ids = np.array([str(i) for i in range(len(frame))], dtype=object)
    frame = frame.loc[~bad].reset_index(drop=True)
    row_ids = row_ids[~bad]
    labels = np.array([parse_bit(v, schema.target) for v in frame[schema.target]], dtype=np.int64)
    return frame, labels, row_ids, rejected
