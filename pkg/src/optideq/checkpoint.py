"""Versioned text checkpoints for every model family.

Layout::

    OPTIDEQ v1
    model=deq
    d_in=60
    ...                      (key=value header entries, config and cell)
    W_ip.0 16 60 v v v ...   (one line per tensor: name, rows, cols, row-major values)

Values are printed with 17 significant digits, so a save/load round trip
reproduces every float64 bit-for-bit. Vectors are stored as ``n x 1``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from optideq.baselines import LogRegParams, MlpParams
from optideq.cells import CellSpec
from optideq.deq import DeqBlockParams, EnsembleModel, ModelConfig
from optideq.errors import ConfigurationError
from optideq.fileio import atomic_write_text

MAGIC = "OPTIDEQ v1"


def _tensor_line(name: str, arr) -> str:
    arr = np.asarray(arr, dtype=float)
    rows, cols = (arr.shape[0], 1) if arr.ndim == 1 else arr.shape
    vals = " ".join(format(v, ".17g") for v in arr.ravel())
    return f"{name} {rows} {cols} {vals}"


def dumps(model) -> str:
    header = []
    if isinstance(model, EnsembleModel):
        c = model.config
        header += [("model", "deq"), ("d_in", c.d_in), ("d_hidden", c.d_hidden), ("n_blocks", c.n_blocks),
                   ("alpha", repr(c.alpha)), ("beta", repr(c.beta)), ("tol", repr(c.tol)),
                   ("max_iters", c.max_iters)]
        header += c.cell.to_items()
    elif isinstance(model, MlpParams):
        header += [("model", "mlp"), ("d_in", model.d_in), ("width", model.width)]
    elif isinstance(model, LogRegParams):
        header += [("model", "logreg"), ("d_in", model.d_in), ("l2", repr(model.l2))]
    else:
        raise ConfigurationError(f"cannot serialise {type(model).__name__}")
    lines = [MAGIC] + [f"{k}={v}" for k, v in header]
    lines += [_tensor_line(name, arr) for name, arr in model.params().items()]
    return "\n".join(lines) + "\n"


def loads(text: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ConfigurationError("not an OPTIDEQ v1 checkpoint")
    header, tensors = {}, {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if "=" in line.split(" ", 1)[0]:
            k, v = line.split("=", 1)
            header[k.strip()] = v.strip()
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ConfigurationError(f"checkpoint line {lineno}: malformed tensor entry")
        name, rows, cols = parts[0], int(parts[1]), int(parts[2])
        vals = np.array([float(v) for v in parts[3:]])
        if vals.size != rows * cols:
            raise ConfigurationError(f"checkpoint line {lineno}: {name} expects {rows * cols} values, got {vals.size}")
        tensors[name] = vals.reshape(rows, cols)
    kind = header.get("model")
    if kind == "deq":
        cell = CellSpec.from_items(header)
        cfg = ModelConfig(int(header["d_in"]), int(header["d_hidden"]), int(header["n_blocks"]),
                          float(header["alpha"]), float(header["beta"]), float(header["tol"]),
                          int(header["max_iters"]), cell)
        blocks = [DeqBlockParams(tensors[f"W_ip.{i}"], tensors[f"b_ip.{i}"].ravel(),
                                 tensors[f"W.{i}"], tensors[f"b.{i}"].ravel())
                  for i in range(cfg.n_blocks)]
        calib = tensors["calib"].ravel() if "calib" in tensors else None
        return EnsembleModel(cfg, blocks, tensors["W_op"], tensors["b_op"].ravel(), calib)
    if kind == "mlp":
        return MlpParams(tensors["W1"], tensors["b1"].ravel(), tensors["W2"], tensors["b2"].ravel(),
                         tensors["W3"], tensors["b3"].ravel())
    if kind == "logreg":
        return LogRegParams(tensors["W"], tensors["b"].ravel(), float(header.get("l2", 0.0)))
    raise ConfigurationError(f"unknown model kind {kind!r} in checkpoint")


def save(model, path) -> Path:
    return atomic_write_text(path, dumps(model))


def load(path):
    return loads(Path(path).read_text())
