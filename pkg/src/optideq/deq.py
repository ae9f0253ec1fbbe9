"""Deep-equilibrium cell dynamics, fixed-point solver and ensemble inference.

One block iterates

    s_{t+1} = alpha * s_t + beta * Cell(W, s_t) + b + x_proj,  x_proj = W_ip @ x + b_ip

from ``s_0 = b + x_proj`` until the relative L2 step falls below ``tol``.
``Cell`` is the optical product ``W @ tanh(s)``, possibly impaired (see
:mod:`optideq.cells`). An ensemble concatenates the fixed points of its blocks
and applies a shared affine head producing two logits.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from optideq import cells
from optideq.cells import CellSpec
from optideq.errors import ConfigurationError, NumericError

EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    d_in: int
    d_hidden: int = 16
    n_blocks: int = 4
    alpha: float = 0.5
    beta: float = 0.5
    tol: float = 1e-3
    max_iters: int = 100
    cell: CellSpec = field(default_factory=CellSpec)

    def __post_init__(self):
        for name in ("d_in", "d_hidden", "n_blocks", "max_iters"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0 < self.tol < 1:
            raise ConfigurationError(f"tol must lie in (0, 1), got {self.tol}")
        if not np.isfinite(self.alpha) or not np.isfinite(self.beta):
            raise ConfigurationError("alpha and beta must be finite")

    @property
    def width(self) -> int:
        return self.n_blocks * self.d_hidden


@dataclass
class DeqBlockParams:
    W_ip: np.ndarray
    b_ip: np.ndarray
    W: np.ndarray
    b: np.ndarray

    def check(self, config: ModelConfig) -> None:
        d, k = config.d_hidden, config.d_in
        expected = {"W_ip": (d, k), "b_ip": (d,), "W": (d, d), "b": (d,)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} contains non-finite entries", stage=name)

    def project(self, x) -> np.ndarray:
        """Input projection for one input (d_in,) or a batch (n, d_in)."""
        return x @ self.W_ip.T + self.b_ip


@dataclass
class FixedPointResult:
    s_star: np.ndarray
    iterations: int
    residual: float
    converged: bool


@dataclass
class EnsembleModel:
    config: ModelConfig
    blocks: list
    W_op: np.ndarray
    b_op: np.ndarray
    calib: np.ndarray | None = None

    kind = "deq"

    def __post_init__(self):
        cfg = self.config
        if len(self.blocks) != cfg.n_blocks:
            raise ConfigurationError(f"expected {cfg.n_blocks} blocks, got {len(self.blocks)}")
        for blk in self.blocks:
            blk.check(cfg)
        if self.W_op.shape != (2, cfg.width) or self.b_op.shape != (2,):
            raise ConfigurationError(
                f"output head must be (2, {cfg.width}) + (2,), got {self.W_op.shape} + {self.b_op.shape}")
        if cfg.cell.is_aoc != (self.calib is not None):
            raise ConfigurationError("calibration gains are present iff the cell is AOCCell")
        if self.calib is not None and self.calib.shape != (len(cells.CALIB_STAGES),):
            raise ConfigurationError("AOCCell needs exactly four calibration gains")

    def params(self) -> dict:
        """Named references to every trainable array (mutating them updates the model)."""
        out = {}
        for i, blk in enumerate(self.blocks):
            out[f"W_ip.{i}"] = blk.W_ip
            out[f"b_ip.{i}"] = blk.b_ip
            out[f"W.{i}"] = blk.W
            out[f"b.{i}"] = blk.b
        out["W_op"] = self.W_op
        out["b_op"] = self.b_op
        if self.calib is not None:
            out["calib"] = self.calib
        return out

    def copy(self) -> "EnsembleModel":
        return copy.deepcopy(self)

    def prepared_cells(self) -> list:
        return [cells.prepare(blk.W, self.config.cell, self.calib) for blk in self.blocks]

    def predict_logits(self, X) -> np.ndarray:
        return forward_batch(self, X).logits

    def predict(self, X) -> np.ndarray:
        return predict_class(self.predict_logits(X))


def predict_class(logits) -> np.ndarray:
    """Argmax over the logit pair; ties go to class 0."""
    logits = np.asarray(logits)
    return (logits[..., 1] > logits[..., 0]).astype(np.int64)


def deq_step(s, params: DeqBlockParams, x_proj, alpha: float, beta: float,
             cell: CellSpec, calib=None, prepared=None) -> np.ndarray:
    """One application of the iteration map to a state (d,) or batch of states (n, d)."""
    s = np.asarray(s, dtype=float)
    d = params.W.shape[0]
    if s.shape[-1] != d or np.shape(x_proj)[-1] != d or params.b.shape != (d,):
        raise ConfigurationError(
            f"shape mismatch: state {s.shape}, x_proj {np.shape(x_proj)}, W {params.W.shape}")
    prep = prepared if prepared is not None else cells.prepare(params.W, cell, calib)
    out = alpha * s + beta * cells.apply_prepared(prep, s) + params.b + x_proj
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite state after recurrence update", stage="recurrence")
    return out


def _relative_step(new, old):
    return np.linalg.norm(new - old, axis=-1) / np.maximum(np.linalg.norm(old, axis=-1), EPS_FLOOR)


def solve_batch(params: DeqBlockParams, x_proj, config: ModelConfig, calib=None, prepared=None):
    """Picard iteration for a batch of projected inputs (n, d).

    Each row stops independently once its relative step is within ``tol``.
    Returns ``(s_star, iterations, residual, converged)``.
    """
    x_proj = np.atleast_2d(np.asarray(x_proj, dtype=float))
    n = x_proj.shape[0]
    prep = prepared if prepared is not None else cells.prepare(params.W, config.cell, calib)
    a, bt = config.alpha, config.beta
    s = params.b + x_proj
    iterations = np.zeros(n, dtype=np.int64)
    residual = np.full(n, np.inf)
    active = np.arange(n)
    for _ in range(config.max_iters):
        cur = s[active]
        new = deq_step(cur, params, x_proj[active], a, bt, config.cell, prepared=prep)
        r = _relative_step(new, cur)
        s[active] = new
        iterations[active] += 1
        residual[active] = r
        active = active[r > config.tol]
        if active.size == 0:
            break
    return s, iterations, residual, residual <= config.tol


def solve_fixed_point(params: DeqBlockParams, x_proj, config: ModelConfig, calib=None) -> FixedPointResult:
    """Solve a single block for a single projected input."""
    x_proj = np.asarray(x_proj, dtype=float)
    if x_proj.shape != (params.W.shape[0],):
        raise ConfigurationError(f"x_proj must have shape ({params.W.shape[0]},), got {x_proj.shape}")
    s, it, res, conv = solve_batch(params, x_proj[None, :], config, calib)
    return FixedPointResult(s[0], int(it[0]), float(res[0]), bool(conv[0]))


@dataclass
class BatchForward:
    logits: np.ndarray        # (n, 2)
    states: list              # per block, (n, d_hidden)
    iterations: np.ndarray    # (n_blocks, n)
    residuals: np.ndarray     # (n_blocks, n)
    converged: np.ndarray     # (n_blocks, n)

    @property
    def all_converged(self) -> bool:
        return bool(self.converged.all())


def forward_batch(model: EnsembleModel, X) -> BatchForward:
    cfg = model.config
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != cfg.d_in:
        raise ConfigurationError(f"input width {X.shape[1]} does not match d_in={cfg.d_in}")
    states, its, ress, convs = [], [], [], []
    for blk in model.blocks:
        prep = cells.prepare(blk.W, cfg.cell, model.calib)
        s, it, res, conv = solve_batch(blk, blk.project(X), cfg, prepared=prep)
        states.append(s)
        its.append(it)
        ress.append(res)
        convs.append(conv)
    z = np.concatenate(states, axis=1)
    logits = z @ model.W_op.T + model.b_op
    return BatchForward(logits, states, np.array(its), np.array(ress), np.array(convs))


def forward(model: EnsembleModel, x):
    """Logits for one input plus per-block solver diagnostics.

    Non-converged blocks do not abort inference; inspect ``converged`` on the
    returned results.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.config.d_in,):
        raise ConfigurationError(f"x must have shape ({model.config.d_in},), got {x.shape}")
    out = forward_batch(model, x[None, :])
    results = [FixedPointResult(out.states[k][0], int(out.iterations[k, 0]),
                                float(out.residuals[k, 0]), bool(out.converged[k, 0]))
               for k in range(model.config.n_blocks)]
    return out.logits[0], results


def count_parameters(config: ModelConfig) -> dict:
    d, k, m = config.d_hidden, config.d_in, config.n_blocks
    per_block = d * k + d + d * d + d
    total = m * per_block + 2 * m * d + 2 + (len(cells.CALIB_STAGES) if config.cell.is_aoc else 0)
    return {"total": total, "optical": m * d * d}


def parameter_count(model: EnsembleModel) -> dict:
    """Total and optical parameter counts; agrees with summing the stored arrays."""
    return count_parameters(model.config)


def init_ensemble(config: ModelConfig, seed: int = 0, init_gain: float = 0.4,
                  ip_scale: float = 1.0) -> EnsembleModel:
    """Random ensemble with ``beta * ||W||_2 = init_gain`` in every block.

    Input projections are uniform in +-ip_scale/sqrt(d_in); recurrence biases
    start at zero; calibration gains (AOCCell only) start at one.
    """
    if config.beta != 0 and init_gain < 0:
        raise ConfigurationError("init_gain must be non-negative")
    rng = np.random.default_rng(seed)
    d, k = config.d_hidden, config.d_in
    lim = ip_scale / np.sqrt(k)
    blocks = []
    for _ in range(config.n_blocks):
        W = rng.standard_normal((d, d))
        norm = np.linalg.norm(W, 2)
        W *= 0.0 if config.beta == 0 else init_gain / (abs(config.beta) * norm)
        blocks.append(DeqBlockParams(
            W_ip=rng.uniform(-lim, lim, size=(d, k)),
            b_ip=rng.uniform(-lim, lim, size=d),
            W=W,
            b=np.zeros(d),
        ))
    lim_op = 1.0 / np.sqrt(config.width)
    W_op = rng.uniform(-lim_op, lim_op, size=(2, config.width))
    calib = np.ones(len(cells.CALIB_STAGES)) if config.cell.is_aoc else None
    return EnsembleModel(config, blocks, W_op, np.zeros(2), calib)
