"""Optical matrix-vector stage with configurable analog impairments.

The ideal stage computes ``W @ tanh(s)``. The impaired stage composes, in a
fixed order:

1. ``tanh_approx``     u = tanh(s) + e1 * (tanh(s) - tanh(s)**3)
2. ``microled``        u <- u * (1 - e2 * |u|)
3. ``slm_distortion``  W_eff = q(W) * (1 - e3 * q(W)**2), q = 9-bit quantiser
   (matrix product)    v = W_eff @ u
4. ``tia_gain``        v <- g * v, g frozen per channel in [1 - e4, 1 + e4]
5. ``crosstalk``       v <- (I + e5 * C) @ v, C frozen, zero diagonal, rows sum to 1
6. ``darkness``        v <- v + e6 * mean(u)
7. ``power_norm``      v <- v * target_rms / max(rms(v), eps)   (switch, e7 in {0, 1})

Four global calibration gains multiply the outputs of stages 1, 3, 5 and 6.
Every stage is the identity at zero magnitude, so an impaired cell with all
magnitudes at zero and quantisation off reproduces the ideal cell.

Per-channel draws (TIA gains, crosstalk matrix) depend only on ``rng_seed``
and the channel count. Blocks of an ensemble share one optical core, so they
share the same draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from optideq.errors import ConfigurationError, NumericError

SIMPLE = "SimpleCell"
AOC = "AOCCell"

STAGE_NAMES = (
    "tanh_approx",
    "microled",
    "slm_distortion",
    "tia_gain",
    "crosstalk",
    "darkness",
    "power_norm",
)

# calibration gain slots -> stage they scale
CALIB_STAGES = ("tanh_approx", "slm_distortion", "crosstalk", "darkness")

DEFAULT_MAGNITUDE = 0.02
EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class StageConfig:
    """Strength of one impairment stage.

    ``target_rms`` is only read by ``power_norm``, whose magnitude acts as an
    on/off switch.
    """

    magnitude: float = 0.0
    target_rms: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.magnitude) or self.magnitude < 0:
            raise ConfigurationError(f"stage magnitude must be finite and >= 0, got {self.magnitude}")
        if self.target_rms <= 0:
            raise ConfigurationError("target_rms must be positive")


@dataclass(frozen=True)
class CellSpec:
    kind: str = SIMPLE
    stages: tuple = field(default_factory=lambda: tuple(StageConfig() for _ in STAGE_NAMES))
    quant_bits: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in (SIMPLE, AOC):
            raise ConfigurationError(f"unknown cell kind {self.kind!r}")
        if len(self.stages) != len(STAGE_NAMES):
            raise ConfigurationError(f"expected {len(STAGE_NAMES)} stages, got {len(self.stages)}")
        if self.kind == SIMPLE:
            if any(st.magnitude != 0 for st in self.stages) or self.quant_bits is not None:
                raise ConfigurationError("SimpleCell must have zero stage magnitudes and no quantisation")
        if self.quant_bits is not None and not 2 <= self.quant_bits <= 16:
            raise ConfigurationError(f"quant_bits must lie in [2, 16], got {self.quant_bits}")
        pn = self.stages[6].magnitude
        if pn not in (0.0, 1.0):
            raise ConfigurationError("power_norm magnitude is a switch and must be 0 or 1")

    @classmethod
    def simple(cls) -> "CellSpec":
        return cls()

    @classmethod
    def aoc(cls, magnitudes=None, quant_bits: int | None = 9, rng_seed: int = 0,
            power_norm: bool = False, target_rms: float = 1.0) -> "CellSpec":
        """AOCCell with the given (or default) magnitudes for the six graded stages."""
        if magnitudes is None:
            magnitudes = {name: DEFAULT_MAGNITUDE for name in STAGE_NAMES[:6]}
        elif not isinstance(magnitudes, dict):
            magnitudes = dict(zip(STAGE_NAMES[:6], magnitudes))
        unknown = set(magnitudes) - set(STAGE_NAMES[:6])
        if unknown:
            raise ConfigurationError(f"unknown stages {sorted(unknown)}")
        stages = [StageConfig(float(magnitudes.get(name, 0.0))) for name in STAGE_NAMES[:6]]
        stages.append(StageConfig(1.0 if power_norm else 0.0, target_rms))
        return cls(AOC, tuple(stages), quant_bits, rng_seed)

    @property
    def is_aoc(self) -> bool:
        return self.kind == AOC

    def magnitude(self, name: str) -> float:
        return self.stages[STAGE_NAMES.index(name)].magnitude

    def draws(self, d: int):
        """Frozen per-channel variation for ``d`` channels: (unit TIA offsets, crosstalk C)."""
        return _draws(self.rng_seed, d)

    def tia_gains(self, d: int) -> np.ndarray:
        unit, _ = self.draws(d)
        return 1.0 + self.magnitude("tia_gain") * unit

    def to_items(self) -> list:
        items = [("cell.kind", self.kind),
                 ("cell.quant_bits", "none" if self.quant_bits is None else str(self.quant_bits)),
                 ("cell.rng_seed", str(self.rng_seed))]
        for name, st in zip(STAGE_NAMES, self.stages):
            items.append((f"cell.{name}", repr(float(st.magnitude))))
        items.append(("cell.target_rms", repr(float(self.stages[6].target_rms))))
        return items

    @classmethod
    def from_items(cls, items: dict) -> "CellSpec":
        qb = items.get("cell.quant_bits", "none")
        target = float(items.get("cell.target_rms", 1.0))
        stages = []
        for name in STAGE_NAMES:
            stages.append(StageConfig(float(items.get(f"cell.{name}", 0.0)),
                                      target if name == "power_norm" else 1.0))
        return cls(items.get("cell.kind", SIMPLE), tuple(stages),
                   None if qb == "none" else int(qb), int(items.get("cell.rng_seed", 0)))


@lru_cache(maxsize=64)
def _draws(seed: int, d: int):
    # Draw order is part of the contract: d uniforms for TIA, then d*d for crosstalk.
    rng = np.random.default_rng(seed)
    unit = rng.uniform(-1.0, 1.0, size=d)
    c = rng.uniform(0.0, 1.0, size=(d, d))
    np.fill_diagonal(c, 0.0)
    sums = c.sum(axis=1, keepdims=True)
    c = np.divide(c, sums, out=np.zeros_like(c), where=sums > 0)
    unit.setflags(write=False)
    c.setflags(write=False)
    return unit, c


def quantize_weights(W, bits: int) -> np.ndarray:
    """Symmetric uniform quantisation to ``bits`` bits, returned dequantised.

    The scale is the largest absolute entry, so that entry maps onto the
    full-scale level exactly.
    """
    if not 2 <= bits <= 16:
        raise ConfigurationError(f"bits must lie in [2, 16], got {bits}")
    W = np.asarray(W, dtype=float)
    scale = np.max(np.abs(W)) if W.size else 0.0
    if scale == 0.0:
        return np.zeros_like(W)
    levels = 2 ** (bits - 1) - 1
    x = W / scale * levels
    # round half away from zero (np.rint would send 76.5 to 76)
    q = np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), -levels, levels)
    return q * (scale / levels)


def _ones_calib():
    return np.ones(len(CALIB_STAGES))


@dataclass
class PreparedCell:
    """Per-forward-pass constants of a cell: quantised, distorted weights and frozen draws."""

    spec: CellSpec
    W_q: np.ndarray      # quantised W (identity when quantisation is off)
    W_eff: np.ndarray    # c3 * slm(W_q)
    gains: np.ndarray    # TIA gains g
    mix: np.ndarray      # I + e5 * C
    calib: np.ndarray

    @property
    def linear(self) -> np.ndarray:
        """Matrix A with stages 3-6 folded in: r = A @ u."""
        spec, c = self.spec, self.calib
        d = self.W_eff.shape[0]
        A = c[2] * c[3] * (self.mix * self.gains) @ self.W_eff
        e6 = spec.magnitude("darkness")
        if e6:
            A = A + (c[3] * e6 / d)
        return A


def prepare(W, spec: CellSpec, calib=None) -> PreparedCell:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigurationError(f"optical weights must be square, got shape {W.shape}")
    calib = _ones_calib() if calib is None else np.asarray(calib, dtype=float)
    d = W.shape[0]
    W_q = quantize_weights(W, spec.quant_bits) if spec.quant_bits else W
    e3 = spec.magnitude("slm_distortion")
    W_eff = W_q * (1.0 - e3 * W_q * W_q) if e3 else W_q
    if calib[1] != 1.0:
        W_eff = calib[1] * W_eff
    _check("slm_distortion" if spec.is_aoc else "weights", W_eff)
    if spec.is_aoc:
        unit, C = spec.draws(d)
        gains = 1.0 + spec.magnitude("tia_gain") * unit
        mix = np.eye(d) + spec.magnitude("crosstalk") * C
    else:
        gains = np.ones(d)
        mix = np.eye(d)
    return PreparedCell(spec, W_q, W_eff, gains, mix, calib)


def emitter(s, spec: CellSpec, calib=None):
    """Stages 1-2: the vector driven into the optical core. Returns (u, t, a)."""
    t = np.tanh(s)
    e1 = spec.magnitude("tanh_approx")
    a = t + e1 * (t - t ** 3) if e1 else t
    c1 = 1.0 if calib is None else calib[0]
    if c1 != 1.0:
        a = c1 * a
    _check("tanh_approx", a)
    e2 = spec.magnitude("microled")
    u = a * (1.0 - e2 * np.abs(a)) if e2 else a
    _check("microled", u)
    return u, t, a


def apply_prepared(prep: PreparedCell, s) -> np.ndarray:
    """Impaired optical product for a state (d,) or batch of states (n, d)."""
    spec, c = prep.spec, prep.calib
    u, _, _ = emitter(s, spec, c)
    v = u @ prep.W_eff.T
    if not spec.is_aoc:
        _check("matrix_product", v)
        return v
    v = v * prep.gains
    _check("tia_gain", v)
    if spec.magnitude("crosstalk"):
        v = v @ prep.mix.T
    if c[2] != 1.0:
        v = c[2] * v
    _check("crosstalk", v)
    e6 = spec.magnitude("darkness")
    if e6:
        v = v + e6 * np.mean(u, axis=-1, keepdims=True)
    if c[3] != 1.0:
        v = c[3] * v
    _check("darkness", v)
    if spec.magnitude("power_norm"):
        v = _power_norm(v, spec.stages[6].target_rms)
        _check("power_norm", v)
    return v


def cell_apply(W, s, spec: CellSpec, calib=None) -> np.ndarray:
    """Impaired (or ideal, for SimpleCell) evaluation of ``W @ tanh(s)``."""
    s = np.asarray(s, dtype=float)
    W = np.asarray(W, dtype=float)
    if s.shape[-1] != W.shape[1]:
        raise ConfigurationError(f"state length {s.shape[-1]} does not match W {W.shape}")
    return apply_prepared(prepare(W, spec, calib), s)


def _rms(v):
    return np.sqrt(np.mean(v * v, axis=-1, keepdims=True))


def _power_norm(v, target):
    return v * (target / np.maximum(_rms(v), EPS_FLOOR))


def _check(stage: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by stage {stage!r}", stage=stage)


# -- derivatives used by implicit differentiation ---------------------------

def emitter_slope(s, spec: CellSpec, calib=None):
    """Elementwise d u / d s for stages 1-2, plus intermediates (u, t, a, a0)."""
    t = np.tanh(s)
    e1 = spec.magnitude("tanh_approx")
    e2 = spec.magnitude("microled")
    c1 = 1.0 if calib is None else calib[0]
    a0 = t + e1 * (t - t ** 3)
    a = c1 * a0
    u = a * (1.0 - e2 * np.abs(a))
    slope = (1.0 - t * t) * c1 * (1.0 + e1 * (1.0 - 3.0 * t * t)) * (1.0 - 2.0 * e2 * np.abs(a))
    return slope, u, a, a0


def power_norm_jacobian(r, target):
    """Batched Jacobian of the power normalisation at pre-normalisation outputs ``r`` (n, d)."""
    n, d = r.shape
    rho = _rms(r)[:, 0]
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    small = rho < EPS_FLOOR
    scale = target / np.where(small, EPS_FLOOR, rho)
    outer = r[:, :, None] * r[:, None, :] / (d * np.where(small, 1.0, rho ** 2))[:, None, None]
    outer[small] = 0.0
    return scale[:, None, None] * (eye - outer)
