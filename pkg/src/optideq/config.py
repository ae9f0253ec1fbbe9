"""Experiment configuration: an INI file with ``[data] [model] [cell] [train] [run]`` sections.

Every key has a default, so an empty file is a valid configuration. Values
given on the command line override the file.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from optideq.baselines import DEQ_LR, LOGREG_L2, LOGREG_LR, MLP_LARGE_LR, MLP_SMALL_LR
from optideq.cells import STAGE_NAMES, CellSpec
from optideq.encoding import MODES, FeatureSchema, hmda_schema, load_schema
from optideq.errors import ConfigurationError

FAMILIES = ("deq", "mlp-small", "mlp-large", "logreg")
FAMILY_LR = {"deq": DEQ_LR, "mlp-small": MLP_SMALL_LR, "mlp-large": MLP_LARGE_LR, "logreg": LOGREG_LR}


@dataclass(frozen=True)
class ExperimentConfig:
    # [data]
    csv: str = ""
    schema: str = "hmda"          # path, "hmda", or "synth:<task>"
    mode: str = "raw-ising"
    baseline_mode: str = ""       # default: raw-onehot for raw modes, binarized otherwise
    ising: bool = True
    # [model]
    families: tuple = ("deq",)
    d_hidden: int = 16
    n_blocks: int = 4
    alpha: float = 0.5
    beta: float = 0.5
    tol: float = 1e-3
    max_iters: int = 100
    init_gain: float = 0.4
    ip_scale: float = 1.0
    logreg_l2: float = LOGREG_L2
    # [cell]
    cell: str = "SimpleCell"
    tanh_approx: float = 0.02
    microled: float = 0.02
    slm_distortion: float = 0.02
    tia_gain: float = 0.02
    crosstalk: float = 0.02
    darkness: float = 0.02
    power_norm: bool = False
    target_rms: float = 1.0
    quant_bits: int = 9           # 0 disables quantisation
    cell_seed: int = 0
    # [train]
    learning_rate: float = 0.0    # 0 -> family default
    batch_size: int = 256
    patience: int = 10
    max_epochs: int = 80
    through_impairments: bool = True
    max_recurrent_gain: float = 0.45
    calib_lr_scale: float = 0.1
    # [run]
    seeds: tuple = (0, 1, 2)
    master_seed: int = 0
    out: str = "runs/default"
    bench_rows: int = 0
    stratified_ratios: tuple = (0.7, 0.2, 0.1)
    group_ratios: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.baseline_mode and self.baseline_mode not in MODES:
            raise ConfigurationError(f"baseline_mode must be one of {MODES}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise ConfigurationError(f"families must be a non-empty subset of {FAMILIES}, got {self.families}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.patience > self.max_epochs:
            raise ConfigurationError(f"patience ({self.patience}) must not exceed max_epochs ({self.max_epochs})")
        if self.cell not in ("SimpleCell", "AOCCell"):
            raise ConfigurationError(f"cell must be SimpleCell or AOCCell, got {self.cell!r}")

    def cell_spec(self) -> CellSpec:
        if self.cell == "SimpleCell":
            return CellSpec.simple()
        mags = {name: getattr(self, name) for name in STAGE_NAMES[:6]}
        return CellSpec.aoc(mags, quant_bits=self.quant_bits or None, rng_seed=self.cell_seed,
                            power_norm=self.power_norm, target_rms=self.target_rms)

    def family_mode(self, family: str) -> str:
        if family == "deq":
            return self.mode
        if self.baseline_mode:
            return self.baseline_mode
        return "binarized" if self.mode == "binarized" else "raw-onehot"

    def family_lr(self, family: str) -> float:
        return self.learning_rate if self.learning_rate > 0 else FAMILY_LR[family]

    def load_schema(self) -> FeatureSchema:
        if self.schema == "hmda":
            return hmda_schema()
        if self.schema.startswith("synth:"):
            from optideq.synth import synth_schema

            return synth_schema(self.schema.split(":", 1)[1])
        path = Path(self.schema)
        if not path.exists():
            raise ConfigurationError(f"schema file {path} does not exist")
        return load_schema(path)

    def validate_files(self) -> None:
        if not self.csv:
            raise ConfigurationError("no input csv configured")
        if not Path(self.csv).exists():
            raise ConfigurationError(f"input csv {self.csv} does not exist")
        self.load_schema()

    def to_ini(self) -> str:
        """Canonical INI text of every field (used in manifests)."""
        sections = _sections()
        lines = []
        for section, names in sections.items():
            lines.append(f"[{section}]")
            for name in names:
                lines.append(f"{name} = {_format(getattr(self, name))}")
            lines.append("")
        return "\n".join(lines)


def _sections():
    names = [f.name for f in fields(ExperimentConfig)]
    bounds = {"data": ("csv", "ising"), "model": ("families", "logreg_l2"), "cell": ("cell", "cell_seed"),
              "train": ("learning_rate", "calib_lr_scale"), "run": ("seeds", "group_ratios")}
    out = {}
    for section, (first, last) in bounds.items():
        out[section] = names[names.index(first):names.index(last) + 1]
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _coerce(name: str, text: str):
    default = getattr(ExperimentConfig, name, None)
    if isinstance(default, bool):
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ConfigurationError(f"{name}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if name in ("families",):
        return tuple(t.strip() for t in text.split(",") if t.strip())
    if name == "seeds":
        return tuple(int(t) for t in text.replace(",", " ").split())
    if name in ("stratified_ratios", "group_ratios"):
        return tuple(float(t) for t in text.replace(",", " ").split())
    return text.strip()


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    sections = _sections()
    values = {}
    for section in parser.sections():
        if section not in sections:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in sections[section]:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
            values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    return ExperimentConfig(**values)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


def as_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
