"""Pipeline configuration: presets, JSON loading, flag overrides, validation."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

from .conformal import minimum_calibration_size
from .deeponet import BranchConfig, TrunkConfig
from .errors import ConfigError
from .tasks import TaskSpec, split_sizes
from .training import TrainConfig

QUERY_DIM = {"antiderivative": 1, "heat1d": 1, "proxy_field": 2}


@dataclass
class Paths:
    data: str = "run/data"
    ckpt: str = "run/checkpoint"
    calib: str = "run/calibration"
    out: str = "run/report"


@dataclass
class UQSettings:
    alpha: float = 0.05
    z: float = 1.96
    n_c: int = 10
    sigma_floor: float = 1e-8
    rel_err_eps: float = 1e-8
    failure_threshold_pct: float = 10.0
    error_threshold_pct: float = 20.0
    histogram_bins: int = 20


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    task: TaskSpec = field(default_factory=TaskSpec)
    split: tuple = (0.6, 0.2, 0.2)
    branch: BranchConfig = field(default_factory=BranchConfig)
    trunk: TrunkConfig = field(default_factory=TrunkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    uq: UQSettings = field(default_factory=UQSettings)
    seed: int = 0

    def validate(self):
        self.task.validate()
        self.branch.validate()
        self.trunk.validate()
        self.train.validate()
        uq = self.uq
        if not 0.0 < uq.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {uq.alpha}")
        if uq.n_c < 2:
            raise ConfigError(f"n_c must be >= 2, got {uq.n_c}")
        if uq.z < 0 or uq.sigma_floor <= 0:
            raise ConfigError("z must be >= 0 and sigma_floor > 0")
        if self.branch.input_channels != self.task.channels:
            raise ConfigError(f"branch expects {self.branch.input_channels} channels, "
                              f"task provides {self.task.channels}")
        if self.trunk.query_dim != QUERY_DIM[self.task.kind]:
            raise ConfigError(f"trunk input width {self.trunk.query_dim} != query dimension "
                              f"{QUERY_DIM[self.task.kind]} of {self.task.kind}")
        if self.trunk.embedding != self.branch.hidden:
            raise ConfigError("trunk output width must equal branch hidden size")
        sizes = split_sizes(self.task.n_samples, self.split)
        if sizes[1] < minimum_calibration_size(uq.alpha):
            raise ConfigError(f"calibration split of {sizes[1]} samples is infeasible for "
                              f"alpha={uq.alpha}: need at least {minimum_calibration_size(uq.alpha)}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["task"] = self.task.to_dict()
        d["trunk"]["widths"] = list(self.trunk.widths)
        d["split"] = list(self.split)
        return d


def _desk(kind, steps, channels, widths):
    return {
        "task": {"kind": kind, "n_samples": 1000, "steps": steps, "channels": channels, "points": 256},
        "split": [0.6, 0.2, 0.2],
        "branch": {"kind": "gru", "input_channels": channels, "hidden": 48, "layers": 2,
                   "dropout": 0.1, "layer_norm": False},
        "trunk": {"widths": widths, "activation": "tanh", "dropout": 0.1},
        "train": {"learning_rate": 2e-3, "epochs": 150, "batch_size": 32, "plateau_patience": 5},
    }


PRESETS = {
    "antiderivative": _desk("antiderivative", 64, 1, [1, 64, 64, 48]),
    "heat1d": _desk("heat1d", 64, 1, [1, 64, 64, 48]),
    "proxy_field": _desk("proxy_field", 7, 12, [2, 64, 64, 48]),
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, d, section):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {section} field(s): {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {section} section: {exc}") from None


def from_dict(d) -> PipelineConfig:
    """Build a config from a plain dict; ``preset`` (if present) supplies defaults."""
    d = dict(d)
    preset = d.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        d = _merge(PRESETS[preset], d)
    unknown = set(d) - {"paths", "task", "split", "branch", "trunk", "train", "uq", "seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    seed = int(d.get("seed", 0))
    trunk = dict(d.get("trunk", {}))
    if "widths" in trunk:
        trunk["widths"] = tuple(trunk["widths"])
    task = _build(TaskSpec, dict(d.get("task", {})), "task")
    train = _build(TrainConfig, dict(d.get("train", {})), "train")
    task.seed = seed
    train.seed = seed
    split = d.get("split", (0.6, 0.2, 0.2))
    return PipelineConfig(
        paths=_build(Paths, dict(d.get("paths", {})), "paths"),
        task=task,
        split=tuple(split),
        branch=_build(BranchConfig, dict(d.get("branch", {})), "branch"),
        trunk=_build(TrunkConfig, trunk, "trunk"),
        train=train,
        uq=_build(UQSettings, dict(d.get("uq", {})), "uq"),
        seed=seed,
    )


def preset(name, **overrides) -> PipelineConfig:
    return from_dict(_merge({"preset": name}, overrides))
