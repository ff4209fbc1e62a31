"""Benchmark configuration: defaults, JSON loading, strict key validation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

from .errors import InvalidConfigError
from .gating import GateKind

SEED_ENV_VAR = "LARNET_SEED"


@dataclass
class DataSection:
    n_identities: int = 200
    obs_per_identity: int = 8
    pose_range: float = math.pi / 2.0
    noise_sigma: float = 0.03
    pitch_range: float = 0.0
    roll_range: float = 0.0
    flip_augment: bool = False
    n_landmarks: int = 32
    identity_scale: float = 0.25
    anisotropy: list = field(default_factory=lambda: [0.6, 1.0, 1.4])
    train_fraction: float = 0.8


@dataclass
class BackboneSection:
    dim: int = 64
    gain: float = 1.2


@dataclass
class GatingSection:
    kind: str = "abs_sin"

    def gate_kind(self) -> GateKind:
        try:
            return GateKind(self.kind)
        except ValueError:
            valid = ", ".join(k.value for k in GateKind)
            raise InvalidConfigError(
                f"gating.kind must be one of {{{valid}}}, got {self.kind!r}"
            ) from None


@dataclass
class TrainSection:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    batch_size: int = 64
    lr_schedule: list = field(default_factory=lambda: [[120, 10.0], [170, 10.0]])
    loss_form: str = "forward"


@dataclass
class EvalSection:
    far_targets: list = field(default_factory=lambda: [0.01, 0.001])
    rank_ks: list = field(default_factory=lambda: [1, 5])


@dataclass
class ExperimentSection:
    arms: list = field(
        default_factory=lambda: [
            "backbone",
            "residual:identity",
            "residual:linear",
            "residual:sigmoid",
            "residual:abs_sin",
            "end_to_end:abs_sin",
        ]
    )
    backbone_lr_factor: float = 0.001


@dataclass
class BenchConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    gating: GatingSection = field(default_factory=GatingSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)


_SECTIONS = {
    "data": DataSection,
    "backbone": BackboneSection,
    "gating": GatingSection,
    "train": TrainSection,
    "eval": EvalSection,
    "experiment": ExperimentSection,
}


def _apply_section(section, values: dict, path: str):
    known = {f.name for f in fields(section)}
    for key, value in values.items():
        if key not in known:
            raise InvalidConfigError(f"unknown config key {path}.{key}")
        setattr(section, key, value)


def config_from_dict(doc: dict) -> BenchConfig:
    """Build a config from a parsed JSON document, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise InvalidConfigError("config document must be a JSON object")
    cfg = BenchConfig()
    for key, value in doc.items():
        if key == "seed":
            cfg.seed = int(value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidConfigError(f"config section {key!r} must be an object")
            _apply_section(getattr(cfg, key), value, key)
        else:
            raise InvalidConfigError(f"unknown config key {key}")
    cfg.gating.gate_kind()  # validate the enum value early
    return cfg


def load_config(path=None) -> BenchConfig:
    """Load a config file (or defaults) and apply the seed env override."""
    if path is None:
        cfg = BenchConfig()
    else:
        from . import jsonio

        cfg = config_from_dict(jsonio.load(path))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise InvalidConfigError(
                f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}"
            ) from None
    return cfg


def config_to_dict(cfg: BenchConfig) -> dict:
    def section_dict(section) -> dict:
        return {f.name: getattr(section, f.name) for f in fields(section)}

    return {
        "seed": cfg.seed,
        "data": section_dict(cfg.data),
        "backbone": section_dict(cfg.backbone),
        "gating": section_dict(cfg.gating),
        "train": section_dict(cfg.train),
        "eval": section_dict(cfg.eval),
        "experiment": section_dict(cfg.experiment),
    }
