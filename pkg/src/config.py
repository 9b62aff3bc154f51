import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import yaml

MODES = ("syn", "real", "syn_plus_real", "syn_to_real")
BRANCHES = ("stys", "dista", "knowd")
PRED_LENGTHS = (8, 16, 32)
GATE_NORMS = ("softmax", "l1")

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class ConfigError(ValueError):
    """Raised for unreadable, unknown or invalid configuration values."""


# Make sure the config path is relative to the project root
def load_config(path=None):
    if path is None:
        script_dir = os.path.dirname(os.path.abspath(__file__))
        project_root = os.path.abspath(os.path.join(script_dir, '..'))
        path = os.path.join(project_root, "config", "config.yaml")

    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found at {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {path} is not valid YAML: {str(e)}")

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a key-value mapping")
    return data


def setup_logging(log_file='logs/main.log', level='INFO'):
    """Configure root logging the same way for every entry point"""
    directory = os.path.dirname(log_file)
    if directory:
        os.makedirs(directory, exist_ok=True)
    logging.basicConfig(
        filename=log_file,
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT
    )


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; every field is one key of config/config.yaml."""

    mode: str = "syn_to_real"
    enabled_branches: Tuple[str, ...] = BRANCHES
    obs_length: int = 16
    ttc: int = 16
    pred_length: int = 16
    batch_size: int = 2
    lr: float = 1e-5
    lr_decay: float = 0.8
    lr_decay_step: int = 10
    epochs: int = 20
    teacher_epochs: int = 10
    dropout: float = 0.5
    seed: int = 0
    feature_dim: int = 64
    region_size: int = 64
    patch_size: int = 8
    psi_depth: int = 2
    psi_heads: int = 4
    teacher_layers: int = 3
    teacher_heads: int = 8
    teacher_ff_dim: int = 512
    student_channels: int = 16
    student_hidden: int = 100
    student_layers: int = 2
    crop_beta: float = 1.5
    style_alpha: float = 10.0
    adain_block: int = 1
    grl_lambda: float = 1.0
    grl_warmup: bool = True
    gate_norm: str = "softmax"
    gumbel_eta: float = 1.0
    use_fol: bool = True
    data_dir: str = "data/toy"
    run_dir: str = "runs/default"
    num_threads: int = 1
    export_features: bool = True
    ablation_subsets: Optional[Tuple[Tuple[str, ...], ...]] = None
    ttc_sweep: Tuple[int, ...] = ()
    fol_sweep: Tuple[int, ...] = ()
    seeds: Tuple[int, ...] = (0, 1, 2)
    log_file: str = "logs/main.log"
    log_level: str = "INFO"

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

        values = {}
        for key, raw in data.items():
            values[key] = _coerce(key, raw, known[key].default)
        config = cls(**values)
        config.validate()
        return config

    def to_dict(self):
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = [list(v) if isinstance(v, tuple) else v for v in value]
        return data

    def replace(self, **changes):
        config = dataclasses.replace(self, **changes)
        config.validate()
        return config

    @property
    def active_branches(self):
        """Branches that actually run: transfer modules exist only in syn_to_real"""
        if self.mode != "syn_to_real":
            return ()
        return tuple(b for b in BRANCHES if b in self.enabled_branches)

    def validate(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        bad = [b for b in self.enabled_branches if b not in BRANCHES]
        if bad:
            problems.append(f"unknown branches {bad}")
        for subset in self.ablation_subsets or ():
            bad = [b for b in subset if b not in BRANCHES]
            if bad:
                problems.append(f"ablation subset {list(subset)} has unknown branches {bad}")
        if self.mode == "syn_to_real" and not self.enabled_branches:
            problems.append("syn_to_real mode needs at least one enabled branch")
        if self.lr <= 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.grl_lambda < float("inf"):
            problems.append(f"grl_lambda must be finite and >= 0, got {self.grl_lambda}")
        if self.pred_length not in PRED_LENGTHS:
            problems.append(f"pred_length must be one of {PRED_LENGTHS}")
        if any(p not in PRED_LENGTHS for p in self.fol_sweep):
            problems.append(f"fol_sweep entries must be in {PRED_LENGTHS}")
        if self.feature_dim % self.teacher_heads:
            problems.append("teacher_heads must divide feature_dim")
        if self.feature_dim % self.psi_heads:
            problems.append("psi_heads must divide feature_dim")
        if self.region_size % self.patch_size:
            problems.append("region_size must be divisible by patch_size")
        if self.crop_beta < 1:
            problems.append("crop_beta must be >= 1")
        if self.gumbel_eta <= 0:
            problems.append("gumbel_eta must be > 0")
        if self.gate_norm not in GATE_NORMS:
            problems.append(f"gate_norm must be one of {GATE_NORMS}")
        if not 0 <= self.adain_block <= self.psi_depth:
            problems.append("adain_block must lie in [0, psi_depth]")
        if self.batch_size < 1 or self.obs_length < 1 or self.ttc < 1:
            problems.append("batch_size, obs_length and ttc must be positive")
        if self.epochs < 0 or self.teacher_epochs < 0:
            problems.append("epochs must be >= 0")
        if not 0 <= self.dropout < 1:
            problems.append("dropout must lie in [0, 1)")
        if problems:
            raise ConfigError("; ".join(problems))


def _coerce(key, raw, default):
    try:
        if key == "ablation_subsets":
            if raw is None:
                return None
            if any(isinstance(subset, str) for subset in raw):
                raise TypeError("expected a list of branch lists, e.g. [[stys], [stys, knowd]]")
            return tuple(tuple(str(b) for b in subset) for subset in raw)
        if isinstance(default, bool):
            if not isinstance(raw, bool):
                raise TypeError("expected true/false")
            return raw
        if isinstance(default, tuple):
            if isinstance(raw, str):
                raw = [part.strip() for part in raw.split(",") if part.strip()]
            items = tuple(raw)
            if key in ("ttc_sweep", "fol_sweep", "seeds"):
                return tuple(int(v) for v in items)
            return tuple(str(v) for v in items)
        if isinstance(default, int):
            if isinstance(raw, bool) or int(raw) != raw:
                raise TypeError("expected an integer")
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {raw!r} ({str(e)})")


def load_run_config(path=None):
    """Read the flat YAML run configuration into a validated RunConfig"""
    return RunConfig.from_dict(load_config(path))
