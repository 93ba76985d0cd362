"""Run configuration: one YAML document with a section per module.

Missing keys fall back to :data:`DEFAULTS`. The config hash covers only the
sections that change what the environment simulates (data, feeder, tariff,
fairness, reward), so a checkpoint can be evaluated under any training or
evaluation settings but never under a different physical instance.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .feeder import ConfigurationError, FeederModel, FeederNetwork, VvcCurve, calibrate_impedance
from .fairness import FairnessCase
from .data import Dataset, load_dataset, split_train_test, synthesize
from .env import CurtailmentEnv, RewardWeights
from .learner import TrainConfig
from .tariff import TariffSchedule

HASHED_SECTIONS = ("data", "feeder", "tariff", "fairness", "reward")

DEFAULTS: dict = {
    "seed": 0,
    "data": {
        "path": None,
        "households": 10,
        "days": 60,
        "synth_seed": 0,
        "train_fraction": 0.8,
        "split": "random",
        "split_seed": 0,
    },
    "feeder": {
        "r": 0.003,
        "x": 0.001,
        "base_voltage": 240.0,
        "base_power_kva": 10.0,
        "vvc_mode": "prev-step",
        "boundary_mode": "net-injection",
        "reactive_fraction": 0.1,
        "vvc": {"v1": 0.94, "v2": 0.98, "v3": 1.06, "v4": 1.10},
        "calibrate": True,
        "calibrate_target": 1.06,
    },
    "tariff": {
        "offpeak_price": 0.12,
        "peak_price": 0.52,
        "shoulder_price": 0.22,
        "feed_in": 0.10,
        "offpeak_window": [46, 14],
        "peak_window": [28, 39],
        "pricing": "split",
    },
    "fairness": {"definition": "d1", "horizon": "instant", "epsilon": 1e-3, "ratio_cap": 1e3, "strict": False},
    "reward": {"w1": 100.0, "w2": 1.0},
    "train": TrainConfig().to_dict(),
    "oracle": {
        "beta": 1.0,
        "mode": "exhaustive",
        "levels": 11,
        "budget": 132,
        "sign": "penalty",
        "day": 0,
        "start_slot": 22,
        "timesteps": 2,
        "households": 2,
        "max_iters": 400,
        "mu0": 1e3,
    },
    "eval": {"window": [16, 30], "safe_band": 0.005},
    "pareto": {"weights": [0.0, 0.5, 1.0, 5.0, 10.0], "solver": "exhaustive"},
}


def merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "train":
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {where!r} must be a mapping")
            out[key] = merge_config(base[key], value, where + ".")
        elif key == "train":
            if not isinstance(value, dict):
                raise ConfigurationError("config key 'train' must be a mapping")
            unknown = set(value) - set(base[key])
            if unknown:
                raise ConfigurationError(f"unknown train keys: {sorted(unknown)}")
            out[key].update(value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file at ``path`` (if any), then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        cfg = merge_config(cfg, doc)
    if overrides:
        cfg = merge_config(cfg, overrides)
    return cfg


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _numeric(obj):
    """Integers become floats so ``w2: 1`` and ``w2: 1.0`` hash alike."""
    if isinstance(obj, dict):
        return {k: _numeric(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_numeric(v) for v in obj]
    if isinstance(obj, int) and not isinstance(obj, bool):
        return float(obj)
    return obj


def config_hash(cfg: dict) -> str:
    """sha256 over the canonical JSON of the environment-defining sections."""
    relevant = {k: cfg[k] for k in HASHED_SECTIONS}
    text = json.dumps(_numeric(_canonical(relevant)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def write_snapshot(cfg: dict, out_dir) -> Path:
    """Write the resolved config (with its hash) next to a run's outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.yaml"
    doc = _canonical(cfg)
    doc["config_hash"] = config_hash(cfg)
    path.write_text(yaml.safe_dump(doc, sort_keys=True))
    return path


def build_network(cfg: dict, households: int | None = None) -> FeederNetwork:
    f = cfg["feeder"]
    H = households if households is not None else cfg["data"]["households"]
    r = np.broadcast_to(np.asarray(f["r"], dtype=float), (H,)).copy()
    x = np.broadcast_to(np.asarray(f["x"], dtype=float), (H,)).copy()
    return FeederNetwork(r, x, base_voltage=float(f["base_voltage"]), base_power_kva=float(f["base_power_kva"]))


def build_curve(cfg: dict) -> VvcCurve:
    return VvcCurve(**{k: float(v) for k, v in cfg["feeder"]["vvc"].items()})


def build_model(cfg: dict, households: int | None = None, vvc_mode: str | None = None,
                calibration_data=None) -> FeederModel:
    """Feeder model from the ``feeder`` section.

    When ``feeder.calibrate`` is set, impedances are scaled so that
    ``calibration_data = (gen, load)`` peaks at ``calibrate_target``.
    """
    f = cfg["feeder"]
    model = FeederModel(build_network(cfg, households), build_curve(cfg),
                        vvc_mode=vvc_mode or f["vvc_mode"], boundary_mode=f["boundary_mode"],
                        reactive_fraction=float(f["reactive_fraction"]))
    if f["calibrate"]:
        if calibration_data is None:
            raise ConfigurationError("feeder.calibrate needs generation/load data")
        model = calibrate_impedance(model, *calibration_data, target_peak_voltage=float(f["calibrate_target"]))
    return model


def build_tariff(cfg: dict) -> TariffSchedule:
    t = cfg["tariff"]
    return TariffSchedule(offpeak_price=float(t["offpeak_price"]), peak_price=float(t["peak_price"]),
                          shoulder_price=float(t["shoulder_price"]),
                          feed_in=float(t["feed_in"]), offpeak_window=tuple(t["offpeak_window"]),
                          peak_window=tuple(t["peak_window"]))


def build_case(cfg: dict) -> FairnessCase:
    f = cfg["fairness"]
    return FairnessCase(f["definition"], f["horizon"], float(f["epsilon"]), float(f["ratio_cap"]), bool(f["strict"]))


def build_weights(cfg: dict) -> RewardWeights:
    return RewardWeights(float(cfg["reward"]["w1"]), float(cfg["reward"]["w2"]))


def build_train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    if t.get("hidden") is not None:
        t["hidden"] = tuple(t["hidden"])
    return TrainConfig(**t)


@dataclass
class Run:
    """Everything a command needs to simulate: data, day split and environment."""

    config: dict
    dataset: Dataset
    train_days: np.ndarray
    test_days: np.ndarray
    model: FeederModel
    env: CurtailmentEnv
    tariff: TariffSchedule

    @property
    def hash(self) -> str:
        return config_hash(self.config)


def load_data(cfg: dict) -> Dataset:
    d = cfg["data"]
    if d["path"]:
        return load_dataset(d["path"], int(d["households"]))
    return synthesize(int(d["households"]), int(d["days"]), int(d["synth_seed"]))


def build_run(cfg: dict, vvc_mode: str | None = None) -> Run:
    """Load data, split days and assemble the environment described by ``cfg``.

    Impedance calibration (if enabled) only looks at training days.
    """
    dataset = load_data(cfg)
    d = cfg["data"]
    train_days, test_days = split_train_test(dataset.n_days, float(d["train_fraction"]), int(d["split_seed"]),
                                             d["split"])
    H = dataset.n_households
    calib = None
    if cfg["feeder"]["calibrate"]:
        calib = (dataset.generation[train_days].reshape(-1, H), dataset.load[train_days].reshape(-1, H))
    model = build_model(cfg, H, vvc_mode, calib)
    env = CurtailmentEnv(model, build_case(cfg), build_weights(cfg))
    return Run(cfg, dataset, train_days, test_days, model, env, build_tariff(cfg))
