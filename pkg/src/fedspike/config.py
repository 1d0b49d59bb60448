"""Declarative experiment configuration.

One JSON file drives the whole pipeline: dataset location and split, spike
encoder, model architecture, federated schedule, and energy constants. The
master seed is mandatory and is the root of every random stream (split,
init, shuffle, encoder); there is no wall-clock fallback, so a config file
pins a run completely.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .encoding import EncoderConfig
from .energy import EnergyModel
from .federated import TrainConfig
from .models import LifConfig, ModelArch

MODEL_KINDS = ("snn", "cnn", "lstm")


class ConfigError(Exception):
    """Invalid or incomplete experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data_root: str
    out_dir: str
    subjects: tuple | None          # None -> first n_subjects found on disk
    n_subjects: int
    split_ratio: float
    window_len: int
    encoder: EncoderConfig
    arch: ModelArch
    lif: LifConfig
    gains: dict                     # init gain per model kind
    rounds: int
    train: TrainConfig
    energy: EnergyModel

    def param_snapshot(self) -> dict:
        """Everything that defines the experiment, minus filesystem paths.

        This is the snapshot embedded in reports and manifests; two runs with
        equal snapshots and equal dataset digests are byte-identical.
        """
        return {
            "seed": self.seed,
            "dataset": {
                "subjects": list(self.subjects) if self.subjects else None,
                "n_subjects": self.n_subjects,
                "split_ratio": self.split_ratio,
                "window_len": self.window_len,
            },
            "encoder": {
                "scheme": self.encoder.scheme,
                "steps": self.encoder.steps,
                "delta_threshold": self.encoder.delta_threshold,
            },
            "model": {
                "conv": [list(c) for c in self.arch.conv],
                "fc": list(self.arch.fc),
                "lstm_hidden": self.arch.lstm_hidden,
                "lstm_layers": self.arch.lstm_layers,
                "beta": self.lif.beta,
                "theta": self.lif.theta,
                "reset": self.lif.reset,
                "slope": self.lif.slope,
                "gain": dict(sorted(self.gains.items())),
            },
            "federated": {
                "rounds": self.rounds,
                "lr": self.train.lr,
                "batch": self.train.batch,
                "epochs": self.train.epochs,
                "rate_penalty": self.train.rate_penalty,
                "rate_target": self.train.rate_target,
            },
            "energy": {"e_mac": self.energy.e_mac, "e_ac": self.energy.e_ac},
        }

    def model_io_shape(self, kind: str, n_channels: int):
        """(in_channels, window_len) as the model sees them.

        The delta encoder turns a (C, L) window into an L-step stream of
        2C-channel on/off frames, so a spiking model behind it is built on
        (2C, 1) frames instead of the raw window shape.
        """
        if kind == "snn" and self.encoder.scheme == "delta":
            return 2 * n_channels, 1
        return n_channels, self.window_len


def _section(raw: dict, name: str, allowed) -> dict:
    sec = raw.pop(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"unknown key '{name}.{key}' "
                              f"(allowed: {', '.join(sorted(allowed))})")
    return sec


def config_from_dict(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a parsed config dict; overrides replace top-level keys."""
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    dataset = _section(raw, "dataset", {"subjects", "n_subjects",
                                        "split_ratio", "window_len"})
    encoder = _section(raw, "encoder", {"scheme", "steps", "delta_threshold"})
    model = _section(raw, "model", {"conv", "fc", "lstm_hidden", "lstm_layers",
                                    "beta", "theta", "reset", "slope", "gain"})
    federated = _section(raw, "federated", {"rounds", "lr", "batch", "epochs",
                                            "rate_penalty", "rate_target"})
    energy = _section(raw, "energy", {"e_mac", "e_ac"})

    allowed_top = {"seed", "data_root", "out_dir"}
    for key in raw:
        if key not in allowed_top:
            raise ConfigError(f"unknown config key {key!r}")

    if "seed" not in raw:
        raise ConfigError("config must set an explicit integer 'seed'")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    data_root = raw.get("data_root")
    if not data_root or not isinstance(data_root, str):
        raise ConfigError("config must set 'data_root' (dataset directory)")
    out_dir = raw.get("out_dir")
    if not out_dir or not isinstance(out_dir, str):
        raise ConfigError("config must set 'out_dir' (output directory)")

    subjects = dataset.get("subjects")
    if subjects is not None:
        if (not isinstance(subjects, (list, tuple)) or not subjects
                or not all(isinstance(s, str) for s in subjects)):
            raise ConfigError("dataset.subjects must be a non-empty list of "
                              "subject ids like 'S001'")
        subjects = tuple(subjects)
    n_subjects = dataset.get("n_subjects", 3)
    if not isinstance(n_subjects, int) or n_subjects < 1:
        raise ConfigError(f"dataset.n_subjects must be >= 1, got {n_subjects!r}")
    split_ratio = float(dataset.get("split_ratio", 0.8))
    if not 0.0 < split_ratio < 1.0:
        raise ConfigError(f"dataset.split_ratio must be in (0, 1), "
                          f"got {split_ratio}")
    window_len = dataset.get("window_len", 640)
    if not isinstance(window_len, int) or window_len < 1:
        raise ConfigError(f"dataset.window_len must be >= 1, got {window_len!r}")

    try:
        enc = EncoderConfig(scheme=encoder.get("scheme", "direct"),
                            steps=int(encoder.get("steps", 8)),
                            delta_threshold=float(
                                encoder.get("delta_threshold", 0.5)),
                            seed=seed)
    except ValueError as e:
        raise ConfigError(f"encoder: {e}") from None

    conv = model.get("conv", [[8, 3, 8], [32, 5, 4]])
    fc = model.get("fc", [1536])
    try:
        arch = ModelArch(conv=tuple(tuple(int(v) for v in c) for c in conv),
                         fc=tuple(int(v) for v in fc),
                         lstm_hidden=int(model.get("lstm_hidden", 64)),
                         lstm_layers=int(model.get("lstm_layers", 2)))
        lif = LifConfig(beta=float(model.get("beta", 0.9)),
                        theta=float(model.get("theta", 1.0)),
                        reset=model.get("reset", "subtract"),
                        slope=float(model.get("slope", 25.0)))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"model: {e}") from None
    # Initialization scale is a per-architecture hyperparameter under plain
    # SGD; a bare number applies to every method.
    gain_raw = model.get("gain", {"snn": 1.5, "cnn": 1.5, "lstm": 2.0})
    if isinstance(gain_raw, (int, float)) and not isinstance(gain_raw, bool):
        gains = {kind: float(gain_raw) for kind in MODEL_KINDS}
    elif isinstance(gain_raw, dict) and set(gain_raw) <= set(MODEL_KINDS):
        gains = {kind: float(gain_raw.get(kind, 1.0)) for kind in MODEL_KINDS}
    else:
        raise ConfigError(f"model.gain must be a number or a per-method "
                          f"object with keys from {MODEL_KINDS}, "
                          f"got {gain_raw!r}")
    if any(g <= 0 for g in gains.values()):
        raise ConfigError(f"model.gain entries must be > 0, got {gains}")
    if enc.scheme == "delta" and arch.conv:
        raise ConfigError("the delta encoder emits width-1 frames; use a "
                          "fully-connected trunk (model.conv: [])")

    rounds = federated.get("rounds", 60)
    if not isinstance(rounds, int) or rounds < 1:
        raise ConfigError(f"federated.rounds must be >= 1, got {rounds!r}")
    try:
        train = TrainConfig(
            lr=float(federated.get("lr", 0.01)),
            batch=int(federated.get("batch", 64)),
            epochs=int(federated.get("epochs", 1)),
            rate_penalty=float(federated.get("rate_penalty", 1.0)),
            rate_target=float(federated.get("rate_target", 0.10)))
    except Exception as e:
        raise ConfigError(f"federated: {e}") from None

    try:
        em = EnergyModel(e_mac=float(energy.get("e_mac", 4.6e-12)),
                         e_ac=float(energy.get("e_ac", 0.9e-12)))
    except Exception as e:
        raise ConfigError(f"energy: {e}") from None

    return ExperimentConfig(
        seed=seed, data_root=data_root, out_dir=out_dir, subjects=subjects,
        n_subjects=n_subjects, split_ratio=split_ratio, window_len=window_len,
        encoder=enc, arch=arch, lif=lif, gains=gains, rounds=rounds,
        train=train, energy=em)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return config_from_dict(raw, overrides)
