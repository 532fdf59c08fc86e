"""Run configuration, presets, and manifests.

A run is fully described by a ScenarioConfig: dataset and model shape,
local-training hyperparameters, selection strategy constants,
quantization geometry, channel and decoder settings, and the scenario
(which transmission path carries the updates). Config files are flat
YAML mappings using the field names below; unknown keys are rejected.

Symbol map for the configuration constants: num_clients K, activation
probability lambda, target_participants K_tar, candidate_pool_size d,
steepness a, threshold step xi, epochs E, batch_size V, learning rates
eta / eta_g, index_bits J, subvector_dim Q, blocklength N, rounds T.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .model import Architecture, TrainConfig
from .selection import SelectionConfig

SCENARIOS = ("perfect", "perfect_quant", "tuma", "mdaircomp")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "perfect"
    selection: str = "self"
    seed: int = 0
    rounds: int = 500
    global_lr: float = 1.0
    threads: int = 1

    # data
    dataset: str = "fmnist"
    data_dir: str = "data"
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    dirichlet_alpha: float = 2.0
    synthetic_samples: int = 20000
    synthetic_classes: int = 10
    synthetic_dim: int = 20
    synthetic_separation: float = 10.0

    # model
    input_dim: int = 784
    hidden_dims: tuple[int, ...] = (64, 30)
    output_dim: int = 10
    dropout_rate: float = 0.5

    # local training
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.001
    full_epoch_mode: bool = False

    # participation
    num_clients: int = 1000
    activation_prob: float = 0.8
    target_participants: int = 100
    candidate_pool_size: int = 200
    steepness: float = 50.0
    theta_init: float = 2.32
    theta_step: float = 0.004

    # quantization
    index_bits: int = 7
    subvector_dim: int = 30

    # channel and decoding
    blocklength: int = 50
    snr_rx_db: float = 10.0
    power: float = 1e-3
    k_max: int = 8
    amp_iters: int = 25
    amp_damping: float = 0.7
    amp_tol: float = 1e-6
    deep_fade_threshold: float = 1e-6

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.dataset not in ("fmnist", "synthetic"):
            raise ConfigError(f"dataset must be 'fmnist' or 'synthetic', got {self.dataset!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.index_bits < 1:
            raise ConfigError(f"index_bits must be >= 1, got {self.index_bits}")
        if self.subvector_dim < 1:
            raise ConfigError(f"subvector_dim must be >= 1, got {self.subvector_dim}")
        if self.blocklength < 1:
            raise ConfigError(f"blocklength must be >= 1, got {self.blocklength}")
        if self.power <= 0:
            raise ConfigError(f"power must be > 0, got {self.power}")
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")
        if self.global_lr <= 0:
            raise ConfigError(f"global_lr must be > 0, got {self.global_lr}")
        # Delegate the remaining constraints to the component configs.
        self.architecture()
        self.train_config()
        self.selection_config()

    def architecture(self) -> Architecture:
        return Architecture(
            input_dim=self.input_dim,
            hidden_dims=tuple(self.hidden_dims),
            output_dim=self.output_dim,
            dropout_rate=self.dropout_rate,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            full_epoch_mode=self.full_epoch_mode,
        )

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(
            strategy=self.selection,
            num_clients=self.num_clients,
            activation_prob=self.activation_prob,
            target_participants=self.target_participants,
            candidate_pool_size=self.candidate_pool_size,
            steepness=self.steepness,
            theta_init=self.theta_init,
            theta_step=self.theta_step,
        )

    @property
    def codebook_size(self) -> int:
        return 2 ** self.index_bits


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _coerce(key: str, value):
    """Coerce a raw YAML/CLI value to the field's declared type."""
    f = _FIELDS[key]
    origin = typing.get_origin(f.type) if not isinstance(f.type, str) else None
    ftype = f.type if not isinstance(f.type, str) else f.type
    # Dataclass field types arrive as strings under `from __future__ annotations`.
    name = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    try:
        if name.startswith("tuple"):
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            inner = float if "float" in name else int
            return tuple(inner(v) for v in value)
        if name == "bool":
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes", "on"):
                return True
            if str(value).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if name == "int":
            out = int(value)
            return out
        if name == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{key}': cannot interpret {value!r}: {exc}") from exc


def parse_config(path=None, overrides: dict | None = None) -> ScenarioConfig:
    """Build a validated config from an optional YAML file plus overrides.

    Override values win over file values; both win over defaults. Unknown
    keys raise a ConfigError naming the key.
    """
    merged: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a flat key-value mapping")
        merged.update(raw)
    if overrides:
        merged.update(overrides)
    unknown = set(merged) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    coerced = {k: _coerce(k, v) for k, v in merged.items()}
    return ScenarioConfig(**coerced)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["split_ratios"] = list(cfg.split_ratios)
    out["hidden_dims"] = list(cfg.hidden_dims)
    return out


def config_from_dict(data: dict) -> ScenarioConfig:
    return parse_config(path=None, overrides=data)


# --------------------------------------------------------------------------
# Presets: one per summary-table row, plus the blocklength and
# quantization-bit sweeps, plus desk-scale variants for fast machines.
# --------------------------------------------------------------------------

_TABLE1_BASE = {"scenario": "tuma", "selection": "self",
                "index_bits": 7, "subvector_dim": 30, "blocklength": 50}

PRESETS: dict[str, dict] = {
    "table1-perfect-noquant": {"scenario": "perfect", "selection": "self"},
    "table1-perfect-quant": {"scenario": "perfect_quant", "selection": "self",
                             "index_bits": 7, "subvector_dim": 30},
    "table1-tuma-self": dict(_TABLE1_BASE),
    "table1-tuma-poc": dict(_TABLE1_BASE, selection="poc"),
    "table1-tuma-random": dict(_TABLE1_BASE, selection="random"),
    "table1-mdaircomp": dict(_TABLE1_BASE, scenario="mdaircomp"),
    "table1-tuma-j5": dict(_TABLE1_BASE, index_bits=5),
    "table1-tuma-n20": dict(_TABLE1_BASE, blocklength=20),
    "fig2-N10": dict(_TABLE1_BASE, blocklength=10),
    "fig2-N20": dict(_TABLE1_BASE, blocklength=20),
    "fig2-N50": dict(_TABLE1_BASE, blocklength=50),
    "fig4-sweep": dict(_TABLE1_BASE, rounds=100),
}

# (J, N) grid expanded by the fig4-sweep preset.
FIG4_GRID = [(j, n) for n in (20, 50) for j in range(2, 13)]

# Documented desk-scale reductions: synthetic blobs instead of FMNIST,
# a ~3.6k-parameter model, one tenth the clients and participants, and
# shorter runs. Channel dims shrink with the codebook so decodes stay fast.
DESK_SCALE_OVERRIDES = {
    "dataset": "synthetic",
    "synthetic_samples": 20000,
    "synthetic_classes": 10,
    "synthetic_dim": 20,
    "synthetic_separation": 10.0,
    "input_dim": 20,
    "hidden_dims": (64, 30),
    "output_dim": 10,
    "num_clients": 100,
    "target_participants": 10,
    "candidate_pool_size": 20,
    "rounds": 150,
    "index_bits": 5,
    "blocklength": 48,
    "k_max": 4,
}


def preset(name: str) -> ScenarioConfig:
    """The full config for a named preset."""
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}"
        )
    return parse_config(path=None, overrides=dict(PRESETS[name]))


def expand_preset_overrides(name: str) -> list[tuple[str, dict]]:
    """Labelled raw override dicts; sweeps expand to one entry per point."""
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}"
        )
    if name != "fig4-sweep":
        return [(name, dict(PRESETS[name]))]
    return [
        (f"{name}-J{j}-N{n}", dict(PRESETS[name], index_bits=j, blocklength=n))
        for j, n in FIG4_GRID
    ]


def expand_preset(name: str) -> list[tuple[str, ScenarioConfig]]:
    """Labelled configs for a preset; sweeps expand to one entry per point."""
    return [
        (label, parse_config(path=None, overrides=ov))
        for label, ov in expand_preset_overrides(name)
    ]


def apply_desk_scale(cfg: ScenarioConfig) -> ScenarioConfig:
    """Shrink a config to desk scale (same structure, smaller everything)."""
    merged = config_to_dict(cfg)
    merged.update(DESK_SCALE_OVERRIDES)
    return config_from_dict(merged)


# --------------------------------------------------------------------------
# Run manifest: everything needed to reproduce a run bit-identically.
# --------------------------------------------------------------------------

def emit_manifest(
    cfg: ScenarioConfig,
    started_at: str,
    finished_at: str | None,
    geometry_file: str | None,
    code_version: str,
) -> str:
    payload = {
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "code_version": code_version,
        "geometry_file": geometry_file,
        "started_at": started_at,
        "finished_at": finished_at,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def parse_manifest(text: str) -> tuple[ScenarioConfig, dict]:
    payload = json.loads(text)
    cfg = config_from_dict(payload["config"])
    return cfg, payload
