"""Flat dotted-key configuration: documented defaults, file parsing, and
precedence (command-line flag > config-file value > default).

Config files hold one ``key = value`` pair per line; ``#`` starts a
comment. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .data import SyntheticConfig
from .losses import LossConfig
from .model import ModelConfig
from .spatial import SpatialParams
from .train import TrainConfig


class ConfigError(ValueError):
    """Bad key, bad value, or unreadable config file."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _choice(*options):
    def parse(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"must be one of {options}, got {raw!r}")
        return raw
    parse.options = options
    return parse


@dataclass(frozen=True)
class Key:
    default: object
    parse: object
    help: str


CONFIG_KEYS = {
    # data preparation
    "data.min_checkins": Key(100, int, "drop users with fewer check-ins than this"),
    "data.train_frac": Key(0.8, float, "leading fraction of each user's records used for training"),
    "data.window_len": Key(20, int, "input steps per sequence window"),
    # synthetic generator
    "synth.n_users": Key(50, int, "synthetic users"),
    "synth.n_pois": Key(300, int, "synthetic POIs"),
    "synth.zipf_exponent": Key(1.2, float, "popularity decay exponent"),
    "synth.checkins_per_user": Key(200, int, "visits generated per user"),
    "synth.n_clusters": Key(5, int, "spatial clusters for POI placement"),
    "synth.cluster_spread_km": Key(2.0, float, "cluster standard deviation in km"),
    "synth.seed": Key(7, int, "generator seed"),
    # model
    "model.d_poi": Key(10, int, "POI embedding dimension"),
    "model.d_user": Key(10, int, "user embedding dimension"),
    "model.d_time": Key(6, int, "time-slot embedding dimension"),
    "model.n_heads": Key(2, int, "attention heads per encoder block"),
    "model.n_blocks": Key(2, int, "encoder blocks"),
    "model.ffn_hidden": Key(0, int, "FFN hidden width; 0 selects 4 * d_model"),
    "model.dropout": Key(0.0, float, "dropout probability"),
    "model.ffn_block": Key(
        "norm-add", _choice("norm-add", "add-norm"),
        "FFN residual form: norm-add = LN(z) + FFN(z), add-norm = LN(z + FFN(z))",
    ),
    # spatial kernel
    "spatial.beta": Key(1.0, float, "distance decay weight per km"),
    "spatial.epsilon": Key(1e-10, float, "positivity floor of the spatial kernel"),
    # graph adjustment
    "graph.delta": Key(0.5, float, "edge score threshold in [0, 1)"),
    "graph.mode": Key(
        "denoise", _choice("denoise", "raw", "off"),
        "denoise = prune scored edges; raw = unpruned graph; off = no graph path",
    ),
    "graph.gradient_gate": Key(
        "score-scaled", _choice("score-scaled", "hard"),
        "score-scaled multiplies kept edges by their score; hard keeps raw counts",
    ),
    "graph.denoiser_hidden": Key(10, int, "hidden width of the edge scoring MLP"),
    # loss
    "loss.tau": Key(1.2, float, "logit adjustment weight"),
    "loss.epsilon": Key(1e-10, float, "numerical floor in loss computations"),
    "loss.adjust_at_inference": Key(
        False, _parse_bool, "add frequency offsets to logits when ranking at evaluation"
    ),
    "loss.lambda_mode": Key(
        "uncertainty", _choice("uncertainty", "fixed"),
        "uncertainty = learnable weights; fixed = literal weighted sum",
    ),
    "loss.lambda_ce": Key(1.0, float, "fixed-mode weight of the plain cross-entropy"),
    "loss.lambda_lta": Key(1.0, float, "fixed-mode weight of the adjusted loss"),
    "loss.lambda_aux": Key(1.0, float, "fixed-mode weight of the time loss"),
    "loss.detach_weights": Key(
        True, _parse_bool, "treat adaptive sample weights as constants in backprop"
    ),
    # training
    "train.epochs": Key(20, int, "training epochs"),
    "train.batch_size": Key(64, int, "windows per batch"),
    "train.learning_rate": Key(1e-3, float, "optimizer step size"),
    "train.weight_decay": Key(1e-5, float, "decoupled weight decay"),
    "train.seed": Key(42, int, "root seed for all training randomness"),
    "train.gradient_clip_norm": Key(5.0, float, "global gradient norm clip"),
    "train.early_stop_patience": Key(0, int, "stop after this many non-improving epochs; 0 = off"),
    # evaluation
    "eval.tail_threshold": Key(100, int, "training frequency below which a POI counts as tail"),
}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; unknown keys or bad values raise ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key].parse(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


class RunConfig:
    """Resolved configuration with documented precedence."""

    def __init__(self, file_values: dict = None, overrides: dict = None):
        for source in (file_values or {}, overrides or {}):
            for key in source:
                if key not in CONFIG_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
        self.values = {k: spec.default for k, spec in CONFIG_KEYS.items()}
        self.values.update(file_values or {})
        self.values.update(overrides or {})

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_poi=self["model.d_poi"],
            d_user=self["model.d_user"],
            d_time=self["model.d_time"],
            n_heads=self["model.n_heads"],
            n_blocks=self["model.n_blocks"],
            window_len=self["data.window_len"],
            ffn_hidden=self["model.ffn_hidden"],
            dropout=self["model.dropout"],
            ffn_block=self["model.ffn_block"],
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            tau=self["loss.tau"],
            epsilon=self["loss.epsilon"],
            adjust_at_inference=self["loss.adjust_at_inference"],
            lambda_mode=self["loss.lambda_mode"],
            lambda_ce=self["loss.lambda_ce"],
            lambda_lta=self["loss.lambda_lta"],
            lambda_aux=self["loss.lambda_aux"],
            detach_weights=self["loss.detach_weights"],
        )

    def spatial_params(self) -> SpatialParams:
        return SpatialParams(beta=self["spatial.beta"], epsilon=self["spatial.epsilon"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            learning_rate=self["train.learning_rate"],
            weight_decay=self["train.weight_decay"],
            seed=self["train.seed"],
            gradient_clip_norm=self["train.gradient_clip_norm"],
            delta=self["graph.delta"],
            graph_mode=self["graph.mode"],
            gradient_gate=self["graph.gradient_gate"],
            denoiser_hidden=self["graph.denoiser_hidden"],
            early_stop_patience=self["train.early_stop_patience"],
            model=self.model_config(),
            loss=self.loss_config(),
            spatial=self.spatial_params(),
        )

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            n_users=self["synth.n_users"],
            n_pois=self["synth.n_pois"],
            zipf_exponent=self["synth.zipf_exponent"],
            checkins_per_user=self["synth.checkins_per_user"],
            n_clusters=self["synth.n_clusters"],
            cluster_spread_km=self["synth.cluster_spread_km"],
            seed=self["synth.seed"],
        )
