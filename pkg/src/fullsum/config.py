"""Flat key=value config files.

One ``key = value`` assignment per line, ``#`` starts a comment, keys are
dotted lowercase.  Unknown keys are rejected so typos fail loudly.  The same
format serves training configs and synthetic-corpus specs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .encoder import EncoderConfig
from .lattice import Scales
from .transitions import INIT_GUESSED, INIT_STRATEGIES, KIND_SPEECH_SILENCE, KINDS


def parse_kv_file(path) -> dict[str, str]:
    """Read a flat config file into an ordered key -> raw string mapping."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            value = value.strip()
            if not key:
                raise ValueError(f"{path}:{line_no}: empty key")
            if key in out:
                raise ValueError(f"{path}:{line_no}: duplicate key {key!r}")
            out[key] = value
    return out


def format_kv(mapping: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(p) for p in raw.split(","))


@dataclass
class TrainConfig:
    """Everything that determines a training run besides the corpus."""

    seed: int = 1
    epochs: int = 10
    pretrain_epochs: int = 2
    batch_size: int = 8
    threads: int = 1
    lpm_scale: float = 0.3
    tm_scale: float = 0.3
    lr_min: float = 1.2e-5
    lr_max: float = 3.0e-4
    cycle_fraction: float = 0.8
    l2: float = 1e-4
    dropout: float = 0.1
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "tanh"
    context_window: int = 1
    tm_kind: str = KIND_SPEECH_SILENCE
    tm_init: str = INIT_GUESSED
    prior_scale: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.pretrain_epochs <= self.epochs:
            raise ValueError("pretrain_epochs must lie in [0, epochs]")
        if self.batch_size < 1 or self.threads < 1:
            raise ValueError("batch_size and threads must be >= 1")
        if self.tm_kind not in KINDS:
            raise ValueError(f"unknown tm kind {self.tm_kind!r}")
        if self.tm_init not in INIT_STRATEGIES:
            raise ValueError(f"unknown tm init {self.tm_init!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.prior_scale < 0.0:
            raise ValueError("prior_scale must be >= 0")

    @property
    def scales(self) -> Scales:
        return Scales(lpm_scale=self.lpm_scale, tm_scale=self.tm_scale)

    def encoder_config(self, input_dim: int, output_dim: int) -> EncoderConfig:
        return EncoderConfig(
            input_dim=input_dim,
            output_dim=output_dim,
            hidden_layers=self.hidden,
            activation=self.activation,
            context_window=self.context_window,
            dropout_rate=self.dropout,
        )


_TRAIN_KEYS = {
    "seed": ("seed", int),
    "epochs": ("epochs", int),
    "pretrain.epochs": ("pretrain_epochs", int),
    "batch_size": ("batch_size", int),
    "threads": ("threads", int),
    "scales.lpm": ("lpm_scale", float),
    "scales.tm": ("tm_scale", float),
    "lr.min": ("lr_min", float),
    "lr.max": ("lr_max", float),
    "lr.cycle_fraction": ("cycle_fraction", float),
    "l2": ("l2", float),
    "dropout": ("dropout", float),
    "encoder.hidden": ("hidden", _parse_int_tuple),
    "encoder.activation": ("activation", str),
    "encoder.context_window": ("context_window", int),
    "tm.kind": ("tm_kind", str),
    "tm.init": ("tm_init", str),
    "prior.scale": ("prior_scale", float),
}


def train_config_from_file(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    raw = parse_kv_file(path)
    if overrides:
        raw.update(overrides)
    return train_config_from_mapping(raw, source=str(path))


def train_config_from_mapping(raw: dict[str, str], source: str = "<config>") -> TrainConfig:
    kwargs = {}
    for key, value in raw.items():
        if key not in _TRAIN_KEYS:
            raise ValueError(f"{source}: unknown key {key!r}")
        attr, conv = _TRAIN_KEYS[key]
        try:
            kwargs[attr] = conv(value)
        except ValueError as exc:
            raise ValueError(f"{source}: bad value for {key!r}: {exc}") from None
    return TrainConfig(**kwargs)


def train_config_to_mapping(cfg: TrainConfig) -> dict[str, str]:
    out = {}
    for key, (attr, conv) in _TRAIN_KEYS.items():
        value = getattr(cfg, attr)
        if conv is _parse_int_tuple:
            out[key] = ",".join(str(v) for v in value)
        else:
            out[key] = repr(value) if isinstance(value, float) else str(value)
    return out


@dataclass
class SynthConfig:
    """Parameters of a synthetic corpus; mirrors make_generative_spec."""

    n_utterances: int = 32
    n_speech_labels: int = 3
    feature_dim: int = 4
    separation: float = 2.0
    std: float = 1.0
    p_forward_speech: float = 1.0 / 3.0
    p_forward_silence: float = 1.0 / 40.0
    min_labels: int = 2
    max_labels: int = 6
    max_frames: int = 400
    substates_per_speech_label: int = 3
    substates_for_silence: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be >= 1")
        if self.n_speech_labels < 1:
            raise ValueError("n_speech_labels must be >= 1")


_SYNTH_KEYS = {
    "n_utterances": ("n_utterances", int),
    "n_speech_labels": ("n_speech_labels", int),
    "feature_dim": ("feature_dim", int),
    "separation": ("separation", float),
    "std": ("std", float),
    "p_forward.speech": ("p_forward_speech", float),
    "p_forward.silence": ("p_forward_silence", float),
    "min_labels": ("min_labels", int),
    "max_labels": ("max_labels", int),
    "max_frames": ("max_frames", int),
    "substates.speech": ("substates_per_speech_label", int),
    "substates.silence": ("substates_for_silence", int),
    "seed": ("seed", int),
}


def synth_config_from_file(path, overrides: dict[str, str] | None = None) -> SynthConfig:
    raw = parse_kv_file(path)
    if overrides:
        raw.update(overrides)
    return synth_config_from_mapping(raw, source=str(path))


def synth_config_from_mapping(raw: dict[str, str], source: str = "<config>") -> SynthConfig:
    kwargs = {}
    for key, value in raw.items():
        if key not in _SYNTH_KEYS:
            raise ValueError(f"{source}: unknown key {key!r}")
        attr, conv = _SYNTH_KEYS[key]
        try:
            kwargs[attr] = conv(value)
        except ValueError as exc:
            raise ValueError(f"{source}: bad value for {key!r}: {exc}") from None
    return SynthConfig(**kwargs)


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    """--set key=value command line overrides."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out
