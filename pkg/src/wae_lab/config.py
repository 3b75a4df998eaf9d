"""Run configuration: a flat set of keys, stored as sectioned key=value text."""

from __future__ import annotations

import configparser
import dataclasses
import difflib
import hashlib
import io
from dataclasses import dataclass, field, fields

from .errors import ConfigError

SECTIONS = {
    "model": ("d_z", "sigma_z2", "encoder_kind", "encoder_hidden", "decoder_hidden",
              "hidden_activation", "decoder_output"),
    "penalty": ("penalty_kind", "lambda", "kernel", "kernel_scale", "disc_hidden", "disc_steps",
                "add_log_prior", "vae_decoder", "sigma_g2", "cost_kind"),
    "training": ("epochs", "batch_size", "seed", "lr", "disc_lr", "beta1", "beta2", "adam_eps",
                 "lr_schedule", "pretrain_encoder", "pretrain_steps", "input_noise", "noise_std",
                 "checkpoint_every"),
    "data": ("dataset", "test_fraction", "mnist_train", "mnist_test"),
}

CHOICES = {
    "penalty_kind": ("mmd", "gan", "vae_kl", "none"),
    "kernel": ("imq", "rbf"),
    "encoder_kind": ("deterministic", "gaussian"),
    "hidden_activation": ("relu", "tanh", "sigmoid", "identity"),
    "decoder_output": ("identity", "sigmoid"),
    "vae_decoder": ("gaussian", "bernoulli"),
    "cost_kind": ("squared_euclidean",),
}


@dataclass
class RunConfig:
    # model
    d_z: int = 2
    sigma_z2: float = 1.0
    encoder_kind: str = "deterministic"
    encoder_hidden: tuple = (64, 64)
    decoder_hidden: tuple = (64, 64)
    hidden_activation: str = "relu"
    decoder_output: str = "identity"
    # penalty
    penalty_kind: str = "mmd"
    lambda_: float = 10.0
    kernel: str = "imq"
    kernel_scale: float = 0.0  # 0 -> 2 * d_z * sigma_z2
    disc_hidden: tuple = (64, 64)
    disc_steps: int = 1
    add_log_prior: bool = False
    vae_decoder: str = "gaussian"
    sigma_g2: float = 0.3
    cost_kind: str = "squared_euclidean"
    # training
    epochs: int = 10
    batch_size: int = 100
    seed: int = 0
    lr: float = 1e-3
    disc_lr: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: tuple = ()
    pretrain_encoder: bool = False
    pretrain_steps: int = 200
    input_noise: bool = False
    noise_std: float = 0.01
    checkpoint_every: int = 0
    # data
    dataset: str = "mixture:modes=8,std=0.1,radius=2,count=1000,seed=0"
    test_fraction: float = 0.2
    mnist_train: int = 2048
    mnist_test: int = 512

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def kernel_spec(self):
        from .divergence import KernelSpec

        scale = self.kernel_scale if self.kernel_scale > 0 else 2.0 * self.d_z * self.sigma_z2
        return KernelSpec(self.kernel, scale)

    def lr_multiplier(self, epoch: int) -> float:
        """Multiplier in force during 0-based ``epoch``: last entry with start <= epoch."""
        mult = 1.0
        for start, value in sorted(self.lr_schedule):
            if epoch >= start:
                mult = value
        return mult

    def validate(self, allow_zero_lambda: bool = False) -> "RunConfig":
        for key, allowed in CHOICES.items():
            value = getattr(self, _attr(key))
            if value not in allowed:
                raise ConfigError(f"{key}={value!r} is not one of {list(allowed)}")
        if self.lambda_ < 0 or (self.lambda_ == 0 and not allow_zero_lambda and self.penalty_kind != "none"):
            raise ConfigError(f"lambda must be > 0, got {self.lambda_}")
        if self.d_z < 1:
            raise ConfigError("d_z must be >= 1")
        if self.sigma_z2 <= 0:
            raise ConfigError("sigma_z2 must be > 0")
        if self.batch_size < 1 or (self.penalty_kind == "mmd" and self.batch_size < 2):
            raise ConfigError("batch_size must be >= 2 for the MMD penalty")
        if self.epochs < 0 or self.pretrain_steps < 0 or self.disc_steps < 1:
            raise ConfigError("epochs and pretrain_steps must be >= 0, disc_steps >= 1")
        if self.penalty_kind == "vae_kl" and self.encoder_kind != "gaussian":
            raise ConfigError("the VAE penalty needs encoder_kind=gaussian")
        if self.penalty_kind == "vae_kl" and self.vae_decoder == "bernoulli" and self.decoder_output != "sigmoid":
            raise ConfigError("a Bernoulli decoder needs decoder_output=sigmoid")
        if self.sigma_g2 <= 0 or self.noise_std < 0:
            raise ConfigError("sigma_g2 must be > 0 and noise_std >= 0")
        return self

    # --- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {_key(f.name): getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, keys in SECTIONS.items():
            parser[section] = {k: format_value(getattr(self, _attr(k))) for k in keys}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        values = {}
        for section in parser.sections():
            for key, value in parser[section].items():
                values[key] = value
        return cls().with_overrides(values)

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``{key: text}`` or ``["key=value", ...]`` overrides."""
        if not isinstance(overrides, dict):
            pairs = {}
            for item in overrides:
                key, sep, value = item.partition("=")
                if not sep:
                    raise ConfigError(f"override {item!r} is not KEY=VALUE")
                pairs[key.strip()] = value.strip()
            overrides = pairs
        changes = {}
        types = {f.name: f.type for f in fields(self)}
        for key, text in overrides.items():
            attr = _attr(key)
            if attr not in types:
                raise ConfigError(unknown_key_message(key))
            changes[attr] = parse_value(key, types[attr], text) if isinstance(text, str) else text
        return dataclasses.replace(self, **changes)


def valid_keys() -> list[str]:
    return [k for keys in SECTIONS.values() for k in keys]


def unknown_key_message(key: str) -> str:
    close = difflib.get_close_matches(key, valid_keys(), n=1)
    hint = f" (did you mean {close[0]!r}?)" if close else ""
    return f"unknown config key {key!r}{hint}; valid keys: {', '.join(sorted(valid_keys()))}"


def _attr(key: str) -> str:
    return "lambda_" if key == "lambda" else key


def _key(attr: str) -> str:
    return "lambda" if attr == "lambda_" else attr


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{int(e)}:{format_value(m)}" for e, m in value)
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, kind, text: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if key == "lr_schedule":
                return tuple((int(e), float(m)) for e, m in (p.split(":") for p in parts))
            return tuple(int(p) for p in parts)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {key}={text!r} as {kind}") from None


def load_config(path, overrides=()) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_text(text).with_overrides(list(overrides))
