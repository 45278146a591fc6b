"""Experiment configuration: INI text in, validated dataclass out, and back.

The format is strict on purpose: unknown sections or keys are errors, not
warnings, so a typo like ``kapa = 2`` cannot silently run with defaults.
``parse_config(emit_config(c))`` reproduces ``c`` exactly, which the CLI
relies on when it copies the resolved config into each run directory.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

import numpy as np

from .data import DatasetSpec
from .optimizer import HyperParams, default_schedule

DATASET_KEYS = {
    "sparse_linear": {"n": int, "p": int, "s": int, "snr": float},
    "blobs": {"n": int, "classes": int, "dim": int, "separation": float},
    "idx": {"train_images": str, "train_labels": str, "val_images": str,
            "val_labels": str, "limit_train": int, "limit_val": int},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    input_shape: tuple
    layer_specs: tuple
    loss: str
    hp: HyperParams = HyperParams()
    split_layers: object = "all"  # "all", "none", or a tuple of layer indices
    lam: float = 1.0
    lam_overrides: tuple = ()
    dense_scheme: str = "per_element"
    conv_scheme: str = "per_filter"
    epochs: int = 10
    batch_size: int | None = 128
    seed: int = 0
    monitor: bool = False
    monitor_lip: float | None = None
    checkpoint_epochs: tuple = ()
    name: str = "run"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layer_specs", tuple(str(s) for s in self.layer_specs))
        if isinstance(self.split_layers, (list, tuple)):
            object.__setattr__(self, "split_layers",
                               tuple(sorted(int(i) for i in self.split_layers)))
        elif self.split_layers not in ("all", "none"):
            raise ConfigError(f"split layers must be 'all', 'none' or indices, "
                              f"got {self.split_layers!r}")
        object.__setattr__(self, "lam_overrides",
                           tuple(sorted((int(i), float(v)) for i, v in self.lam_overrides)))
        object.__setattr__(self, "checkpoint_epochs",
                           tuple(sorted({int(e) for e in self.checkpoint_epochs})))
        if self.epochs < 0:
            raise ConfigError(f"run.epochs must be nonnegative, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"run.batch_size must be positive or 'full', got {self.batch_size}")
        if not self.lam >= 0:
            raise ConfigError(f"split.lambda must be nonnegative, got {self.lam}")


# ---------------------------------------------------------------------------
# parsing


def _typed(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is float and raw.strip().lower() in ("inf", "infinity"):
            return float("inf")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(
            f"{section}.{key} must be a {kind.__name__}, got {raw.strip()!r}"
        ) from None


def _split_list(raw: str):
    return [part.strip() for part in raw.split(",") if part.strip()]


def _parse_schedule(raw: str, section="optimizer", key="alpha_schedule"):
    pairs = []
    for item in _split_list(raw):
        if ":" not in item:
            raise ConfigError(f"{section}.{key} entries look like EPOCH:ALPHA, got {item!r}")
        e, a = item.split(":", 1)
        pairs.append((_typed(section, key, e, int), _typed(section, key, a, float)))
    if not pairs:
        raise ConfigError(f"{section}.{key} must not be empty")
    return tuple(pairs)


def read_sections(text: str) -> dict:
    """INI text to {section: {key: raw string}}, with duplicate detection."""
    parser = configparser.RawConfigParser()
    parser.optionxform = str  # keep keys case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def apply_overrides(sections: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings on top of parsed sections."""
    out = {s: dict(kv) for s, kv in sections.items()}
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value")
        target, value = ov.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value")
        section, key = target.split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out


_KNOWN = {
    "dataset": {"kind", "seed", "val_fraction"},  # plus per-kind params
    "network": {"input", "layers", "loss"},
    "optimizer": {"variant", "kappa", "nu", "alpha0", "drop_every", "drop_factor",
                  "n_drops", "alpha_schedule", "momentum", "weight_decay"},
    "split": {"layers", "lambda", "lambda_overrides", "dense_scheme", "conv_scheme"},
    "run": {"name", "epochs", "batch_size", "seed", "monitor", "monitor_lip",
            "checkpoint_epochs"},
}


def build_config(sections: dict) -> ExperimentConfig:
    unknown_sections = set(sections) - set(_KNOWN)
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
    for name in ("dataset", "network"):
        if name not in sections:
            raise ConfigError(f"config is missing the [{name}] section")

    # dataset ---------------------------------------------------------------
    dsec = dict(sections["dataset"])
    kind = dsec.pop("kind", None)
    if kind is None:
        raise ConfigError("dataset.kind is required")
    if kind not in DATASET_KEYS:
        raise ConfigError(f"dataset.kind must be one of {sorted(DATASET_KEYS)}, got {kind!r}")
    seed = _typed("dataset", "seed", dsec.pop("seed", "0"), int)
    val_fraction = _typed("dataset", "val_fraction", dsec.pop("val_fraction", "0.25"), float)
    params = {}
    for key, raw in dsec.items():
        if key not in DATASET_KEYS[kind]:
            raise ConfigError(f"dataset.{key} is not a parameter of kind {kind!r}")
        params[key] = _typed("dataset", key, raw, DATASET_KEYS[kind][key])
    try:
        dataset = DatasetSpec(kind, tuple(params.items()), seed, val_fraction)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    # network ---------------------------------------------------------------
    nsec = sections["network"]
    for key in nsec:
        if key not in _KNOWN["network"]:
            raise ConfigError(f"network.{key} is not a recognized key")
    if "input" not in nsec or "layers" not in nsec:
        raise ConfigError("network.input and network.layers are required")
    input_shape = tuple(_typed("network", "input", d, int) for d in _split_list(nsec["input"]))
    layer_specs = tuple(_split_list(nsec["layers"]))
    loss = nsec.get("loss", "softmax_cross_entropy").strip()

    # optimizer --------------------------------------------------------------
    osec = sections.get("optimizer", {})
    for key in osec:
        if key not in _KNOWN["optimizer"]:
            raise ConfigError(f"optimizer.{key} is not a recognized key")
    if "alpha_schedule" in osec:
        schedule = _parse_schedule(osec["alpha_schedule"])
        for key in ("alpha0", "drop_every", "drop_factor", "n_drops"):
            if key in osec:
                raise ConfigError(
                    f"optimizer.{key} conflicts with an explicit alpha_schedule"
                )
    else:
        schedule = default_schedule(
            alpha0=_typed("optimizer", "alpha0", osec.get("alpha0", "0.1"), float),
            drop_every=_typed("optimizer", "drop_every", osec.get("drop_every", "30"), int),
            factor=_typed("optimizer", "drop_factor", osec.get("drop_factor", "0.1"), float),
            n_drops=_typed("optimizer", "n_drops", osec.get("n_drops", "3"), int),
        )
    try:
        hp = HyperParams(
            kappa=_typed("optimizer", "kappa", osec.get("kappa", "1.0"), float),
            nu=_typed("optimizer", "nu", osec.get("nu", "10.0"), float),
            alpha_schedule=schedule,
            momentum_tau=_typed("optimizer", "momentum", osec.get("momentum", "0.9"), float),
            weight_decay_beta=_typed("optimizer", "weight_decay",
                                     osec.get("weight_decay", "1e-4"), float),
            variant=osec.get("variant", "naive").strip(),
        )
    except ValueError as e:
        raise ConfigError(f"optimizer: {e}") from None

    # split -------------------------------------------------------------------
    ssec = sections.get("split", {})
    for key in ssec:
        if key not in _KNOWN["split"]:
            raise ConfigError(f"split.{key} is not a recognized key")
    raw_layers = ssec.get("layers", "all").strip()
    if raw_layers in ("all", "none"):
        split_layers = raw_layers
    else:
        split_layers = tuple(_typed("split", "layers", i, int) for i in _split_list(raw_layers))
    lam = _typed("split", "lambda", ssec.get("lambda", "1.0"), float)
    overrides = []
    if ssec.get("lambda_overrides", "").strip():
        for item in _split_list(ssec["lambda_overrides"]):
            if ":" not in item:
                raise ConfigError(
                    f"split.lambda_overrides entries look like LAYER:VALUE, got {item!r}"
                )
            li, v = item.split(":", 1)
            overrides.append((_typed("split", "lambda_overrides", li, int),
                              _typed("split", "lambda_overrides", v, float)))

    # run ----------------------------------------------------------------------
    rsec = sections.get("run", {})
    for key in rsec:
        if key not in _KNOWN["run"]:
            raise ConfigError(f"run.{key} is not a recognized key")
    raw_bs = rsec.get("batch_size", "128").strip()
    batch_size = None if raw_bs == "full" else _typed("run", "batch_size", raw_bs, int)
    monitor_lip = None
    if rsec.get("monitor_lip", "").strip():
        monitor_lip = _typed("run", "monitor_lip", rsec["monitor_lip"], float)
    checkpoint_epochs = tuple(
        _typed("run", "checkpoint_epochs", e, int)
        for e in _split_list(rsec.get("checkpoint_epochs", ""))
    )

    try:
        return ExperimentConfig(
            dataset=dataset,
            input_shape=input_shape,
            layer_specs=layer_specs,
            loss=loss,
            hp=hp,
            split_layers=split_layers,
            lam=lam,
            lam_overrides=tuple(overrides),
            dense_scheme=ssec.get("dense_scheme", "per_element").strip(),
            conv_scheme=ssec.get("conv_scheme", "per_filter").strip(),
            epochs=_typed("run", "epochs", rsec.get("epochs", "10"), int),
            batch_size=batch_size,
            seed=_typed("run", "seed", rsec.get("seed", "0"), int),
            monitor=_typed("run", "monitor", rsec.get("monitor", "false"), bool),
            monitor_lip=monitor_lip,
            checkpoint_epochs=checkpoint_epochs,
            name=rsec.get("name", "run").strip(),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    return build_config(apply_overrides(read_sections(text), overrides))


# ---------------------------------------------------------------------------
# emission


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if np.isinf(v) else repr(v)
    return str(v)


def emit_config(config: ExperimentConfig) -> str:
    """Canonical INI text; parsing it reproduces the config exactly."""
    out = io.StringIO()

    out.write("[dataset]\n")
    out.write(f"kind = {config.dataset.kind}\n")
    out.write(f"seed = {config.dataset.seed}\n")
    out.write(f"val_fraction = {_fmt(config.dataset.val_fraction)}\n")
    for key, value in config.dataset.params:
        out.write(f"{key} = {_fmt(value)}\n")

    out.write("\n[network]\n")
    out.write(f"input = {', '.join(str(d) for d in config.input_shape)}\n")
    out.write(f"layers = {', '.join(config.layer_specs)}\n")
    out.write(f"loss = {config.loss}\n")

    hp = config.hp
    out.write("\n[optimizer]\n")
    out.write(f"variant = {hp.variant}\n")
    out.write(f"kappa = {_fmt(hp.kappa)}\n")
    out.write(f"nu = {_fmt(hp.nu)}\n")
    sched = ", ".join(f"{e}:{_fmt(a)}" for e, a in hp.alpha_schedule)
    out.write(f"alpha_schedule = {sched}\n")
    out.write(f"momentum = {_fmt(hp.momentum_tau)}\n")
    out.write(f"weight_decay = {_fmt(hp.weight_decay_beta)}\n")

    out.write("\n[split]\n")
    if isinstance(config.split_layers, tuple):
        out.write(f"layers = {', '.join(str(i) for i in config.split_layers)}\n")
    else:
        out.write(f"layers = {config.split_layers}\n")
    out.write(f"lambda = {_fmt(config.lam)}\n")
    if config.lam_overrides:
        ov = ", ".join(f"{li}:{_fmt(v)}" for li, v in config.lam_overrides)
        out.write(f"lambda_overrides = {ov}\n")
    out.write(f"dense_scheme = {config.dense_scheme}\n")
    out.write(f"conv_scheme = {config.conv_scheme}\n")

    out.write("\n[run]\n")
    out.write(f"name = {config.name}\n")
    out.write(f"epochs = {config.epochs}\n")
    bs = "full" if config.batch_size is None else config.batch_size
    out.write(f"batch_size = {bs}\n")
    out.write(f"seed = {config.seed}\n")
    out.write(f"monitor = {'true' if config.monitor else 'false'}\n")
    if config.monitor_lip is not None:
        out.write(f"monitor_lip = {_fmt(config.monitor_lip)}\n")
    if config.checkpoint_epochs:
        out.write(
            f"checkpoint_epochs = {', '.join(str(e) for e in config.checkpoint_epochs)}\n"
        )
    return out.getvalue()
