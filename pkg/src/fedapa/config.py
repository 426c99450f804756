"""Flat key-value experiment configuration: parsing, validation and conversion."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .fl_core import SIGN_CONVENTIONS, STRATEGIES, StrategyConfig
from .orchestrator import DataConfig, ExperimentConfig, PartitionConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


def _bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "false", "yes", "no", "on", "off", "1", "0"):
        return v.lower() in ("true", "yes", "on", "1")
    raise TypeError(f"expected a boolean, got {v!r}")


def _int(v: Any) -> int:
    if isinstance(v, bool):
        raise TypeError(f"expected an integer, got {v!r}")
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, (int, str)):
        return int(v)
    raise TypeError(f"expected an integer, got {v!r}")


def _float(v: Any) -> float:
    if isinstance(v, bool):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _choice(*options: str) -> Callable[[Any], str]:
    def parse(v: Any) -> str:
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


def _opt_str(v: Any) -> str | None:
    return None if v is None else str(v)


# key -> (parser, default, range check)
SCHEMA: dict[str, tuple[Callable[[Any], Any], Any, Callable[[Any], bool] | None]] = {
    "strategy": (_choice(*STRATEGIES), "fedapa", None),
    "sign_convention": (_choice(*SIGN_CONVENTIONS), "surrogate_descent", None),
    "pms": (_bool, True, None),
    "eta": (_float, 0.01, lambda v: v >= 0),
    "mu": (_float, 0.5, lambda v: 0 <= v <= 1),
    "ablate_clip": (_bool, False, None),
    "ablate_self_weight": (_bool, False, None),
    "ablate_normalize": (_bool, False, None),
    "clients": (_int, 12, lambda v: v >= 1),
    "rounds": (_int, 50, lambda v: v >= 1),
    "local_epochs": (_int, 2, lambda v: v >= 0),
    "batch_size": (_int, 64, lambda v: v >= 1),
    "lr": (_float, 0.01, lambda v: v >= 0),
    "momentum": (_float, 0.9, lambda v: 0 <= v < 1),
    "participation_fraction": (_float, 0.6, lambda v: 0 < v <= 1),
    "seed": (_int, 0, lambda v: v >= 0),
    "dataset.kind": (_choice("synthetic", "csv"), "synthetic", None),
    "dataset.path": (_opt_str, None, None),
    "dataset.clusters": (_int, 3, lambda v: v >= 1),
    "dataset.samples_per_client": (_int, 180, lambda v: v >= 2),
    "dataset.input_dim": (_int, 200, lambda v: v >= 1),
    "dataset.classes": (_int, 4, lambda v: v >= 1),
    "dataset.cluster_shift": (_float, 1.0, lambda v: v >= 0),
    "partition.kind": (_choice("clustered", "dirichlet", "pathological"), "clustered", None),
    "partition.alpha": (_float, 0.1, lambda v: v > 0),
    "partition.classes_per_client": (_int, 2, lambda v: v >= 1),
    "split.train_fraction": (_float, 5 / 6, lambda v: 0 < v < 1),
    "output.dir": (str, "runs/latest", None),
    "output.weight_snapshots": (_bool, False, None),
}

KEYS = tuple(SCHEMA)


def flatten(doc: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Flatten nested mappings into dotted keys; ``{"dataset": {"kind": x}}`` -> ``dataset.kind``."""
    out: dict[str, Any] = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML/JSON: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, Mapping):
        raise ConfigError("config", "top level must be a mapping")
    return flatten(doc)


def parse_override(item: str) -> tuple[str, Any]:
    """Parse one ``key=value`` flag; the value is read as a YAML scalar."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, _, raw = item.partition("=")
    try:
        value = yaml.safe_load(raw) if raw else None
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def resolve(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Validate keys and values, filling defaults for missing keys."""
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
    out: dict[str, Any] = {}
    for key, (parse, default, check) in SCHEMA.items():
        if key not in raw or raw[key] is None and default is not None:
            out[key] = default
            continue
        try:
            value = parse(raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from None
        if check is not None and not check(value):
            raise ConfigError(key, f"value {value!r} out of range")
        out[key] = value
    if out["dataset.kind"] == "csv" and not out["dataset.path"]:
        raise ConfigError("dataset.path", "required when dataset.kind is csv")
    if out["partition.kind"] == "clustered":
        if out["dataset.kind"] != "synthetic":
            raise ConfigError("partition.kind", "clustered partition needs dataset.kind synthetic")
        if out["clients"] % out["dataset.clusters"]:
            raise ConfigError("clients", "must be a multiple of dataset.clusters")
    if out["partition.kind"] == "pathological" and out["dataset.kind"] == "synthetic":
        if out["partition.classes_per_client"] > out["dataset.classes"]:
            raise ConfigError("partition.classes_per_client", "exceeds dataset.classes")
    return out


def to_experiment(resolved: Mapping[str, Any]) -> ExperimentConfig:
    r = resolved
    return ExperimentConfig(
        strategy=StrategyConfig(
            strategy=r["strategy"],
            eta=r["eta"],
            mu=r["mu"],
            sign_convention=r["sign_convention"],
            pms=r["pms"],
            ablate_clip=r["ablate_clip"],
            ablate_self_weight=r["ablate_self_weight"],
            ablate_normalize=r["ablate_normalize"],
        ),
        dataset=DataConfig(
            kind=r["dataset.kind"],
            path=r["dataset.path"],
            clusters=r["dataset.clusters"],
            samples_per_client=r["dataset.samples_per_client"],
            input_dim=r["dataset.input_dim"],
            classes=r["dataset.classes"],
            cluster_shift=r["dataset.cluster_shift"],
        ),
        partition=PartitionConfig(
            kind=r["partition.kind"],
            alpha=r["partition.alpha"],
            classes_per_client=r["partition.classes_per_client"],
        ),
        clients=r["clients"],
        rounds=r["rounds"],
        local_epochs=r["local_epochs"],
        batch_size=r["batch_size"],
        lr=r["lr"],
        momentum=r["momentum"],
        participation_fraction=r["participation_fraction"],
        seed=r["seed"],
        train_fraction=r["split.train_fraction"],
    )


def with_strategy(cfg: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    return replace(cfg, strategy=replace(cfg.strategy, **changes))
