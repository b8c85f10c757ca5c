"""Run configuration: nested YAML sections plus ``key.path=value`` overrides.

Sections: ``env`` (dataset and world), ``model`` (MAPer sizes), ``mat``
(perturbation hyperparameters and schedule), ``train``, ``questioner``
(``model``/``pretrain``/``rl``) and ``eval``. Unknown keys are errors.
"""

from __future__ import annotations

import copy
import dataclasses
from pathlib import Path

import yaml

from .dialworld.dataset import DatasetConfig
from .maper import MaperConfig
from .mat import MatHyperParams
from .questioner import PretrainConfig, QuestionerConfig, RLConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


# MAPer fields fixed by the vocabulary, action space and environment view
_DERIVED_MODEL_KEYS = ("vocab_size", "n_action_types", "n_object_classes", "obs_channels",
                       "view_h", "view_w")


def default_config() -> dict:
    tc = TrainConfig()
    model = {k: v for k, v in dataclasses.asdict(MaperConfig()).items()
             if k not in _DERIVED_MODEL_KEYS}
    model["text_dims"] = list(model["text_dims"])
    model["image_dims"] = list(model["image_dims"])
    mat = MatHyperParams().to_dict()
    mat.update(enabled=tc.mat_enabled, modalities=list(tc.mat_modalities),
               inner_steps=tc.inner_steps, overrides={})
    q_model = QuestionerConfig().to_dict()
    q_model.pop("vocab_size")
    return {
        "seed": 0,
        "env": DatasetConfig().to_dict(),
        "model": model,
        "mat": mat,
        "train": {"batch_size": tc.batch_size, "epochs": tc.epochs, "lr": tc.lr,
                  "lr_final": tc.lr_final, "clip_norm": tc.clip_norm},
        "questioner": {"model": q_model,
                       "pretrain": dataclasses.asdict(PretrainConfig()),
                       "rl": dataclasses.asdict(RLConfig())},
        "eval": {"ask_policy": "oracle-always", "split": "pseudo_test"},
    }


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        where = f"{path}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key {where!r}")
        # free-form mappings: per-modality overrides and explicit layout ranges
        if isinstance(out[k], dict) and isinstance(v, dict) and where != "mat.overrides":
            out[k] = _merge(out[k], v, where + ".")
        else:
            out[k] = v
    return out


def parse_override(text: str) -> dict:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    value = yaml.safe_load(raw) if raw else ""
    node: dict = {}
    cur = node
    parts = key.split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return node


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, data)
    for o in overrides:
        cfg = _merge(cfg, parse_override(o))
    # building every typed config validates ranges early
    dataset_config(cfg)
    train_config(cfg, "unused")
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)


def dataset_config(cfg: dict) -> DatasetConfig:
    try:
        return DatasetConfig.from_dict(cfg["env"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"env: {e}") from e


def maper_config(cfg: dict) -> MaperConfig:
    view = dataset_config(cfg).world.view
    try:
        return MaperConfig(view_h=view.rows, view_w=view.width, **cfg["model"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model: {e}") from e


def train_config(cfg: dict, data_dir: str, seed: int | None = None, **extra) -> TrainConfig:
    mat = dict(cfg["mat"])
    schedule = {"mat_enabled": mat.pop("enabled"), "mat_modalities": tuple(mat.pop("modalities")),
                "inner_steps": mat.pop("inner_steps"), "mat_overrides": mat.pop("overrides") or {}}
    try:
        return TrainConfig(data_dir=str(data_dir), maper=maper_config(cfg),
                           mat=MatHyperParams(**mat), seed=cfg["seed"] if seed is None else seed,
                           **schedule, **cfg["train"], **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train/mat: {e}") from e


def questioner_configs(cfg: dict) -> tuple[QuestionerConfig, PretrainConfig, RLConfig]:
    q = cfg["questioner"]
    try:
        return (QuestionerConfig(**q["model"]), PretrainConfig(**q["pretrain"]), RLConfig(**q["rl"]))
    except TypeError as e:
        raise ConfigError(f"questioner: {e}") from e
