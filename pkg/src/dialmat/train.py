"""MAPer training: inner MAT ascent on the perturbations, then one weight step."""

from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .dialworld.dataset import EpisodeStep, expert_steps, load_config, load_split
from .dialworld.generate import Episode
from .dialworld.world import WorldConfig
from .maper import (MODALITIES, Maper, MaperConfig, MaperInput, action_loss, collate,
                    make_deltas)
from .mat import MatHyperParams, PerturbationState, init_perturbation, mat_step
from .nn import Adam

log = logging.getLogger(__name__)


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    data_dir: str = "data"
    maper: MaperConfig = field(default_factory=MaperConfig)
    mat: MatHyperParams = field(default_factory=MatHyperParams)
    # per-modality overrides of ``mat`` fields, e.g. {"img": {"eps_ball": 0.2}}
    mat_overrides: dict[str, dict] = field(default_factory=dict)
    mat_enabled: bool = True
    mat_modalities: tuple[str, ...] = MODALITIES
    inner_steps: int = 1
    batch_size: int = 64
    epochs: int = 10
    lr: float = 5e-3
    lr_final: float = 2e-4
    clip_norm: float = 1.0
    seed: int = 0
    checkpoint: str | None = None
    metrics: str | None = None

    def __post_init__(self):
        self.mat_modalities = tuple(self.mat_modalities)
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        bad = set(self.mat_modalities) - set(MODALITIES)
        if bad:
            raise ValueError(f"unknown MAT modalities {sorted(bad)}")
        for name in self.mat_overrides:
            if name not in MODALITIES:
                raise ValueError(f"unknown MAT modality {name!r} in overrides")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def hyperparams(self, modality: str) -> MatHyperParams:
        return dataclasses.replace(self.mat, **self.mat_overrides.get(modality, {}))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        maper = MaperConfig(**d.pop("maper", {}))
        mat = MatHyperParams(**d.pop("mat", {}))
        return cls(maper=maper, mat=mat, **d)


def init_perturbations(cfg: TrainConfig) -> dict[str, PerturbationState]:
    if not cfg.mat_enabled:
        return {}
    shapes = cfg.maper.perturbation_shapes()
    return {m: init_perturbation(shapes[m], cfg.hyperparams(m)) for m in cfg.mat_modalities}


@contextlib.contextmanager
def frozen(params: list[T.Tensor]):
    """Temporarily exclude ``params`` from graph recording."""
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def step_inputs(steps: list[EpisodeStep]) -> list[MaperInput]:
    return [MaperInput(s.instruction, s.qa, s.observation, s.prev_action) for s in steps]


def batch_loss(model: Maper, steps: list[EpisodeStep], deltas=None) -> T.Tensor:
    batch = collate(step_inputs(steps), model.cfg.n_object_classes)
    tl, ol = model(batch, deltas)
    return action_loss(tl, ol, [s.expert_action for s in steps])


def mat_inner_step(model: Maper, steps: list[EpisodeStep],
                   states: dict[str, PerturbationState]) -> dict[str, PerturbationState]:
    """One ascent step of every perturbation on the loss of ``steps``."""
    if not states:
        return states
    deltas = make_deltas(states, requires_grad=True)
    with frozen(model.parameters()):
        loss = batch_loss(model, steps, deltas)
        if not math.isfinite(loss.item()):
            raise NonFiniteLoss(f"non-finite loss {loss.item()} during perturbation step")
        loss.backward()
    return {m: mat_step(s, deltas[m].grad) for m, s in states.items()}


def loss_on(model: Maper, steps: list[EpisodeStep], batch_size: int = 256) -> float:
    """Mean teacher-forced loss without perturbations."""
    if not steps:
        return float("nan")
    total = 0.0
    with T.no_grad():
        for i in range(0, len(steps), batch_size):
            chunk = steps[i: i + batch_size]
            total += batch_loss(model, chunk).item() * len(chunk)
    return total / len(steps)


@dataclass
class TrainResult:
    model: Maper
    perturbations: dict[str, PerturbationState]
    optimizer: Adam
    history: list[dict]
    epoch: int


def collect_steps(episodes: list[Episode], world_cfg: WorldConfig) -> list[EpisodeStep]:
    return [s for ep in episodes for s in expert_steps(ep, world_cfg)]


def train_maper(cfg: TrainConfig, train_steps: list[EpisodeStep] | None = None,
                valid_steps: list[EpisodeStep] | None = None,
                on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Teacher-forced training. Deterministic for a fixed ``cfg.seed``.

    Per batch: ``inner_steps`` MAT updates of every enabled perturbation, then
    one Adam step on the weights with the perturbations held constant.
    """
    if train_steps is None:
        world_cfg = load_config(cfg.data_dir).world
        train_steps = collect_steps(load_split(cfg.data_dir, "train"), world_cfg)
        valid_steps = collect_steps(load_split(cfg.data_dir, "valid_seen"), world_cfg)
    if not train_steps:
        raise ValueError("empty training set")
    model = Maper(cfg.maper, seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    states = init_perturbations(cfg)
    rng = np.random.default_rng([cfg.seed, 17])
    n_batches = math.ceil(len(train_steps) / cfg.batch_size)
    total = max(1, n_batches * cfg.epochs)
    history = []
    metrics_fh = open(cfg.metrics, "w") if cfg.metrics else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(train_steps))
            losses = []
            for b in range(n_batches):
                # cosine decay from lr to lr_final over the whole run
                frac = ((epoch - 1) * n_batches + b) / total
                opt.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))
                chunk = [train_steps[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                for _ in range(cfg.inner_steps):
                    states = mat_inner_step(model, chunk, states)
                deltas = make_deltas(states, requires_grad=False) if cfg.mat_enabled else None
                loss = batch_loss(model, chunk, deltas)
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteLoss(f"non-finite loss {value} at epoch {epoch} batch {b}")
                model.zero_grad()
                loss.backward()
                opt.step()
                losses.append(value)
            row = {"epoch": epoch, "split": "train", "loss": float(np.mean(losses))}
            rows = [row]
            if valid_steps:
                rows.append({"epoch": epoch, "split": "valid_seen",
                             "loss": loss_on(model, valid_steps)})
            for r in rows:
                history.append(r)
                if metrics_fh:
                    metrics_fh.write(json.dumps(r, sort_keys=True) + "\n")
                    metrics_fh.flush()
                if on_epoch:
                    on_epoch(r)
            log.info("epoch %d train loss %.4f", epoch, row["loss"])
    finally:
        if metrics_fh:
            metrics_fh.close()
    return TrainResult(model, states, opt, history, cfg.epochs)
