"""Dataset generation and loading (JSONL, one episode per line)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import language
from .generate import Episode, generate_world, sample_episode
from .world import Action, ActionType, World, WorldConfig, ViewConfig, render_observation, step

SPLITS = ("train", "valid_seen", "pseudo_valid", "pseudo_test")
START_ACTION = Action(ActionType.Stop)


class OverlappingSeeds(ValueError):
    pass


@dataclass
class DatasetConfig:
    seed: int = 0
    n_train: int = 2000
    n_valid_seen: int = 200
    n_pseudo_valid: int = 685
    n_pseudo_test: int = 678
    n_seen_layouts: int = 5
    n_unseen_layouts: int = 300
    # explicit [start, stop) layout-seed ranges; derived from ``seed`` when unset
    seen_layouts: tuple[int, int] | None = None
    unseen_layouts: tuple[int, int] | None = None
    world: WorldConfig = field(default_factory=WorldConfig)

    def __post_init__(self):
        for name in ("seed", "n_train", "n_valid_seen", "n_pseudo_valid", "n_pseudo_test",
                     "n_seen_layouts", "n_unseen_layouts"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
        if self.n_seen_layouts < 1 or self.n_unseen_layouts < 1:
            raise ValueError("need at least one seen and one unseen layout")

    def layout_ranges(self) -> tuple[range, range]:
        base = self.seed * 1_000_003
        seen = self.seen_layouts or (base, base + self.n_seen_layouts)
        unseen = self.unseen_layouts or (seen[1], seen[1] + self.n_unseen_layouts)
        a, b = range(*seen), range(*unseen)
        if max(a.start, b.start) < min(a.stop, b.stop):
            raise OverlappingSeeds(f"seen layouts {seen} and unseen layouts {unseen} overlap")
        return a, b

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> DatasetConfig:
        d = dict(d)
        wd = dict(d.pop("world", {}))
        view = ViewConfig(**wd.pop("view", {}))
        for key in ("seen_layouts", "unseen_layouts"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(world=WorldConfig(view=view, **wd), **d)


def _episodes(layouts: range, n: int, split_tag: str, stream: int, cfg: DatasetConfig,
              cache: dict[int, World]) -> list[Episode]:
    rng = np.random.default_rng([cfg.seed, stream])
    out = []
    for i in range(n):
        layout = int(layouts[rng.integers(len(layouts))])
        if layout not in cache:
            cache[layout] = generate_world(layout, cfg.world)
        task_seed = int(rng.integers(2**31))
        out.append(sample_episode(cache[layout], layout, task_seed, split_tag, cfg.world.view))
    return out


def build_splits(cfg: DatasetConfig) -> dict[str, list[Episode]]:
    """train/valid_seen share layouts; a held-out pool is halved into the pseudo splits."""
    seen, unseen = cfg.layout_ranges()
    cache: dict[int, World] = {}
    splits = {
        "train": _episodes(seen, cfg.n_train, "train", 1, cfg, cache),
        "valid_seen": _episodes(seen, cfg.n_valid_seen, "valid_seen", 2, cfg, cache),
    }
    pool = _episodes(unseen, cfg.n_pseudo_valid + cfg.n_pseudo_test, "valid_unseen", 3, cfg, cache)
    order = np.random.default_rng([cfg.seed, 4]).permutation(len(pool))
    for name, idx in (("pseudo_valid", order[: cfg.n_pseudo_valid]),
                      ("pseudo_test", order[cfg.n_pseudo_valid:])):
        eps = [pool[i] for i in sorted(idx)]
        for ep in eps:
            ep.split = name
        splits[name] = eps
    return splits


def _dump(records, path: Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def generate_dataset(cfg: DatasetConfig, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = build_splits(cfg)
    paths = {}
    for name in SPLITS:
        paths[name] = out / f"{name}.jsonl"
        _dump((ep.to_json() for ep in splits[name]), paths[name])
    labels = ({"instruction_tokens": sg.instruction_tokens, "label": sg.question_label.name}
              for ep in splits["train"] for sg in ep.subgoals)
    paths["questioner"] = out / "questioner_labels.jsonl"
    _dump(labels, paths["questioner"])
    paths["meta"] = out / "meta.json"
    with open(paths["meta"], "w") as fh:
        json.dump({"config": cfg.to_dict(), "vocab": list(language.VOCAB)}, fh,
                  sort_keys=True, indent=1)
    return paths


def load_split(data_dir, split: str) -> list[Episode]:
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"split {split!r} not found at {path}")
    with open(path) as fh:
        return [Episode.from_json(json.loads(line)) for line in fh if line.strip()]


def load_config(data_dir) -> DatasetConfig:
    with open(Path(data_dir) / "meta.json") as fh:
        return DatasetConfig.from_dict(json.load(fh)["config"])


@dataclass
class EpisodeStep:
    instruction: list[int]
    qa: list[int]
    observation: np.ndarray
    prev_action: Action
    expert_action: Action


def expert_steps(ep: Episode, world_cfg: WorldConfig) -> list[EpisodeStep]:
    """Teacher-forced training steps from replaying the expert trajectory."""
    w = ep.initial_world(world_cfg)
    prev = START_ACTION
    out = []
    for sg in ep.subgoals:
        instr = language.encode(sg.instruction_tokens)
        qa = language.encode(language.qa_words(w, sg.goal, sg.question_label))
        for a in sg.expert_actions:
            out.append(EpisodeStep(instr, qa, render_observation(w, world_cfg.view), prev, a))
            w, _ = step(w, a, sg.goal)
            prev = a
    return out


def replay_succeeds(ep: Episode, world_cfg: WorldConfig) -> bool:
    w = ep.initial_world(world_cfg)
    for sg in ep.subgoals:
        for a in sg.expert_actions:
            w, _ = step(w, a, sg.goal)
        if not sg.goal.satisfied(w):
            return False
    return True
