"""Closed-loop evaluation: success rate and path-weighted success rate."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .dialworld import language
from .dialworld.dataset import START_ACTION
from .dialworld.generate import Episode
from .dialworld.language import QuestionType
from .dialworld.world import ActionType, ViewConfig, World, WorldConfig, render_observation, step
from .maper import Maper, MaperInput, collate, predict_actions

ASK_POLICIES = ("questioner", "oracle-always", "never")
STEP_CAP_RULE = "2*L*+20 per subgoal"


def step_cap(expert_len: int) -> int:
    return 2 * expert_len + 20


@dataclass
class EpisodeResult:
    success: bool
    expert_len: int
    agent_len: int
    questions: list[str] = field(default_factory=list)
    subgoals_done: int = 0

    @property
    def pwsr(self) -> float:
        if not self.success:
            return 0.0
        return self.expert_len / max(self.expert_len, self.agent_len)


@dataclass
class EvalReport:
    split: str
    episodes: list[EpisodeResult]
    step_cap: str = STEP_CAP_RULE

    @property
    def count(self) -> int:
        return len(self.episodes)

    @property
    def sr(self) -> float:
        return float(np.mean([e.success for e in self.episodes])) if self.episodes else 0.0

    @property
    def pwsr(self) -> float:
        return float(np.mean([e.pwsr for e in self.episodes])) if self.episodes else 0.0

    def to_dict(self, per_episode: bool = True) -> dict:
        d = {"split": self.split, "M": self.count, "SR": self.sr, "PWSR": self.pwsr,
             "step_cap": self.step_cap}
        if per_episode:
            d["episodes"] = [dataclasses.asdict(e) for e in self.episodes]
        return d


# maps (world, goal, instruction words, (episode index, subgoal index)) to a question
AskFn = Callable[[World, object, list[str], tuple[int, int]], QuestionType]


def make_ask_fn(policy: str, questioner=None, view: ViewConfig = ViewConfig()) -> AskFn:
    if policy == "never":
        return lambda world, goal, words, key: QuestionType.NoQuestion
    if policy == "oracle-always":
        return lambda world, goal, words, key: language.heuristic_question(world, goal, view)
    if policy == "questioner":
        if questioner is None:
            raise ValueError("ask policy 'questioner' needs a trained questioner")
        return lambda world, goal, words, key: questioner.select_question(
            language.encode(words), sample=False)[0]
    raise ValueError(f"unknown ask policy {policy!r}; expected one of {ASK_POLICIES}")


@dataclass
class _Rollout:
    index: int
    episode: Episode
    world: World
    k: int = 0
    steps_in_subgoal: int = 0
    agent_len: int = 0
    prev: object = START_ACTION
    instr: list[int] | None = None
    qa: list[int] | None = None
    done: bool = False
    success: bool = False
    questions: list[str] = field(default_factory=list)


def _start_subgoal(r: _Rollout, ask: AskFn) -> None:
    sg = r.episode.subgoals[r.k]
    q = ask(r.world, sg.goal, sg.instruction_tokens, (r.index, r.k))
    r.questions.append(q.name)
    r.instr = language.encode(sg.instruction_tokens)
    r.qa = language.encode(language.qa_words(r.world, sg.goal, q))
    r.steps_in_subgoal = 0


def _advance(r: _Rollout, satisfied: bool, ask: AskFn) -> None:
    if satisfied:
        r.k += 1
        if r.k == len(r.episode.subgoals):
            r.done, r.success = True, True
        else:
            _start_subgoal(r, ask)


def rollout(policy: Callable[[list[MaperInput], list[tuple[int, int]]], list],
            episodes: list[Episode], world_cfg: WorldConfig, ask: AskFn, split: str = "",
            batch_size: int = 512) -> EvalReport:
    """Run episodes in lockstep, one batched policy call per timestep.

    ``policy(inputs, ids)`` returns one action per input; ``ids`` holds
    (episode index, steps taken so far) for each input.
    """
    results: list[EpisodeResult] = []
    for start in range(0, len(episodes), batch_size):
        rolls = [_Rollout(start + j, ep, ep.initial_world(world_cfg))
                 for j, ep in enumerate(episodes[start:start + batch_size])]
        for r in rolls:
            _start_subgoal(r, ask)
        while True:
            live = [i for i, r in enumerate(rolls) if not r.done]
            if not live:
                break
            active = [rolls[i] for i in live]
            inputs = [MaperInput(r.instr, r.qa, render_observation(r.world, world_cfg.view), r.prev)
                      for r in active]
            ids = [(start + i, rolls[i].agent_len) for i in live]
            for r, a in zip(active, policy(inputs, ids)):
                sg = r.episode.subgoals[r.k]
                r.world, res = step(r.world, a, sg.goal)
                r.prev = a
                r.agent_len += 1
                r.steps_in_subgoal += 1
                if res.subgoal_done:
                    _advance(r, True, ask)
                elif a.action_type == ActionType.Stop or \
                        r.steps_in_subgoal >= step_cap(len(sg.expert_actions)):
                    r.done = True
        results.extend(EpisodeResult(r.success, r.episode.expert_length, r.agent_len, r.questions, r.k)
                       for r in rolls)
    return EvalReport(split, results)


def model_policy(model: Maper):
    def act(inputs: list[MaperInput], ids=None):
        with T.no_grad():
            tl, ol = model(collate(inputs, model.cfg.n_object_classes))
        return predict_actions(tl, ol)
    return act


def evaluate(model: Maper, episodes: list[Episode], world_cfg: WorldConfig,
             ask_policy: str = "oracle-always", questioner=None, split: str = "") -> EvalReport:
    return rollout(model_policy(model), episodes, world_cfg,
                   make_ask_fn(ask_policy, questioner, world_cfg.view), split)


def expert_replay_policy(episodes: list[Episode]):
    """Replays each episode's recorded expert actions in order."""
    plans = [[a for sg in ep.subgoals for a in sg.expert_actions] for ep in episodes]

    def act(inputs, ids):
        return [plans[i][t] for i, t in ids]
    return act


def questioner_runner(model: Maper, world_cfg: WorldConfig):
    """Adapts closed-loop rollouts to the questioner's fine-tuning interface."""
    policy = model_policy(model)

    def run(episodes: list[Episode], ask) -> list[list[bool]]:
        def ask_fn(world, goal, words, key):
            return ask(key[0], key[1], language.encode(words))
        report = rollout(policy, episodes, world_cfg, ask_fn)
        return [[k < e.subgoals_done for k in range(len(ep.subgoals))]
                for e, ep in zip(report.episodes, episodes)]
    return run
