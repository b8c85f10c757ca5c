"""Gridworld stand-in for dialogue-enabled embodied instruction following."""

from .generate import Episode, SubgoalRecord, UnsatisfiableConfig, generate_world, sample_episode
from .language import QuestionType, answer_question, heuristic_question
from .planner import Unreachable, plan_expert
from .world import (Action, ActionType, Goal, StepResult, ViewConfig, World, WorldConfig,
                    render_observation, step)
