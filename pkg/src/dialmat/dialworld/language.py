"""Templated instructions, questions and oracle answers over a closed vocabulary."""

from __future__ import annotations

import enum
import re

from .world import COLORS, Goal, ViewConfig, World, in_view, relative_direction


class QuestionType(enum.IntEnum):
    Location = 0
    Appearance = 1
    Direction = 2
    NoQuestion = 3


SYNONYMS = {
    "lamp": ("lamp", "light"),
    "tv": ("tv", "television"),
    "fridge": ("fridge", "refrigerator"),
    "cabinet": ("cabinet", "cupboard"),
    "apple": ("apple",),
    "mug": ("mug", "cup"),
    "book": ("book",),
    "table": ("table", "desk"),
}

INSTRUCTIONS = {
    "toggle_on": ("turn on the {o}", "switch on the {o}", "power on the {o}",
                  "move to the {o} , power on the {o}", "go to the {o} and turn it on"),
    "toggle_off": ("turn off the {o}", "switch off the {o}", "power off the {o}",
                   "go to the {o} and turn it off"),
    "open": ("open the {o}", "go to the {o} and open it", "walk to the {o} , open the {o}"),
    "close": ("close the {o}", "shut the {o}", "go to the {o} and close it"),
    "pickup": ("pick up the {o}", "grab the {o}", "take the {o}", "go to the {o} and pick it up"),
    "put": ("put the {c} on the {o}", "place the {c} on the {o}", "set the {c} down on the {o}",
            "bring the {c} to the {o}"),
}

QUESTIONS = {
    QuestionType.Location: "where is the {o}",
    QuestionType.Appearance: "what does the {o} look like",
    QuestionType.Direction: "which way should i go",
}

PAD, NULL_QA = "<pad>", "<null_qa>"


def _build_vocab() -> list[str]:
    words = set()
    for variants in SYNONYMS.values():
        words.update(variants)
    for templates in INSTRUCTIONS.values():
        for t in templates:
            words.update(t.replace("{o}", "").replace("{c}", "").split())
    for q in QUESTIONS.values():
        words.update(q.replace("{o}", "").split())
    words.update("the is in row column to your left right ahead behind".split())
    words.update(COLORS)
    words.update(str(d) for d in range(10))
    return [PAD, NULL_QA] + sorted(words)


VOCAB = tuple(_build_vocab())
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}


class OutOfVocabulary(KeyError):
    pass


def encode(words: list[str]) -> list[int]:
    try:
        return [WORD_TO_ID[w] for w in words]
    except KeyError as e:
        raise OutOfVocabulary(f"word {e.args[0]!r} not in vocabulary") from None


def decode(ids) -> list[str]:
    return [VOCAB[i] for i in ids]


def instruction(goal: Goal, world: World, rng) -> list[str]:
    kind = goal.kind
    template = INSTRUCTIONS[kind][rng.integers(len(INSTRUCTIONS[kind]))]
    target = world.objects[goal.target].cls
    words = {"o": SYNONYMS[target][rng.integers(len(SYNONYMS[target]))]}
    if goal.obj is not None:
        carried = world.objects[goal.obj].cls
        words["c"] = SYNONYMS[carried][rng.integers(len(SYNONYMS[carried]))]
    return template.format(**words).split()


def question_words(q: QuestionType, world: World, goal: Goal) -> list[str]:
    if q == QuestionType.NoQuestion:
        raise ValueError("NoQuestion has no question text")
    return QUESTIONS[q].format(o=world.objects[goal.target].cls).split()


def answer_question(world: World, goal: Goal, q: QuestionType) -> list[str]:
    """Oracle answer about the goal's target object, read off the world state."""
    if q == QuestionType.NoQuestion:
        raise ValueError("cannot answer NoQuestion")
    t = world.objects[goal.target]
    if q == QuestionType.Location:
        return ["the", t.cls, "is", "in", "row", *str(t.y), "column", *str(t.x)]
    if q == QuestionType.Appearance:
        return f"the {t.cls} is {t.color}".split()
    direction = relative_direction(world, t.x, t.y)
    words = f"the {t.cls} is to your {direction}" if direction in ("left", "right") \
        else f"the {t.cls} is {direction}"
    return words.split()


def parse_location(words: list[str]) -> tuple[int, int]:
    """Inverse of the Location answer: returns (x, y)."""
    m = re.search(r"row ((?:\d ?)+) column ((?:\d ?)+)", " ".join(words))
    if m is None:
        raise ValueError(f"not a location answer: {' '.join(words)!r}")
    return int(m.group(2).replace(" ", "")), int(m.group(1).replace(" ", ""))


def qa_words(world: World, goal: Goal, q: QuestionType) -> list[str]:
    """Question followed by its answer, or the null-QA marker."""
    if q == QuestionType.NoQuestion:
        return [NULL_QA]
    return question_words(q, world, goal) + answer_question(world, goal, q)


def heuristic_question(world: World, goal: Goal, view: ViewConfig = ViewConfig()) -> QuestionType:
    """Most useful question at the start of a subgoal.

    Several same-class candidates -> Appearance; target out of view and not
    ahead -> Direction; target out of view but ahead -> Location; else none.
    """
    t = world.objects[goal.target]
    if sum(o.cls == t.cls for o in world.objects) > 1:
        return QuestionType.Appearance
    if not in_view(world, t.x, t.y, view):
        if relative_direction(world, t.x, t.y) != "ahead":
            return QuestionType.Direction
        return QuestionType.Location
    return QuestionType.NoQuestion

