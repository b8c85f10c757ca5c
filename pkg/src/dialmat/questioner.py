"""Question selection from the subgoal instruction.

An LSTM encodes the instruction; a one-step LSTM decoder with additive
attention over the encoder states classifies which question to ask
(Location, Appearance, Direction or none). The policy is pretrained with
cross-entropy on heuristic labels and fine-tuned with REINFORCE.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .dialworld.language import VOCAB, QuestionType
from .nn import Adam, Embedding, Linear, Module
from .tensor import Tensor

log = logging.getLogger(__name__)

N_QUESTIONS = len(QuestionType)


@dataclass
class QuestionerConfig:
    vocab_size: int = len(VOCAB)
    embed_dim: int = 16
    hidden: int = 32
    attn_dim: int = 16

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class LSTMCell(Module):
    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.gates = Linear(d_in + hidden, 4 * hidden, rng)
        # forget-gate bias of 1 keeps early gradients flowing
        self.gates.bias.data[hidden: 2 * hidden] = 1.0

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        z = self.gates(T.concat([x, h], axis=-1))
        n = self.hidden
        i = T.sigmoid(z[:, :n])
        f = T.sigmoid(z[:, n: 2 * n])
        g = T.tanh(z[:, 2 * n: 3 * n])
        o = T.sigmoid(z[:, 3 * n:])
        c = f * c + i * g
        return o * T.tanh(c), c


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), n), dtype=np.int64)
    mask = np.zeros((len(seqs), n))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


class Questioner(Module):
    def __init__(self, cfg: QuestionerConfig = QuestionerConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.embed = Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        self.encoder = LSTMCell(cfg.embed_dim, cfg.hidden, rng)
        self.decoder = LSTMCell(cfg.embed_dim, cfg.hidden, rng)
        self.start = T.parameter(rng.normal(0.0, 0.1, size=(1, cfg.embed_dim)))
        self.att_query = Linear(cfg.hidden, cfg.attn_dim, rng, bias=False)
        self.att_key = Linear(cfg.hidden, cfg.attn_dim, rng)
        self.att_v = Linear(cfg.attn_dim, 1, rng, bias=False)
        self.out = Linear(2 * cfg.hidden, N_QUESTIONS, rng)

    def logits(self, token_seqs: Sequence[Sequence[int]]) -> Tensor:
        if any(len(s) == 0 for s in token_seqs):
            raise ValueError("empty instruction")
        ids, mask = _pad(token_seqs)
        if ids.max() >= self.cfg.vocab_size or ids.min() < 0:
            raise IndexError(f"token id out of vocabulary range [0, {self.cfg.vocab_size})")
        b, n = ids.shape
        x = self.embed(ids)
        h = T.tensor(np.zeros((b, self.cfg.hidden)))
        c = T.tensor(np.zeros((b, self.cfg.hidden)))
        states = []
        for t in range(n):
            h_new, c_new = self.encoder(x[:, t, :], h, c)
            m = mask[:, t: t + 1]
            h = h_new * m + h * (1.0 - m)
            c = c_new * m + c * (1.0 - m)
            states.append(h)
        enc = T.stack(states, axis=1)  # [B, n, H]
        start = T.matmul(T.tensor(np.ones((b, 1))), self.start)
        hd, _ = self.decoder(start, h, c)
        # additive attention: v^T tanh(W_q h_dec + W_k h_enc)
        keys = self.att_key(enc)
        q = self.att_query(hd).reshape(b, 1, -1)
        scores = self.att_v(T.tanh(keys + q)).reshape(b, n) + np.where(mask > 0, 0.0, -1e9)
        alpha = T.softmax(scores, axis=-1)
        ctx = T.matmul(alpha.reshape(b, 1, n), enc).reshape(b, -1)
        return self.out(T.concat([hd, ctx], axis=-1))

    def log_probs(self, token_seqs: Sequence[Sequence[int]]) -> Tensor:
        return T.log_softmax(self.logits(token_seqs), axis=-1)

    def probs(self, token_seqs: Sequence[Sequence[int]]) -> np.ndarray:
        with T.no_grad():
            return np.exp(self.log_probs(token_seqs).data)

    def select_question(self, tokens: Sequence[int], sample: bool = False,
                        seed=None) -> tuple[QuestionType, float]:
        """Argmax (ties to the lowest index) or a seeded categorical draw."""
        with T.no_grad():
            lp = self.log_probs([tokens]).data[0]
        if sample:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            p = np.exp(lp)
            k = int(rng.choice(N_QUESTIONS, p=p / p.sum()))
        else:
            k = int(np.argmax(lp))
        return QuestionType(k), float(lp[k])


# supervised pretraining ------------------------------------------------------

@dataclass
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 5e-3
    holdout: float = 0.2
    seed: int = 0


@dataclass
class PretrainReport:
    train_losses: list[float]
    heldout_accuracy: float
    n_train: int
    n_heldout: int


def accuracy(model: Questioner, corpus: Sequence[tuple[Sequence[int], int]]) -> float:
    if not corpus:
        return float("nan")
    probs = model.probs([t for t, _ in corpus])
    return float(np.mean(np.argmax(probs, axis=1) == np.array([int(y) for _, y in corpus])))


def supervised_pretrain(corpus: Sequence[tuple[Sequence[int], int]],
                        cfg: PretrainConfig = PretrainConfig(),
                        model: Questioner | None = None) -> tuple[Questioner, PretrainReport]:
    if not corpus:
        raise ValueError("empty pretraining corpus")
    model = model or Questioner(seed=cfg.seed)
    for tokens, label in corpus:
        if not 0 <= int(label) < N_QUESTIONS:
            raise ValueError(f"invalid question label {label}")
        if max(tokens) >= model.cfg.vocab_size:
            raise ValueError("corpus token ids exceed the questioner vocabulary")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(corpus))
    n_hold = int(round(cfg.holdout * len(corpus))) if len(corpus) > 1 else 0
    held = [corpus[i] for i in order[:n_hold]]
    train = [corpus[i] for i in order[n_hold:]]
    opt = Adam(model.parameters(), lr=cfg.lr)
    losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(train))
        total = 0.0
        for s in range(0, len(train), cfg.batch_size):
            chunk = [train[i] for i in perm[s: s + cfg.batch_size]]
            loss = T.cross_entropy(model.logits([t for t, _ in chunk]), [int(y) for _, y in chunk])
            model.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
        losses.append(total / len(train))
    report = PretrainReport(losses, accuracy(model, held), len(train), len(held))
    log.info("questioner pretrain: final loss %.4f, held-out accuracy %.3f",
             losses[-1] if losses else float("nan"), report.heldout_accuracy)
    return model, report


# policy-gradient fine-tuning ---------------------------------------------------

def reinforce_loss(log_probs: Tensor, returns, baseline: float) -> Tensor:
    """Negative REINFORCE objective: -mean((G - b) * log pi(a))."""
    adv = np.asarray(returns, dtype=np.float64) - baseline
    return -(log_probs * adv).sum() * (1.0 / max(1, len(adv)))


@dataclass
class RLConfig:
    iterations: int = 60
    episodes_per_iter: int = 32
    lr: float = 1e-2
    question_penalty: float = 0.05
    baseline_decay: float = 0.9
    seed: int = 0


@dataclass
class RLReport:
    reward_curve: list[float] = field(default_factory=list)


# ask(episode index, subgoal index, instruction ids) -> question
AskCallback = Callable[[int, int, Sequence[int]], QuestionType]
# runner(episodes, ask) -> per-episode list of per-subgoal success flags
Runner = Callable[[Sequence, AskCallback], Sequence[Sequence[bool]]]


def rl_finetune(model: Questioner, episodes: Sequence, runner: Runner,
                cfg: RLConfig = RLConfig()) -> tuple[Questioner, RLReport]:
    """REINFORCE with reward = subgoal success - penalty * [question asked].

    Each subgoal decision is credited with its reward-to-go inside the
    episode, minus a moving-average baseline that starts at zero.
    """
    if not episodes:
        raise ValueError("no episodes for fine-tuning")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    baseline = 0.0
    report = RLReport()
    for _ in range(cfg.iterations):
        idx = rng.choice(len(episodes), size=min(cfg.episodes_per_iter, len(episodes)),
                         replace=False)
        batch = [episodes[i] for i in idx]
        decisions: dict[tuple[int, int], tuple[list[int], QuestionType]] = {}

        def ask(i: int, k: int, tokens: Sequence[int]) -> QuestionType:
            q, _ = model.select_question(tokens, sample=True, seed=rng)
            decisions[(i, k)] = (list(tokens), q)
            return q

        outcomes = runner(batch, ask)
        tokens, actions, returns, totals = [], [], [], []
        for i, flags in enumerate(outcomes):
            ks = sorted(k for (j, k) in decisions if j == i)
            rewards = []
            for k in ks:
                asked = decisions[(i, k)][1] != QuestionType.NoQuestion
                r = float(bool(flags[k])) - cfg.question_penalty * asked
                if not math.isfinite(r):
                    raise ValueError(f"non-finite reward {r}")
                rewards.append(r)
            togo = np.cumsum(rewards[::-1])[::-1] if rewards else []
            for k, g in zip(ks, togo):
                tokens.append(decisions[(i, k)][0])
                actions.append(int(decisions[(i, k)][1]))
                returns.append(float(g))
            totals.append(float(sum(rewards)))
        if tokens:
            lp = model.log_probs(tokens)
            picked = lp[(np.arange(len(actions)), np.array(actions))]
            loss = reinforce_loss(picked, returns, baseline)
            model.zero_grad()
            loss.backward()
            opt.step()
            baseline = cfg.baseline_decay * baseline + (1 - cfg.baseline_decay) * float(np.mean(returns))
        report.reward_curve.append(float(np.mean(totals)) if totals else 0.0)
    return model, report
