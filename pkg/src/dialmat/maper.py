"""Action-prediction transformer with perturbable multimodal latents.

Each modality is encoded by two independent encoders whose per-token
features are concatenated; a perturbation vector (one per modality, shared
across batch and positions) is added to that concatenation. The four token
streams are projected to the model width, concatenated along the sequence
axis with learned positional embeddings, and run through a transformer
encoder. The final (previous-action) token feeds an action-type head and an
object head.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dialworld.language import VOCAB
from .dialworld.world import N_CHANNELS, OBJECT_CLASSES, Action, ActionType, ViewConfig
from .nn import Embedding, LayerNorm, Linear, Module, TransformerLayer, key_mask_bias
from .tensor import Tensor

MODALITIES = ("txt", "ans", "img", "act")
N_ACTION_TYPES = len(ActionType)
N_OBJECTS = len(OBJECT_CLASSES)


class SequenceTooLong(ValueError):
    pass


@dataclass
class MaperConfig:
    vocab_size: int = len(VOCAB)
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    n_action_types: int = N_ACTION_TYPES
    n_object_classes: int = N_OBJECTS
    text_dims: tuple[int, int] = (16, 24)
    text_heads: int = 2
    image_dims: tuple[int, int] = (16, 24)
    conv_channels: int = 16
    act_dim: int = 16
    obs_channels: int = N_CHANNELS
    view_h: int = ViewConfig().rows
    view_w: int = ViewConfig().width
    patch: int = 1
    max_instr_len: int = 12
    max_qa_len: int = 16
    ffn_mult: int = 2
    # False keeps only the first encoder of each pair (single-encoder baseline)
    parallel_encoders: bool = True

    def __post_init__(self):
        self.text_dims = tuple(self.text_dims)
        self.image_dims = tuple(self.image_dims)
        ints = [self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.n_action_types,
                self.n_object_classes, *self.text_dims, self.text_heads, *self.image_dims,
                self.conv_channels, self.act_dim, self.obs_channels, self.view_h, self.view_w,
                self.patch, self.max_instr_len, self.max_qa_len, self.ffn_mult]
        if any(v <= 0 for v in ints):
            raise ValueError("all MaperConfig sizes must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.view_h % self.patch or self.view_w % self.patch:
            raise ValueError(f"view {self.view_h}x{self.view_w} not divisible by patch {self.patch}")

    @property
    def n_img_tokens(self) -> int:
        return (self.view_h // self.patch) * (self.view_w // self.patch)

    @property
    def pos_table_size(self) -> int:
        return self.max_instr_len + self.max_qa_len + self.n_img_tokens + 1

    @property
    def text_feature_dim(self) -> int:
        return sum(self.text_dims) if self.parallel_encoders else self.text_dims[0]

    @property
    def image_feature_dim(self) -> int:
        return sum(self.image_dims) if self.parallel_encoders else self.image_dims[0]

    def perturbation_shapes(self) -> dict[str, tuple[int, ...]]:
        return {"txt": (self.text_feature_dim,), "ans": (self.text_feature_dim,),
                "img": (self.image_feature_dim,), "act": (self.act_dim,)}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MaperInput:
    instruction_tokens: list[int]
    qa_tokens: list[int]
    observation: np.ndarray
    prev_action: Action


@dataclass
class Batch:
    instr: np.ndarray
    instr_mask: np.ndarray | None
    qa: np.ndarray
    qa_mask: np.ndarray | None
    obs: np.ndarray
    act_type: np.ndarray
    act_obj: np.ndarray
    size: int = field(init=False)

    def __post_init__(self):
        self.size = self.obs.shape[0]


def _pad(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray | None]:
    n = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), n), dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, (None if mask.all() else mask)


def collate(inputs: list[MaperInput], n_objects: int = N_OBJECTS) -> Batch:
    for x in inputs:
        if not x.instruction_tokens:
            raise ValueError("empty instruction")
        if not x.qa_tokens:
            raise ValueError("empty QA token stream; use the null-QA token")
    instr, im = _pad([x.instruction_tokens for x in inputs])
    qa, qm = _pad([x.qa_tokens for x in inputs])
    obs = np.stack([x.observation for x in inputs]).astype(np.float64)
    at = np.array([int(x.prev_action.action_type) for x in inputs], dtype=np.int64)
    ao = np.array([n_objects if x.prev_action.object_arg is None else x.prev_action.object_arg
                   for x in inputs], dtype=np.int64)
    return Batch(instr, im, qa, qm, obs, at, ao)


class TextEncoder(Module):
    """Token embedding + learned positions + one self-attention block."""

    def __init__(self, vocab: int, d: int, heads: int, max_len: int, rng: np.random.Generator):
        self.tok = Embedding(vocab, d, rng)
        self.pos = Embedding(max_len, d, rng)
        self.block = TransformerLayer(d, heads, rng)
        self.ln = LayerNorm(d)

    def __call__(self, ids: np.ndarray, mask: np.ndarray | None) -> Tensor:
        x = self.tok(ids) + self.pos(np.arange(ids.shape[1]))
        return self.ln(self.block(x, key_mask_bias(mask)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, k: int, stride: int, padding: int) -> Tensor:
    """im2col convolution; ``weight`` is [C_in*k*k, C_out]. Returns [B, Ho*Wo, C_out]."""
    b, c, h, w = x.shape
    if padding:
        x = T.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    rows = (np.arange(ho) * stride)[:, None, None, None] + np.arange(k)[None, None, :, None]
    cols = (np.arange(wo) * stride)[None, :, None, None] + np.arange(k)[None, None, None, :]
    patches = x[(slice(None), slice(None), rows, cols)]  # [B, C, Ho, Wo, k, k]
    patches = patches.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k)
    return T.matmul(patches, weight) + bias


class PatchEncoder(Module):
    """Linear projection of non-overlapping patches, row-major token order."""

    def __init__(self, channels: int, patch: int, d: int, rng: np.random.Generator):
        self.patch = patch
        self.proj = Linear(channels * patch * patch, d, rng)

    def __call__(self, obs: Tensor) -> Tensor:
        b, c, h, w = obs.shape
        p = self.patch
        x = obs.reshape(b, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
        return self.proj(x.reshape(b, (h // p) * (w // p), c * p * p))


class ConvEncoder(Module):
    """3x3 convolution then a patch-strided convolution down to the patch grid."""

    def __init__(self, channels: int, hidden: int, patch: int, d: int, rng: np.random.Generator):
        self.patch = patch
        self.w1 = Linear(channels * 9, hidden, rng)
        self.w2 = Linear(hidden * patch * patch, d, rng)

    def __call__(self, obs: Tensor) -> Tensor:
        b, _, h, w = obs.shape
        y = T.gelu(conv2d(obs, self.w1.weight, self.w1.bias, 3, 1, 1))  # [B, H*W, hidden]
        y = y.reshape(b, h, w, -1).transpose(0, 3, 1, 2)
        p = self.patch
        return conv2d(y, self.w2.weight, self.w2.bias, p, p, 0)


class Maper(Module):
    def __init__(self, cfg: MaperConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        max_text = max(cfg.max_instr_len, cfg.max_qa_len)
        self.text_a = TextEncoder(cfg.vocab_size, cfg.text_dims[0], cfg.text_heads, max_text, rng)
        self.text_b = (TextEncoder(cfg.vocab_size, cfg.text_dims[1], cfg.text_heads, max_text, rng)
                       if cfg.parallel_encoders else None)
        self.image_a = PatchEncoder(cfg.obs_channels, cfg.patch, cfg.image_dims[0], rng)
        self.image_b = (ConvEncoder(cfg.obs_channels, cfg.conv_channels, cfg.patch,
                                    cfg.image_dims[1], rng) if cfg.parallel_encoders else None)
        self.act_type_emb = Embedding(cfg.n_action_types, cfg.act_dim, rng)
        self.act_obj_emb = Embedding(cfg.n_object_classes + 1, cfg.act_dim, rng)
        self.adapt_txt = Linear(cfg.text_feature_dim, cfg.d_model, rng)
        self.adapt_ans = Linear(cfg.text_feature_dim, cfg.d_model, rng)
        self.adapt_img = Linear(cfg.image_feature_dim, cfg.d_model, rng)
        self.adapt_act = Linear(cfg.act_dim, cfg.d_model, rng)
        self.pos = Embedding(cfg.pos_table_size, cfg.d_model, rng)
        self.layers = [TransformerLayer(cfg.d_model, cfg.n_heads, rng, cfg.ffn_mult)
                       for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model)
        self.type_head = Linear(cfg.d_model, cfg.n_action_types, rng)
        self.obj_head = Linear(cfg.d_model, cfg.n_object_classes, rng)

    # per-modality encoders --------------------------------------------------

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise IndexError(f"token id out of vocabulary range [0, {self.cfg.vocab_size})")

    def _text_pair(self, ids: np.ndarray, mask: np.ndarray | None) -> Tensor:
        self._check_ids(ids)
        if self.text_b is None:
            return self.text_a(ids, mask)
        return T.concat([self.text_a(ids, mask), self.text_b(ids, mask)], axis=-1)

    @staticmethod
    def _perturb(h: Tensor, delta: Tensor | None) -> Tensor:
        return h if delta is None else h + delta

    def encode_text(self, ids: np.ndarray, mask: np.ndarray | None = None,
                    delta: Tensor | None = None) -> Tensor:
        if ids.shape[1] == 0:
            raise ValueError("empty token sequence")
        return self._perturb(self._text_pair(ids, mask), delta)

    def encode_answer(self, ids: np.ndarray, mask: np.ndarray | None = None,
                      delta: Tensor | None = None) -> Tensor:
        return self.encode_text(ids, mask, delta)

    def encode_image(self, obs: np.ndarray, delta: Tensor | None = None) -> Tensor:
        c = self.cfg
        if obs.shape[1:] != (c.obs_channels, c.view_h, c.view_w):
            raise ValueError(f"observation shape {obs.shape[1:]} != "
                             f"{(c.obs_channels, c.view_h, c.view_w)}")
        x = T.tensor(obs)
        if self.image_b is None:
            return self._perturb(self.image_a(x), delta)
        return self._perturb(T.concat([self.image_a(x), self.image_b(x)], axis=-1), delta)

    def encode_action(self, act_type: np.ndarray, act_obj: np.ndarray,
                      delta: Tensor | None = None) -> Tensor:
        if act_type.size and (act_type.min() < 0 or act_type.max() >= self.cfg.n_action_types):
            raise IndexError("invalid action type id")
        h = self.act_type_emb(act_type[:, None]) + self.act_obj_emb(act_obj[:, None])
        return self._perturb(h, delta)

    # fusion -------------------------------------------------------------------

    def fuse_and_predict(self, h_txt: Tensor, h_ans: Tensor, h_img: Tensor, h_act: Tensor,
                         txt_mask: np.ndarray | None = None,
                         ans_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        c = self.cfg
        lt, la, li = h_txt.shape[1], h_ans.shape[1], h_img.shape[1]
        if lt > c.max_instr_len or la > c.max_qa_len or li > c.n_img_tokens:
            raise SequenceTooLong(
                f"segments ({lt}, {la}, {li}) exceed slots "
                f"({c.max_instr_len}, {c.max_qa_len}, {c.n_img_tokens}) "
                f"of the {c.pos_table_size}-entry positional table")
        x = T.concat([self.adapt_txt(h_txt), self.adapt_ans(h_ans),
                      self.adapt_img(h_img), self.adapt_act(h_act)], axis=1)
        base_ans = c.max_instr_len
        base_img = base_ans + c.max_qa_len
        pos_ids = np.concatenate([np.arange(lt), base_ans + np.arange(la),
                                  base_img + np.arange(li), [c.pos_table_size - 1]])
        x = x + self.pos(pos_ids)
        bias = None
        if txt_mask is not None or ans_mask is not None:
            b = x.shape[0]
            tm = np.ones((b, lt), bool) if txt_mask is None else txt_mask
            am = np.ones((b, la), bool) if ans_mask is None else ans_mask
            bias = key_mask_bias(np.concatenate([tm, am, np.ones((b, li + 1), bool)], axis=1))
        # only the final position feeds the heads, so the last layer computes just that row
        for i, layer in enumerate(self.layers):
            x = layer(x, bias, last_only=i == len(self.layers) - 1)
        last = self.ln_f(x[:, -1, :])
        return self.type_head(last), self.obj_head(last)

    def forward(self, batch: Batch, deltas: dict[str, Tensor] | None = None
                ) -> tuple[Tensor, Tensor]:
        d = deltas or {}
        h_txt = self.encode_text(batch.instr, batch.instr_mask, d.get("txt"))
        h_ans = self.encode_answer(batch.qa, batch.qa_mask, d.get("ans"))
        h_img = self.encode_image(batch.obs, d.get("img"))
        h_act = self.encode_action(batch.act_type, batch.act_obj, d.get("act"))
        return self.fuse_and_predict(h_txt, h_ans, h_img, h_act, batch.instr_mask, batch.qa_mask)

    __call__ = forward


def action_targets(actions: list[Action], n_objects: int = N_OBJECTS):
    types = np.array([int(a.action_type) for a in actions], dtype=np.int64)
    has_obj = np.array([a.object_arg is not None for a in actions])
    for a in actions:
        if a.object_arg is not None and not a.action_type.is_manipulation:
            raise ValueError(f"{a.action_type.name} cannot carry an object")
    objs = np.array([a.object_arg if a.object_arg is not None else 0 for a in actions],
                    dtype=np.int64)
    return types, objs, has_obj.astype(np.float64)


def action_loss(type_logits: Tensor, object_logits: Tensor, expert: list[Action]) -> Tensor:
    """Type cross-entropy plus object cross-entropy on manipulation steps only."""
    types, objs, has_obj = action_targets(expert, object_logits.shape[-1])
    return T.cross_entropy(type_logits, types) + T.cross_entropy(object_logits, objs, has_obj)


def predict_action(type_logits, object_logits) -> Action:
    """Argmax decode of one example; ties resolve to the lowest index."""
    tl = np.asarray(type_logits.data if isinstance(type_logits, Tensor) else type_logits).reshape(-1)
    ol = np.asarray(object_logits.data if isinstance(object_logits, Tensor) else object_logits).reshape(-1)
    a = ActionType(int(np.argmax(tl)))
    return Action(a, int(np.argmax(ol)) if a.is_manipulation else None)


def predict_actions(type_logits: Tensor, object_logits: Tensor) -> list[Action]:
    return [predict_action(t, o) for t, o in zip(type_logits.data, object_logits.data)]


def make_deltas(states: dict, requires_grad: bool) -> dict[str, Tensor]:
    """Wrap perturbation states as tensors for one forward pass."""
    return {name: Tensor(np.array(s.delta), requires_grad=requires_grad)
            for name, s in states.items()}
