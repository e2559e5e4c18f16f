"""Small BERT-style encoder that reads text and image labels as one sequence."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Module, Parameter, Tensor, no_grad
from ..crf import CrfParams, crf_log_likelihood, viterbi_decode
from ..errors import ConfigError, ContractError
from ..layers import LayerNorm, Linear
from ..seqdata import TAGS
from .tokenizer import SubwordVocab, assemble_input, tokenize_words

MASK_VALUE = -1e9


@dataclass
class MsbConfig:
    hidden: int = 128
    heads: int = 2
    layers: int = 2
    vocab_size: int = 30522
    max_positions: int = 128
    intermediate_mult: int = 4
    type_vocab: int = 2
    use_crf: bool = False
    mask_illegal: bool = False
    n_tags: int = 9
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")

    @property
    def intermediate(self) -> int:
        return self.intermediate_mult * self.hidden

    @classmethod
    def tiny(cls, **kw) -> "MsbConfig":
        return cls(hidden=128, heads=2, layers=2, **kw)

    @classmethod
    def small(cls, **kw) -> "MsbConfig":
        return cls(hidden=512, heads=8, layers=4, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MsbConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def scaled_dot_product_attention(Q, K, V, mask=None):
    """softmax(Q K^T / sqrt(d_k) + mask_bias) V.

    mask: 1 for attendable keys, 0 for masked; broadcast against [..., Tq, Tk].
    Returns (output, weights).
    """
    Q, K, V = ad.as_tensor(Q), ad.as_tensor(K), ad.as_tensor(V)
    d_k = Q.shape[-1]
    if K.shape[-1] != d_k:
        raise ContractError(f"query width {d_k} != key width {K.shape[-1]}")
    scores = ad.matmul(Q, ad.transpose(K, _swap_last(K.ndim))) / math.sqrt(d_k)
    if mask is not None:
        bias = np.where(np.asarray(mask) > 0, 0.0, MASK_VALUE)
        scores = scores + bias
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, V), weights


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def gelu(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + ad.tanh(c * (x + 0.044715 * (x * x * x))))


class EncoderLayer(Module):
    def __init__(self, rng, cfg: MsbConfig):
        H = cfg.hidden
        self.heads = cfg.heads
        self.wq = Linear(rng, H, H, init="normal")
        self.wk = Linear(rng, H, H, init="normal")
        self.wv = Linear(rng, H, H, init="normal")
        self.wo = Linear(rng, H, H, init="normal")
        self.ln1 = LayerNorm(H)
        self.ff1 = Linear(rng, H, cfg.intermediate, init="normal")
        self.ff2 = Linear(rng, cfg.intermediate, H, init="normal")
        self.ln2 = LayerNorm(H)
        self.last_weights = None

    def _split(self, x, B, T):
        d = x.shape[-1] // self.heads
        return ad.transpose(ad.reshape(x, (B, T, self.heads, d)), (0, 2, 1, 3))

    def __call__(self, x, mask):
        B, T, H = x.shape
        q = self._split(self.wq(x), B, T)
        k = self._split(self.wk(x), B, T)
        v = self._split(self.wv(x), B, T)
        key_mask = None if mask is None else np.asarray(mask)[:, None, None, :]
        ctx, w = scaled_dot_product_attention(q, k, v, key_mask)
        self.last_weights = w.data
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, T, H))
        x = self.ln1(x + self.wo(ctx))
        return self.ln2(x + self.ff2(gelu(self.ff1(x))))


@dataclass
class MsbBatch:
    ids: np.ndarray          # [B, T]
    segments: np.ndarray     # [B, T]
    mask: np.ndarray         # [B, T]
    first: np.ndarray        # [B, W] first-piece positions (0 where padded)
    word_mask: np.ndarray    # [B, W] bool
    tags: np.ndarray         # [B, W]
    lengths: list            # original word counts
    inputs: list             # ModelInput per example


class MsbModel(Module):
    kind = "msb"

    def __init__(self, config: MsbConfig, vocab: SubwordVocab | None = None):
        self.config = cfg = config
        if vocab is not None and len(vocab) > cfg.vocab_size:
            raise ConfigError(f"vocabulary has {len(vocab)} entries, vocab_size is {cfg.vocab_size}")
        self.vocab = vocab
        rng = np.random.default_rng(cfg.seed)
        normal = lambda shape: Parameter(rng.normal(0.0, cfg.init_std, size=shape))
        self.tok_emb = normal((cfg.vocab_size, cfg.hidden))
        self.seg_emb = normal((cfg.type_vocab, cfg.hidden))
        self.pos_emb = normal((cfg.max_positions, cfg.hidden))
        self.emb_ln = LayerNorm(cfg.hidden)
        self.layers = [EncoderLayer(rng, cfg) for _ in range(cfg.layers)]
        self.head = Linear(rng, cfg.hidden, cfg.n_tags, init="normal")
        if cfg.use_crf:
            self.crf = CrfParams(cfg.n_tags)

    def encoder(self, ids, segments, mask=None) -> Tensor:
        """Hidden states [B, T, hidden] for id / segment arrays [B, T]."""
        ids = np.asarray(ids, dtype=np.int64)
        segments = np.asarray(segments, dtype=np.int64)
        single = ids.ndim == 1
        if single:
            ids, segments = ids[None], segments[None]
            mask = None if mask is None else np.asarray(mask)[None]
        T = ids.shape[1]
        if T > self.config.max_positions:
            raise ContractError(f"sequence of {T} positions exceeds max_positions="
                                f"{self.config.max_positions}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ContractError("token id outside the vocabulary")
        x = (ad.embedding(self.tok_emb, ids) + ad.embedding(self.seg_emb, segments)
             + self.pos_emb[:T])
        x = self.emb_ln(x)
        for layer in self.layers:
            x = layer(x, mask)
        return x[0] if single else x

    def encode(self, examples) -> MsbBatch:
        if self.vocab is None:
            raise ConfigError("model has no subword vocabulary")
        inputs = [assemble_input(tokenize_words(ex.tokens, self.vocab), ex.image_words,
                                 self.vocab, self.config.max_positions) for ex in examples]
        B = len(examples)
        T = max(len(m.ids) for m in inputs)
        W = max(max(m.n_words for m in inputs), 1)
        ids = np.full((B, T), self.vocab.pad_id, dtype=np.int64)
        seg = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((B, T), dtype=np.int64)
        first = np.zeros((B, W), dtype=np.int64)
        wmask = np.zeros((B, W), dtype=bool)
        tags = np.zeros((B, W), dtype=np.int64)
        for b, (m, ex) in enumerate(zip(inputs, examples)):
            n = len(m.ids)
            ids[b, :n], seg[b, :n], mask[b, :n] = m.ids, m.segments, m.mask
            first[b, :m.n_words] = m.first_piece
            wmask[b, :m.n_words] = True
            if ex.tags:
                tags[b, :m.n_words] = TAGS.to_ids(ex.tags[:m.n_words])
        return MsbBatch(ids, seg, mask, first, wmask, tags, [len(ex.tokens) for ex in examples], inputs)

    def word_emissions(self, batch: MsbBatch) -> Tensor:
        """Head scores [B, W, 9] read at each word's first text subword."""
        h = self.encoder(batch.ids, batch.segments, batch.mask)
        scores = self.head(h)
        B = batch.ids.shape[0]
        return scores[np.arange(B)[:, None], batch.first]

    def loss(self, examples, training: bool = True, rng=None) -> Tensor:
        batch = self.encode(examples)
        em = self.word_emissions(batch)
        if self.config.use_crf:
            return -ad.mean(crf_log_likelihood(em, batch.tags, self.crf, batch.word_mask))
        logp = ad.log_softmax(em, axis=-1)
        B, W = batch.tags.shape
        picked = logp[np.arange(B)[:, None], np.arange(W)[None, :], batch.tags]
        wm = batch.word_mask.astype(np.float64)
        return -ad.tsum(picked * wm) / max(wm.sum(), 1.0)

    def predict(self, examples) -> list:
        if not examples:
            return []
        batch = self.encode(examples)
        with no_grad():
            em = self.word_emissions(batch).data
        out = []
        for b, n in enumerate(batch.lengths):
            k = batch.inputs[b].n_words
            if k == 0:
                out.append(["O"] * n)
                continue
            if self.config.use_crf:
                path, _ = viterbi_decode(em[b, :k], self.crf, self.config.mask_illegal)
            else:
                path = np.argmax(em[b, :k], axis=-1).tolist()
            out.append(TAGS.to_tags(path) + ["O"] * (n - k))
        return out

    def extra_state(self, tokens=()):
        return {"subword_vocab": self.vocab.tokens, "lowercase": self.vocab.lowercase}, {}

    @classmethod
    def from_state(cls, config: MsbConfig, meta: dict, buffers: dict):
        return cls(config, SubwordVocab(meta["subword_vocab"], lowercase=meta.get("lowercase", True)))


def msb_tag(example, model: MsbModel) -> list:
    return model.predict([example])[0]


def pretrained_name_map(n_layers: int) -> dict:
    """Released-checkpoint variable name -> our parameter path."""
    m = {
        "bert/embeddings/word_embeddings": "tok_emb",
        "bert/embeddings/token_type_embeddings": "seg_emb",
        "bert/embeddings/position_embeddings": "pos_emb",
        "bert/embeddings/LayerNorm/gamma": "emb_ln.gamma",
        "bert/embeddings/LayerNorm/beta": "emb_ln.beta",
    }
    for i in range(n_layers):
        src = f"bert/encoder/layer_{i}/"
        dst = f"layers.{i}."
        for name, ours in (("attention/self/query", "wq"), ("attention/self/key", "wk"),
                           ("attention/self/value", "wv"), ("attention/output/dense", "wo"),
                           ("intermediate/dense", "ff1"), ("output/dense", "ff2")):
            m[src + name + "/kernel"] = dst + ours + ".W"
            m[src + name + "/bias"] = dst + ours + ".b"
        for name, ours in (("attention/output/LayerNorm", "ln1"), ("output/LayerNorm", "ln2")):
            m[src + name + "/gamma"] = dst + ours + ".gamma"
            m[src + name + "/beta"] = dst + ours + ".beta"
    return m


def import_pretrained(model: MsbModel, arrays: dict) -> list:
    """Copy released encoder weights (name -> array) into ``model``.

    Embedding tables larger than ours are cut to our row count. Returns the
    parameter paths that were filled.
    """
    own = dict(model.named_parameters())
    filled = []
    for src, dst in pretrained_name_map(model.config.layers).items():
        if src not in arrays:
            continue
        arr = np.asarray(arrays[src], dtype=np.float64)
        target = own[dst]
        if arr.ndim == 2 and arr.shape[0] > target.shape[0] and arr.shape[1] == target.shape[1]:
            arr = arr[:target.shape[0]]
        if arr.shape != target.shape:
            raise ConfigError(f"{src}: shape {arr.shape} does not fit {dst} {target.shape}")
        target.data[...] = arr
        filled.append(dst)
    return filled
