"""Character-word-image tagger with a CRF output layer.

Character branch, per word (channels-last, ``same`` padding, pool 2):

    embed -> conv16 -> pool[A] -> conv32 -> pool[B] -> conv64 -> pool[C]
    -> conv64[D] -> cat_len(C, D) -> conv32[E] -> cat_len(B, E)
    -> conv16[F] -> cat_len(A, F) -> targeted dropout -> SineRelu
    -> group norm -> flatten

Skip concatenations join along the length axis, so each pair must agree in
channel count. With 40 characters the lengths run 20, 10, 5 | 10, 20, 40 and
the flattened feature is 40 x 16 = 640 wide.

Word branch: frozen GloVe + fastText lookup (200 + 300) -> BiLSTM(100 + 100).
Image branch: top-5 class labels -> embedding(50) -> LSTM(50), final state,
broadcast to every token. Fusion: concatenation -> BiLSTM(100 + 100) ->
linear -> 9 emission scores -> CRF. The attention variant projects the three
modality vectors to a common width and fuses them with modality attention
before the fusion BiLSTM.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor, no_grad
from .crf import CrfParams, crf_log_likelihood, viterbi_decode
from .errors import ConfigError
from .layers import (AttentionParams, BiLSTM, Conv1d, Embedding, GroupNorm, Linear,
                     LstmParams, modality_attention, run_lstm, sine_relu, targeted_dropout)
from .seqdata import MAX_IMAGE_WORDS, TAGS, EmbeddingTable, select_top_k

PAD, UNK = 0, 1
_PRINTABLE = [chr(c) for c in range(32, 127)]
CHAR_INDEX = {ch: i + 2 for i, ch in enumerate(_PRINTABLE)}
CHAR_VOCAB_SIZE = len(_PRINTABLE) + 2


@dataclass
class CwiConfig:
    max_words: int = 35
    max_chars: int = 40
    char_emb: int = 40
    glove_dim: int = 200
    fasttext_dim: int = 300
    image_emb: int = 50
    image_lstm: int = 50
    word_lstm: int = 100
    fusion_lstm: int = 100
    conv_specs: list = field(default_factory=lambda: [[2, 16], [3, 32], [4, 64],
                                                      [4, 64], [3, 32], [2, 16]])
    pool: int = 2
    drop_rate: float = 0.25
    target_rate: float = 0.4
    dropout_target: str = "low"
    epsilon: float = 0.0025
    groups: int = 16
    regularizers: bool = True
    use_attention: bool = False
    attention_dim: int = 200
    image_classes: int = 1000
    n_tags: int = 9
    mask_illegal: bool = False
    seed: int = 0

    @property
    def word_emb_dim(self) -> int:
        return self.glove_dim + self.fasttext_dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CwiConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def char_layout(cfg: CwiConfig) -> dict:
    """Lengths/channels through the character branch; raises ConfigError on a bad chain."""
    if len(cfg.conv_specs) != 6:
        raise ConfigError("the character branch has exactly six convolutions")
    (_, c1), (_, c2), (_, c3), (_, c4), (_, c5), (_, c6) = cfg.conv_specs
    ceil = lambda n: -(-n // cfg.pool)
    la = ceil(cfg.max_chars)
    lb = ceil(la)
    lc = ceil(lb)
    pairs = {"pool3/conv4": (c3, c4), "pool2/conv5": (c2, c5), "pool1/conv6": (c1, c6)}
    for name, (x, y) in pairs.items():
        if x != y:
            raise ConfigError(f"skip concatenation {name} joins {x} and {y} channels")
    if c6 % cfg.groups:
        raise ConfigError(f"{c6} channels are not divisible into {cfg.groups} groups")
    l_cd = 2 * lc
    l_be = lb + l_cd
    l_af = la + l_be
    return {"pool_lengths": (la, lb, lc), "concat_lengths": (l_cd, l_be, l_af),
            "channels": c6, "feature_dim": l_af * c6,
            "conv_inputs": [cfg.char_emb, c1, c2, c3, c4, c5]}


def validate_config(cfg: CwiConfig) -> dict:
    layout = char_layout(cfg)
    if cfg.n_tags != len(TAGS):
        raise ConfigError(f"CRF needs {len(TAGS)} output classes, got {cfg.n_tags}")
    fusion_in = layout["feature_dim"] + 2 * cfg.word_lstm + cfg.image_lstm
    return {**layout, "word_feature_dim": 2 * cfg.word_lstm, "image_feature_dim": cfg.image_lstm,
            "fusion_input_dim": cfg.attention_dim if cfg.use_attention else fusion_in,
            "fusion_output_dim": 2 * cfg.fusion_lstm}


def char_ids(word: str, max_chars: int) -> list:
    ids = [CHAR_INDEX.get(ch, UNK) for ch in word[:max_chars]]
    return ids + [PAD] * (max_chars - len(ids))


class ImageVocab:
    """Class labels -> ids; 0 is PAD, 1 is UNK, capacity ``n_classes`` labels."""

    def __init__(self, labels=(), n_classes: int = 1000):
        self.n_classes = n_classes
        self.labels = []
        self.index = {}
        for lab in labels:
            self.add(lab)

    def add(self, label: str):
        if label not in self.index and len(self.labels) < self.n_classes:
            self.index[label] = len(self.labels) + 2
            self.labels.append(label)

    def __len__(self):
        return self.n_classes + 2

    def encode(self, label: str) -> int:
        return self.index.get(label, UNK)


def top5_image_words(probs, class_labels) -> list:
    """(label, prob) pairs of the five most probable classifier outputs."""
    return select_top_k(probs, class_labels, MAX_IMAGE_WORDS)


class WordLookup:
    """Frozen joint GloVe + fastText lookup with seeded OOV vectors."""

    def __init__(self, glove: EmbeddingTable, fasttext: EmbeddingTable):
        self.glove, self.fasttext = glove, fasttext

    @property
    def dim(self):
        return self.glove.dim + self.fasttext.dim

    @staticmethod
    def _get(table: EmbeddingTable, token: str):
        if token in table:
            return table.lookup(token)
        low = token.lower()
        return table.lookup(low if low in table else token)

    def vector(self, token: str) -> np.ndarray:
        return np.concatenate([self._get(self.glove, token), self._get(self.fasttext, token)])


@dataclass
class CwiBatch:
    char_ids: np.ndarray     # [B, T, max_chars]
    word_vecs: np.ndarray    # [B, T, word_emb_dim]
    mask: np.ndarray         # [B, T] bool
    image_ids: np.ndarray    # [B, 5]
    image_mask: np.ndarray   # [B, 5] bool
    tags: np.ndarray         # [B, T] int (0 where padded)
    lengths: list            # true sentence lengths before truncation


class CwiModel(Module):
    kind = "cwi"

    def __init__(self, config: CwiConfig, words: WordLookup | None = None,
                 image_vocab: ImageVocab | None = None):
        self.config = cfg = config
        self.layout = validate_config(cfg)
        if words is None:
            words = WordLookup(EmbeddingTable(cfg.glove_dim, seed=cfg.seed),
                               EmbeddingTable(cfg.fasttext_dim, seed=cfg.seed))
        if words.glove.dim != cfg.glove_dim or words.fasttext.dim != cfg.fasttext_dim:
            raise ConfigError(f"embedding tables are {words.glove.dim}+{words.fasttext.dim}, "
                              f"config expects {cfg.glove_dim}+{cfg.fasttext_dim}")
        self.words = words
        self.image_vocab = image_vocab or ImageVocab(n_classes=cfg.image_classes)
        rng = np.random.default_rng(cfg.seed)

        self.char_emb = Embedding(rng, CHAR_VOCAB_SIZE, cfg.char_emb)
        self.convs = [Conv1d(rng, ks, c_in, c_out) for (ks, c_out), c_in
                      in zip(cfg.conv_specs, self.layout["conv_inputs"])]
        self.char_norm = GroupNorm(self.layout["channels"], cfg.groups)
        self.word_bilstm = BiLSTM(rng, cfg.word_emb_dim, cfg.word_lstm)
        self.image_emb = Embedding(rng, cfg.image_classes + 2, cfg.image_emb)
        self.image_lstm = LstmParams(rng, cfg.image_emb, cfg.image_lstm)
        if cfg.use_attention:
            d = cfg.attention_dim
            self.proj_char = Linear(rng, self.layout["feature_dim"], d)
            self.proj_word = Linear(rng, 2 * cfg.word_lstm, d)
            self.proj_image = Linear(rng, cfg.image_lstm, d)
            self.attention = AttentionParams(rng, d)
        self.fusion = BiLSTM(rng, self.layout["fusion_input_dim"], cfg.fusion_lstm)
        self.proj_out = Linear(rng, 2 * cfg.fusion_lstm, cfg.n_tags)
        self.crf = CrfParams(cfg.n_tags)

    # -- input encoding ---------------------------------------------------
    def encode(self, examples) -> CwiBatch:
        cfg = self.config
        B, T = len(examples), cfg.max_words
        chars = np.zeros((B, T, cfg.max_chars), dtype=np.int64)
        vecs = np.zeros((B, T, cfg.word_emb_dim))
        mask = np.zeros((B, T), dtype=bool)
        tags = np.zeros((B, T), dtype=np.int64)
        img = np.zeros((B, MAX_IMAGE_WORDS), dtype=np.int64)
        img_mask = np.zeros((B, MAX_IMAGE_WORDS), dtype=bool)
        for b, ex in enumerate(examples):
            toks = ex.tokens[:T]
            for t, tok in enumerate(toks):
                chars[b, t] = char_ids(tok, cfg.max_chars)
                vecs[b, t] = self.words.vector(tok)
            mask[b, :len(toks)] = True
            if ex.tags:
                tags[b, :len(toks)] = TAGS.to_ids(ex.tags[:T])
            labels = [lab for lab, _ in ex.image_words[:MAX_IMAGE_WORDS]]
            if labels:
                img[b, :len(labels)] = [self.image_vocab.encode(lab) for lab in labels]
                img_mask[b, :len(labels)] = True
            else:
                img_mask[b, 0] = True   # one PAD step
        return CwiBatch(chars, vecs, mask, img, img_mask, tags, [len(ex.tokens) for ex in examples])

    # -- feature extractors -----------------------------------------------
    def char_features(self, ids, training: bool = False, rng=None) -> Tensor:
        """ids [..., max_chars] -> [..., feature_dim]."""
        cfg = self.config
        ids = np.asarray(ids)
        lead = ids.shape[:-1]
        x = self.char_emb(ids.reshape(-1, ids.shape[-1]))           # [N, L, E]
        c1, c2, c3, c4, c5, c6 = self.convs
        a = ad.maxpool1d(c1(x), cfg.pool)
        b = ad.maxpool1d(c2(a), cfg.pool)
        c = ad.maxpool1d(c3(b), cfg.pool)
        d = c4(c)
        e = c5(ad.concat([c, d], axis=-2))
        f = c6(ad.concat([b, e], axis=-2))
        y = ad.concat([a, f], axis=-2)
        if cfg.regularizers:
            y = targeted_dropout(y, cfg.drop_rate, cfg.target_rate, training, rng,
                                 unit_dims=2, target=cfg.dropout_target)
            y = sine_relu(y, cfg.epsilon)
            y = self.char_norm(y)
        return ad.reshape(y, lead + (self.layout["feature_dim"],))

    def word_features(self, word_vecs, mask) -> Tensor:
        return self.word_bilstm(Tensor(np.asarray(word_vecs)), mask)

    def image_features(self, image_ids, image_mask) -> Tensor:
        emb = self.image_emb(np.asarray(image_ids))
        _, last = run_lstm(emb, self.image_lstm, np.asarray(image_mask))
        return last

    def fuse(self, char_f, word_f, image_f, mask) -> Tensor:
        """Emission scores [B, T, n_tags] from the three modality features."""
        B, T = mask.shape
        img = ad.reshape(image_f, (B, 1, image_f.shape[-1])) + np.zeros((1, T, 1))
        if self.config.use_attention:
            beta, _ = modality_attention([self.proj_char(char_f), self.proj_word(word_f),
                                          self.proj_image(img)], self.attention)
            fused = beta
        else:
            fused = ad.concat([char_f, word_f, img], axis=-1)
        h = self.fusion(fused, mask)
        return self.proj_out(h)

    def emissions(self, batch: CwiBatch, training: bool = False, rng=None) -> Tensor:
        char_f = self.char_features(batch.char_ids, training, rng)
        word_f = self.word_features(batch.word_vecs, batch.mask)
        image_f = self.image_features(batch.image_ids, batch.image_mask)
        return self.fuse(char_f, word_f, image_f, batch.mask)

    # -- training / inference interface -----------------------------------
    def loss(self, examples, training: bool = True, rng=None) -> Tensor:
        """Mean negative CRF log-likelihood over the unpadded positions."""
        batch = self.encode(examples)
        em = self.emissions(batch, training, rng)
        ll = crf_log_likelihood(em, batch.tags, self.crf, batch.mask)
        return -ad.mean(ll)

    def predict(self, examples) -> list:
        if not examples:
            return []
        batch = self.encode(examples)
        with no_grad():
            em = self.emissions(batch).data
        out = []
        for b, n in enumerate(batch.lengths):
            m = min(n, self.config.max_words)
            path, _ = viterbi_decode(em[b, :m], self.crf, self.config.mask_illegal)
            out.append(TAGS.to_tags(path) + ["O"] * (n - m))
        return out

    # -- persistence ------------------------------------------------------
    def extra_state(self, tokens) -> tuple:
        """Word vectors for ``tokens`` plus metadata needed to rebuild the model."""
        vocab = sorted(set(tokens))
        g = np.array([WordLookup._get(self.words.glove, t) for t in vocab]).reshape(-1, self.config.glove_dim)
        f = np.array([WordLookup._get(self.words.fasttext, t) for t in vocab]).reshape(-1, self.config.fasttext_dim)
        meta = {"word_vocab": vocab, "image_labels": self.image_vocab.labels}
        return meta, {"buffer.glove": g, "buffer.fasttext": f}

    @classmethod
    def from_state(cls, config: CwiConfig, meta: dict, buffers: dict):
        vocab = meta["word_vocab"]
        glove = EmbeddingTable(config.glove_dim, dict(zip(vocab, buffers["buffer.glove"])), config.seed)
        fast = EmbeddingTable(config.fasttext_dim, dict(zip(vocab, buffers["buffer.fasttext"])), config.seed)
        return cls(config, WordLookup(glove, fast), ImageVocab(meta["image_labels"], config.image_classes))


def cwi_forward(example, model: CwiModel, training: bool = False, rng=None) -> Tensor:
    """Emission scores [max_words, 9] for one example (padding rows included)."""
    return model.emissions(model.encode([example]), training, rng)[0]


def cwi_loss(example, model: CwiModel) -> Tensor:
    return model.loss([example], training=False)
