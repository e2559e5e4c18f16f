"""Greedy longest-match subword tokenizer over a released vocabulary file.

Continuation pieces carry a ``##`` prefix. The vocabulary file holds one token
per line; the line index is the token id.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from ..errors import ConfigError
from ..seqdata import strip_urls

log = logging.getLogger(__name__)

SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
CONT = "##"


class SubwordVocab:
    def __init__(self, tokens, lowercase: bool = True, max_word_chars: int = 100):
        tokens = list(tokens)
        if not tokens:
            raise ConfigError("empty subword vocabulary")
        self.tokens = tokens
        self.index = {}
        for i, t in enumerate(tokens):
            self.index.setdefault(t, i)
        for s in SPECIALS:
            if s not in self.index:
                raise ConfigError(f"vocabulary lacks special token {s}")
            if tokens.count(s) != 1:
                raise ConfigError(f"special token {s} appears more than once")
        self.lowercase = lowercase
        self.max_word_chars = max_word_chars

    @classmethod
    def load(cls, path, **kw) -> "SubwordVocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\r\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens, **kw)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index.get(tok, self.index["[UNK]"])

    def ids(self, toks) -> list:
        return [self.id(t) for t in toks]

    def decode(self, ids) -> list:
        return [self.tokens[i] for i in ids]

    @property
    def pad_id(self):
        return self.index["[PAD]"]

    def special(self, name: str) -> int:
        return self.index[name]


def wordpiece(word: str, vocab: SubwordVocab) -> list:
    """Split one word by repeated longest-prefix match; any dead end -> [UNK]."""
    if vocab.lowercase:
        word = word.lower()
    if len(word) > vocab.max_word_chars:
        return ["[UNK]"]
    pieces, start = [], 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = CONT + sub
            if sub in vocab.index:
                piece = sub
                break
            end -= 1
        if piece is None:
            return ["[UNK]"]
        pieces.append(piece)
        start = end
    return pieces


@dataclass
class Tokenized:
    pieces: list        # subword strings
    word_index: list    # original-word position of each piece
    first_piece: list   # piece position of each word's first subword


def tokenize_words(words, vocab: SubwordVocab) -> Tokenized:
    pieces, owner, first = [], [], []
    for w_i, word in enumerate(words):
        sub = wordpiece(word, vocab)
        first.append(len(pieces))
        pieces.extend(sub)
        owner.extend([w_i] * len(sub))
    return Tokenized(pieces, owner, first)


def tokenize(text: str, vocab: SubwordVocab) -> Tokenized:
    """URL-stripped whitespace split, then subword segmentation per word."""
    if len(vocab) == 0:
        raise ConfigError("empty subword vocabulary")
    return tokenize_words(strip_urls(text).split(), vocab)


def detokenize(pieces) -> str:
    words = []
    for p in pieces:
        if p.startswith(CONT) and words:
            words[-1] += p[len(CONT):]
        else:
            words.append(p)
    return " ".join(words)


@dataclass
class ModelInput:
    ids: list
    segments: list
    mask: list
    first_piece: list   # absolute position of each kept word's first subword
    n_words: int        # number of words whose tags can be read off
    image_start: int    # position of the first image-label piece


def assemble_input(tok: Tokenized, image_words, vocab: SubwordVocab,
                   max_positions: int = 128) -> ModelInput:
    """[CLS] text [SEP] image-labels [SEP] with segment ids 0 / 1.

    Over-long inputs lose trailing text pieces; image labels are kept.
    """
    labels = [lab if isinstance(lab, str) else lab[0] for lab in image_words]
    img_pieces = []
    for lab in labels:
        for part in lab.replace("_", " ").split():
            img_pieces.extend(wordpiece(part, vocab))
    budget = max_positions - 3 - len(img_pieces)
    if budget < 0:
        raise ConfigError(f"image labels alone need {len(img_pieces) + 3} positions "
                          f"(max_positions={max_positions})")
    text = tok.pieces
    first = tok.first_piece
    if len(text) > budget:
        log.warning("input of %d text pieces truncated to %d", len(text), budget)
        text = text[:budget]
        first = [p for p in first if p < budget]
    cls_, sep = vocab.special("[CLS]"), vocab.special("[SEP]")
    ids = [cls_] + vocab.ids(text) + [sep] + vocab.ids(img_pieces) + [sep]
    n_text = len(text) + 2
    segments = [0] * n_text + [1] * (len(img_pieces) + 1)
    mask = [1] * len(ids)
    return ModelInput(ids, segments, mask, [p + 1 for p in first], len(first), n_text)
