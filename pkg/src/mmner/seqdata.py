"""Tag scheme, examples, and the corpus / sidecar / embedding readers.

File formats
------------
CoNLL: one token per line, whitespace-separated columns, token first and tag
last. A blank line ends a sentence; ``-DOCSTART-`` lines are ignored.

TMN: CoNLL columns, with every sentence introduced by an ``IMGID:<id>`` line
naming the image posted with it. The image id doubles as the example id.

Sidecar: tab-separated, one image per line::

    <image_id> TAB <label_1> TAB <prob_1> ... TAB <label_k> TAB <prob_k>

with k <= 5. Lines starting with ``#`` are comments.

Embeddings: the GloVe / fastText text layout, ``token v1 ... vd`` per line. A
leading ``<count> <dim>`` header line (fastText ``.vec``) is skipped.
"""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import ContractError, ParseError, ValidationError

log = logging.getLogger(__name__)

ENTITY_TYPES = ("PER", "LOC", "ORG", "MISC")
MAX_IMAGE_WORDS = 5


class TagScheme:
    """The nine BIO2 labels in fixed index order."""

    labels = ("O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC")

    def __init__(self):
        self.index = {t: i for i, t in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def to_ids(self, tags):
        return [self.index[t] for t in tags]

    def to_tags(self, ids):
        return [self.labels[i] for i in ids]

    @staticmethod
    def allowed(prev: str | None, cur: str) -> bool:
        """BIO2 legality of ``cur`` following ``prev`` (``None`` = sentence start)."""
        if not cur.startswith("I-"):
            return True
        return prev is not None and prev != "O" and prev[2:] == cur[2:]

    def transition_mask(self) -> np.ndarray:
        """Boolean [9, 9]; entry [p, n] is True when tag n may follow tag p."""
        n = len(self.labels)
        return np.array([[self.allowed(self.labels[p], self.labels[q]) for q in range(n)]
                         for p in range(n)])

    def start_mask(self) -> np.ndarray:
        return np.array([self.allowed(None, t) for t in self.labels])


TAGS = TagScheme()


def is_bio2_legal(tags) -> bool:
    prev = None
    for t in tags:
        if not TagScheme.allowed(prev, t):
            return False
        prev = t
    return True


def repair_bio2(tags) -> list:
    """Rewrite every illegal I-X as B-X."""
    out, prev = [], None
    for t in tags:
        if not TagScheme.allowed(prev, t):
            t = "B-" + t[2:]
        out.append(t)
        prev = t
    return out


@dataclass
class Example:
    id: str
    tokens: list
    tags: list
    image_words: list = field(default_factory=list)

    def validate(self):
        if len(self.tokens) < 1:
            raise ValidationError(f"{self.id}: empty sentence")
        if len(self.tokens) != len(self.tags):
            raise ValidationError(f"{self.id}: {len(self.tokens)} tokens but {len(self.tags)} tags")
        for t in self.tags:
            if t not in TAGS.index:
                raise ValidationError(f"{self.id}: unknown tag {t!r}")
        if not is_bio2_legal(self.tags):
            raise ValidationError(f"{self.id}: tag sequence is not BIO2-legal")
        validate_image_words(self.image_words, self.id)
        return self


def validate_image_words(pairs, where=""):
    if len(pairs) > MAX_IMAGE_WORDS:
        raise ValidationError(f"{where}: more than {MAX_IMAGE_WORDS} image words")
    total = 0.0
    for label, p in pairs:
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"{where}: probability {p} for {label!r} outside [0, 1]")
        total += p
    if total > 1.0 + 1e-6:
        raise ValidationError(f"{where}: image-word probabilities sum to {total:.6f} > 1")


@dataclass(frozen=True)
class EntitySpan:
    start: int   # 1-based, inclusive
    end: int     # 1-based, inclusive
    type: str


def extract_spans(tags) -> list:
    """Maximal ``B-X (I-X)*`` runs as 1-based inclusive spans."""
    if not is_bio2_legal(tags):
        raise ContractError("extract_spans needs a BIO2-legal sequence")
    spans = []
    start = None
    for i, t in enumerate(tags, 1):
        if t.startswith("I-"):
            continue
        if start is not None:
            spans.append(EntitySpan(start, i - 1, tags[start - 1][2:]))
            start = None
        if t.startswith("B-"):
            start = i
    if start is not None:
        spans.append(EntitySpan(start, len(tags), tags[start - 1][2:]))
    return spans


# -- CoNLL / TMN ------------------------------------------------------------
def _finish(tokens, tags, ex_id, line_no, strict, image_words=None):
    if not strict and not is_bio2_legal(tags):
        log.warning("%s (ending line %d): repaired illegal I- tags", ex_id, line_no)
        tags = repair_bio2(tags)
    ex = Example(ex_id, tokens, tags, list(image_words or []))
    try:
        ex.validate()
    except ValidationError as err:
        raise ValidationError(f"sentence ending at line {line_no}: {err}") from None
    return ex


def _read_blocks(stream: Iterable[str], allow_imgid: bool):
    """Yield (image_id, tokens, tags, last_line_no) per sentence."""
    tokens, tags, img = [], [], None
    line_no = 0
    for line_no, raw in enumerate(stream, 1):
        line = raw.rstrip("\r\n")
        stripped = line.strip()
        if not stripped:
            if tokens:
                yield img, tokens, tags, line_no
            tokens, tags, img = [], [], None
            continue
        if stripped.startswith("-DOCSTART-"):
            continue
        if stripped.startswith("IMGID:"):
            if not allow_imgid:
                raise ParseError("IMGID line in a plain CoNLL file", line_no)
            if tokens:
                yield img, tokens, tags, line_no - 1
                tokens, tags = [], []
            img = stripped[len("IMGID:"):].strip()
            continue
        cols = stripped.split()
        if len(cols) < 2:
            raise ParseError(f"expected 'token ... tag', got {stripped!r}", line_no)
        tag = cols[-1]
        if tag not in TAGS.index:
            raise ParseError(f"unknown tag {tag!r}", line_no)
        tokens.append(cols[0])
        tags.append(tag)
    if tokens:
        yield img, tokens, tags, line_no


def parse_conll(stream: Iterable[str], strict: bool = True) -> list:
    examples = []
    for n, (_, tokens, tags, line_no) in enumerate(_read_blocks(stream, False)):
        examples.append(_finish(tokens, tags, f"conll-{n}", line_no, strict))
    return examples


def serialize_conll(examples, out: TextIO):
    for ex in examples:
        for tok, tag in zip(ex.tokens, ex.tags):
            out.write(f"{tok}\t{tag}\n")
        out.write("\n")


def parse_tmn(stream: Iterable[str], sidecar: dict | None = None, strict: bool = True) -> list:
    """Read a TMN file and attach image words from ``sidecar`` (id -> pairs)."""
    sidecar = sidecar or {}
    examples = []
    for n, (img, tokens, tags, line_no) in enumerate(_read_blocks(stream, True)):
        ex_id = img if img is not None else f"tmn-{n}"
        if img is None and strict:
            raise ParseError("sentence without an IMGID line", line_no)
        pairs = sidecar.get(ex_id)
        if pairs is None:
            if strict:
                raise ValidationError(f"image id {ex_id!r} missing from sidecar")
            pairs = []
        pairs = sorted(pairs, key=lambda lp: -lp[1])
        examples.append(_finish(tokens, tags, ex_id, line_no, strict, pairs))
    return examples


def serialize_tmn(examples, out: TextIO):
    for ex in examples:
        out.write(f"IMGID:{ex.id}\n")
        for tok, tag in zip(ex.tokens, ex.tags):
            out.write(f"{tok}\t{tag}\n")
        out.write("\n")


def parse_sidecar(stream: Iterable[str]) -> dict:
    table = {}
    for line_no, raw in enumerate(stream, 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        img, rest = cols[0].strip(), cols[1:]
        if not img:
            raise ParseError("empty image id", line_no)
        if len(rest) % 2:
            raise ParseError("labels and probabilities must alternate", line_no)
        if len(rest) // 2 > MAX_IMAGE_WORDS:
            raise ParseError(f"more than {MAX_IMAGE_WORDS} (label, probability) pairs", line_no)
        pairs = []
        for label, prob in zip(rest[0::2], rest[1::2]):
            try:
                p = float(prob)
            except ValueError:
                raise ParseError(f"probability {prob!r} is not a number", line_no) from None
            if not label.strip():
                raise ParseError("empty class label", line_no)
            pairs.append((label.strip(), p))
        validate_image_words(pairs, f"line {line_no}")
        if img in table:
            raise ParseError(f"duplicate image id {img!r}", line_no)
        table[img] = pairs
    return table


def serialize_sidecar(table: dict, out: TextIO):
    for img, pairs in table.items():
        cells = [img] + [f"{lab}\t{p!r}" for lab, p in pairs]
        out.write("\t".join(cells) + "\n")


def select_top_k(probs, labels=None, k: int = MAX_IMAGE_WORDS) -> list:
    """Indices (or (label, prob) pairs) of the k largest probabilities.

    Descending order; equal probabilities keep the lower index first.
    """
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")[:k]
    if labels is None:
        return [int(i) for i in order]
    return [(labels[i], float(probs[i])) for i in order]


# -- embeddings -----------------------------------------------------------
def oov_vector(token: str, dim: int, seed: int = 0) -> np.ndarray:
    """Uniform [-0.25, 0.25] vector fixed by (token, seed)."""
    digest = hashlib.sha256(f"{seed}\x00{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.uniform(-0.25, 0.25, size=dim)


class EmbeddingTable:
    def __init__(self, dim: int, vectors: dict | None = None, seed: int = 0):
        self.dim = dim
        self.vectors = vectors if vectors is not None else {}
        self.seed = seed

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, token):
        return token in self.vectors

    def lookup(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token)
        if vec is None:
            return oov_vector(token, self.dim, self.seed)
        return vec


def load_embeddings(stream: Iterable[str], expected_dim: int, seed: int = 0) -> EmbeddingTable:
    vectors = {}
    for line_no, raw in enumerate(stream, 1):
        parts = raw.rstrip("\r\n").split(" ")
        while parts and parts[-1] == "":
            parts.pop()
        if not parts:
            continue
        if line_no == 1 and len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
            continue
        if len(parts) - 1 != expected_dim:
            raise ParseError(f"vector has {len(parts) - 1} values, expected {expected_dim}", line_no)
        token = parts[0]
        if token in vectors:
            log.info("duplicate embedding for %r at line %d ignored", token, line_no)
            continue
        try:
            vectors[token] = np.array([float(v) for v in parts[1:]])
        except ValueError:
            raise ParseError("non-numeric vector component", line_no) from None
    return EmbeddingTable(expected_dim, vectors, seed)


# -- text -----------------------------------------------------------------
URL_RE = re.compile(r"[A-Za-z][A-Za-z0-9+.\-]*://\S*")


def strip_urls(raw: str) -> str:
    return URL_RE.sub(" ", raw)


def preprocess_text(raw: str) -> list:
    return strip_urls(raw).split()


# -- corpus statistics ----------------------------------------------------
# Per-split entity counts as published. They sum to 12,800 while the published
# grand total is 12,784, so only split sizes and the grand total are asserted.
PUBLISHED_TMN_TOTAL_ENTITIES = 12784
PUBLISHED_TMN_STATS = {
    "train": {"sentences": 4000, "PER": 2217, "LOC": 2091, "ORG": 928, "MISC": 940, "total": 6176},
    "dev": {"sentences": 1000, "PER": 552, "LOC": 522, "ORG": 247, "MISC": 225, "total": 1546},
    "test": {"sentences": 3257, "PER": 1816, "LOC": 1697, "ORG": 839, "MISC": 726, "total": 5078},
}


def dataset_statistics(examples) -> dict:
    stats = {"sentences": len(examples), **{t: 0 for t in ENTITY_TYPES}, "total": 0}
    for ex in examples:
        for span in extract_spans(ex.tags):
            stats[span.type] += 1
            stats["total"] += 1
    return stats


def compare_tmn_statistics(splits: dict):
    """Check {"train"|"dev"|"test": examples} against the published TMN figures.

    Returns (passed, lines). Sentence counts per split and the overall entity
    total must match; per-type counts are listed with their deltas only.
    """
    lines, passed, total = [], True, 0
    for name in ("train", "dev", "test"):
        got, ref = dataset_statistics(splits[name]), PUBLISHED_TMN_STATS[name]
        total += got["total"]
        ok = got["sentences"] == ref["sentences"]
        passed &= ok
        lines.append(f"{name}: sentences {got['sentences']} (expected {ref['sentences']})"
                     f"{'' if ok else ' MISMATCH'}")
        lines.append("  " + "  ".join(f"{k} {got[k]} ({got[k] - ref[k]:+d})"
                                      for k in (*ENTITY_TYPES, "total")))
    ok = total == PUBLISHED_TMN_TOTAL_ENTITIES
    passed &= ok
    lines.append(f"total entities {total} (expected {PUBLISHED_TMN_TOTAL_ENTITIES})"
                 f"{'' if ok else ' MISMATCH'}")
    return passed, lines
