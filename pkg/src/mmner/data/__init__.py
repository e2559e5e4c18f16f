"""Bundled synthetic corpus: 20 tweets, image sidecar, 50-word embeddings, 1k vocabulary."""
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent

TMN = DATA_DIR / "synthetic_tmn.txt"
SIDECAR = DATA_DIR / "synthetic_sidecar.tsv"
GLOVE = DATA_DIR / "synthetic_glove_200d.txt"
FASTTEXT = DATA_DIR / "synthetic_fasttext_300d.txt"
VOCAB = DATA_DIR / "vocab_1k.txt"


def load_corpus():
    from ..seqdata import parse_sidecar, parse_tmn

    with open(SIDECAR, encoding="utf-8") as fh:
        sidecar = parse_sidecar(fh)
    with open(TMN, encoding="utf-8") as fh:
        return parse_tmn(fh, sidecar)


def load_tables(seed: int = 0):
    from ..seqdata import load_embeddings

    with open(GLOVE, encoding="utf-8") as fh:
        glove = load_embeddings(fh, 200, seed)
    with open(FASTTEXT, encoding="utf-8") as fh:
        fast = load_embeddings(fh, 300, seed)
    return glove, fast


def load_vocab():
    from ..msb import SubwordVocab

    return SubwordVocab.load(VOCAB)
