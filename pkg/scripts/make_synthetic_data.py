"""Regenerate the bundled synthetic corpus under src/mmner/data/.

    python scripts/make_synthetic_data.py

Output is deterministic (fixed seed), so rerunning leaves the files unchanged.
"""
import itertools
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "src" / "mmner" / "data"

SENTENCES = [
    ("img001", "Messi scores again for Barcelona tonight", "B-PER O O O B-ORG O"),
    ("img002", "Great morning walk in Central Park", "O O O O B-LOC I-LOC"),
    ("img003", "Obama speaks at the United Nations", "B-PER O O O B-ORG I-ORG"),
    ("img004", "Watching the Super Bowl with friends", "O O B-MISC I-MISC O O"),
    ("img005", "Rain again in London today", "O O O B-LOC O"),
    ("img006", "Taylor Swift live in Paris", "B-PER I-PER O O B-LOC"),
    ("img007", "Google opens new office in Berlin", "B-ORG O O O O B-LOC"),
    ("img008", "Happy Christmas from Texas", "O B-MISC O B-LOC"),
    ("img009", "LeBron James joins Lakers", "B-PER I-PER O B-ORG"),
    ("img010", "Sunset over the Golden Gate", "O O O B-LOC I-LOC"),
    ("img011", "Apple announces the new iPhone", "B-ORG O O O B-MISC"),
    ("img012", "Messi and Neymar in Paris", "B-PER O B-PER O B-LOC"),
    ("img013", "NASA launches rocket from Florida", "B-ORG O O O B-LOC"),
    ("img014", "Merry Christmas everyone", "O B-MISC O"),
    ("img015", "Serena wins at Wimbledon", "B-PER O O B-MISC"),
    ("img016", "Snow covers New York", "O O B-LOC I-LOC"),
    ("img017", "Barcelona beat Madrid tonight", "B-ORG O B-ORG O"),
    ("img018", "Obama visits London today", "B-PER O B-LOC O"),
    ("img019", "Google and Apple compete again", "B-ORG O B-ORG O O"),
    ("img020", "The Olympics open in Tokyo", "O B-MISC O O B-LOC"),
]

# Images associate with the dominant entity type of their sentence.
IMAGE_LABELS = {
    "PER": ["jersey", "ballplayer", "microphone", "suit", "stage"],
    "LOC": ["seashore", "palace", "valley", "street_sign", "umbrella"],
    "ORG": ["web_site", "monitor", "laptop", "flagpole", "rocket"],
    "MISC": ["stadium", "christmas_stocking", "trophy", "torch", "scoreboard"],
}


def dominant_type(tags):
    for t in tags.split():
        if t.startswith("B-"):
            return t[2:]
    return "MISC"


def write_corpus(rng):
    with open(OUT / "synthetic_tmn.txt", "w", encoding="utf-8") as fh:
        for img, text, tags in SENTENCES:
            toks, tg = text.split(), tags.split()
            assert len(toks) == len(tg), img
            fh.write(f"IMGID:{img}\n")
            for a, b in zip(toks, tg):
                fh.write(f"{a}\t{b}\n")
            fh.write("\n")
    with open(OUT / "synthetic_sidecar.tsv", "w", encoding="utf-8") as fh:
        for img, _, tags in SENTENCES:
            labels = list(IMAGE_LABELS[dominant_type(tags)])
            rng.shuffle(labels)
            probs = np.sort(rng.dirichlet(np.ones(8)))[::-1][:5]
            cells = [img] + [f"{lab}\t{p:.4f}" for lab, p in zip(labels, probs)]
            fh.write("\t".join(cells) + "\n")


def corpus_words():
    seen = []
    for _, text, _ in SENTENCES:
        for w in text.split():
            if w not in seen:
                seen.append(w)
    return seen


def write_embeddings(rng):
    words = corpus_words()
    # Exactly 50 entries: corpus words first, padded with distractors.
    fillers = ["the_end", "city", "team", "club", "song", "news", "game", "night", "sky", "road"]
    vocab = (words + [f for f in fillers if f not in words])[:50]
    assert len(vocab) == 50, len(vocab)
    for name, dim in (("synthetic_glove_200d.txt", 200), ("synthetic_fasttext_300d.txt", 300)):
        with open(OUT / name, "w", encoding="utf-8") as fh:
            for w in vocab:
                vec = rng.normal(0.0, 0.3, size=dim)
                fh.write(w + " " + " ".join(f"{v:.4f}" for v in vec) + "\n")


def write_vocab():
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    chars = list("abcdefghijklmnopqrstuvwxyz0123456789") + list(".,!?'\"-:;()&#@")
    cont = ["##" + c for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
    suffixes = ["##s", "##es", "##ed", "##ing", "##er", "##ly", "##ion", "##na", "##ta", "##on"]
    words = []
    for w in corpus_words():
        w = w.lower()
        if w not in words:
            words.append(w)
    for labels in IMAGE_LABELS.values():
        for lab in labels:
            for part in lab.split("_"):
                if part not in words:
                    words.append(part)
    # Drop a handful of corpus words so the tokenizer must split them.
    for w in ("barcelona", "wimbledon", "olympics", "announces"):
        words.remove(w)
    vocab = specials + chars + cont + suffixes
    for w in words:
        if w not in vocab:
            vocab.append(w)
    syll_a = "bdfgklmnprstvz"
    syll_b = "aeiou"
    for c1, v1, c2, v2 in itertools.product(syll_a, syll_b, syll_a, syll_b):
        if len(vocab) >= 1000:
            break
        w = c1 + v1 + c2 + v2
        if w not in vocab:
            vocab.append(w)
    assert len(vocab) == 1000
    with open(OUT / "vocab_1k.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(vocab) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20200101)
    write_corpus(rng)
    write_embeddings(rng)
    write_vocab()


if __name__ == "__main__":
    main()
