import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmner.errors import ContractError, ParseError, ValidationError
from mmner.oracles import full_sort_top_k, random_bio2
from mmner.seqdata import (ENTITY_TYPES, PUBLISHED_TMN_STATS, PUBLISHED_TMN_TOTAL_ENTITIES, TAGS,
                           EntitySpan, Example, compare_tmn_statistics, dataset_statistics,
                           extract_spans, is_bio2_legal, load_embeddings, oov_vector,
                           parse_conll, parse_sidecar, parse_tmn, preprocess_text, repair_bio2,
                           select_top_k, serialize_conll, serialize_sidecar, serialize_tmn)

tag_seqs = st.integers(0, 2**32 - 1).flatmap(
    lambda seed: st.integers(1, 15).map(lambda n: random_bio2(np.random.default_rng(seed), n)))
tokens = st.text("abcdefgXYZ@#.'-", min_size=1, max_size=8)


def test_tag_scheme_order_and_masks():
    assert TAGS.labels[0] == "O" and len(TAGS) == 9
    trans, start = TAGS.transition_mask(), TAGS.start_mask()
    assert not trans[TAGS.index["O"], TAGS.index["I-PER"]]
    assert not trans[TAGS.index["B-LOC"], TAGS.index["I-PER"]]
    assert trans[TAGS.index["B-PER"], TAGS.index["I-PER"]]
    assert trans[TAGS.index["I-PER"], TAGS.index["I-PER"]]
    assert start.sum() == 5 and not start[TAGS.index["I-ORG"]]


def test_extract_spans_is_one_based_inclusive():
    tags = ["B-PER", "I-PER", "O", "B-LOC", "B-LOC", "I-LOC"]
    assert extract_spans(tags) == [EntitySpan(1, 2, "PER"), EntitySpan(4, 4, "LOC"),
                                   EntitySpan(5, 6, "LOC")]
    with pytest.raises(ContractError):
        extract_spans(["O", "I-PER"])


@given(tag_seqs)
def test_spans_cover_exactly_the_entity_tokens(tags):
    spans = extract_spans(tags)
    covered = sorted(i for s in spans for i in range(s.start, s.end + 1))
    assert covered == [i for i, t in enumerate(tags, 1) if t != "O"]
    for s in spans:
        assert tags[s.start - 1] == "B-" + s.type


@given(st.lists(st.sampled_from(TAGS.labels), min_size=1, max_size=12))
def test_repair_makes_any_sequence_legal(tags):
    fixed = repair_bio2(tags)
    assert is_bio2_legal(fixed)
    if is_bio2_legal(tags):
        assert fixed == tags


@given(st.lists(tag_seqs, min_size=1, max_size=4), st.lists(st.lists(tokens, min_size=15,
                                                                        max_size=15), min_size=4,
                                                               max_size=4))
def test_conll_and_tmn_round_trip(tag_lists, token_lists):
    examples = [Example(f"img{i}", token_lists[i][:len(t)], t) for i, t in enumerate(tag_lists)]
    buf = io.StringIO()
    serialize_conll(examples, buf)
    back = parse_conll(io.StringIO(buf.getvalue()))
    assert [(e.tokens, e.tags) for e in back] == [(e.tokens, e.tags) for e in examples]
    buf = io.StringIO()
    serialize_tmn(examples, buf)
    back = parse_tmn(io.StringIO(buf.getvalue()), {e.id: [] for e in examples})
    assert [(e.id, e.tokens, e.tags) for e in back] == [(e.id, e.tokens, e.tags) for e in examples]


def test_conll_skips_docstart_and_reports_line_numbers():
    text = "-DOCSTART- O\n\nJohn B-PER\nlives O\n\nin O\nBAD-TAG\n"
    with pytest.raises(ParseError, match="line 7"):
        parse_conll(io.StringIO(text))
    ok = parse_conll(io.StringIO("-DOCSTART- O\n\nJohn NNP B-PER\nlives VBZ O\n"))
    assert ok[0].tokens == ["John", "lives"] and ok[0].tags == ["B-PER", "O"]


def test_unknown_tag_is_a_parse_error():
    with pytest.raises(ParseError, match="line 1.*B-FOO"):
        parse_conll(io.StringIO("x B-FOO\n"))


def test_strict_rejects_and_lenient_repairs_illegal_bio2():
    text = "IMGID:1\nParis I-LOC\nrocks O\n"
    with pytest.raises(ValidationError):
        parse_tmn(io.StringIO(text), {"1": []})
    ex = parse_tmn(io.StringIO(text), {"1": []}, strict=False)[0]
    assert ex.tags == ["B-LOC", "O"]


def test_tmn_needs_sidecar_entries_when_strict():
    with pytest.raises(ValidationError, match="img9"):
        parse_tmn(io.StringIO("IMGID:img9\nx O\n"), {})
    assert parse_tmn(io.StringIO("IMGID:img9\nx O\n"), {}, strict=False)[0].image_words == []


def test_sidecar_round_trip_and_sorting():
    table = {"a": [("dog", 0.2), ("park", 0.7)], "b": []}
    buf = io.StringIO()
    serialize_sidecar(table, buf)
    assert parse_sidecar(io.StringIO(buf.getvalue())) == table
    ex = parse_tmn(io.StringIO("IMGID:a\nx O\n"), table)[0]
    assert ex.image_words == [("park", 0.7), ("dog", 0.2)]


@pytest.mark.parametrize("line, match", [
    ("a\tdog\n", "alternate"),
    ("a\tdog\tlots\n", "not a number"),
    ("a" + "\tx\t0.1" * 6 + "\n", "more than 5"),
    ("a\tdog\t0.8\tcat\t0.5\n", "sum"),
    ("a\tdog\t1.5\n", "outside"),
])
def test_sidecar_errors(line, match):
    with pytest.raises((ParseError, ValidationError), match=match):
        parse_sidecar(io.StringIO(line))


def test_top_k_descending_with_stable_ties(rng):
    probs = np.array([0.1, 0.3, 0.3, 0.05, 0.2, 0.05])
    assert select_top_k(probs) == [1, 2, 4, 0, 3]
    labels = list("abcdef")
    assert select_top_k(probs, labels, k=2) == [("b", 0.3), ("c", 0.3)]
    assert len(select_top_k(probs[:3])) == 3
    for _ in range(50):
        p = rng.dirichlet(np.ones(100))
        assert select_top_k(p) == full_sort_top_k(p)


def test_load_embeddings_header_duplicates_and_errors():
    text = "3 2\nParis 0.5 1.0\nparis 2.0 3.0\nParis 9 9\n"
    table = load_embeddings(io.StringIO(text), 2)
    assert len(table) == 2
    np.testing.assert_array_equal(table.lookup("Paris"), [0.5, 1.0])
    with pytest.raises(ParseError, match="line 2.*3 values"):
        load_embeddings(io.StringIO("a 1 2\nb 1 2 3\n"), 2)
    with pytest.raises(ParseError, match="line 1"):
        load_embeddings(io.StringIO("a 1 x\n"), 2)


def test_oov_vectors_are_seeded_and_bounded():
    a = oov_vector("zzq", 300, seed=1)
    assert np.array_equal(a, oov_vector("zzq", 300, seed=1))
    assert not np.array_equal(a, oov_vector("zzq", 300, seed=2))
    assert not np.array_equal(a, oov_vector("zzr", 300, seed=1))
    assert a.min() >= -0.25 and a.max() <= 0.25


def test_preprocess_drops_urls():
    assert preprocess_text("Go Lakers https://t.co/abc http://x.y/z?q=1 now") == \
        ["Go", "Lakers", "now"]


def test_bundled_corpus_is_valid(corpus):
    assert len(corpus) == 20
    for ex in corpus:
        ex.validate()
        assert ex.image_words and len(ex.image_words) <= 5
    stats = dataset_statistics(corpus)
    assert stats["total"] == sum(stats[t] for t in ENTITY_TYPES) > 0
    assert all(stats[t] > 0 for t in ENTITY_TYPES)


def _split(n_sent, counts):
    """n_sent sentences carrying exactly ``counts`` entities of each type."""
    examples = []
    pool = [t for t, c in counts.items() for _ in range(c)]
    per = -(-len(pool) // n_sent) if pool else 0
    for i in range(n_sent):
        chunk = pool[i * per:(i + 1) * per]
        tags = [f"B-{t}" for t in chunk] or ["O"]
        examples.append(Example(str(i), ["w"] * len(tags), tags))
    return examples


def test_tmn_statistics_comparison_logic():
    splits = {name: _split(ref["sentences"], {t: ref[t] for t in ENTITY_TYPES})
              for name, ref in PUBLISHED_TMN_STATS.items()}
    passed, lines = compare_tmn_statistics(splits)
    # the published per-split rows sum to 12,800, not the published 12,784
    assert not passed and "total entities 12800" in lines[-1]
    splits["test"] = _split(3257, {"PER": 1816, "LOC": 1697, "ORG": 839, "MISC": 710})
    passed, lines = compare_tmn_statistics(splits)
    assert passed, lines
    assert sum(dataset_statistics(s)["total"] for s in splits.values()) == PUBLISHED_TMN_TOTAL_ENTITIES
    splits["dev"] = splits["dev"][:-1]
    assert not compare_tmn_statistics(splits)[0]
