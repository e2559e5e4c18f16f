import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmner.errors import ConfigError, ContractError
from mmner.msb import (SPECIALS, MsbConfig, MsbModel, SubwordVocab, assemble_input, detokenize,
                       import_pretrained, msb_tag, pretrained_name_map,
                       scaled_dot_product_attention, tokenize, tokenize_words, wordpiece)
from mmner.oracles import softmax_mp
from mmner.seqdata import Example, is_bio2_legal
from mmner.training import build_model

VOCAB = SubwordVocab(list(SPECIALS) + ["un", "##aff", "##able", "##a", "aff", "a", "b",
                                       "##b", "dog", "hot", "##dog", "new", "york"])


def test_greedy_longest_match():
    assert wordpiece("unaffable", VOCAB) == ["un", "##aff", "##able"]
    assert wordpiece("Hotdog", VOCAB) == ["hot", "##dog"]
    assert wordpiece("ab", VOCAB) == ["a", "##b"]
    assert wordpiece("unx", VOCAB) == ["[UNK]"]
    assert wordpiece("a" * 101, SubwordVocab(list(SPECIALS) + ["a", "##a"])) == ["[UNK]"]


def test_case_sensitive_vocab():
    v = SubwordVocab(list(SPECIALS) + ["Dog"], lowercase=False)
    assert wordpiece("Dog", v) == ["Dog"] and wordpiece("dog", v) == ["[UNK]"]


def test_tokenize_tracks_word_alignment():
    tok = tokenize("unaffable dog http://t.co/x hotdog", VOCAB)
    assert tok.pieces == ["un", "##aff", "##able", "dog", "hot", "##dog"]
    assert tok.word_index == [0, 0, 0, 1, 2, 2]
    assert tok.first_piece == [0, 3, 4]
    assert detokenize(tok.pieces) == "unaffable dog hotdog"


def test_empty_vocabulary_is_a_config_error():
    with pytest.raises(ConfigError):
        tokenize("x", SubwordVocab([]))


@given(st.lists(st.sampled_from(["un", "aff", "a", "b", "dog", "hot", "new", "york"]),
                min_size=1, max_size=4), st.lists(st.sampled_from(["##aff", "##able", "##b",
                                                                   "##dog", "##a"]), max_size=3))
def test_round_trip_of_composed_words(heads, tails):
    word = heads[0] + "".join(t[2:] for t in tails)
    pieces = wordpiece(word, VOCAB)
    if "[UNK]" not in pieces:
        assert detokenize(pieces) == word


def test_bundled_vocab_shape(vocab):
    assert len(vocab) == 1000
    assert all(s in vocab for s in SPECIALS)
    assert wordpiece("barcelona", vocab) != ["barcelona"]
    assert "[UNK]" not in wordpiece("barcelona", vocab)


def test_assemble_layout_and_segments():
    tok = tokenize_words(["new", "york", "hotdog"], VOCAB)
    m = assemble_input(tok, [("hot_dog", 0.9), ("dog", 0.1)], VOCAB)
    pieces = [VOCAB.tokens[i] for i in m.ids]
    assert pieces == ["[CLS]", "new", "york", "hot", "##dog", "[SEP]", "hot", "dog", "dog",
                      "[SEP]"]
    assert m.segments == [0] * 6 + [1] * 4
    assert m.first_piece == [1, 2, 3] and m.n_words == 3 and m.image_start == 6
    assert m.mask == [1] * 10


def test_truncation_drops_text_not_image_labels():
    tok = tokenize_words(["hotdog"] * 10, VOCAB)
    m = assemble_input(tok, [("dog", 0.5)], VOCAB, max_positions=10)
    assert len(m.ids) == 10
    pieces = [VOCAB.tokens[i] for i in m.ids]
    assert pieces[-3:] == ["[SEP]", "dog", "[SEP]"]
    assert m.n_words == 3       # the partially kept 4th word starts at piece 6 > budget
    with pytest.raises(ConfigError):
        assemble_input(tok, [("dog", 0.5)], VOCAB, max_positions=3)


def test_presets():
    tiny, small = MsbConfig.tiny(), MsbConfig.small()
    assert (tiny.hidden, tiny.heads, tiny.layers) == (128, 2, 2)
    assert (small.hidden, small.heads, small.layers) == (512, 8, 4)
    assert tiny.intermediate == 512 and small.intermediate == 2048
    with pytest.raises(ConfigError):
        MsbConfig(hidden=10, heads=3)


def test_attention_against_extended_precision(rng):
    q, k, v = rng.normal(size=(4, 8)), rng.normal(size=(6, 8)), rng.normal(size=(6, 3))
    mask = np.array([1, 1, 0, 1, 1, 0])
    out, w = scaled_dot_product_attention(q, k, v, mask)
    for r in range(4):
        ref = np.zeros(6)
        ref[mask == 1] = softmax_mp((q[r] @ k.T / np.sqrt(8))[mask == 1])
        np.testing.assert_allclose(w.data[r], ref, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(out.data, w.data @ v, rtol=1e-12)
    with pytest.raises(ContractError):
        scaled_dot_product_attention(q, rng.normal(size=(6, 5)), v)


@pytest.fixture(scope="module")
def tiny(vocab):
    return build_model("msb-tiny", vocab=vocab, use_crf=True)


def test_encoder_shapes_and_limits(tiny):
    h = tiny.encoder([2, 5, 3], [0, 0, 0])
    assert h.shape == (3, 128)
    with pytest.raises(ContractError):
        tiny.encoder(np.zeros(129, dtype=int), np.zeros(129, dtype=int))
    with pytest.raises(ContractError):
        tiny.encoder([len(tiny.vocab)], [0])


def test_vocab_size_follows_vocab_file(tiny, vocab):
    assert tiny.config.vocab_size == len(vocab) == tiny.tok_emb.shape[0]


def test_padding_does_not_change_predictions(tiny, corpus):
    short = min(corpus, key=lambda ex: len(ex.tokens))
    long = max(corpus, key=lambda ex: len(ex.tokens))
    alone = tiny.word_emissions(tiny.encode([short])).data[0]
    padded = tiny.word_emissions(tiny.encode([short, long])).data[0, :alone.shape[0]]
    np.testing.assert_allclose(alone, padded, atol=1e-9)


def test_attention_rows_are_distributions(tiny, corpus):
    batch = tiny.encode(corpus[:3])
    tiny.encoder(batch.ids, batch.segments, batch.mask)
    for layer in tiny.layers:
        w = layer.last_weights                  # [B, heads, T, T]
        np.testing.assert_allclose(w.sum(-1), 1, atol=1e-12)
        masked = np.broadcast_to(batch.mask[:, None, None, :] == 0, w.shape)
        assert w[masked].max(initial=0) < 1e-6


def test_loss_and_tagging(tiny, corpus):
    assert np.isfinite(tiny.loss(corpus[:4]).item())
    tags = msb_tag(corpus[0], tiny)
    assert len(tags) == len(corpus[0].tokens)


def test_cross_entropy_head(vocab, corpus):
    model = build_model("msb-tiny", vocab=vocab, use_crf=False)
    assert not hasattr(model, "crf")
    loss = model.loss(corpus[:2]).item()
    assert loss == pytest.approx(np.log(9), rel=0.3)


def test_masked_crf_decoding_is_legal(vocab, corpus):
    model = build_model("msb-tiny", vocab=vocab, use_crf=True,
                        overrides={"mask_illegal": "true"})
    for p in model.crf.parameters():
        p.data[...] = np.random.default_rng(0).normal(size=p.shape) * 5
    assert all(is_bio2_legal(t) for t in model.predict(corpus))


def test_untokenizable_sentence_tags_outside(tiny):
    ex = Example("x", ["☃"], ["O"])
    assert tiny.predict([ex]) == [["O"]]


def test_pretrained_import(rng):
    cfg = MsbConfig(hidden=8, heads=2, layers=1, vocab_size=20, max_positions=16)
    model = MsbModel(cfg, SubwordVocab(list(SPECIALS) + list("abcdefghijklmno")))
    own = dict(model.named_parameters())
    names = pretrained_name_map(1)
    assert set(names.values()) <= set(own)
    arrays = {src: rng.normal(size=own[dst].shape) for src, dst in names.items()}
    arrays["bert/embeddings/word_embeddings"] = rng.normal(size=(30522, 8))
    filled = import_pretrained(model, arrays)
    assert set(filled) == set(names.values())
    np.testing.assert_array_equal(model.tok_emb.data, arrays["bert/embeddings/word_embeddings"][:20])
    arrays["bert/encoder/layer_0/output/dense/bias"] = np.zeros(3)
    with pytest.raises(ConfigError):
        import_pretrained(model, arrays)
