import numpy as np
import pytest

from mmner.cwi import (CHAR_VOCAB_SIZE, CwiConfig, CwiModel, ImageVocab, WordLookup, char_ids,
                       char_layout, cwi_forward, cwi_loss, top5_image_words, validate_config)
from mmner.errors import ConfigError
from mmner.seqdata import EmbeddingTable, Example, is_bio2_legal
from mmner.training import build_model
from mmner.verify import mini_cwi_config


def test_default_layout_and_dimensions():
    cfg = CwiConfig()
    layout = validate_config(cfg)
    assert layout["pool_lengths"] == (20, 10, 5)
    assert layout["concat_lengths"] == (10, 20, 40)
    assert layout["feature_dim"] == 640
    assert cfg.word_emb_dim == 500
    assert layout["word_feature_dim"] == 200
    assert layout["image_feature_dim"] == 50
    assert layout["fusion_input_dim"] == 640 + 200 + 50
    assert layout["fusion_output_dim"] == 200
    assert cfg.n_tags == 9


@pytest.mark.parametrize("max_chars, lengths", [(40, (20, 10, 5)), (41, (21, 11, 6)),
                                                (7, (4, 2, 1))])
def test_layout_follows_ceil_pooling(max_chars, lengths):
    layout = char_layout(CwiConfig(max_chars=max_chars))
    assert layout["pool_lengths"] == lengths
    la, lb, lc = lengths
    assert layout["feature_dim"] == (la + lb + 2 * lc) * 16


@pytest.mark.parametrize("changes, match", [
    ({"conv_specs": [[2, 16], [3, 32], [4, 64], [5, 32], [4, 32], [3, 16]]}, "pool3/conv4"),
    ({"conv_specs": [[2, 16], [3, 32], [4, 64]]}, "six"),
    ({"groups": 5}, "groups"),
    ({"n_tags": 7}, "9"),
])
def test_bad_configs_are_rejected(changes, match):
    with pytest.raises(ConfigError, match=match):
        validate_config(CwiConfig(**changes))


def test_embedding_tables_must_match_config():
    words = WordLookup(EmbeddingTable(100), EmbeddingTable(300))
    with pytest.raises(ConfigError, match="100"):
        CwiModel(CwiConfig(), words)


def test_config_round_trip():
    cfg = CwiConfig(use_attention=True, seed=3)
    assert CwiConfig.from_dict(cfg.to_dict()) == cfg


def test_char_ids_pad_truncate_and_unknown():
    ids = char_ids("abé", 5)
    assert len(ids) == 5 and ids[3:] == [0, 0] and ids[2] == 1
    assert ids[0] != ids[1] and max(ids) < CHAR_VOCAB_SIZE
    assert len(char_ids("x" * 60, 40)) == 40


def test_word_lookup_prefers_exact_then_lowercase():
    glove = EmbeddingTable(2, {"paris": np.array([1.0, 2.0]), "Apple": np.array([3.0, 4.0])})
    fast = EmbeddingTable(1, {"paris": np.array([5.0])})
    words = WordLookup(glove, fast)
    np.testing.assert_array_equal(words.vector("Paris"), [1, 2, 5])
    np.testing.assert_array_equal(words.vector("Apple")[:2], [3, 4])
    oov = words.vector("Zzyzx")
    assert oov.shape == (3,) and np.abs(oov).max() <= 0.25


def test_image_vocab_reserves_pad_and_unk():
    v = ImageVocab(["dog", "cat", "dog"], n_classes=2)
    assert v.encode("dog") == 2 and v.encode("cat") == 3 and v.encode("car") == 1
    v.add("car")
    assert v.encode("car") == 1 and len(v) == 4


def test_top5_image_words(rng):
    probs = rng.dirichlet(np.ones(1000))
    labels = [f"c{i}" for i in range(1000)]
    top = top5_image_words(probs, labels)
    assert len(top) == 5
    assert [p for _, p in top] == sorted(probs, reverse=True)[:5]


@pytest.fixture(scope="module")
def cwi_model(corpus, tables):
    return build_model("cwi", corpus, glove=tables[0], fasttext=tables[1])


def test_forward_shapes(cwi_model, corpus):
    batch = cwi_model.encode(corpus[:3])
    assert batch.char_ids.shape == (3, 35, 40)
    assert batch.word_vecs.shape == (3, 35, 500)
    assert cwi_model.char_features(batch.char_ids).shape == (3, 35, 640)
    assert cwi_model.image_features(batch.image_ids, batch.image_mask).shape == (3, 50)
    assert cwi_model.emissions(batch).shape == (3, 35, 9)
    assert cwi_forward(corpus[0], cwi_model).shape == (35, 9)
    assert np.isfinite(cwi_loss(corpus[0], cwi_model).item())


def test_long_sentences_truncate_to_outside_tags(cwi_model):
    n = 40
    ex = Example("long", [f"w{i}" for i in range(n)], ["O"] * n)
    tags = cwi_model.predict([ex])[0]
    assert len(tags) == n and tags[35:] == ["O"] * 5


def test_missing_images_use_one_pad_step(cwi_model):
    ex = Example("noimg", ["hello", "world"], ["O", "O"], [])
    batch = cwi_model.encode([ex])
    assert batch.image_mask[0].tolist() == [True, False, False, False, False]
    assert batch.image_ids[0, 0] == 0
    assert len(cwi_model.predict([ex])[0]) == 2


def test_training_mode_is_stochastic_and_eval_is_not(cwi_model, corpus):
    a = cwi_model.loss(corpus[:2], training=True, rng=np.random.default_rng(0)).item()
    b = cwi_model.loss(corpus[:2], training=True, rng=np.random.default_rng(1)).item()
    c = cwi_model.loss(corpus[:2], training=False).item()
    assert a != b
    assert c == cwi_model.loss(corpus[:2], training=False).item()


def test_regularizers_can_be_disabled(corpus, tables):
    model = build_model("cwi", corpus, glove=tables[0], fasttext=tables[1],
                        overrides={"regularizers": "false"})
    assert model.config.regularizers is False
    # no targeted dropout left, so training mode no longer depends on the rng
    a = model.loss(corpus[:2], training=True, rng=np.random.default_rng(0)).item()
    b = model.loss(corpus[:2], training=True, rng=np.random.default_rng(1)).item()
    assert a == b
    # and SineRelu is gone: negative conv outputs pass through unchanged
    feats = model.char_features(model.encode(corpus[:1]).char_ids).data
    assert feats.min() < -0.0025


def test_attention_variant(corpus, tables):
    model = build_model("cwi-attn", corpus, glove=tables[0], fasttext=tables[1])
    assert model.config.use_attention
    names = dict(model.named_parameters())
    assert names["proj_char.W"].shape == (640, 200)
    assert names["proj_word.W"].shape == (200, 200)
    assert names["proj_image.W"].shape == (50, 200)
    assert names["fusion.fwd.W"].shape == (200, 400)
    assert model.emissions(model.encode(corpus[:2])).shape == (2, 35, 9)


def test_mask_illegal_decoding_gives_legal_tags(corpus):
    cfg = mini_cwi_config(seed=5)
    cfg.mask_illegal = True
    model = CwiModel(cfg)
    for p in model.crf.parameters():
        p.data[...] = np.random.default_rng(0).normal(size=p.shape) * 5
    for tags in model.predict(corpus):
        assert is_bio2_legal(tags)
