import struct

import numpy as np
import pytest

from mmner.autodiff import config_hash, load_checkpoint, save_checkpoint
from mmner.autodiff.checkpoint import FORMAT_VERSION, MAGIC
from mmner.errors import VersionError
from mmner.training import build_model, load_model, save_model


def test_round_trip_preserves_bits(tmp_path, rng):
    tensors = {"a.w": rng.normal(size=(3, 4)), "b": np.array(2.5), "c": rng.normal(size=(2, 0))}
    header = {"model_kind": "cwi", "config_hash": "abc", "extra": [1, 2]}
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, header)
    got_header, got = load_checkpoint(path)
    assert got_header == header
    assert list(got) == list(tensors)
    for k in tensors:
        assert got[k].shape == tensors[k].shape
        assert got[k].tobytes() == np.asarray(tensors[k], dtype="<f8").tobytes()


def test_byte_layout(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"w": np.array([[1.0, 2.0]])}, {"model_kind": "m", "config_hash": "h"})
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    version, hlen = struct.unpack_from("<II", blob, 8)
    assert version == FORMAT_VERSION
    off = 16 + hlen
    assert struct.unpack_from("<I", blob, off) == (1,)
    assert struct.unpack_from("<I", blob, off + 4) == (1,)
    assert blob[off + 8:off + 9] == b"w"
    assert struct.unpack_from("<I2Q2d", blob, off + 9) == (2, 1, 2, 1.0, 2.0)


def test_header_requires_kind_and_hash(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x", {}, {"model_kind": "cwi"})


@pytest.mark.parametrize("mutate", [
    lambda b: b"NOTACKPT" + b[8:],
    lambda b: b[:8] + struct.pack("<I", FORMAT_VERSION + 1) + b[12:],
    lambda b: b[:-5],
])
def test_foreign_or_damaged_files_raise_version_error(tmp_path, mutate):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"w": np.ones(4)}, {"model_kind": "m", "config_hash": "h"})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [2]}) == config_hash({"b": [2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


@pytest.mark.parametrize("kind", ["cwi", "cwi-attn", "msb-tiny"])
def test_model_checkpoint_reproduces_predictions(kind, tmp_path, corpus, tables, vocab):
    glove, fast = tables
    model = build_model(kind, corpus, glove=glove, fasttext=fast, vocab=vocab, use_crf=True)
    path = tmp_path / "m.ckpt"
    save_model(model, path, sorted({t for ex in corpus for t in ex.tokens}))
    loaded, header = load_model(path, expect_kind=kind)
    assert header["model_kind"] == kind
    assert loaded.predict(corpus[:4]) == model.predict(corpus[:4])
    a = model.loss(corpus[:3], training=False).item()
    b = loaded.loss(corpus[:3], training=False).item()
    assert a == b


def test_load_model_rejects_mismatch_unless_forced(tmp_path, corpus, vocab):
    model = build_model("msb-tiny", vocab=vocab)
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    with pytest.raises(VersionError):
        load_model(path, expect_kind="cwi")
    with pytest.raises(VersionError):
        load_model(path, expect_hash="0" * 16)
    load_model(path, expect_hash="0" * 16, force=True)
