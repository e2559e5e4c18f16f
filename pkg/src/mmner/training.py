"""Model construction by selector name, the training loop, and model checkpoints."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, config_hash, load_checkpoint, save_checkpoint
from .cwi import CwiConfig, CwiModel, ImageVocab, WordLookup
from .errors import ConfigError, VersionError
from .metrics import evaluate
from .msb import MsbConfig, MsbModel
from .seqdata import EmbeddingTable

log = logging.getLogger(__name__)

MODEL_KINDS = ("cwi", "cwi-attn", "msb-tiny", "msb-small")


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


def model_config(kind: str, use_crf: bool = False, seed: int = 0, overrides: dict | None = None,
                 vocab_size: int | None = None):
    overrides = dict(overrides or {})
    if kind in ("cwi", "cwi-attn"):
        cfg = CwiConfig(use_attention=(kind == "cwi-attn"), seed=seed)
    elif kind in ("msb-tiny", "msb-small"):
        preset = MsbConfig.tiny if kind == "msb-tiny" else MsbConfig.small
        cfg = preset(use_crf=use_crf, seed=seed)
        if vocab_size is not None:
            cfg.vocab_size = vocab_size
    else:
        raise ConfigError(f"unknown model {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"{kind} has no setting {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool) and isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, (int, float)) and not isinstance(current, bool) and isinstance(value, str):
            value = type(current)(value)
        setattr(cfg, key, value)
    if isinstance(cfg, MsbConfig):
        cfg.__post_init__()
    return cfg


def build_model(kind: str, train_examples=(), *, glove: EmbeddingTable | None = None,
                fasttext: EmbeddingTable | None = None, vocab=None, use_crf: bool = False,
                seed: int = 0, overrides: dict | None = None):
    """Construct a fresh model for selector ``kind``."""
    if kind.startswith("msb"):
        if vocab is None:
            raise ConfigError("msb models need a subword vocabulary")
        cfg = model_config(kind, use_crf, seed, overrides, vocab_size=len(vocab))
        model = MsbModel(cfg, vocab)
    else:
        cfg = model_config(kind, use_crf, seed, overrides)
        glove = glove or EmbeddingTable(cfg.glove_dim, seed=seed)
        fasttext = fasttext or EmbeddingTable(cfg.fasttext_dim, seed=seed)
        images = ImageVocab(n_classes=cfg.image_classes)
        for ex in train_examples:
            for label, _ in ex.image_words:
                images.add(label)
        model = CwiModel(cfg, WordLookup(glove, fasttext), images)
    model.selector = kind
    return model


def predict_batched(model, examples, batch_size: int = 32) -> list:
    out = []
    for i in range(0, len(examples), batch_size):
        out.extend(model.predict(examples[i:i + batch_size]))
    return out


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_f1: float | None
    dev_f1: float | None


def train(model, train_set, dev_set=None, *, epochs: int = 10, lr: float = 8e-5,
          batch_size: int = 8, seed: int = 0, betas=(0.9, 0.999), eps: float = 1e-8,
          eval_train: bool = True, on_epoch=None) -> list:
    """Adam over shuffled mini-batches; returns one EpochLog per epoch."""
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr, betas[0], betas[1], eps)
    history = []
    n = len(train_set)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            batch = [train_set[i] for i in order[start:start + batch_size]]
            opt.zero_grad()
            loss = model.loss(batch, training=True, rng=rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch "
                                    f"{batches}; first ids: {[ex.id for ex in batch[:3]]}")
            loss.backward()
            opt.step()
            total += value
            batches += 1
        train_f1 = dev_f1 = None
        if eval_train:
            train_f1 = evaluate([ex.tags for ex in train_set],
                                predict_batched(model, train_set, batch_size * 4)).f1
        if dev_set:
            dev_f1 = evaluate([ex.tags for ex in dev_set],
                              predict_batched(model, dev_set, batch_size * 4)).f1
        entry = EpochLog(epoch, total / max(batches, 1), train_f1, dev_f1)
        history.append(entry)
        log.info("epoch %d loss %.6f train_f1 %s dev_f1 %s", epoch, entry.loss, train_f1, dev_f1)
        if on_epoch is not None:
            on_epoch(entry)
    return history


# -- checkpoints ----------------------------------------------------------
def save_model(model, path, tokens=(), extra_header: dict | None = None):
    cfg = model.config.to_dict()
    meta, buffers = model.extra_state(tokens)
    header = {"model_kind": model.selector, "config": cfg, "config_hash": config_hash(cfg),
              "meta": meta, **(extra_header or {})}
    tensors = dict(model.state_dict())
    tensors.update(buffers)
    save_checkpoint(path, tensors, header)


def load_model(path, expect_kind: str | None = None, expect_hash: str | None = None,
               force: bool = False):
    header, tensors = load_checkpoint(path)
    kind = header["model_kind"]
    if expect_kind is not None and expect_kind != kind and not force:
        raise VersionError(f"checkpoint holds a {kind} model, {expect_kind} requested")
    if config_hash(header["config"]) != header["config_hash"]:
        raise VersionError("checkpoint config does not match its recorded hash")
    if expect_hash is not None and expect_hash != header["config_hash"] and not force:
        raise VersionError(f"config hash {expect_hash} != checkpoint {header['config_hash']}")
    buffers = {k: v for k, v in tensors.items() if k.startswith("buffer.")}
    params = {k: v for k, v in tensors.items() if not k.startswith("buffer.")}
    if kind.startswith("msb"):
        model = MsbModel.from_state(MsbConfig.from_dict(header["config"]), header["meta"], buffers)
    elif kind.startswith("cwi"):
        model = CwiModel.from_state(CwiConfig.from_dict(header["config"]), header["meta"], buffers)
    else:
        raise VersionError(f"unknown model kind {kind!r} in checkpoint")
    model.selector = kind
    model.load_state_dict(params)
    return model, header
