"""Multimodal named-entity recognition: character-word-image CRF tagger and a
small multimodal transformer, on a self-contained autodiff core."""

__version__ = "0.1.0"
