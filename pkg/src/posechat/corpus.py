"""Shipped corpus asset and the default vocabulary built from it."""

from __future__ import annotations

from importlib import resources

from .tok import Vocab, build_vocab


def corpus_path():
    return resources.files("posechat.assets").joinpath("corpus.txt")


def default_vocab() -> Vocab:
    with resources.as_file(corpus_path()) as path:
        return build_vocab([path])
