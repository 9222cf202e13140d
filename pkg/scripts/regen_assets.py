#!/usr/bin/env python3
"""Regenerate the shipped assets (tokenizer corpus, default skeleton)
from the code constants.  Run after editing templates, caption rules,
activity prototypes, or the skeleton table."""

import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from posechat.body import default_tree, save_tree  # noqa: E402
from posechat.data.records import corpus_texts  # noqa: E402


def main():
    assets = ROOT / "src" / "posechat" / "assets"
    assets.mkdir(exist_ok=True)
    corpus = assets / "corpus.txt"
    with open(corpus, "w", encoding="utf-8") as f:
        for text in corpus_texts():
            f.write(text + "\n")
    save_tree(default_tree(), assets / "default_skeleton.txt")
    print(f"wrote {corpus}")
    print(f"wrote {assets / 'default_skeleton.txt'}")


if __name__ == "__main__":
    main()
