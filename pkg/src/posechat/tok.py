"""Word-level tokenizer over the closed template/caption corpus.

The vocabulary is small and fixed, so plain word tokens are enough and
keep the special-token positions trivially identifiable.  Reserved ids
0-7 are pinned: PAD, BOS, EOS, UNK, USER, ASSISTANT, OBS, POSE.  The
literal surfaces ``<obs>`` and ``<pose>`` in text map to the reserved
ids, which is how answers carry the pose placeholder.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .errors import ConfigError, EmptyCorpus

PAD, BOS, EOS, UNK, USER, ASSISTANT, OBS, POSE = range(8)

RESERVED_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>", "<user>", "<assistant>", "<obs>", "<pose>"]

MAX_VOCAB = 4096

_TOKEN_RE = re.compile(r"<[a-z]+>|[a-z0-9]+|[^\sa-z0-9<>]")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word / special / punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ConfigError("vocab must start with the reserved tokens")
        if len(self.tokens) > MAX_VOCAB:
            raise ConfigError(f"vocab size {len(self.tokens)} exceeds {MAX_VOCAB}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocab contains duplicate tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, t in enumerate(self.tokens):
                f.write(f"{i}\t{t}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                ident, _, token = line.partition("\t")
                if not token or int(ident) != len(tokens):
                    raise ConfigError(f"vocab file corrupt at line {lineno}")
                tokens.append(token)
        return cls(tokens)


def build_vocab(corpus_paths) -> Vocab:
    """Frequency-then-lexicographic vocabulary over text files.

    Reserved tokens keep ids 0-7 regardless of corpus content.
    """
    counts: dict[str, int] = {}
    seen_any = False
    for path in corpus_paths:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                for token in tokenize(line):
                    seen_any = True
                    if token in RESERVED_TOKENS:
                        continue
                    counts[token] = counts.get(token, 0) + 1
    if not seen_any:
        raise EmptyCorpus("corpus files contain no tokens")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(RESERVED_TOKENS + [t for t, _ in ordered])


def encode(text: str, vocab: Vocab) -> list[int]:
    """Token ids for text; unknown words map to UNK."""
    return [vocab.index.get(t, UNK) for t in tokenize(text)]


def decode(ids, vocab: Vocab) -> str:
    """Space-joined token surfaces (inverse of encode up to whitespace/case)."""
    return " ".join(vocab.tokens[i] for i in ids)
