"""Token vocabulary with reserved specials and an unknown fallback."""

from __future__ import annotations

import json

from .corpus import BOS, EOS, PAD, SPECIALS, UNK


class Vocab:
    def __init__(self, tokens: list[str]):
        if list(tokens[: len(SPECIALS)]) != list(SPECIALS):
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad = self.index[PAD]
        self.unk = self.index[UNK]
        self.bos = self.index[BOS]
        self.eos = self.index[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.unk
        return [self.index.get(t, unk) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.tokens, f)

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path) as f:
            return cls(json.load(f))


def build_vocab(token_streams) -> Vocab:
    """Vocabulary over every token seen, in first-seen order after specials."""
    seen = dict()
    for stream in token_streams:
        for tok in stream:
            if tok not in seen:
                seen[tok] = None
    return Vocab(list(SPECIALS) + [t for t in seen if t not in SPECIALS])
