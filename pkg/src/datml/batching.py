"""Padding and id-array assembly shared by the latent models and the HRED."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import Vocab


@dataclass
class UtteranceBatch:
    """Encoder + teacher-forcing arrays for a batch of utterances."""

    ids: np.ndarray        # (B, T) int32
    mask: np.ndarray       # (B, T) float32
    dec_in: np.ndarray     # (B, L) int32, BOS-shifted
    dec_tgt: np.ndarray    # (B, L) int32, ends with EOS
    dec_mask: np.ndarray   # (B, L) float32

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def token_count(self) -> float:
        return float(self.dec_mask.sum())


def pad_ids(seqs: list[list[int]], pad: int) -> tuple[np.ndarray, np.ndarray]:
    b = len(seqs)
    t = max(1, max((len(s) for s in seqs), default=1))
    ids = np.full((b, t), pad, dtype=np.int32)
    mask = np.zeros((b, t), dtype=np.float32)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def encode_utterances(token_lists: list[list[str]], vocab: Vocab) -> UtteranceBatch:
    if not token_lists:
        raise ValueError("empty batch")
    enc = [vocab.encode(t) or [vocab.pad] for t in token_lists]
    ids, mask = pad_ids(enc, vocab.pad)
    dec_in_seqs = [[vocab.bos] + s for s in enc]
    dec_tgt_seqs = [s + [vocab.eos] for s in enc]
    dec_in, _ = pad_ids(dec_in_seqs, vocab.pad)
    dec_tgt, dec_mask = pad_ids(dec_tgt_seqs, vocab.pad)
    return UtteranceBatch(ids, mask, dec_in, dec_tgt, dec_mask)


@dataclass
class TurnGridBatch:
    """(B, turns, tokens) id grid for hierarchical encoders."""

    ids: np.ndarray        # (B, Tt, Tw) int32
    token_mask: np.ndarray # (B, Tt, Tw) float32
    turn_mask: np.ndarray  # (B, Tt) float32

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def encode_turn_grid(turn_lists: list[list[list[str]]], vocab: Vocab) -> TurnGridBatch:
    """Pad a batch of turn sequences (each turn a token list)."""
    if not turn_lists:
        raise ValueError("empty batch")
    b = len(turn_lists)
    tt = max(1, max(len(turns) for turns in turn_lists))
    tw = 1
    enc = []
    for turns in turn_lists:
        rows = [vocab.encode(t) or [vocab.pad] for t in turns]
        enc.append(rows)
        for r in rows:
            tw = max(tw, len(r))
    ids = np.full((b, tt, tw), vocab.pad, dtype=np.int32)
    token_mask = np.zeros((b, tt, tw), dtype=np.float32)
    turn_mask = np.zeros((b, tt), dtype=np.float32)
    for i, rows in enumerate(enc):
        for j, r in enumerate(rows):
            ids[i, j, : len(r)] = r
            token_mask[i, j, : len(r)] = 1.0
            turn_mask[i, j] = 1.0
    return TurnGridBatch(ids, token_mask, turn_mask)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index minibatches covering range(n) once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
