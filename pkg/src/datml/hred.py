"""Hierarchical recurrent encoder-decoder with copy attention.

A word-level GRU encodes every context turn plus the user request; a
turn-level GRU summarizes them into the dialogue state. The decoder attends
over all context token states and mixes its vocabulary softmax with copied
attention mass through a learned gate (pointer-generator). Out-of-vocabulary
context tokens get temporary per-sample ids above the vocabulary so they can
be copied verbatim even when unseen in training.

Discrete latent codes, when enabled, enter as concatenated one-hots through
a linear projection added to the decoder's initial state; zeroing that
projection reproduces the latent-free model exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import compute as C
from .batching import TurnGridBatch, encode_turn_grid, pad_ids
from .compute import engine as T
from .compute.nn import EmbeddingTable, GRUCell, Linear
from .laed import code_to_onehot
from .vocab import Vocab


class LatentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HredConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    dropout: float = 0.3
    latents_enabled: bool = True
    y: int = 10
    k: int = 5

    @property
    def latent_dim(self) -> int:
        return 2 * self.y * self.k


@dataclass
class HredSample:
    """One training/eval record: predict the system turn from what precedes it."""

    domain: str
    ctx_turns: list            # token lists before the user request (may be empty)
    usr: list                  # user request tokens
    sys: list | None           # gold response tokens (None at generation time)
    z_usr: np.ndarray | None = None   # (y,) code
    z_sys: np.ndarray | None = None
    gold_entities: set = field(default_factory=set)


@dataclass
class HredBatch:
    grid: TurnGridBatch
    mem_ext_ids: np.ndarray    # (B, S) ids in the extended space
    mem_mask: np.ndarray       # (B, S)
    oov_lists: list            # per-sample surface forms for ids >= vocab_size
    n_ext: int
    zvec: np.ndarray | None    # (B, 2yk)
    dec_in: np.ndarray | None
    dec_tgt: np.ndarray | None # extended-space targets
    dec_mask: np.ndarray | None

    @property
    def size(self) -> int:
        return self.grid.size


def build_batch(samples: list[HredSample], vocab: Vocab, cfg: HredConfig) -> HredBatch:
    if not samples:
        raise ValueError("empty batch")
    turn_lists = [list(s.ctx_turns) + [list(s.usr)] for s in samples]
    grid = encode_turn_grid(turn_lists, vocab)
    b, tt, tw = grid.ids.shape
    v = cfg.vocab_size

    mem_ext = grid.ids.reshape(b, tt * tw).astype(np.int64).copy()
    mem_mask = grid.token_mask.reshape(b, tt * tw)
    oov_lists = []
    for i, turns in enumerate(turn_lists):
        oov: dict[str, int] = {}
        flat_pos = 0
        for j in range(tt):
            toks = turns[j] if j < len(turns) else []
            for t_idx in range(tw):
                if t_idx < len(toks):
                    tok = toks[t_idx]
                    if vocab.index.get(tok, vocab.unk) == vocab.unk and tok != "<unk>":
                        if tok not in oov:
                            oov[tok] = v + len(oov)
                        mem_ext[i, flat_pos] = oov[tok]
                flat_pos += 1
        oov_lists.append(list(oov))
    n_ext = max((len(o) for o in oov_lists), default=0)

    zvec = None
    if cfg.latents_enabled:
        missing = [s for s in samples if s.z_usr is None or s.z_sys is None]
        if missing:
            raise LatentConfigError("latents_enabled but sample lacks z_usr/z_sys codes")
        zu = np.stack([np.asarray(s.z_usr) for s in samples])
        zs = np.stack([np.asarray(s.z_sys) for s in samples])
        zvec = np.concatenate(
            [code_to_onehot(zu, cfg.y, cfg.k), code_to_onehot(zs, cfg.y, cfg.k)], axis=1
        )
    else:
        if any(s.z_usr is not None or s.z_sys is not None for s in samples):
            raise LatentConfigError("latent codes supplied but latents are disabled")

    dec_in = dec_tgt = dec_mask = None
    if all(s.sys is not None for s in samples):
        if any(not s.sys for s in samples):
            raise ValueError("gold response must be non-empty")
        ins, tgts = [], []
        for i, s in enumerate(samples):
            ids = vocab.encode(s.sys)
            ext = dict(zip(oov_lists[i], range(v, v + len(oov_lists[i]))))
            tgt = [ext.get(tok, vid) if vid == vocab.unk else vid for tok, vid in zip(s.sys, ids)]
            ins.append([vocab.bos] + ids)
            tgts.append(tgt + [vocab.eos])
        dec_in, _ = pad_ids(ins, vocab.pad)
        dec_tgt, dec_mask = pad_ids(tgts, vocab.pad)
        dec_tgt = dec_tgt.astype(np.int64)
    return HredBatch(grid, mem_ext, mem_mask, oov_lists, n_ext, zvec, dec_in, dec_tgt, dec_mask)


@dataclass
class DecoderStep:
    """Distributions produced at one decoding position."""

    vocab_dist: "T.Tensor"     # (B, V)
    copy_positions: "T.Tensor" # (B, S) attention over context tokens
    p_gen: "T.Tensor"          # (B, 1)
    mixed: "T.Tensor"          # (B, V + n_ext)


class HredModel:
    def __init__(self, cfg: HredConfig, seed: int = 0):
        self.cfg = cfg
        self.params = C.ParamSet()
        rng = np.random.default_rng(seed)
        v, e, h = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim
        self.emb = EmbeddingTable(self.params, "emb", v, e, rng)
        self.word = GRUCell(self.params, "word", e, h, rng)
        self.ctx = GRUCell(self.params, "ctx", h, h, rng)
        self.dec = GRUCell(self.params, "dec", e, h, rng)
        self.att = Linear(self.params, "att", h, h, rng, bias=False)
        self.comb = Linear(self.params, "comb", 2 * h, h, rng)
        self.out = Linear(self.params, "out", h, v, rng)
        self.gate = Linear(self.params, "gate", 2 * h + e, 1, rng)
        self.init_enc = Linear(self.params, "init_enc", h, h, rng)
        # created last so earlier draws match a latent-free model with the same seed
        self.init_lat = Linear(self.params, "init_lat", cfg.latent_dim, h, rng, bias=False) if cfg.latents_enabled else None

    def load_params(self, ps: C.ParamSet) -> None:
        self.params.check_compatible(ps)
        self.params = ps

    # -- encoding ------------------------------------------------------

    def encode(self, params, batch: HredBatch, rng=None, training=False):
        """Returns (decoder init state h0, memory states, transposed keys)."""
        cfg = self.cfg
        b, tt, tw = batch.grid.ids.shape
        h = cfg.hidden_dim
        emb = self.emb(params, batch.grid.ids.reshape(b * tt, tw))
        if training and cfg.dropout > 0:
            emb = C.dropout(emb, cfg.dropout, rng, training=True)
        from .compute.nn import run_gru

        hw, word_states = run_gru(
            self.word, params, emb, batch.grid.token_mask.reshape(b * tt, tw), collect_states=True
        )
        turns = T.reshape(hw, (b, tt, h))
        hc, _ = run_gru(self.ctx, params, turns, batch.grid.turn_mask)
        mem = T.reshape(word_states, (b, tt * tw, h))
        pre = self.init_enc(params, hc)
        if cfg.latents_enabled:
            if batch.zvec is None:
                raise LatentConfigError("latents_enabled but batch has no codes")
            pre = T.add(pre, T.matmul(C.Tensor(batch.zvec.astype(pre.data.dtype)), params[self.init_lat.w]))
        h0 = T.tanh(pre)
        keys_t = T.swap12(T.reshape(self.att(params, T.reshape(mem, (b * tt * tw, h))), (b, tt * tw, h)))
        return h0, mem, keys_t

    # -- one decoder position ------------------------------------------

    def copy_distribution(
        self,
        params,
        state: "T.Tensor",
        mem: "T.Tensor",
        keys_t: "T.Tensor",
        mem_mask: np.ndarray,
        mem_ext_ids: np.ndarray,
        emb_t: "T.Tensor",
        n_ext: int,
        force_p_gen: float | None = None,
    ) -> DecoderStep:
        """Attention over context tokens blended with the vocab softmax."""
        cfg = self.cfg
        b, s = mem_mask.shape
        scores = T.reshape(T.bmm(T.reshape(state, (b, 1, cfg.hidden_dim)), keys_t), (b, s))
        neg = C.Tensor(((1.0 - mem_mask) * -1e9).astype(scores.data.dtype))
        attn = C.softmax(T.add(scores, neg))
        ctxv = T.reshape(T.bmm(T.reshape(attn, (b, 1, s)), mem), (b, cfg.hidden_dim))
        combined = T.tanh(self.comb(params, T.concat([state, ctxv], axis=1)))
        vocab_dist = C.softmax(self.out(params, combined))
        if force_p_gen is None:
            p_gen = T.sigmoid(self.gate(params, T.concat([state, ctxv, emb_t], axis=1)))
        else:
            p_gen = C.Tensor(np.full((b, 1), force_p_gen, dtype=vocab_dist.data.dtype))
        copy = C.scatter_probs(attn, mem_ext_ids, cfg.vocab_size + n_ext)
        if n_ext:
            zeros = C.Tensor(np.zeros((b, n_ext), dtype=vocab_dist.data.dtype))
            vocab_padded = T.concat([vocab_dist, zeros], axis=1)
        else:
            vocab_padded = vocab_dist
        mixed = T.add(T.mul(p_gen, vocab_padded), T.mul(T.sub(1.0, p_gen), copy))
        return DecoderStep(vocab_dist, attn, p_gen, mixed)

    # -- losses ---------------------------------------------------------

    def loss_batch(self, params, batch: HredBatch, rng=None, training=False,
                   force_p_gen: float | None = None):
        """Mean per-token NLL of the gold responses under teacher forcing."""
        if batch.dec_in is None:
            raise ValueError("batch has no gold responses")
        cfg = self.cfg
        h0, mem, keys_t = self.encode(params, batch, rng, training)
        b, l = batch.dec_in.shape
        demb = self.emb(params, batch.dec_in)
        if training and cfg.dropout > 0:
            demb = C.dropout(demb, cfg.dropout, rng, training=True)
        xa = T.reshape(
            self.dec.input_proj(params, T.reshape(demb, (b * l, cfg.embed_dim))), (b, l, 3 * cfg.hidden_dim)
        )
        h = h0
        acc = None
        for t in range(l):
            xt = T.reshape(T.narrow(xa, 1, t, 1), (b, 3 * cfg.hidden_dim))
            h = self.dec.step_pre(params, xt, h)
            et = T.reshape(T.narrow(demb, 1, t, 1), (b, cfg.embed_dim))
            step = self.copy_distribution(
                params, h, mem, keys_t, batch.mem_mask, batch.mem_ext_ids, et, batch.n_ext, force_p_gen
            )
            lp = T.log(C.gather_rows(step.mixed, batch.dec_tgt[:, t]), floor=1e-12)
            lp = T.mul(lp, C.tensor(batch.dec_mask[:, t]))
            acc = lp if acc is None else T.add(acc, lp)
        total = float(batch.dec_mask.sum())
        return T.scale(T.neg(T.sum_all(acc)), 1.0 / total)

    def token_stats(self, params, batch: HredBatch) -> tuple[int, int]:
        """Teacher-forced argmax (correct, total) over the mixed distribution."""
        cfg = self.cfg
        with C.no_grad():
            h0, mem, keys_t = self.encode(params, batch)
            b, l = batch.dec_in.shape
            demb = self.emb(params, batch.dec_in)
            xa = T.reshape(
                self.dec.input_proj(params, T.reshape(demb, (b * l, cfg.embed_dim))),
                (b, l, 3 * cfg.hidden_dim),
            )
            h = h0
            correct = total = 0
            for t in range(l):
                xt = T.reshape(T.narrow(xa, 1, t, 1), (b, 3 * cfg.hidden_dim))
                h = self.dec.step_pre(params, xt, h)
                et = T.reshape(T.narrow(demb, 1, t, 1), (b, cfg.embed_dim))
                step = self.copy_distribution(
                    params, h, mem, keys_t, batch.mem_mask, batch.mem_ext_ids, et, batch.n_ext
                )
                pred = step.mixed.data.argmax(axis=-1)
                m = batch.dec_mask[:, t].astype(bool)
                correct += int((pred[m] == batch.dec_tgt[:, t][m]).sum())
                total += int(m.sum())
        return correct, total

    # -- generation ------------------------------------------------------

    def generate_batch(self, params, batch: HredBatch, vocab: Vocab, max_len: int :=_ = None, max_length: int = 30):
        raise NotImplementedError

    def generate_ids(self, params, batch: HredBatch, vocab: Vocab, max_len: int = 30):
        """Greedy decode; returns per-sample extended-id lists (no EOS)."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        cfg = self.cfg
        b = batch.size
        with C.no_grad():
            h0, mem, keys_t = self.encode(params, batch)
            h = h0
            cur = np.full(b, vocab.bos, dtype=np.int64)
            done = np.zeros(b, dtype=bool)
            outputs = [[] for _ in range(b)]
            for _ in range(max_len):
                emb_t = self.emb(params, cur)
                h = self.dec.step(params, emb_t, h)
                step = self.copy_distribution(
                    params, h, mem, keys_t, batch.mem_mask, batch.mem_ext_ids, emb_t, batch.n_ext
                )
                nxt = step.mixed.data.argmax(axis=-1)
                for i in range(b):
                    if not done[i]:
                        if nxt[i] == vocab.eos:
                            done[i] = True
                        else:
                            outputs[i].append(int(nxt[i]))
                if done.all():
                    break
                # OOV copies feed the unknown embedding on the next step
                cur = np.where(nxt >= cfg.vocab_size, vocab.unk, nxt)
                cur = np.where(done, vocab.eos, cur)
        return outputs

    def ids_to_tokens(self, ids: list[int], oov_list: list, vocab: Vocab) -> list[str]:
        v = self.cfg.vocab_size
        return [vocab.tokens[i] if i < v else oov_list[i - v] for i in ids]


# ---------------------------------------------------------------------------
# module-level spec operations


def hred_loss(
    model: HredModel,
    context_turns,
    user_tokens,
    gold_tokens,
    vocab: Vocab,
    z_usr=None,
    z_sys=None,
    rng=None,
    training: bool = False,
    params=None,
) -> "T.Tensor":
    """Teacher-forced mean NLL for a single dialogue position."""
    cfg = model.cfg
    if cfg.latents_enabled and (z_usr is None or z_sys is None):
        raise LatentConfigError("model expects latent codes")
    if not cfg.latents_enabled and (z_usr is not None or z_sys is not None):
        raise LatentConfigError("model does not take latent codes")
    zu = np.asarray(z_usr.values if hasattr(z_usr, "values") else z_usr) if z_usr is not None else None
    zs = np.asarray(z_sys.values if hasattr(z_sys, "values") else z_sys) if z_sys is not None else None
    sample = HredSample("", list(context_turns), list(user_tokens), list(gold_tokens), zu, zs)
    batch = build_batch([sample], vocab, cfg)
    return model.loss_batch(params or model.params, batch, rng=rng, training=training)


def generate_response(
    model: HredModel,
    context_turns,
    user_tokens,
    vocab: Vocab,
    z_usr=None,
    z_sys=None,
    max_len: int = 30,
    params=None,
) -> list[str]:
    """Greedy response tokens for one dialogue position."""
    cfg = model.cfg
    zu = np.asarray(z_usr.values if hasattr(z_usr, "values") else z_usr) if z_usr is not None else None
    zs = np.asarray(z_sys.values if hasattr(z_sys, "values") else z_sys) if z_sys is not None else None
    sample = HredSample("", list(context_turns), list(user_tokens), None, zu, zs)
    batch = build_batch([sample], vocab, cfg)
    ids = model.generate_ids(params or model.params, batch, vocab, max_len)[0]
    return model.ids_to_tokens(ids, batch.oov_lists[0], vocab)
