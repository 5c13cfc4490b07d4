"""Discrete latent action models.

Two variational models map utterances to codes of ``y`` categorical
variables over ``k`` values each: one reconstructs the utterance from its
code, the other (skip-thought style) predicts the neighbouring utterances.
A hierarchical predictor learns to guess the system-side code from the
dialogue context plus the user request, so the code is available before the
response exists.

Training uses straight-through Gumbel sampling at temperature 1; the "soft"
mode computes the exact expectation over latent assignments by enumeration
(tractable for small k**y) and exists for analysis and verification. The KL
term compares the batch-mean posterior against a uniform prior (batch prior
regularization).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import compute as C
from .batching import TurnGridBatch, UtteranceBatch, encode_turn_grid, encode_utterances, minibatches
from .compute import engine as T
from .compute.nn import EmbeddingTable, GRUCell, Linear, run_gru
from .corpus import PAD, Dialogue
from .vocab import Vocab

ENUM_LIMIT = 512


@dataclass
class LatentCode:
    values: np.ndarray  # (y,) ints in [0, k)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)

    def validate(self, y: int, k: int) -> None:
        if self.values.shape != (y,):
            raise ValueError(f"code has shape {self.values.shape}, expected ({y},)")
        if self.values.min() < 0 or self.values.max() >= k:
            raise ValueError("code entries out of range")


@dataclass
class LatentPosterior:
    dists: np.ndarray  # (y, k), each row sums to 1

    def validate(self) -> None:
        sums = self.dists.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError("posterior rows must sum to 1")


@dataclass(frozen=True)
class LaedConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    y: int = 10
    k: int = 5
    dropout: float = 0.3

    @property
    def code_dim(self) -> int:
        return self.y * self.k


def code_to_onehot(codes: np.ndarray, y: int, k: int) -> np.ndarray:
    """(B, y) int codes -> (B, y*k) concatenated one-hots."""
    return C.one_hot(codes, k).reshape(codes.shape[0], y * k)


class _DecoderHead:
    """GRU decoder conditioned on a code vector through its initial state."""

    def __init__(self, ps, name, cfg: LaedConfig, rng):
        self.cfg = cfg
        self.init = Linear(ps, f"{name}.init", cfg.code_dim, cfg.hidden_dim, rng)
        self.cell = GRUCell(ps, f"{name}.gru", cfg.embed_dim, cfg.hidden_dim, rng)
        self.out = Linear(ps, f"{name}.out", cfg.hidden_dim, cfg.vocab_size, rng)

    def nll(self, ps, emb_table, code_vec, dec_in, dec_tgt, dec_mask, rng=None, training=False):
        """Per-sample teacher-forced NLL, shape (B,)."""
        b, l = dec_in.shape
        cfg = self.cfg
        emb = emb_table(ps, dec_in)
        if training and cfg.dropout > 0:
            emb = C.dropout(emb, cfg.dropout, rng, training=True)
        xa = T.reshape(
            self.cell.input_proj(ps, T.reshape(emb, (b * l, cfg.embed_dim))), (b, l, 3 * cfg.hidden_dim)
        )
        h = T.tanh(self.init(ps, code_vec))
        acc = None
        for t in range(l):
            xt = T.reshape(T.narrow(xa, 1, t, 1), (b, 3 * cfg.hidden_dim))
            h = self.cell.step_pre(ps, xt, h)
            lp = C.gather_rows(C.log_softmax(self.out(ps, h)), dec_tgt[:, t])
            lp = T.mul(lp, C.tensor(dec_mask[:, t]))
            acc = lp if acc is None else T.add(acc, lp)
        return T.neg(acc)


class _Recognizer:
    def __init__(self, ps, name, cfg: LaedConfig, rng):
        self.cfg = cfg
        self.emb = EmbeddingTable(ps, f"{name}.emb", cfg.vocab_size, cfg.embed_dim, rng)
        self.cell = GRUCell(ps, f"{name}.gru", cfg.embed_dim, cfg.hidden_dim, rng)
        self.head = Linear(ps, f"{name}.head", cfg.hidden_dim, cfg.code_dim, rng)

    def logits(self, ps, ids, mask, rng=None, training=False):
        emb = self.emb(ps, ids)
        if training and self.cfg.dropout > 0:
            emb = C.dropout(emb, self.cfg.dropout, rng, training=True)
        h, _ = run_gru(self.cell, ps, emb, mask)
        return T.reshape(self.head(ps, h), (ids.shape[0], self.cfg.y, self.cfg.k))


def _st_sample(logits, rng) -> "T.Tensor":
    """Straight-through hard Gumbel sample: (B, y, k) logits -> (B, y*k)."""
    b, y, k = logits.data.shape
    flat = T.reshape(logits, (b * y, k))
    hard = C.gumbel_softmax(flat, temperature=1.0, rng=rng, hard=True)
    return T.reshape(hard, (b, y * k))


def _assignment_weight(post, assignment, b, y):
    """Product over variables of posterior mass at the assignment, shape (B,)."""
    w = None
    for i, v in enumerate(assignment):
        pi = T.reshape(T.narrow(post, 1, i, 1), (b, post.data.shape[2]))
        wi = C.gather_rows(pi, np.full(b, v))
        w = wi if w is None else T.mul(w, wi)
    return w


def _kl_to_uniform(post_mean):
    y, k = post_mean.data.shape
    uniform = np.full((y, k), 1.0 / k, dtype=np.float64 if post_mean.data.dtype == np.float64 else np.float32)
    return C.kl_categorical(post_mean, C.Tensor(uniform))


class DiVae:
    """Utterance autoencoder with a discrete code."""

    kind = "divae"

    def __init__(self, cfg: LaedConfig, seed: int = 0):
        self.cfg = cfg
        self.params = C.ParamSet()
        rng = np.random.default_rng(seed)
        self.rec = _Recognizer(self.params, "rec", cfg, rng)
        self.dec = _DecoderHead(self.params, "dec", cfg, rng)

    def load_params(self, ps: C.ParamSet) -> None:
        self.params.check_compatible(ps)
        self.params = ps

    def posterior(self, batch: UtteranceBatch, params=None):
        ps = params or self.params
        return C.softmax(self.rec.logits(ps, batch.ids, batch.mask))

    def reconstruction_nll(self, batch: UtteranceBatch, codes: np.ndarray, params=None) -> np.ndarray:
        """Per-sample NLL of the batch under fixed hard codes (B, y)."""
        ps = params or self.params
        with C.no_grad():
            vec = C.Tensor(code_to_onehot(codes, self.cfg.y, self.cfg.k))
            nll = self.dec.nll(ps, self.rec.emb, vec, batch.dec_in, batch.dec_tgt, batch.dec_mask)
        return nll.data

    def loss(self, batch: UtteranceBatch, rng=None, mode: str = "hard", training: bool = False, params=None):
        """Reconstruction NLL (mean per token) + KL(batch posterior || uniform)."""
        if batch.size == 0:
            raise ValueError("empty batch")
        ps = params or self.params
        cfg = self.cfg
        logits = self.rec.logits(ps, batch.ids, batch.mask, rng, training)
        post = C.softmax(logits)
        total_tokens = batch.token_count
        if mode == "hard":
            vec = _st_sample(logits, rng)
            nll = self.dec.nll(ps, self.rec.emb, vec, batch.dec_in, batch.dec_tgt, batch.dec_mask, rng, training)
            recon = T.scale(T.sum_all(nll), 1.0 / total_tokens)
        elif mode == "soft":
            if cfg.k ** cfg.y > ENUM_LIMIT:
                raise ValueError(f"soft mode enumerates k**y assignments; {cfg.k}**{cfg.y} is too large")
            b = batch.size
            acc = None
            for assignment in product(range(cfg.k), repeat=cfg.y):
                codes = np.tile(np.asarray(assignment), (b, 1))
                vec = C.Tensor(code_to_onehot(codes, cfg.y, cfg.k).astype(post.data.dtype))
                nll = self.dec.nll(ps, self.rec.emb, vec, batch.dec_in, batch.dec_tgt, batch.dec_mask, rng, training)
                w = _assignment_weight(post, assignment, b, cfg.y)
                term = T.sum_all(T.mul(w, nll))
                acc = term if acc is None else T.add(acc, term)
            recon = T.scale(acc, 1.0 / total_tokens)
        else:
            raise ValueError(f"unknown mode '{mode}'")
        kl = _kl_to_uniform(T.mean_axis(post, 0))
        return T.add(recon, kl)

    def recognize_batch(self, batch: UtteranceBatch, params=None) -> np.ndarray:
        ps = params or self.params
        with C.no_grad():
            logits = self.rec.logits(ps, batch.ids, batch.mask)
        return logits.data.argmax(axis=-1)

    def recon_accuracy(self, batch: UtteranceBatch, params=None) -> float:
        """Teacher-forced token accuracy with greedy codes (no sampling)."""
        ps = params or self.params
        cfg = self.cfg
        with C.no_grad():
            codes = self.recognize_batch(batch, ps)
            vec = C.Tensor(code_to_onehot(codes, cfg.y, cfg.k))
            b, l = batch.dec_in.shape
            emb = self.rec.emb(ps, batch.dec_in)
            xa = T.reshape(
                self.dec.cell.input_proj(ps, T.reshape(emb, (b * l, cfg.embed_dim))),
                (b, l, 3 * cfg.hidden_dim),
            )
            h = T.tanh(self.dec.init(ps, vec))
            correct = total = 0.0
            for t in range(l):
                xt = T.reshape(T.narrow(xa, 1, t, 1), (b, 3 * cfg.hidden_dim))
                h = self.dec.cell.step_pre(ps, xt, h)
                pred = self.dec.out(ps, h).data.argmax(axis=-1)
                m = batch.dec_mask[:, t]
                correct += float(((pred == batch.dec_tgt[:, t]) * m).sum())
                total += float(m.sum())
        return correct / max(total, 1.0)


@dataclass
class TripleBatch:
    """Middle utterances with teacher-forcing arrays for both neighbours."""

    x: UtteranceBatch
    prev: UtteranceBatch
    next: UtteranceBatch

    @property
    def size(self) -> int:
        return self.x.size


def encode_triples(triples, vocab: Vocab) -> TripleBatch:
    prevs, mids, nexts = zip(*triples)
    return TripleBatch(
        x=encode_utterances(list(mids), vocab),
        prev=encode_utterances(list(prevs), vocab),
        next=encode_utterances(list(nexts), vocab),
    )


class DiVst:
    """Skip-thought flavoured variant: the code predicts both neighbours."""

    kind = "divst"

    def __init__(self, cfg: LaedConfig, seed: int = 0):
        self.cfg = cfg
        self.params = C.ParamSet()
        rng = np.random.default_rng(seed)
        self.rec = _Recognizer(self.params, "rec", cfg, rng)
        self.dec_prev = _DecoderHead(self.params, "dec_prev", cfg, rng)
        self.dec_next = _DecoderHead(self.params, "dec_next", cfg, rng)

    def load_params(self, ps: C.ParamSet) -> None:
        self.params.check_compatible(ps)
        self.params = ps

    def posterior(self, batch: TripleBatch, params=None):
        ps = params or self.params
        return C.softmax(self.rec.logits(ps, batch.x.ids, batch.x.mask))

    def neighbour_nll(self, batch: TripleBatch, codes: np.ndarray, directions=("prev", "next"), params=None) -> np.ndarray:
        ps = params or self.params
        with C.no_grad():
            vec = C.Tensor(code_to_onehot(codes, self.cfg.y, self.cfg.k))
            total = np.zeros(batch.size, dtype=np.float64)
            for name in directions:
                dec = self.dec_prev if name == "prev" else self.dec_next
                side = batch.prev if name == "prev" else batch.next
                nll = dec.nll(ps, self.rec.emb, vec, side.dec_in, side.dec_tgt, side.dec_mask)
                total += nll.data / side.token_count
        return total

    def loss(self, batch: TripleBatch, rng=None, mode: str = "hard",
             directions=("prev", "next"), training: bool = False, params=None):
        """Sum of per-token-mean neighbour NLLs plus the uniform-prior KL.

        ``directions`` restricts the reconstruction terms (test hook); the
        two log-likelihood terms are summed.
        """
        if batch.size == 0:
            raise ValueError("empty batch")
        ps = params or self.params
        cfg = self.cfg
        logits = self.rec.logits(ps, batch.x.ids, batch.x.mask, rng, training)
        post = C.softmax(logits)
        sides = []
        for name in directions:
            dec = self.dec_prev if name == "prev" else self.dec_next
            side = batch.prev if name == "prev" else batch.next
            sides.append((dec, side))
        if mode == "hard":
            vec = _st_sample(logits, rng)
            recon = None
            for dec, side in sides:
                nll = dec.nll(ps, self.rec.emb, vec, side.dec_in, side.dec_tgt, side.dec_mask, rng, training)
                term = T.scale(T.sum_all(nll), 1.0 / side.token_count)
                recon = term if recon is None else T.add(recon, term)
        elif mode == "soft":
            if cfg.k ** cfg.y > ENUM_LIMIT:
                raise ValueError(f"soft mode enumerates k**y assignments; {cfg.k}**{cfg.y} is too large")
            b = batch.size
            recon = None
            for assignment in product(range(cfg.k), repeat=cfg.y):
                codes = np.tile(np.asarray(assignment), (b, 1))
                vec = C.Tensor(code_to_onehot(codes, cfg.y, cfg.k).astype(post.data.dtype))
                w = _assignment_weight(post, assignment, b, cfg.y)
                for dec, side in sides:
                    nll = dec.nll(ps, self.rec.emb, vec, side.dec_in, side.dec_tgt, side.dec_mask, rng, training)
                    term = T.scale(T.sum_all(T.mul(w, nll)), 1.0 / side.token_count)
                    recon = term if recon is None else T.add(recon, term)
        else:
            raise ValueError(f"unknown mode '{mode}'")
        kl = _kl_to_uniform(T.mean_axis(post, 0))
        return T.add(recon, kl)

    def recognize_batch(self, batch_or_utts, vocab: Vocab | None = None, params=None) -> np.ndarray:
        ps = params or self.params
        if isinstance(batch_or_utts, UtteranceBatch):
            ub = batch_or_utts
        else:
            ub = encode_utterances(batch_or_utts, vocab)
        with C.no_grad():
            logits = self.rec.logits(ps, ub.ids, ub.mask)
        return logits.data.argmax(axis=-1)


def recognize(model, utterance_tokens: list[str], vocab: Vocab) -> LatentCode:
    """Greedy code for one utterance: per-variable argmax, ties to lowest index."""
    ub = encode_utterances([utterance_tokens], vocab)
    if isinstance(model, DiVae):
        codes = model.recognize_batch(ub)
    else:
        codes = model.recognize_batch(ub)
    return LatentCode(codes[0])


class SysLatentPredictor:
    """Hierarchical context encoder predicting the system-side code."""

    kind = "sys_pred"

    def __init__(self, cfg: LaedConfig, seed: int = 0):
        self.cfg = cfg
        self.params = C.ParamSet()
        rng = np.random.default_rng(seed)
        self.emb = EmbeddingTable(self.params, "emb", cfg.vocab_size, cfg.embed_dim, rng)
        self.word = GRUCell(self.params, "word", cfg.embed_dim, cfg.hidden_dim, rng)
        self.ctx = GRUCell(self.params, "ctx", cfg.hidden_dim, cfg.hidden_dim, rng)
        self.head = Linear(self.params, "head", cfg.hidden_dim, cfg.code_dim, rng)

    def load_params(self, ps: C.ParamSet) -> None:
        self.params.check_compatible(ps)
        self.params = ps

    def logits(self, grid: TurnGridBatch, rng=None, training=False, params=None):
        ps = params or self.params
        cfg = self.cfg
        b, tt, tw = grid.ids.shape
        emb = self.emb(ps, grid.ids.reshape(b * tt, tw))
        if training and cfg.dropout > 0:
            emb = C.dropout(emb, cfg.dropout, rng, training=True)
        hw, _ = run_gru(self.word, ps, emb, grid.token_mask.reshape(b * tt, tw))
        turns = T.reshape(hw, (b, tt, cfg.hidden_dim))
        hc, _ = run_gru(self.ctx, ps, turns, grid.turn_mask)
        return T.reshape(self.head(ps, hc), (b, cfg.y, cfg.k))

    def loss(self, grid: TurnGridBatch, targets: np.ndarray, rng=None, training=False, params=None):
        """Mean cross-entropy against per-variable target codes (B, y)."""
        logits = self.logits(grid, rng, training, params)
        b = grid.size
        cfg = self.cfg
        ls = C.log_softmax(T.reshape(logits, (b * cfg.y, cfg.k)))
        picked = C.gather_rows(ls, targets.reshape(-1))
        return T.scale(T.sum_all(picked), -1.0 / (b * cfg.y))

    def predict_batch(self, grid: TurnGridBatch, params=None) -> np.ndarray:
        with C.no_grad():
            return self.logits(grid, params=params).data.argmax(axis=-1)


def predict_sys_latent(pred: SysLatentPredictor, context_turns, user_tokens, vocab: Vocab, mode: str = "greedy"):
    """Code (greedy) or per-variable distributions for one context + request.

    ``context_turns`` is a possibly-empty list of token lists preceding the
    user's request.
    """
    turns = list(context_turns) + [list(user_tokens)]
    grid = encode_turn_grid([turns], vocab)
    with C.no_grad():
        logits = pred.logits(grid)
        if mode == "greedy":
            return LatentCode(logits.data[0].argmax(axis=-1))
        if mode == "distribution":
            dists = C.softmax(logits).data[0]
            return LatentPosterior(np.asarray(dists, dtype=np.float64))
    raise ValueError(f"unknown mode '{mode}'")


# ---------------------------------------------------------------------------
# module-level loss wrappers


def divae_loss(model: DiVae, batch: UtteranceBatch, rng=None, mode: str = "hard", training: bool = False):
    return model.loss(batch, rng=rng, mode=mode, training=training)


def divst_loss(model: DiVst, batch: TripleBatch, rng=None, mode: str = "hard",
               directions=("prev", "next"), training: bool = False):
    return model.loss(batch, rng=rng, mode=mode, directions=directions, training=training)


# ---------------------------------------------------------------------------
# stage-1 pretraining


@dataclass
class LaedArtifacts:
    divae: DiVae
    divst: DiVst
    sys_pred: SysLatentPredictor
    history: dict = field(default_factory=dict)


def dialogue_triples(dialogues: list[Dialogue]):
    """(prev, x, next) token triples over consecutive turns; boundaries use a
    single reserved padding token."""
    pad = [PAD]
    triples = []
    for d in dialogues:
        toks = [t.tokens for t in d.turns]
        for i, x in enumerate(toks):
            prev = toks[i - 1] if i > 0 else pad
            nxt = toks[i + 1] if i + 1 < len(toks) else pad
            triples.append((prev, x, nxt))
    return triples


def syspred_samples(dialogues: list[Dialogue]):
    """(turns-before-response, sys tokens) pairs; the last context turn is the
    user's request."""
    samples = []
    for d in dialogues:
        for i, turn in enumerate(d.turns):
            if turn.speaker == "sys":
                ctx = [t.tokens for t in d.turns[:i]]
                samples.append((ctx, turn.tokens))
    return samples


def pretrain_laed(
    dialogues: list[Dialogue],
    vocab: Vocab,
    cfg: LaedConfig,
    epochs: int = 10,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 271,
) -> LaedArtifacts:
    """Stage 1: train both latent models on the pre-training dialogues, then
    fit the system-code predictor against the skip-thought model's codes."""
    if not dialogues:
        raise ValueError("pre-training corpus is empty")
    utterances = [t.tokens for d in dialogues for t in d.turns]
    triples = dialogue_triples(dialogues)
    if not triples:
        raise ValueError("corpus too small: no consecutive-turn triples")

    history: dict = {"divae": [], "divst": [], "sys_pred": []}
    root = np.random.SeedSequence(seed)
    ss_model, ss_train = root.spawn(2)
    seeds = ss_model.generate_state(3)
    divae = DiVae(cfg, seed=int(seeds[0]))
    divst = DiVst(cfg, seed=int(seeds[1]))
    sys_pred = SysLatentPredictor(cfg, seed=int(seeds[2]))
    rng = np.random.default_rng(ss_train)

    full_divae = encode_utterances(utterances, vocab)
    history["divae"].append({"epoch": 0, "loss": None, "accuracy": divae.recon_accuracy(full_divae)})
    opt = C.make_adam(lr)
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in minibatches(len(utterances), batch_size, rng):
            batch = encode_utterances([utterances[i] for i in idx], vocab)
            divae.params.zero_grad()
            loss = divae.loss(batch, rng=rng, mode="hard", training=True)
            C.backward(loss)
            C.adam_step(divae.params, opt)
            losses.append(loss.item())
        history["divae"].append(
            {"epoch": epoch, "loss": float(np.mean(losses)), "accuracy": divae.recon_accuracy(full_divae)}
        )

    opt = C.make_adam(lr)
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in minibatches(len(triples), batch_size, rng):
            batch = encode_triples([triples[i] for i in idx], vocab)
            divst.params.zero_grad()
            loss = divst.loss(batch, rng=rng, mode="hard", training=True)
            C.backward(loss)
            C.adam_step(divst.params, opt)
            losses.append(loss.item())
        history["divst"].append({"epoch": epoch, "loss": float(np.mean(losses))})

    samples = syspred_samples(dialogues)
    sys_utts = [s[1] for s in samples]
    targets = divst.recognize_batch(sys_utts, vocab)
    opt = C.make_adam(lr)
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in minibatches(len(samples), batch_size, rng):
            grid = encode_turn_grid([list(samples[i][0]) for i in idx], vocab)
            tgt = targets[idx]
            sys_pred.params.zero_grad()
            loss = sys_pred.loss(grid, tgt, rng=rng, training=True)
            C.backward(loss)
            C.adam_step(sys_pred.params, opt)
            losses.append(loss.item())
        history["sys_pred"].append({"epoch": epoch, "loss": float(np.mean(losses))})

    return LaedArtifacts(divae=divae, divst=divst, sys_pred=sys_pred, history=history)
