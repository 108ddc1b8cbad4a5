"""Beam-search translation, subword reassembly, and precision parity analysis.

Decoding is single-sentence: the only batch dimension inside the network is
the set of live beam hypotheses, which keeps every weight application in the
matrix-times-narrow-panel regime the int8 kernels are built for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bleu import bleu
from .errors import ConfigError, EmptyInputError, QnmtError
from .layers import Network, build_network
from .model import EOS_ID, ModelParams, QuantizedModel, quantize_model


@dataclass
class DecodeConfig:
    beam: int = 5
    max_ratio: float = 3.0        # max output length = ceil(ratio * source len) + 1
    precision: str = "fp32"       # "fp32" or "int8"

    def __post_init__(self):
        if self.beam < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam}")
        if not self.max_ratio > 0:
            raise ConfigError(f"max_ratio must be positive, got {self.max_ratio}")
        if self.precision not in ("fp32", "int8"):
            raise ConfigError(f"unknown precision {self.precision!r}")


@dataclass
class BeamHypothesis:
    """A partial translation: emitted ids, accumulated log-prob, decoder state."""

    tokens: list
    log_prob: float
    state: object = None
    finished: bool = False


def _as_member_list(models) -> list:
    if isinstance(models, (ModelParams, QuantizedModel)):
        return [models]
    members = list(models)
    if not members:
        raise ConfigError("at least one model is required")
    return members


def _networks_for(models, precision: str) -> list:
    members = _as_member_list(models)
    first_vocab = members[0].tgt_tokens
    for m in members[1:]:
        if m.tgt_tokens != first_vocab:
            raise ConfigError("ensemble members must share the target vocabulary")
    nets = []
    for m in members:
        if precision == "int8":
            if isinstance(m, ModelParams):
                m = quantize_model(m)
            nets.append(build_network(m))
        else:
            if isinstance(m, QuantizedModel):
                raise ConfigError("fp32 decoding requires float parameters")
            nets.append(build_network(m))
    return nets


def _select_candidates(flat: np.ndarray, beam: int, vocab: int) -> list:
    """Indices of the top-``beam`` candidates under the deterministic order
    (higher score first, then lower token id, then lower parent index)."""
    n = flat.size
    if n <= beam:
        idx = range(n)
    else:
        part = np.argpartition(-flat, beam - 1)[:beam]
        smin = flat[part].min()
        idx = np.nonzero(flat >= smin)[0].tolist()
    ranked = sorted(idx, key=lambda f: (-flat[f], f % vocab, f // vocab))
    return ranked[:beam]


def translate(models, source_tokens, cfg: DecodeConfig, timer=None):
    """Beam-search translation of one pre-tokenized sentence.

    Returns ``(target_tokens, log_prob)`` where the token list excludes the
    final EOS and the score is the plain sum of per-step log-probs (ensemble
    members contribute the arithmetic mean of their log-probs per step).
    """
    tokens = list(source_tokens)
    if not tokens:
        raise EmptyInputError("cannot translate an empty sentence")
    nets = _networks_for(models, cfg.precision)
    vocab = nets[0].dims.tgt_vocab

    encs = [net.encode(net.src_ids(tokens), timer) for net in nets]

    max_steps = math.ceil(cfg.max_ratio * len(tokens)) + 1
    beam = cfg.beam

    live_tokens: list[list[int]] = [[]]
    live_scores = np.zeros(1, dtype=np.float64)
    states = [net.initial_state(enc, 1) for net, enc in zip(nets, encs)]
    y_prev = np.array([EOS_ID], dtype=np.int64)
    finished: list[BeamHypothesis] = []

    for _ in range(max_steps):
        log_probs = None
        new_states = []
        for net, enc, st in zip(nets, encs, states):
            lp, st_next, _ = net.decoder_step(y_prev, st, enc, timer)
            new_states.append(st_next)
            log_probs = lp if log_probs is None else log_probs + lp
        if len(nets) > 1:
            log_probs = log_probs / np.float32(len(nets))

        if timer is not None:
            timer.push("search-overhead")
        try:
            flat = (live_scores[:, None] + log_probs.T.astype(np.float64)).ravel()
            chosen = _select_candidates(flat, beam, vocab)
            next_tokens, next_scores, next_parents, next_ids = [], [], [], []
            for f in chosen:
                parent, tok = divmod(f, vocab)
                score = float(flat[f])
                if tok == EOS_ID:
                    finished.append(BeamHypothesis(
                        live_tokens[parent] + [tok], score, finished=True))
                else:
                    next_tokens.append(live_tokens[parent] + [tok])
                    next_scores.append(score)
                    next_parents.append(parent)
                    next_ids.append(tok)
        finally:
            if timer is not None:
                timer.pop()

        if not next_tokens:
            break
        live_tokens = next_tokens
        live_scores = np.array(next_scores, dtype=np.float64)
        parent_idx = np.array(next_parents, dtype=np.int64)
        states = [st.select(parent_idx) for st in new_states]
        y_prev = np.array(next_ids, dtype=np.int64)
        if finished and max(h.log_prob for h in finished) >= live_scores.max():
            break
    else:
        # length limit reached: freeze the surviving hypotheses as they stand
        for toks, score in zip(live_tokens, live_scores):
            finished.append(BeamHypothesis(list(toks), float(score), finished=True))

    best = min(finished, key=lambda h: (-h.log_prob, h.tokens))
    out_ids = best.tokens[:-1] if best.tokens and best.tokens[-1] == EOS_ID else best.tokens
    words = [nets[0].tgt_tokens[i] for i in out_ids]
    return words, best.log_prob


def bpe_merge(tokens) -> str:
    """Reassemble BPE subword units: a token ending in ``@@`` glues onto its
    successor (marker removed); a trailing continuation keeps its text."""
    words = []
    buf = ""
    for t in tokens:
        if t.endswith("@@"):
            buf += t[:-2]
        else:
            words.append(buf + t)
            buf = ""
    if buf:
        words.append(buf)
    return " ".join(words)


def edit_distance(a, b) -> int:
    """Levenshtein distance between two token sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass
class ParityReport:
    """Output agreement between the two precision modes on one corpus."""

    sentences: int
    identical: int
    identical_fraction: float
    edit_distances: list
    mean_edit_distance: float
    bleu_int8_vs_fp32: float
    fp32_outputs: list = field(repr=False, default_factory=list)
    int8_outputs: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sentences": self.sentences,
            "identical": self.identical,
            "identical_fraction": self.identical_fraction,
            "mean_edit_distance": self.mean_edit_distance,
            "bleu_int8_vs_fp32": self.bleu_int8_vs_fp32,
            "edit_distances": list(self.edit_distances),
        }


def compare_precisions(model: ModelParams, sentences, cfg: DecodeConfig) -> ParityReport:
    """Decode every sentence under fp32 and int8 and measure agreement."""
    sents = [s.split() if isinstance(s, str) else list(s) for s in sentences]
    if not sents:
        raise EmptyInputError("no sentences to compare")
    qmodel = quantize_model(model)
    cfg32 = DecodeConfig(beam=cfg.beam, max_ratio=cfg.max_ratio, precision="fp32")
    cfg8 = DecodeConfig(beam=cfg.beam, max_ratio=cfg.max_ratio, precision="int8")

    fp32_out, int8_out, distances = [], [], []
    identical = 0
    for i, sent in enumerate(sents):
        try:
            toks32, _ = translate(model, sent, cfg32)
            toks8, _ = translate(qmodel, sent, cfg8)
        except QnmtError as exc:
            raise type(exc)(f"sentence {i}: {exc}") from exc
        distances.append(edit_distance(toks32, toks8))
        if toks32 == toks8:
            identical += 1
        fp32_out.append(bpe_merge(toks32))
        int8_out.append(bpe_merge(toks8))

    return ParityReport(
        sentences=len(sents),
        identical=identical,
        identical_fraction=identical / len(sents),
        edit_distances=distances,
        mean_edit_distance=float(np.mean(distances)),
        bleu_int8_vs_fp32=bleu(int8_out, fp32_out),
        fp32_outputs=fp32_out,
        int8_outputs=int8_out,
    )
