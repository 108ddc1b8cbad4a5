"""Model layers expressed over a precision-generic linear operator.

One implementation of the encoder, attention, and conditional-GRU decoder
serves both precision modes: every trained weight matrix is wrapped in a
:class:`LinearOp` that either runs the float32 BLAS path or quantizes its
activation operand and calls the int8 panel kernel.  Biases, gate
arithmetic, and transcendentals always stay in float32.

Column convention throughout: activations are ``[features, batch]`` where
the batch dimension is the set of live beam hypotheses, so every weight
application is a matrix times a narrow panel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, NumericError, ShapeError, VocabError
from .qmath import QuantizedMatrix, gemm_f32, qgemm_panel, quantize_activations

F32 = np.float32


# ---------------------------------------------------------------------------
# scalar nonlinearities (always float32)
# ---------------------------------------------------------------------------

def _require_finite(v: np.ndarray, op: str):
    if not np.isfinite(v).all():
        raise NumericError(f"{op} received non-finite input")


def sigmoid(v: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    _require_finite(v, "sigmoid")
    z = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(F32, copy=False)


def tanh_f32(v: np.ndarray) -> np.ndarray:
    _require_finite(v, "tanh")
    return np.tanh(v)


def softmax(v: np.ndarray, axis: int = 0) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    _require_finite(v, "softmax")
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = 0) -> np.ndarray:
    _require_finite(v, "log_softmax")
    t = v - np.max(v, axis=axis, keepdims=True)
    return t - np.log(np.sum(np.exp(t), axis=axis, keepdims=True))


def _log_softmax_cols(v: np.ndarray) -> np.ndarray:
    """Hot-path column log-softmax: validates via the log-sum-exp scalars
    instead of scanning the whole input (nan/inf poison the reduction)."""
    t = v - np.max(v, axis=0, keepdims=True)
    lse = np.log(np.sum(np.exp(t), axis=0, keepdims=True))
    if not np.isfinite(lse).all():
        raise NumericError("log_softmax received non-finite logits")
    return t - lse


def _sigmoid_t(v, timer):
    if timer is None:
        return sigmoid(v)
    timer.push("transcendental")
    try:
        return sigmoid(v)
    finally:
        timer.pop()


def _tanh_t(v, timer):
    if timer is None:
        return tanh_f32(v)
    timer.push("transcendental")
    try:
        return tanh_f32(v)
    finally:
        timer.pop()


# ---------------------------------------------------------------------------
# precision-generic linear operator
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LinearOp:
    """A trained linear transform ``y = W x (+ b)`` in either precision.

    ``weight`` is float32 ``[out, in]`` for the fp32 path or a
    :class:`QuantizedMatrix` for the int8 path.  The bias is always float32
    and always added after the (possibly quantized) product.
    """

    weight: np.ndarray | QuantizedMatrix
    bias: np.ndarray | None = None

    @property
    def is_quantized(self) -> bool:
        return isinstance(self.weight, QuantizedMatrix)

    @property
    def out_dim(self) -> int:
        return self.weight.rows if self.is_quantized else self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.cols if self.is_quantized else self.weight.shape[1]

    def apply(self, x: np.ndarray, timer=None) -> np.ndarray:
        if x.ndim != 2 or x.shape[0] != self.in_dim:
            raise ShapeError(f"LinearOp expects [{self.in_dim}, P] input, got {x.shape}")
        if self.is_quantized:
            if timer is not None:
                timer.push("quantize-activations")
            try:
                xq = quantize_activations(x)
            finally:
                if timer is not None:
                    timer.pop()
            if timer is not None:
                timer.push("matmul")
            try:
                y = qgemm_panel(self.weight, xq)
            finally:
                if timer is not None:
                    timer.pop()
        else:
            if timer is not None:
                timer.push("matmul")
            try:
                y = gemm_f32(self.weight, x)
            finally:
                if timer is not None:
                    timer.pop()
        if self.bias is not None:
            y += self.bias[:, None]
        return y


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GruCell:
    update_in: LinearOp
    update_state: LinearOp
    reset_in: LinearOp
    reset_state: LinearOp
    cand_in: LinearOp
    cand_state: LinearOp
    hidden: int

    def __post_init__(self):
        for op in (self.update_in, self.update_state, self.reset_in,
                   self.reset_state, self.cand_in, self.cand_state):
            if op.out_dim != self.hidden:
                raise ShapeError("GRU sub-operator output does not match hidden size")


def gru_step(cell: GruCell, x: np.ndarray, h_prev: np.ndarray, timer=None) -> np.ndarray:
    """One GRU transition over a column batch.

    z = sigmoid(Wz x + Uz h);  r = sigmoid(Wr x + Ur h);
    h~ = tanh(Wc x + Uc (r * h));  h' = (1 - z) * h + z * h~
    """
    if h_prev.shape[0] != cell.hidden:
        raise ShapeError(f"state has {h_prev.shape[0]} rows, cell expects {cell.hidden}")
    z = _sigmoid_t(cell.update_in.apply(x, timer) + cell.update_state.apply(h_prev, timer), timer)
    r = _sigmoid_t(cell.reset_in.apply(x, timer) + cell.reset_state.apply(h_prev, timer), timer)
    cand = _tanh_t(cell.cand_in.apply(x, timer) + cell.cand_state.apply(r * h_prev, timer), timer)
    return (1.0 - z) * h_prev + z * cand


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AttentionNet:
    enc_proj: LinearOp    # consumes the 2*hidden encoder states
    state_proj: LinearOp  # consumes the decoder query state
    scorer: LinearOp      # one real value per encoder state

    def __post_init__(self):
        if self.enc_proj.in_dim != 2 * self.state_proj.in_dim:
            raise ShapeError("encoder projection must consume twice the hidden size")
        if self.scorer.out_dim != 1:
            raise ShapeError("attention scorer must produce a single value")


@dataclass(eq=False)
class EncoderStates:
    """Per-sentence encoder output shared by all decode steps."""

    states: np.ndarray    # [2*hidden, l]; backward half stacked on top
    att_proj: np.ndarray  # [attn, l], precomputed enc_proj(states)
    s0: np.ndarray        # [hidden, 1] initial decoder state

    @property
    def length(self) -> int:
        return self.states.shape[1]


def attend(att: AttentionNet, s_query: np.ndarray, enc: EncoderStates, timer=None):
    """Attention weights and context for each query column.

    Returns ``(context [2*hidden, P], alpha [l, P])``; the context is the
    alpha-weighted sum taken independently over the backward and forward
    halves of the encoder states (equivalently, over their concatenation).
    """
    u = att.state_proj.apply(s_query, timer)  # [attn, P]
    length, p = enc.att_proj.shape[1], u.shape[1]
    scores = np.empty((length, p), dtype=F32)
    for j in range(p):
        t = _tanh_t(enc.att_proj + u[:, j:j + 1], timer)
        scores[:, j] = att.scorer.apply(t, timer)[0]
    if timer is not None:
        timer.push("transcendental")
    try:
        alpha = softmax(scores, axis=0)
    finally:
        if timer is not None:
            timer.pop()
    if timer is not None:
        timer.push("matmul")
    try:
        context = gemm_f32(enc.states, alpha)
    finally:
        if timer is not None:
            timer.pop()
    return context, alpha


# ---------------------------------------------------------------------------
# output network
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class OutputNet:
    state_proj: LinearOp  # [readout, hidden], carries the readout bias
    embed_proj: LinearOp  # [readout, embed]
    ctx_proj: LinearOp    # [readout, 2*hidden]
    vocab_proj: LinearOp  # [vocab, readout]

    def logits(self, s, prev_embed, context, timer=None) -> np.ndarray:
        readout = _tanh_t(
            self.state_proj.apply(s, timer)
            + self.embed_proj.apply(prev_embed, timer)
            + self.ctx_proj.apply(context, timer),
            timer,
        )
        return self.vocab_proj.apply(readout, timer)

    @property
    def vocab_size(self) -> int:
        return self.vocab_proj.out_dim


# ---------------------------------------------------------------------------
# assembled network
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DecoderState:
    """Recurrent decoder state carried across steps (one column per beam)."""

    s: np.ndarray        # [hidden, P] full state
    s_prime: np.ndarray  # [hidden, P] previous intermediate state

    def select(self, idx: np.ndarray) -> "DecoderState":
        return DecoderState(np.ascontiguousarray(self.s[:, idx]),
                            np.ascontiguousarray(self.s_prime[:, idx]))


class Network:
    """Inference network for one model in one precision mode.

    Immutable after construction; forward calls allocate their own scratch,
    so one network may serve many concurrent decodes.
    """

    def __init__(self, dims, src_embed, tgt_embed, enc_fwd, enc_bwd, dec_r, dec_q,
                 attention, output, s0_op, s0_mode, attention_query, precision,
                 src_ids_fn, tgt_tokens):
        self.dims = dims
        self.src_embed = src_embed
        self.tgt_embed = tgt_embed
        self.enc_fwd = enc_fwd
        self.enc_bwd = enc_bwd
        self.dec_r = dec_r
        self.dec_q = dec_q
        self.attention = attention
        self.output = output
        self.s0_op = s0_op
        self.s0_mode = s0_mode
        self.attention_query = attention_query
        self.precision = precision
        self.src_ids = src_ids_fn
        self.tgt_tokens = tgt_tokens

    # -- encoding ----------------------------------------------------------

    def encode(self, src_ids, timer=None) -> EncoderStates:
        """Run the bidirectional encoder over a token-id sequence."""
        ids = np.asarray(src_ids, dtype=np.int64)
        if ids.size == 0:
            raise EmptyInputError("cannot encode an empty sentence")
        if ids.min() < 0 or ids.max() >= self.dims.src_vocab:
            raise VocabError(f"source id outside [0, {self.dims.src_vocab})")

        if timer is not None:
            timer.push("embedding")
        try:
            emb = np.ascontiguousarray(self.src_embed[ids].T)  # [embed, l]
        finally:
            if timer is not None:
                timer.pop()

        length = ids.size
        hid = self.dims.hidden
        fwd = np.empty((hid, length), dtype=F32)
        h = np.zeros((hid, 1), dtype=F32)
        for i in range(length):
            h = gru_step(self.enc_fwd, emb[:, i:i + 1], h, timer)
            fwd[:, i:i + 1] = h
        bwd = np.empty((hid, length), dtype=F32)
        h = np.zeros((hid, 1), dtype=F32)
        for i in range(length - 1, -1, -1):
            h = gru_step(self.enc_bwd, emb[:, i:i + 1], h, timer)
            bwd[:, i:i + 1] = h

        states = np.ascontiguousarray(np.vstack([bwd, fwd]))
        att_proj = self.attention.enc_proj.apply(states, timer)
        if self.s0_mode == "zero":
            s0 = np.zeros((hid, 1), dtype=F32)
        else:
            s0 = _tanh_t(self.s0_op.apply(np.ascontiguousarray(bwd[:, :1]), timer), timer)
        return EncoderStates(states=states, att_proj=att_proj, s0=s0)

    # -- decoding ----------------------------------------------------------

    def initial_state(self, enc: EncoderStates, width: int = 1) -> DecoderState:
        s = np.ascontiguousarray(np.repeat(enc.s0, width, axis=1))
        return DecoderState(s=s, s_prime=s.copy())

    def decoder_step(self, y_prev, state: DecoderState, enc: EncoderStates, timer=None):
        """One decode step over the live hypothesis columns.

        Returns ``(log_probs [vocab, P], new_state, alpha [l, P])``.
        """
        ids = np.asarray(y_prev, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= self.dims.tgt_vocab:
            raise VocabError(f"target id outside [0, {self.dims.tgt_vocab})")
        if timer is not None:
            timer.push("embedding")
        try:
            emb = np.ascontiguousarray(self.tgt_embed[ids].T)  # [embed, P]
        finally:
            if timer is not None:
                timer.pop()

        s_intermediate = gru_step(self.dec_r, emb, state.s, timer)
        query = state.s_prime if self.attention_query == "previous" else s_intermediate
        context, alpha = attend(self.attention, query, enc, timer)
        s_new = gru_step(self.dec_q, context, s_intermediate, timer)
        logits = self.output.logits(s_new, emb, context, timer)
        if timer is not None:
            timer.push("transcendental")
        try:
            log_probs = _log_softmax_cols(logits)
        finally:
            if timer is not None:
                timer.pop()
        return log_probs, DecoderState(s=s_new, s_prime=s_intermediate), alpha


def encode(network: Network, src_ids, timer=None) -> EncoderStates:
    return network.encode(src_ids, timer)


def decoder_step(network: Network, y_prev, state, enc, timer=None):
    return network.decoder_step(y_prev, state, enc, timer)


def build_network(model, timer=None) -> Network:
    """Wrap a float or quantized parameter set in an inference network."""
    def lin(weight, bias=None):
        return LinearOp(weight, bias)

    def cell(g) -> GruCell:
        return GruCell(
            update_in=lin(g.wz, g.bz), update_state=lin(g.uz),
            reset_in=lin(g.wr, g.br), reset_state=lin(g.ur),
            cand_in=lin(g.wc, g.bc), cand_state=lin(g.uc),
            hidden=g.uz.rows if isinstance(g.uz, QuantizedMatrix) else g.uz.shape[0],
        )

    att = AttentionNet(
        enc_proj=lin(model.attention.w_enc, model.attention.b_enc),
        state_proj=lin(model.attention.u_state),
        scorer=lin(model.attention.v),
    )
    out = OutputNet(
        state_proj=lin(model.output.w_state, model.output.b_readout),
        embed_proj=lin(model.output.w_embed),
        ctx_proj=lin(model.output.w_ctx),
        vocab_proj=lin(model.output.w_vocab, model.output.b_vocab),
    )
    return Network(
        dims=model.dims,
        src_embed=model.src_embed,
        tgt_embed=model.tgt_embed,
        enc_fwd=cell(model.enc_fwd),
        enc_bwd=cell(model.enc_bwd),
        dec_r=cell(model.dec_r),
        dec_q=cell(model.dec_q),
        attention=att,
        output=out,
        s0_op=lin(model.s0_w, model.s0_b),
        s0_mode=model.s0_mode,
        attention_query=model.attention_query,
        precision=model.precision,
        src_ids_fn=model.src_ids,
        tgt_tokens=model.tgt_tokens,
    )
