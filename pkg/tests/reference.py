"""Independent scalar reference implementations used as test oracles.

Everything here works directly on the raw model tensors in float64 with
plain numpy expressions, deliberately sharing no code with the engine's
layer stack.
"""

import numpy as np


def _f64(a):
    return np.asarray(a, dtype=np.float64)


def ref_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-_f64(x)))


def ref_linear(w, x, b=None):
    y = _f64(w) @ _f64(x)
    if b is not None:
        y = y + _f64(b)[:, None]
    return y


def ref_gru(g, x, h):
    z = ref_sigmoid(ref_linear(g.wz, x, g.bz) + ref_linear(g.uz, h))
    r = ref_sigmoid(ref_linear(g.wr, x, g.br) + ref_linear(g.ur, h))
    c = np.tanh(ref_linear(g.wc, x, g.bc) + ref_linear(g.uc, r * _f64(h)))
    return (1.0 - z) * _f64(h) + z * c


def ref_encode(params, ids):
    """Returns (states [2h, l], att_proj [attn, l], s0 [h, 1]) in float64."""
    emb = _f64(params.src_embed[np.asarray(ids)]).T
    hid = params.dims.hidden
    length = emb.shape[1]
    fwd = np.zeros((hid, length))
    h = np.zeros((hid, 1))
    for i in range(length):
        h = ref_gru(params.enc_fwd, emb[:, i:i + 1], h)
        fwd[:, i:i + 1] = h
    bwd = np.zeros((hid, length))
    h = np.zeros((hid, 1))
    for i in range(length - 1, -1, -1):
        h = ref_gru(params.enc_bwd, emb[:, i:i + 1], h)
        bwd[:, i:i + 1] = h
    states = np.vstack([bwd, fwd])
    att_proj = ref_linear(params.attention.w_enc, states, params.attention.b_enc)
    if params.s0_mode == "zero":
        s0 = np.zeros((hid, 1))
    else:
        s0 = np.tanh(ref_linear(params.s0_w, bwd[:, :1], params.s0_b))
    return states, att_proj, s0


def ref_attend(params, states, att_proj, s_query):
    """Single-column attention: returns (context [2h, 1], alpha [l, 1])."""
    u = ref_linear(params.attention.u_state, s_query)
    scores = (_f64(params.attention.v) @ np.tanh(att_proj + u)).T  # [l, 1]
    e = np.exp(scores - scores.max())
    alpha = e / e.sum()
    return states @ alpha, alpha


def ref_decoder_step(params, y_prev, s_prev, states, att_proj):
    """Full decode step for a single hypothesis; returns (log_probs [V, 1], s)."""
    emb = _f64(params.tgt_embed[np.asarray(y_prev)]).T
    s_int = ref_gru(params.dec_r, emb, s_prev)
    ctx, _ = ref_attend(params, states, att_proj, s_int)
    s_new = ref_gru(params.dec_q, ctx, s_int)
    out = params.output
    readout = np.tanh(ref_linear(out.w_state, s_new, out.b_readout)
                      + ref_linear(out.w_embed, emb)
                      + ref_linear(out.w_ctx, ctx))
    logits = ref_linear(out.w_vocab, readout, out.b_vocab)
    t = logits - logits.max(axis=0, keepdims=True)
    return t - np.log(np.sum(np.exp(t), axis=0, keepdims=True)), s_new
