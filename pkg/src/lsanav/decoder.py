"""Toy recurrent action decoder.

One navigation step:

1. candidate features are projected to the decoder width;
2. ``[state; candidates]`` cross-attends to the fixed instruction tokens;
3. ``[state; candidates]`` self-attends; the state row's pre-softmax logits
   towards the candidates are the action scores;
4. the state is refreshed from its self-attended row and the elementwise
   product of the attended language and attended visual summaries.

Attention is single-head with a residual connection around each layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, EvaluationError, ShapeError
from .layers import LayerNorm, Linear, Module
from .tensor import RngStream, Tensor


@dataclass
class DecoderConfig:
    d_view: int = 24
    d_hidden: int = 16
    n_layers: int = 1
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"decoder needs at least one layer, got {self.n_layers}")


@dataclass(frozen=True)
class InstructionEmbedding:
    cls: Tensor  # (D_h,) initial navigation state
    tokens: Tensor  # (L, D_h), never updated

    def __post_init__(self):
        self.tokens.setflags(write=False)


@dataclass(frozen=True)
class ActionScores:
    scores: Tensor  # (K,), index 0 is stop

    @property
    def chosen(self) -> int:
        return select_action(self.scores)


def select_action(scores) -> int:
    """Argmax with the lowest index winning ties."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ShapeError(f"action scores must be a non-empty vector, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise EvaluationError("action scores contain non-finite values")
    return int(np.argmax(scores))


class Attention(Module):
    """Single-head scaled dot-product attention with a residual connection."""

    def __init__(self, d: int, rng: RngStream | None = None):
        super().__init__()
        fork = (lambda k: rng.fork(k)) if rng is not None else (lambda k: None)
        self.children["q"] = Linear(d, d, fork("q"))
        self.children["k"] = Linear(d, d, fork("k"))
        self.children["v"] = Linear(d, d, fork("v"))
        self.scale = 1.0 / math.sqrt(d)

    def forward(self, queries: Tensor, context: Tensor):
        """Returns ``(out, weights, logits, values, cache)``."""
        if context.shape[0] == 0:
            raise ShapeError("attention over an empty context")
        qp, cq = self.q.forward(queries)
        kp, ck = self.k.forward(context)
        vp, cv = self.v.forward(context)
        logits = self.scale * (qp @ kp.T)
        weights = T.softmax(logits, axis=1)
        out = queries + weights @ vp
        return out, weights, logits, vp, (cq, ck, cv, qp, kp, vp, weights)

    def backward(self, d_out: Tensor, cache, d_weights=None, d_logits=None, d_values=None):
        """Returns ``(d_queries, d_context)``."""
        cq, ck, cv, qp, kp, vp, w = cache
        dw = d_out @ vp.T
        if d_weights is not None:
            dw = dw + d_weights
        dvp = w.T @ d_out
        if d_values is not None:
            dvp = dvp + d_values
        dl = T.masked_softmax_backward(dw, (w, 1))
        if d_logits is not None:
            dl = dl + d_logits
        dl = dl * self.scale
        d_q = d_out + self.q.backward(dl @ kp, cq)
        d_ctx = self.k.backward(dl.T @ qp, ck) + self.v.backward(dvp, cv)
        return d_q, d_ctx


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: RngStream | None = None):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_hidden
        fork = (lambda k: rng.fork(k)) if rng is not None else (lambda k: None)
        self.children["visual"] = Linear(cfg.d_view, d, fork("visual"))
        for i in range(cfg.n_layers):
            self.children[f"cross{i}"] = Attention(d, fork(f"cross{i}"))
        for i in range(cfg.n_layers):
            self.children[f"self{i}"] = Attention(d, fork(f"self{i}"))
        self.children["state"] = Linear(2 * d, d, fork("state"))
        self.children["norm_joint"] = LayerNorm(d, cfg.ln_eps)
        self.children["norm_state"] = LayerNorm(d, cfg.ln_eps)

    # -- the three stages, exposed individually -----------------------------

    def project_visual(self, feats: Tensor):
        return self.visual.forward(feats)

    def cross_attention(self, state: Tensor, visual: Tensor, tokens: Tensor):
        """``[state; visual]`` attends to the instruction tokens.

        Returns ``(state_x, visual_x, lang_x, attn, caches)`` where ``lang_x``
        is the value-projected token block of the last layer and ``attn`` that
        layer's (K+1, L) weights.
        """
        if tokens.ndim != 2 or tokens.shape[0] == 0:
            raise ShapeError(f"cross attention needs at least one instruction token, got {tokens.shape}")
        x = np.concatenate([state.reshape(1, -1), visual], axis=0)
        caches = []
        for i in range(self.cfg.n_layers):
            x, w, _, vp, c = self.children[f"cross{i}"].forward(x, tokens)
            caches.append(c)
        return x[0], x[1:], vp, w, caches

    def self_attention(self, joined: Tensor):
        """Full self-attention over ``[state; candidates]``.

        Returns ``(state_s, visual_s, attn_row, scores, caches)``; ``scores``
        are the last layer's pre-softmax logits from the state row to the
        candidates and ``attn_row`` their softmax (the state row's weights
        renormalised over candidates).
        """
        if joined.shape[0] < 2:
            raise ShapeError("self attention needs the state row and at least one candidate")
        x = joined
        caches = []
        for i in range(self.cfg.n_layers):
            x, _, logits, _, c = self.children[f"self{i}"].forward(x, x)
            caches.append(c)
        scores = logits[0, 1:]
        return x[0], x[1:], T.softmax(scores), scores, caches

    def update_state(self, state_s: Tensor, lang_x: Tensor, visual_s: Tensor,
                     attn_lang: Tensor, attn_vis: Tensor):
        """New navigation state from the attended language/visual summaries."""
        lang_sum = attn_lang @ lang_x
        vis_sum = attn_vis @ visual_s
        joint = lang_sum * vis_sum
        joint_n, c_nj = self.norm_joint.forward(joint.reshape(1, -1))
        pre, c_st = self.state.forward(np.concatenate([state_s.reshape(1, -1), joint_n], axis=1))
        new, c_ns = self.norm_state.forward(pre)
        return new[0], (lang_sum, vis_sum, c_nj, c_st, c_ns)

    # -- full step ----------------------------------------------------------

    def forward(self, state: Tensor, feats: Tensor, tokens: Tensor):
        """One decoding step; returns ``(scores (K,), new_state (D_h,), cache)``."""
        d = self.cfg.d_hidden
        if state.shape != (d,):
            raise ShapeError(f"navigation state has shape {state.shape}, expected ({d},)")
        if tokens.ndim != 2 or tokens.shape[1] != d:
            raise ShapeError(f"instruction tokens {tokens.shape} do not have width {d}")
        vis, c_vis = self.project_visual(feats)
        state_x, vis_x, lang_x, attn_lang, c_cross = self.cross_attention(state, vis, tokens)
        joined = np.concatenate([state_x.reshape(1, -1), vis_x], axis=0)
        state_s, vis_s, attn_vis, scores, c_self = self.self_attention(joined)
        new_state, c_upd = self.update_state(state_s, lang_x, vis_s, attn_lang[0], attn_vis)
        cache = (c_vis, c_cross, c_self, c_upd, lang_x, attn_lang[0], vis_s, attn_vis)
        return scores.copy(), new_state, cache

    def backward(self, d_scores: Tensor, d_new_state: Tensor | None, cache):
        """Returns ``(d_state (D_h,), d_feats (K, D_V))``."""
        c_vis, c_cross, c_self, c_upd, lang_x, attn_lang, vis_s, attn_vis = cache
        lang_sum, vis_sum, c_nj, c_st, c_ns = c_upd
        d = self.cfg.d_hidden
        k = vis_s.shape[0]

        d_state_s = np.zeros(d)
        d_vis_s = np.zeros_like(vis_s)
        d_lang_x = np.zeros_like(lang_x)
        d_attn_lang = np.zeros_like(attn_lang)
        d_sc = np.array(d_scores, dtype=np.float64)
        if d_new_state is not None:
            d_pre = self.norm_state.backward(d_new_state.reshape(1, -1), c_ns)
            d_in = self.state.backward(d_pre, c_st)
            d_state_s += d_in[0, :d]
            d_joint = self.norm_joint.backward(d_in[:, d:], c_nj)[0]
            d_lang_sum = d_joint * vis_sum
            d_vis_sum = d_joint * lang_sum
            d_attn_lang = lang_x @ d_lang_sum
            d_lang_x = np.outer(attn_lang, d_lang_sum)
            d_attn_vis = vis_s @ d_vis_sum
            d_vis_s += np.outer(attn_vis, d_vis_sum)
            d_sc = d_sc + attn_vis * (d_attn_vis - d_attn_vis @ attn_vis)

        n = self.cfg.n_layers
        d_x = np.concatenate([d_state_s.reshape(1, -1), d_vis_s], axis=0)
        for i in reversed(range(n)):
            d_logits = None
            if i == n - 1:
                d_logits = np.zeros((k + 1, k + 1))
                d_logits[0, 1:] = d_sc
            dq, dc = self.children[f"self{i}"].backward(d_x, c_self[i], d_logits=d_logits)
            d_x = dq + dc
        for i in reversed(range(n)):
            extra = {}
            if i == n - 1:
                dw = np.zeros((k + 1, attn_lang.shape[0]))
                dw[0] = d_attn_lang
                extra = dict(d_weights=dw, d_values=d_lang_x)
            # token gradients are dropped: instructions are fixed inputs
            d_x, _ = self.children[f"cross{i}"].backward(d_x, c_cross[i], **extra)
        d_feats = self.visual.backward(d_x[1:], c_vis)
        return d_x[0], d_feats
