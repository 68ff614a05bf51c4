"""Masked slot attention over a panorama, seeded with candidate-view features.

Slots start from the candidate view features and compete, through a softmax
over the slot axis, for the 36 panoramic views. Only the image block of each
slot is ever rewritten; the angle block rides along untouched so positional
information survives every iteration. The refined image block is added back
onto the candidate image features as a residual.

Shapes: ``K`` slots, ``N = 36`` views, ``D_V = D_I + D_A``.
``logits`` and ``attn`` are (N, K); ``updates = attn.T @ values`` is (K, D_I).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .geometry import N_COLS, N_VIEWS, CandidateView, PanoramaGrid, ViewIndex, candidate_matrix
from .layers import GRUCell, LayerNorm, Linear, MLP, Module
from .masks import MaskMatrix
from .tensor import RngStream, Tensor


@dataclass
class SlotAttnConfig:
    d_image: int = 16
    d_angle: int = 8
    d_att: int | None = None  # query/key width; defaults to d_image
    mlp_hidden: int | None = None  # defaults to d_image
    dropout: float = 0.7
    iterations: int = 3
    literal_alg1: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"slot iterations must be >= 0, got {self.iterations}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def d_view(self) -> int:
        return self.d_image + self.d_angle


def drop_feat(x: Tensor, d_image: int, p: float, rng: RngStream | None, training: bool):
    """Dropout on columns ``[0, d_image)`` only."""
    if x.ndim != 2 or x.shape[1] <= d_image:
        raise ShapeError(f"drop_feat: width {x.shape} does not exceed image width {d_image}")
    img, cache = T.dropout(x[:, :d_image], p, rng, training)
    if cache is None:
        return x, None
    return np.concatenate([img, x[:, d_image:]], axis=1), cache


def drop_feat_backward(dout: Tensor, cache, d_image: int) -> Tensor:
    if cache is None:
        return dout
    out = dout.copy()
    out[:, :d_image] *= cache
    return out


def partial_layer_norm(x: Tensor, d_image: int, ln: LayerNorm):
    """Layer norm over the image columns; angle columns pass through."""
    if x.ndim != 2 or x.shape[1] <= d_image or ln.d != d_image:
        raise ShapeError(f"partial_layer_norm: width {x.shape} vs image width {d_image}")
    img, cache = ln.forward(x[:, :d_image])
    return np.concatenate([img, x[:, d_image:]], axis=1), cache


def partial_layer_norm_backward(dout: Tensor, cache, d_image: int, ln: LayerNorm) -> Tensor:
    return np.concatenate([ln.backward(dout[:, :d_image], cache), dout[:, d_image:]], axis=1)


@dataclass
class AttentionTrace:
    """Per-iteration attention maps (N, K) and slot updates (K, D_I)."""

    attn: list[Tensor] = field(default_factory=list)
    updates: list[Tensor] = field(default_factory=list)
    slots: tuple[int, ...] = ()

    @property
    def iterations(self) -> int:
        return len(self.attn)

    def window_weights(self, iteration: int, slot: int, allowed: np.ndarray | None = None) -> np.ndarray:
        """Length-36 weights of one slot, renormalised over its visible views.

        This is a display normalisation only; the model itself normalises
        across slots, not across views.
        """
        col = self.attn[iteration][:, slot].copy()
        if allowed is not None:
            col = np.where(allowed[:, slot], col, 0.0)
        total = col.sum()
        return col / total if total > 0 else col

    def records(self) -> list[tuple[int, int, int, int, float]]:
        rows = []
        for t, a in enumerate(self.attn):
            for k in range(a.shape[1]):
                for n in range(N_VIEWS):
                    rows.append((t, k, n // N_COLS, n % N_COLS, float(a[n, k])))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "slot", "view_row", "view_col", "weight"])
        for t, k, r, c, v in self.records():
            w.writerow([t, k, r, c, repr(v)])
        return buf.getvalue()

    def to_doc(self) -> dict:
        return {
            "slots": list(self.slots),
            "records": [
                {"iteration": t, "slot": k, "view_row": r, "view_col": c, "weight": v}
                for t, k, r, c, v in self.records()
            ],
        }


class SlotAttention(Module):
    def __init__(self, cfg: SlotAttnConfig, rng: RngStream | None = None):
        super().__init__()
        self.cfg = cfg
        di, dv = cfg.d_image, cfg.d_view
        da = cfg.d_att or di
        fork = (lambda k: rng.fork(k)) if rng is not None else (lambda k: None)
        self.children["q"] = Linear(dv, da, fork("q"))
        self.children["k"] = Linear(dv, da, fork("k"))
        self.children["v"] = Linear(di, di, fork("v"))
        self.children["gru"] = GRUCell(di, di, fork("gru"))
        self.children["mlp"] = MLP(di, cfg.mlp_hidden, fork("mlp"))
        self.children["norm_input"] = LayerNorm(di, cfg.ln_eps)
        self.children["norm_slots"] = LayerNorm(di, cfg.ln_eps)
        self.children["norm_ff"] = LayerNorm(di, cfg.ln_eps)
        self.scale = 1.0 / math.sqrt(dv)

    def forward(self, cand: Tensor, grid: Tensor, mask: np.ndarray | None,
                rng: RngStream | None = None, training: bool = False):
        """Refine candidate features ``cand`` (K, D_V) against ``grid`` (36, D_V).

        Returns ``(out, trace, cache)`` with ``out`` (K, D_V).
        """
        cfg = self.cfg
        di, dv, p = cfg.d_image, cfg.d_view, cfg.dropout
        if cand.ndim != 2 or cand.shape[1] != dv or cand.shape[0] < 1:
            raise ShapeError(f"slot attention: candidates {cand.shape}, expected (K>=1, {dv})")
        if grid.shape != (N_VIEWS, dv):
            raise ShapeError(f"slot attention: grid {grid.shape}, expected ({N_VIEWS}, {dv})")
        n_slots = cand.shape[0]
        if mask is None:
            mask = np.ones((N_VIEWS, n_slots), dtype=bool)
        if mask.shape != (N_VIEWS, n_slots):
            raise ShapeError(f"slot attention: mask {mask.shape} vs ({N_VIEWS}, {n_slots})")
        trace = AttentionTrace()
        if cfg.iterations == 0:
            return cand.copy(), trace, None

        slots, c_dq = drop_feat(cand, di, p, rng, training)
        normed, c_lnin = self.norm_input.forward(grid[:, :di])
        key_in, c_dk = drop_feat(np.concatenate([normed, grid[:, di:]], axis=1), di, p, rng, training)
        keys, c_k = self.k.forward(key_in)
        val_in, c_dv = T.dropout(normed, p, rng, training)
        vals, c_v = self.v.forward(val_in)

        steps = []
        for _ in range(cfg.iterations):
            prev = slots[:, :di]
            sn_img, c_lns = self.norm_slots.forward(prev)
            sn = np.concatenate([sn_img, slots[:, di:]], axis=1)
            q, c_q = self.q.forward(sn)
            logits = self.scale * (keys @ q.T)
            attn, c_sm = T.masked_softmax(logits, mask, axis=1)
            updates = attn.T @ vals
            if cfg.literal_alg1:
                # GRU state is computed by the pseudocode but never consumed
                f, c_ff = self.norm_ff.forward(updates)
                m, c_mlp = self.mlp.forward(f)
                img, c_gru = sn_img + m, None
            else:
                h, c_gru = self.gru.forward(prev, updates)
                f, c_ff = self.norm_ff.forward(h)
                m, c_mlp = self.mlp.forward(f)
                img = h + m
            slots = np.concatenate([img, slots[:, di:]], axis=1)
            trace.attn.append(attn)
            trace.updates.append(updates)
            steps.append((c_lns, q, c_q, attn, c_sm, c_gru, c_ff, c_mlp))

        out = cand.copy()
        out[:, :di] += slots[:, :di]
        cache = (c_dq, c_lnin, c_dk, c_k, c_dv, c_v, keys, vals, steps)
        return out, trace, cache

    def backward(self, dout: Tensor, cache):
        """Accumulate parameter grads; return ``(d_candidates, d_grid)``."""
        di = self.cfg.d_image
        if cache is None:
            return dout.copy(), np.zeros((N_VIEWS, self.cfg.d_view))
        c_dq, c_lnin, c_dk, c_k, c_dv, c_v, keys, vals, steps = cache
        d_cand = dout.copy()
        d_img = dout[:, :di].copy()
        d_ang = np.zeros_like(dout[:, di:])
        d_keys = np.zeros_like(keys)
        d_vals = np.zeros_like(vals)
        for c_lns, q, c_q, attn, c_sm, c_gru, c_ff, c_mlp in reversed(steps):
            d_f = self.mlp.backward(d_img, c_mlp)
            if c_gru is None:
                d_upd = self.norm_ff.backward(d_f, c_ff)
                d_sn_img = d_img
                d_prev = 0.0
            else:
                d_h = d_img + self.norm_ff.backward(d_f, c_ff)
                d_prev, d_upd = self.gru.backward(d_h, c_gru)
                d_sn_img = 0.0
            d_attn = vals @ d_upd.T
            d_vals += attn @ d_upd
            d_logits = self.scale * T.masked_softmax_backward(d_attn, c_sm)
            d_keys += d_logits @ q
            d_sn = self.q.backward(d_logits.T @ keys, c_q)
            d_ang += d_sn[:, di:]
            d_img = self.norm_slots.backward(d_sn_img + d_sn[:, :di], c_lns) + d_prev
        d_cand[:, :di] += T.dropout_backward(d_img, c_dq)
        d_cand[:, di:] += d_ang

        d_normed = T.dropout_backward(self.v.backward(d_vals, c_v), c_dv)
        d_key_in = drop_feat_backward(self.k.backward(d_keys, c_k), c_dk, di)
        d_normed = d_normed + d_key_in[:, :di]
        d_grid = np.concatenate([self.norm_input.backward(d_normed, c_lnin), d_key_in[:, di:]], axis=1)
        return d_cand, d_grid


def slot_attention_forward(grid: PanoramaGrid, candidates: Sequence[CandidateView], mask: MaskMatrix,
                           module: SlotAttention, rng: RngStream | None = None, training: bool = False):
    """Enhance every candidate's features with panoramic context.

    Candidates outside ``mask.slots`` (the stop candidate when excluded) are
    returned unchanged. Returns ``(features (K, D_V), trace)``.
    """
    feats = candidate_matrix(candidates)
    slots = list(mask.slots)
    refined, trace, _ = module.forward(feats[slots], grid.matrix(), mask.allowed, rng, training)
    out = feats.copy()
    out[slots] = refined
    trace.slots = tuple(slots)
    return out, trace


def visible_views(mask: MaskMatrix, slot: int) -> list[ViewIndex]:
    return [ViewIndex.from_flat(n) for n in np.flatnonzero(mask.allowed[:, slot])]
