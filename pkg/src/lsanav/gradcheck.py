"""Finite-difference checks for every hand-written backward, block by block."""

from __future__ import annotations

import dataclasses
from typing import Callable


from . import tensor as T
from .agent import Agent, ModelConfig
from .decoder import Decoder, DecoderConfig
from .env import Observation
from .geometry import CandidateView, PanoramaGrid, ViewFeature, ViewIndex, encode_angle, stop_view_feature
from .layers import GRUCell, MLP
from .slot_attention import SlotAttention
from .tensor import GradCheckReport, Param, RngStream, grad_check
from .trainer import cross_entropy

# toy dimensions for the composed checks
TOY = dict(d_image=8, d_angle=4, d_hidden=8)


def toy_observation(d_image: int, d_angle: int, seed: int = 0,
                    cells=((1, 0), (0, 11))) -> Observation:
    """Random panorama with a stop candidate plus one candidate per cell."""
    rng = RngStream(seed).fork("toy-obs")
    grid = PanoramaGrid.from_images(rng.normal((36, d_image)), d_angle)
    cands = [CandidateView(None, None, 0.0, 0.0, stop_view_feature(grid))]
    for i, (r, c) in enumerate(cells):
        idx = ViewIndex(r, c)
        psi, omega = idx.heading + 0.1, idx.elevation - 0.05
        cands.append(CandidateView(idx, i + 1, psi, omega,
                                   ViewFeature(grid[idx].image, encode_angle(psi, omega, d_angle))))
    return Observation(grid, cands)


def check_matmul(seed: int = 0) -> GradCheckReport:
    rng = RngStream(seed).fork("matmul")
    a, b = Param(rng.normal((3, 4))), Param(rng.normal((4, 2)))
    w = rng.normal((3, 2))

    def f():
        c, cache = T.matmul(a.value, b.value)
        da, db = T.matmul_backward(w, cache)
        a.grad += da
        b.grad += db
        return float((w * c).sum())

    return grad_check(f, {"a": a, "b": b})


def check_softmax_layernorm(seed: int = 0) -> GradCheckReport:
    rng = RngStream(seed).fork("sm-ln")
    x = Param(rng.normal((5, 4)))
    g, b = Param(1.0 + 0.3 * rng.normal(4)), Param(rng.normal(4))
    mask = rng.uniform((5, 4)) < 0.6
    mask[:, 0] = True
    w = rng.normal((5, 4))

    def f():
        p, c1 = T.masked_softmax(x.value, mask, axis=1)
        y, c2 = T.layer_norm(p, g.value, b.value)
        dp, dg, db = T.layer_norm_backward(w, c2)
        g.grad += dg
        b.grad += db
        x.grad += T.masked_softmax_backward(dp, c1)
        return float((w * y).sum())

    return grad_check(f, {"x": x, "gain": g, "bias": b})


def check_gru(seed: int = 0) -> GradCheckReport:
    rng = RngStream(seed).fork("gru")
    cell = GRUCell(4, 4, rng.fork("init"))
    for p in cell.params.values():
        p.value[...] = rng.normal(p.shape) * 0.5
    h, x = Param(rng.normal((3, 4))), Param(rng.normal((3, 4)))
    w = rng.normal((3, 4))

    def f():
        out, cache = cell.forward(h.value, x.value)
        dh, dx = cell.backward(w, cache)
        h.grad += dh
        x.grad += dx
        return float((w * out).sum())

    params = cell.param_dict()
    params.update(h=h, x=x)
    return grad_check(f, params)


def check_mlp(seed: int = 0) -> GradCheckReport:
    rng = RngStream(seed).fork("mlp")
    mlp = MLP(4, 6, rng.fork("init"))
    x = Param(rng.normal((3, 4)))
    w = rng.normal((3, 4))

    def f():
        out, cache = mlp.forward(x.value)
        x.grad += mlp.backward(w, cache)
        return float((w * out).sum())

    params = mlp.param_dict()
    params["x"] = x
    return grad_check(f, params)


def check_slot_attention(cfg: ModelConfig, seed: int = 0) -> GradCheckReport:
    rng = RngStream(seed).fork("slot")
    block = SlotAttention(cfg.slot_config(), rng.fork("init"))
    obs = toy_observation(cfg.d_image, cfg.d_angle, seed)
    mask = obs.mask(cfg.mask_shape, True)
    cand = Param(obs.features)
    grid = Param(obs.grid_matrix)
    w = rng.normal(cand.shape)

    def f():
        out, _, cache = block.forward(cand.value, grid.value, mask.allowed, RngStream(seed + 1), True)
        dc, dg = block.backward(w, cache)
        cand.grad += dc
        grid.grad += dg
        return float((w * out).sum())

    params = block.param_dict()
    params.update(candidates=cand, grid=grid)
    return grad_check(f, params)


def check_decoder(cfg: ModelConfig, seed: int = 0) -> GradCheckReport:
    rng = RngStream(seed).fork("decoder")
    dec = Decoder(DecoderConfig(cfg.d_image + cfg.d_angle, cfg.d_hidden, cfg.n_layers), rng.fork("init"))
    feats = Param(rng.normal((3, cfg.d_image + cfg.d_angle)))
    state = Param(rng.normal(cfg.d_hidden))
    tokens = rng.normal((4, cfg.d_hidden))

    def f():
        s1, st1, c1 = dec.forward(state.value, feats.value, tokens)
        s2, _, c2 = dec.forward(st1, feats.value, tokens)
        l1, g1 = cross_entropy(s1, 1)
        l2, g2 = cross_entropy(s2, 2)
        ds1, df2 = dec.backward(g2, None, c2)
        ds0, df1 = dec.backward(g1, ds1, c1)
        state.grad += ds0
        feats.grad += df1 + df2
        return l1 + l2

    params = dec.param_dict()
    params.update(features=feats, state=state)
    return grad_check(f, params)


def check_full_stack(cfg: ModelConfig, seed: int = 0) -> GradCheckReport:
    """Slot attention + decoder over two recurrent steps, dropout active."""
    agent = Agent(dataclasses.replace(cfg, init_seed=seed))
    obs_a = toy_observation(cfg.d_image, cfg.d_angle, seed)
    obs_b = toy_observation(cfg.d_image, cfg.d_angle, seed + 1, cells=((2, 4), (1, 5)))
    rng = RngStream(seed).fork("full")
    cls = rng.normal(cfg.d_hidden)
    tokens = rng.normal((4, cfg.d_hidden))

    def f():
        drop = RngStream(seed + 2)
        s1, st1, _, c1 = agent.step(obs_a, cls, tokens, drop, True)
        s2, _, _, c2 = agent.step(obs_b, st1, tokens, drop, True)
        l1, g1 = cross_entropy(s1, 1)
        l2, g2 = cross_entropy(s2, 0)
        ds1 = agent.step_backward(g2, None, c2)
        agent.step_backward(g1, ds1, c1)
        return l1 + l2

    return grad_check(f, agent.param_dict())


def run_all(cfg: ModelConfig | None = None, seed: int = 0) -> dict[str, GradCheckReport]:
    """Every block check at toy dimensions, for both slot-update variants."""
    base = cfg if cfg is not None else ModelConfig()
    base = dataclasses.replace(base, **TOY)
    checks: dict[str, Callable[[], GradCheckReport]] = {
        "matmul": lambda: check_matmul(seed),
        "masked_softmax+layer_norm": lambda: check_softmax_layernorm(seed),
        "gru_cell": lambda: check_gru(seed),
        "mlp": lambda: check_mlp(seed),
        "decoder": lambda: check_decoder(base, seed),
    }
    for literal in (False, True):
        tag = "literal" if literal else "reconciled"
        c = dataclasses.replace(base, literal_alg1=literal)
        checks[f"slot_attention[{tag}]"] = lambda c=c: check_slot_attention(c, seed)
        checks[f"full_stack[{tag}]"] = lambda c=c: check_full_stack(c, seed)
    return {name: fn() for name, fn in checks.items()}
