"""Command-line entry point: ``lsanav <command> [options]``.

Every command writes its resolved configuration to ``<out>/config.json``
next to its outputs. Exit status is 0 on success, 1 when a check fails and
2 on invalid configuration or input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io as _stdio
import logging
import os
import sys
import time
from pathlib import Path

from . import io
from .agent import Agent, greedy_rollout, teacher_forced_accuracy
from .config import RunConfig, build_env
from .env import Trajectory, save_episodes, NavGraph
from .errors import ConfigError, EpisodeError, EvaluationError
from .masks import ABLATION_SHAPES, MaskShape
from .metrics import MetricsReport, evaluate_trajectories
from .trainer import evaluate, train

log = logging.getLogger("lsanav")

OUT_ENV = "LSANAV_OUT"
GRAD_TOL = 1e-4


class CheckFailed(Exception):
    """A verification inside a command did not hold."""


# ---------------------------------------------------------------------------
# helpers


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _csv(header, rows) -> str:
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _load_config(args) -> tuple[RunConfig, Path | None]:
    if args.config:
        cfg, base = RunConfig.load(args.config), Path(args.config).resolve().parent
    else:
        cfg, base = RunConfig(), None
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "literal_alg1", False):
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, literal_alg1=True))
    return cfg, base


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", cfg.to_doc())
    return out


def _agent(cfg: RunConfig, checkpoint: str | None) -> Agent:
    if checkpoint:
        agent, _ = Agent.load(checkpoint, expect=cfg.model)
        return agent
    return Agent(cfg.model)


def _write_metrics(out: Path, stem: str, report: MetricsReport, extra: dict | None = None) -> None:
    doc = report.to_doc()
    if extra:
        doc.update(extra)
    io.write_json(out / f"{stem}.json", doc)
    (out / f"{stem}.csv").write_text(report.to_csv())


def _train_and_evaluate(cfg: RunConfig, base: Path | None):
    env, episodes = build_env(cfg, base)
    agent = Agent(cfg.model)
    history = train(agent, env, episodes, cfg.train,
                     callback=lambda i, l: log.info("step %d loss %.5f", i, l))
    report, _ = evaluate(agent, env, episodes)
    acc = teacher_forced_accuracy(agent, env, episodes)
    return agent, history, report, acc


# ---------------------------------------------------------------------------
# commands


def cmd_gen_env(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    env, episodes = build_env(cfg, base)
    env.graph.save(out / "graph.json")
    save_episodes(out / "episodes.json", episodes)
    if args.features:
        env.features.export_fixture(out / "features.bin")
    print(f"wrote {len(env.graph.nodes)} nodes, {len(env.graph.edges)} edges, {len(episodes)} episodes to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    cfg, _ = _load_config(args)
    out = _out_dir(args, cfg)
    reports = run_all(cfg.model, seed=cfg.model.init_seed)
    rows = []
    ok = True
    for name, rep in reports.items():
        passed = rep.passed(GRAD_TOL)
        ok &= passed
        rows.append((name, rep.max_rel_error, rep.n_checked, "pass" if passed else "FAIL"))
        print(f"{'PASS' if passed else 'FAIL'} {name:32s} max rel err {rep.max_rel_error:.3e} ({rep.n_checked} elements)")
    (out / "gradcheck.csv").write_text(_csv(["block", "max_rel_error", "n_checked", "status"], rows))
    io.write_json(out / "gradcheck.json", {
        "tolerance": GRAD_TOL,
        "blocks": {n: {"max_rel_error": r.max_rel_error, "n_checked": r.n_checked, "per_param": r.per_param}
                   for n, r in reports.items()},
        "passed": ok,
    })
    if not ok:
        raise CheckFailed("gradient check exceeded tolerance")
    return 0


def cmd_run_episode(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    env, episodes = build_env(cfg, base)
    if args.episode is not None:
        if not 0 <= args.episode < len(episodes):
            raise ConfigError(f"episode index {args.episode} out of range (0..{len(episodes) - 1})")
        episodes = [episodes[args.episode]]
    if args.teacher:
        trajs = [env.teacher_rollout(e) for e in episodes]
    else:
        agent = _agent(cfg, args.checkpoint)
        trajs = [greedy_rollout(agent, env, e, keep_traces=args.traces) for e in episodes]
    docs = []
    for t in trajs:
        d = t.to_doc()
        if args.traces and t.traces:
            d["attention"] = [tr.to_doc() for tr in t.traces]
        docs.append(d)
    io.write_json(out / "trajectories.json", {"format": "lsanav-trajectories/1", "trajectories": docs})
    report = evaluate_trajectories(env.graph, trajs, env.success_distance)
    _write_metrics(out, "metrics", report)
    print(report.to_csv(), end="")
    return 0


def cmd_train_toy(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    agent, history, report, acc = _train_and_evaluate(cfg, base)
    agent.save(out / "checkpoint.bin", step=cfg.train.iterations)
    (out / "loss.csv").write_text(_csv(["step", "loss"], history))
    _write_metrics(out, "metrics", report, {"teacher_accuracy": acc})
    print(f"teacher accuracy {acc:.4f}")
    print(report.to_csv(), end="")
    return 0


ABLATION_HEADER = ["teacher_accuracy", "final_loss", "ne", "sr", "osr", "spl", "tl", "n_episodes"]


def _ablation_row(label, history, report: MetricsReport, acc: float) -> list:
    final = history[-1][1] if history else float("nan")
    return [label, acc, final, report.ne, report.sr, report.osr, report.spl, report.tl, report.n_episodes]


def cmd_ablate_mask(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    rows = []
    for shape in ABLATION_SHAPES:
        run = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, mask=shape.label))
        _, history, report, acc = _train_and_evaluate(run, base)
        rows.append(_ablation_row(shape.label, history, report, acc))
        log.info("mask %s: sr %.3f spl %.3f", shape.label, report.sr, report.spl)
    (out / "ablation_mask.csv").write_text(_csv(["mask"] + ABLATION_HEADER, rows))
    print((out / "ablation_mask.csv").read_text(), end="")
    return 0


def cmd_ablate_iters(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    rows = []
    for t in range(5):
        run = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, iterations=t))
        _, history, report, acc = _train_and_evaluate(run, base)
        rows.append(_ablation_row(t, history, report, acc))
        log.info("T=%d: sr %.3f spl %.3f", t, report.sr, report.spl)
    (out / "ablation_iters.csv").write_text(_csv(["iterations"] + ABLATION_HEADER, rows))
    if args.check_baseline:
        run = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, use_slot_attention=False))
        _, history, report, acc = _train_and_evaluate(run, base)
        baseline = _ablation_row("baseline", history, report, acc)
        (out / "ablation_iters_baseline.csv").write_text(_csv(["iterations"] + ABLATION_HEADER, [baseline]))
        if baseline[1:] != rows[0][1:]:
            raise CheckFailed("T=0 row differs from the no-slot-attention baseline")
    print((out / "ablation_iters.csv").read_text(), end="")
    return 0


def _observation(cfg: RunConfig, base, args):
    env, episodes = build_env(cfg, base)
    if args.node is not None:
        node, heading = args.node, args.heading
    else:
        ep = episodes[args.episode or 0]
        traj = env.reset(ep)
        node, heading = traj.node, traj.heading
    if node not in env.graph.positions:
        raise ConfigError(f"unknown node {node}")
    return env.observe(node, heading)


def cmd_mask_dump(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    shape = MaskShape.parse(args.shape) if args.shape else cfg.model.mask_shape
    obs = _observation(cfg, base, args)
    mask = obs.mask(shape, cfg.model.include_stop)
    (out / "mask.txt").write_text(mask.to_text())
    (out / "mask.csv").write_text(mask.to_csv())
    print(mask.to_text(), end="")
    return 0


def cmd_attn_dump(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    agent = _agent(cfg, args.checkpoint)
    obs = _observation(cfg, base, args)
    _, trace, _ = agent.enhance(obs, None, training=False)
    io.write_json(out / "attn.json", trace.to_doc())
    (out / "attn.csv").write_text(trace.to_csv())
    print(f"wrote {len(trace.records())} attention records to {out}")
    return 0


def cmd_metrics(args) -> int:
    cfg, base = _load_config(args)
    out = _out_dir(args, cfg)
    doc = io.read_json(args.trajectories)
    if doc.get("format") != "lsanav-trajectories/1":
        raise ConfigError(f"{args.trajectories}: not a trajectory dump")
    trajs = [Trajectory.from_doc(d) for d in doc["trajectories"]]
    graph = NavGraph.load(args.graph) if args.graph else build_env(cfg, base)[0].graph
    report = evaluate_trajectories(graph, trajs, cfg.env.success_distance)
    _write_metrics(out, "metrics", report)
    print(io.dumps(report.to_doc()), end="")
    print(report.to_csv(), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or config out_dir)")
    common.add_argument("--literal-alg1", action="store_true",
                        help="use the literal pseudocode slot update (GRU output unused)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lsanav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", parents=[common], help="write graph and episode files")
    p.add_argument("--features", action="store_true", help="also export a feature fixture file")
    p.set_defaults(fn=cmd_gen_env)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every block")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("run-episode", parents=[common], help="greedy (or teacher) rollouts")
    p.add_argument("--checkpoint")
    p.add_argument("--teacher", action="store_true", help="follow the shortest-path teacher")
    p.add_argument("--episode", type=int, help="run a single episode by index")
    p.add_argument("--traces", action="store_true", help="include attention traces in the dump")
    p.set_defaults(fn=cmd_run_episode)

    p = sub.add_parser("train-toy", parents=[common], help="imitation training on the synthetic env")
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("ablate-mask", parents=[common], help="train/evaluate each mask shape")
    p.set_defaults(fn=cmd_ablate_mask)

    p = sub.add_parser("ablate-iters", parents=[common], help="train/evaluate T = 0..4")
    p.add_argument("--no-check-baseline", dest="check_baseline", action="store_false",
                   help="skip comparing T=0 against a model without slot attention")
    p.set_defaults(fn=cmd_ablate_iters)

    for name, fn, helptext in (("mask-dump", cmd_mask_dump, "dump a local attention mask"),
                               ("attn-dump", cmd_attn_dump, "dump slot attention weights")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--node", type=int, help="viewpoint (default: start of --episode)")
        p.add_argument("--heading", type=float, default=0.0, help="agent heading in radians with --node")
        p.add_argument("--episode", type=int)
        if name == "mask-dump":
            p.add_argument("--shape", help="mask shape, e.g. 3x3 or none (default: config)")
        else:
            p.add_argument("--checkpoint")
        p.set_defaults(fn=fn)

    p = sub.add_parser("metrics", parents=[common], help="metrics of a trajectory dump")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--graph", help="graph file (default: the configured environment)")
    p.set_defaults(fn=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.fn(args)
    except (ConfigError, EpisodeError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckFailed, EvaluationError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
