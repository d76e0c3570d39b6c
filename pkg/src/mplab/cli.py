"""Command line: ``mplab gen|train|eval|render|bench``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .baselines import bayesian_predict
from .config import ConfigError, RunConfig, load_config, serialize_config
from .pipeline.features import build_frame_table
from .pipeline.models import EventDataset, build_agent_dataset
from .pipeline.store import load_model
from .plots import density_raster, pgm_text, to_graymap
from .worldsim import read_episode

log = logging.getLogger("mplab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _workers(args) -> int:
    return args.workers if args.workers else (os.cpu_count() or 1)


def cmd_gen(args) -> int:
    cfg = _config(args)
    splits = bench.generate_splits(cfg, args.seed, _workers(args))
    out = Path(args.out)
    bench.write_splits(splits, out)
    (out / "config.conf").write_text(serialize_config(cfg))
    for split, eps in splits.items():
        st = bench.branch_statistics(eps)
        chosen = " ".join(f"{k}={v}" for k, v in st["chosen"].items())
        print(f"{split}: {st['episodes']} episodes, {st['pedestrians']} pedestrians, "
              f"{st['vehicles']} vehicles, {st['with_both_classes']} with both classes; "
              f"{st['decisions']} branch decisions ({chosen})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    model = bench.train_stage(args.stage, cfg, bench.read_split(args.data, "train"), args.seed,
                              args.out)
    last = model.log[-1] if model.log else None
    if last is not None:
        print(f"{args.stage}: {len(model.log)} log entries, final step {last[0]} k={last[1]} "
              f"loss={last[2]:.6g}")
    return EXIT_OK


def _load_models(cfg: RunConfig, ckdir) -> dict:
    models = {}
    for name in (*bench.LEARNED, "epn"):
        p = bench.checkpoint_path(ckdir, name)
        if name in cfg.eval.methods or (name == "epn" and p.exists()):
            if not p.exists():
                raise bench.MissingPrerequisite(f"eval of {name} requires checkpoint {p}")
            models[name] = load_model(p)
    return models


def cmd_eval(args) -> int:
    cfg = _config(args)
    models = _load_models(cfg, args.checkpoints) if args.checkpoints else {}
    test = bench.read_split(args.data, "test")
    result = bench.evaluate_run(cfg, models, test, args.seed, two_way_only=args.two_way)
    bench.write_eval(result, cfg, args.out, figures=not args.no_figures)
    print(Path(args.out, "report.csv").read_text(), end="")
    return EXIT_OK


def render_density(model, ep, agent, t: int, seed: int = 0, samples: int = 20):
    """Predicted mixture and hypotheses for one agent (or emergence when ``agent`` is None)."""
    cfg = ep.config
    if not 0 <= t or t + model.horizon >= ep.length:
        raise ValueError(f"t={t} leaves no {model.horizon}-step future in a "
                         f"{ep.length}-step episode")
    if model.kind == "epn":
        if agent is not None:
            raise ValueError("an emergence checkpoint renders with --agent none")
        ds = EventDataset(build_frame_table([ep], [(0, t)], model.horizon), [np.zeros((0, 4))],
                          [(0, t)])
    else:
        if agent is None:
            raise ValueError("an agent checkpoint needs --agent")
        lo = t - model.observe + 1
        if lo < 0 or not all(agent in ep.observed[s] and ep.visible(agent, s) >= cfg.visibility
                             for s in range(lo, t + 1)):
            raise ValueError(f"agent {agent} not visible at t={t} "
                             f"(needs frames {lo}..{t})")
        ds = build_agent_dataset([ep], [(0, t, agent)], model.observe, model.horizon)
    model.ensure_prior(ds.table)
    inp = model.features(ds, [0])
    if model.bayesian:
        return bayesian_predict(model, inp, samples, seed, model.K), None
    return model.mixtures(inp)[0], model.hypotheses(inp)[0]


def burn_outlines(gray: np.ndarray, boxes) -> np.ndarray:
    """Hypothesis boxes as max-intensity outlines."""
    out = gray.copy()
    h, w = out.shape
    for b in boxes:
        x0, y0 = int(np.floor(b[0] - b[2] / 2)), int(np.floor(b[1] - b[3] / 2))
        x1, y1 = int(np.floor(b[0] + b[2] / 2)), int(np.floor(b[1] + b[3] / 2))
        xs = np.arange(max(x0, 0), min(x1, w - 1) + 1)
        ys = np.arange(max(y0, 0), min(y1, h - 1) + 1)
        for y in (y0, y1):
            if 0 <= y < h:
                out[y, xs] = 255
        for x in (x0, x1):
            if 0 <= x < w:
                out[ys, x] = 255
    return out


def cmd_render(args) -> int:
    model = load_model(args.checkpoint)
    ep = read_episode(args.episode)
    agent = None if args.agent in (None, "none") else int(args.agent)
    mix, hyps = render_density(model, ep, agent, args.t, args.seed)
    F = ep.config.frame_size
    gray = to_graymap(density_raster(mix, F, F))
    if args.outlines and hyps is not None:
        gray = burn_outlines(gray, hyps)
    Path(args.out).write_text(pgm_text(gray))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    result = bench.run_bench(cfg, args.seed, args.out, _workers(args),
                             figures=not args.no_figures)
    print(Path(args.out, "report.csv").read_text(), end="")
    for k in sorted(result.metrics):
        print(f"{k} = {result.metrics[k]:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mplab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="key = value config file (defaults if omitted)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=0,
                        help="processes for episode generation (default: all cores)")
        sp.add_argument("--out", required=True, help=out_help)

    sp = sub.add_parser("gen", help="generate train/test episodes")
    common(sp, "output directory (train/ and test/ episode files)")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train one stage")
    sp.add_argument("stage", choices=bench.STAGES)
    sp.add_argument("--data", required=True, help="directory written by gen")
    common(sp, "checkpoint directory (prerequisites are read from here)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate methods on the test episodes")
    sp.add_argument("--data", required=True, help="directory written by gen")
    sp.add_argument("--checkpoints", help="checkpoint directory for learned methods")
    sp.add_argument("--two-way", action="store_true",
                    help="only windows with two equally likely outcomes")
    sp.add_argument("--no-figures", action="store_true")
    common(sp, "report directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("render", help="write a predicted density as a P2 graymap")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episode", required=True)
    sp.add_argument("--agent", default="none", help="agent id, or 'none' for emergence")
    sp.add_argument("--t", type=int, required=True)
    sp.add_argument("--outlines", action="store_true", help="burn hypothesis boxes in")
    common(sp, "output .pgm path")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("bench", help="gen, train every stage and eval in one run")
    sp.add_argument("--no-figures", action="store_true")
    common(sp, "run directory")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, bench.MissingPrerequisite, FileNotFoundError, ValueError, KeyError) as e:
        print(f"mplab {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"mplab {args.command}: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
