"""Generation, training and evaluation stages shared by the CLI and the benchmark.

The benchmark chains the stages with one seed.  Its scenes are pedestrian
windows whose exact future has two outcomes of probability 0.5 each; besides
the method-by-split report it records branch coverage, calibration against
the enumerated distribution and the emergence density ratio.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import bayesian_predict, kalman_filter, kalman_predict, linear_extrapolate
from .config import RunConfig, serialize_config
from .evaluation import EvalRecord, evaluate, records_csv, report_csv
from .geometry import BBox, apply_egomotion
from .mixture import GaussianMixture, nll
from .pipeline.features import observed_track
from .pipeline.models import (agent_sample_keys, build_agent_dataset, build_epn_dataset,
                              build_fln_dataset, build_rpn_dataset, build_rtn_dataset,
                              train_bayesian, train_epn, train_fln, train_rpn, train_rtn)
from .pipeline.store import load_model, model_bytes, write_log
from .worldsim import (PEDESTRIAN, VEHICLE, enumerate_future, generate_episode, read_episode,
                       write_episode)

log = logging.getLogger(__name__)

SEED_STRIDE = 1_000_000
STAGES = ("rpn", "rtn", "fln", "fln_noprior", "bayesian", "epn")
PREREQUISITE = {"rpn": None, "rtn": "rpn", "fln": "rtn", "bayesian": "rtn", "epn": "rtn",
                "fln_noprior": None}
LEARNED = ("fln", "fln_noprior", "bayesian")


class MissingPrerequisite(ValueError):
    """A stage was requested before the checkpoint it depends on exists."""


# generation ------------------------------------------------------------------

def episode_seeds(seed: int, n: int, offset: int = 0) -> list[int]:
    return [seed * SEED_STRIDE + offset + i for i in range(n)]


def _gen(args):
    s, world = args
    return generate_episode(s, world)


def generate_episodes(world, seeds, workers: int = 1) -> list:
    """Episodes for ``seeds`` in order; identical for any worker count."""
    jobs = [(s, world) for s in seeds]
    if workers <= 1 or len(jobs) < 2:
        return [_gen(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_gen, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def generate_splits(cfg: RunConfig, seed: int, workers: int = 1) -> dict[str, list]:
    d = cfg.data
    return {"train": generate_episodes(cfg.world, episode_seeds(seed, d.train_episodes), workers),
            "test": generate_episodes(cfg.world,
                                      episode_seeds(seed, d.test_episodes, d.test_seed_offset),
                                      workers)}


def write_splits(splits: dict, out) -> None:
    for split, eps in splits.items():
        d = Path(out) / split
        d.mkdir(parents=True, exist_ok=True)
        for ep in eps:
            write_episode(ep, d / f"ep_{ep.seed}.txt")


def read_split(data, split: str) -> list:
    d = Path(data) / split
    files = sorted(d.glob("ep_*.txt"), key=lambda p: int(p.stem[3:]))
    if not files:
        raise FileNotFoundError(f"no episodes in {d}")
    return [read_episode(p) for p in files]


def branch_statistics(episodes) -> dict:
    """Agent counts per class and branch decisions per chosen option."""
    agents = Counter()
    chosen = Counter()
    with_both = 0
    for ep in episodes:
        classes = {}
        for st in ep.states:
            for aid, a in st.items():
                classes[aid] = a.class_id
        per = Counter(classes.values())
        agents.update(per)
        with_both += per[PEDESTRIAN] > 0 and per[VEHICLE] > 0
        for b in ep.branch_log:
            chosen[b.options[b.chosen]] += 1
    return {"episodes": len(episodes), "pedestrians": agents[PEDESTRIAN],
            "vehicles": agents[VEHICLE], "with_both_classes": with_both,
            "decisions": sum(chosen.values()), "chosen": dict(sorted(chosen.items()))}


# training --------------------------------------------------------------------

def checkpoint_path(ckdir, stage: str) -> Path:
    return Path(ckdir) / f"{stage}.ck"


def train_stage(stage: str, cfg: RunConfig, episodes, seed: int, ckdir, prereq=None,
                cache: dict | None = None):
    """Train one stage, write ``<stage>.ck`` and its logs into ``ckdir``, return the model.

    ``prereq`` is the required upstream model; when omitted it is loaded
    from ``ckdir``.  ``cache`` shares the agent dataset (and its prior
    boxes) between stages trained on the same episodes and RTN.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    need = PREREQUISITE[stage]
    if need is not None and prereq is None:
        p = checkpoint_path(ckdir, need)
        if not p.exists():
            raise MissingPrerequisite(f"stage {stage} requires: {need} (no checkpoint at {p})")
        prereq = load_model(p)
    tc = cfg.train_config(stage)
    if stage == "rpn":
        model = train_rpn(build_rpn_dataset(episodes, PEDESTRIAN, cfg.rpn.t_stride), seed, tc=tc)
    elif stage == "rtn":
        ds = build_rtn_dataset(prereq, episodes, cfg.rtn.horizons)
        model = train_rtn(prereq, episodes, seed, tc=tc, dataset=ds)
    elif stage == "epn":
        ds = build_epn_dataset(episodes, prereq.class_id, cfg.epn.horizon)
        model = train_epn(prereq, ds, seed, cfg.epn.k, tc, True, cfg.epn.horizon)
    else:
        cache = {} if cache is None else cache
        if "agents" not in cache:
            cache["agents"] = build_fln_dataset(episodes, PEDESTRIAN, cfg.fln.observe,
                                                cfg.fln.horizon, cfg.data.t_stride)
        ds = cache["agents"]
        log.info("%s: %d samples, %d skipped for visibility", stage, len(ds), ds.skipped)
        if stage == "fln":
            model = train_fln(prereq, ds, seed, cfg.fln.k, tc, True, cfg.fln.horizon)
        elif stage == "fln_noprior":
            model = train_fln(None, ds, seed, cfg.fln.k, tc, False, cfg.fln.horizon)
        else:
            model = train_bayesian(prereq, ds, seed, tc, cfg.bayes.dropout, cfg.bayes.k, True,
                                   cfg.fln.horizon)
    ckdir = Path(ckdir)
    ckdir.mkdir(parents=True, exist_ok=True)
    checkpoint_path(ckdir, stage).write_bytes(model_bytes(model))
    write_log(model.log, ckdir / f"{stage}.log")
    if getattr(model, "fit_log", None):
        write_log(model.fit_log, ckdir / f"{stage}-fit.log")
    return model


# evaluation ------------------------------------------------------------------

@dataclass
class Scene:
    episode: int
    t: int
    agent: int
    outcomes: np.ndarray       # (M, 4) enumerated boxes at t + horizon
    probs: np.ndarray          # (M,)

    @property
    def two_way(self) -> bool:
        return len(self.probs) == 2 and bool(np.allclose(self.probs, 0.5, rtol=0, atol=1e-9))

    @property
    def key(self) -> str:
        return f"{self.episode}:{self.t}:{self.agent}"


def select_scenes(episodes, observe: int, horizon: int, limit: int, stride: int = 3,
                  two_way_only: bool = False, class_id: int = PEDESTRIAN) -> list[Scene]:
    """Evaluation windows in episode/time/agent order, at most ``limit``.

    With ``two_way_only`` only windows whose enumerated future has exactly two
    outcomes of probability 0.5 are kept.
    """
    out = []
    for ei, ep in enumerate(episodes):
        keys, _ = agent_sample_keys([ep], class_id, observe, horizon, stride)
        for _, t, aid in keys:
            fd = enumerate_future(ep, aid, t, horizon)
            sc = Scene(ei, t, aid, fd.boxes(), fd.probabilities)
            if two_way_only and not sc.two_way:
                continue
            out.append(sc)
            if len(out) >= limit:
                return out
    return out


def covers(means: np.ndarray, outcomes: np.ndarray, radius: float) -> bool:
    """Whether every outcome centre has a mean centre within ``radius`` px."""
    for o in outcomes:
        if np.min(np.hypot(means[:, 0] - o[0], means[:, 1] - o[1])) > radius:
            return False
    return True


def smoothed_oracle(scene: Scene, sigma: float) -> GaussianMixture:
    """The enumerated distribution with an isotropic ``sigma`` around each outcome."""
    return GaussianMixture(scene.probs, scene.outcomes, np.full(scene.outcomes.shape, sigma))


def baseline_boxes(ep, agent: int, t: int, observe: int, horizon: int) -> tuple[BBox, BBox]:
    """Kalman and linear forecasts at ``t + horizon``, warped into that frame."""
    track = [BBox.from_array(b) for b in observed_track(ep, agent, t, observe)]
    ego = ep.egomotion(t, t + horizon)
    return (apply_egomotion(ego, kalman_predict(kalman_filter(track), horizon)),
            apply_egomotion(ego, linear_extrapolate(track, horizon)))


def scene_mixtures(cfg: RunConfig, models: dict, test_eps, scenes, seed: int) -> dict:
    """Predicted mixtures per learned method, one per scene."""
    if not any(m in models for m in LEARNED):
        return {}
    keys = [(s.episode, s.t, s.agent) for s in scenes]
    ds = build_agent_dataset(test_eps, keys, cfg.fln.observe, cfg.fln.horizon)
    out = {}
    for name in LEARNED:
        m = models.get(name)
        if m is None:
            continue
        m.ensure_prior(ds.table)
        inp = m.features(ds, np.arange(len(ds)))
        if m.bayesian:
            out[name] = [bayesian_predict(m, inp.row(i), cfg.bayes.samples, seed * 7919 + i,
                                          cfg.bayes.k) for i in range(len(ds))]
        else:
            out[name] = m.mixtures(inp)
    return out


def emergence_density_ratio(cfg: RunConfig, epn, test_eps, seed: int) -> tuple[float, int]:
    """Mean EPN density at true emergence boxes over the mean at uniform random centres.

    Random boxes keep the size of the event they stand in for.
    """
    eds = build_epn_dataset(test_eps, epn.class_id, cfg.epn.horizon)
    idx = np.arange(min(len(eds), cfg.epn.events))
    epn.ensure_prior(eds.table)
    mixes = epn.mixtures(epn.features(eds, idx))
    rng = np.random.default_rng([seed, 0xE9E])
    F = cfg.world.frame_size
    n = cfg.eval.density_points
    true_d, rand_d = [], []
    for mix, i in zip(mixes, idx):
        for box in eds.targets[i]:
            true_d.append(math.exp(mix.log_density(box)))
            pts = np.column_stack([rng.uniform(0, F, (n, 2)), np.tile(box[2:], (n, 1))])
            rand_d.append(float(np.mean(np.exp(mix.log_density(pts)))))
    if not true_d:
        return math.nan, 0
    return float(np.mean(true_d) / max(np.mean(rand_d), 1e-300)), len(true_d)


@dataclass
class EvalResult:
    rows: list
    metrics: dict[str, float]
    records: list = field(default_factory=list)
    example: dict = field(default_factory=dict)


def evaluate_run(cfg: RunConfig, models: dict, test_eps, seed: int,
                 two_way_only: bool = False) -> EvalResult:
    """Records, report rows and scalar metrics for the requested methods.

    ``models`` maps method names (and optionally ``"epn"``) to loaded models.
    """
    missing = [m for m in cfg.eval.methods if m in LEARNED and m not in models]
    if missing:
        raise MissingPrerequisite(f"eval requires checkpoints for: {', '.join(missing)}")
    H = cfg.fln.horizon
    scenes = select_scenes(test_eps, cfg.fln.observe, H, cfg.data.scenes, cfg.data.test_stride,
                           two_way_only)
    if not scenes:
        raise RuntimeError("no evaluation scenes in the test episodes; "
                           "raise data.test_episodes")
    mixes = scene_mixtures(cfg, {m: models[m] for m in cfg.eval.methods if m in models},
                           test_eps, scenes, seed)
    records = []
    two_way = [i for i, s in enumerate(scenes) if s.two_way]
    metrics = {"scenes": float(len(scenes)), "two_way_scenes": float(len(two_way))}
    for i, sc in enumerate(scenes):
        ep = test_eps[sc.episode]
        gt = ep.observed[sc.t + H][sc.agent]
        kal, lin = baseline_boxes(ep, sc.agent, sc.t, cfg.fln.observe, H)
        kfde = math.hypot(kal.x - gt.x, kal.y - gt.y)
        preds = {"kalman": kal, "linear": lin}
        preds.update({name: ms[i] for name, ms in mixes.items()})
        for name in cfg.eval.methods:
            records.append(EvalRecord(sc.key, name, gt, preds[name], kfde))
    for name, ms in mixes.items():
        if two_way:
            hit = sum(covers(ms[i].mu, scenes[i].outcomes, cfg.eval.coverage_px) for i in two_way)
            metrics[f"coverage_{name}"] = hit / len(two_way)
    if "fln" in mixes:
        gts = [test_eps[s.episode].observed[s.t + H][s.agent] for s in scenes]
        metrics["nll_fln_realized"] = float(np.mean([nll(m, g) for m, g in zip(mixes["fln"], gts)]))
        metrics["nll_oracle_smoothed"] = float(np.mean(
            [nll(smoothed_oracle(s, cfg.eval.smoothing_px), g) for s, g in zip(scenes, gts)]))
    F = cfg.world.frame_size
    rows = evaluate(records, (F, F))
    for r in rows:
        if r.split == "all":
            metrics[f"fde_{r.method}"] = r.fde
            if r.nll is not None:
                metrics[f"nll_{r.method}"] = r.nll
    if "epn" in models:
        ratio, n_events = emergence_density_ratio(cfg, models["epn"], test_eps, seed)
        metrics["epn_density_ratio"] = ratio
        metrics["epn_events"] = float(n_events)
    example = {}
    if "fln" in mixes:
        i = two_way[0] if two_way else 0
        sc = scenes[i]
        ds = build_agent_dataset(test_eps, [(sc.episode, sc.t, sc.agent)], cfg.fln.observe, H)
        m = models["fln"]
        m.ensure_prior(ds.table)
        example = {"mixture": mixes["fln"][i], "hypotheses": m.hypotheses(m.features(ds, [0]))[0],
                   "outcomes": sc.outcomes, "gt": test_eps[sc.episode].observed[sc.t + H][sc.agent]}
    return EvalResult(rows, metrics, records, example)


def metrics_csv(metrics: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k in sorted(metrics):
        w.writerow([k, f"{metrics[k]:.6f}"])
    return buf.getvalue()


def read_metrics(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {r["metric"]: float(r["value"]) for r in csv.DictReader(fh)}


def write_eval(result: EvalResult, cfg: RunConfig, out, logs: dict | None = None,
               figures: bool = True) -> None:
    """``report.csv``, ``records.csv``, ``metrics.csv`` and figures in ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    F = cfg.world.frame_size
    (out / "report.csv").write_text(report_csv(result.rows))
    (out / "records.csv").write_text(records_csv(result.records, (F, F)))
    (out / "metrics.csv").write_text(metrics_csv(result.metrics))
    if figures:
        from .plots import bench_figures
        bench_figures(result, out, F, logs)


def run_bench(cfg: RunConfig, seed: int, out, workers: int = 1, figures: bool = True) -> EvalResult:
    """gen -> train (every stage) -> eval on two-way branching scenes, all under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.conf").write_text(serialize_config(cfg))
    splits = generate_splits(cfg, seed, workers)
    write_splits(splits, out / "episodes")
    ck = out / "checkpoints"
    models, cache = {}, {}
    for stage in STAGES:
        log.info("training %s", stage)
        models[stage] = train_stage(stage, cfg, splits["train"], seed, ck,
                                    models.get(PREREQUISITE[stage]), cache)
    result = evaluate_run(cfg, models, splits["test"], seed, two_way_only=True)
    write_eval(result, cfg, out, {name: m.log for name, m in models.items()}, figures)
    return result
