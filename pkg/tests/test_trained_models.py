"""Measured properties of the models trained by the seed-0 benchmark run."""

import csv
from dataclasses import replace

import numpy as np
import pytest

from mplab.bench import read_split, select_scenes
from mplab.config import bench_config
from mplab.geometry import apply_egomotion_array
from mplab.mixture import GaussianMixture, em_fit
from mplab.pipeline.features import build_frame_table
from mplab.pipeline.models import build_agent_dataset, build_epn_dataset
from mplab.pipeline.store import load_model
from mplab.worldsim import generate_episode
from mplab.worldsim.maps import CROSSING, OBSTRUCTION, SIDEWALK

REACH_MEASURED = 0.72


@pytest.fixture(scope="module")
def run(bench_runs):
    out = bench_runs[0][0]
    ck = out / "checkpoints"
    models = {s: load_model(ck / f"{s}.ck") for s in ("rpn", "rtn", "fln", "epn")}
    return {"out": out, "cfg": bench_config(), "test": read_split(out / "episodes", "test"),
            **models}


@pytest.fixture(scope="module")
def scenes(run):
    cfg, te, fln = run["cfg"], run["test"], run["fln"]
    sc = select_scenes(te, cfg.fln.observe, cfg.fln.horizon, cfg.data.scenes, 3, True)
    ds = build_agent_dataset(te, [(s.episode, s.t, s.agent) for s in sc],
                             cfg.fln.observe, cfg.fln.horizon)
    fln.ensure_prior(ds.table)
    inp = fln.features(ds, np.arange(len(ds)))
    seen = ~np.isnan(ds.target).any(axis=1)
    return {"scenes": sc, "ds": ds, "hyps": fln.hypotheses(inp), "mix": fln.mixtures(inp),
            "seen": seen}


def read_log(path):
    return [(int(r["step"]), int(r["k"]), float(r["loss"])) for r in csv.DictReader(path.open())]


def mean_nll(mixes, targets):
    return float(np.mean([-float(m.log_density(x)) for m, x in zip(mixes, targets)]))


def uniform_mixture(boxes, sigma):
    return GaussianMixture(np.full(len(boxes), 1 / len(boxes)), boxes, np.full(boxes.shape, sigma))


def frame_pairs(episodes, dt, stride=3):
    keys = [(ei, t) for ei, ep in enumerate(episodes) for t in range(0, ep.length - dt, stride)]
    return build_frame_table(episodes, keys, dt), build_frame_table(
        episodes, [(ei, t + dt) for ei, t in keys], 0)


class TestReachabilityPrior:
    @pytest.mark.xfail(strict=True, reason=f"measured about {REACH_MEASURED}; see the "
                       "decisions ledger for the analysis")
    def test_hypotheses_on_walkable_cells_of_held_out_maps(self, run):
        te, rpn = run["test"], run["rpn"]
        keys = [(ei, t) for ei, ep in enumerate(te) for t in range(0, ep.length, 5)]
        H = rpn.hypotheses(build_frame_table(te, keys, 0).static)
        hits = []
        for (ei, t), h in zip(keys, H):
            lab = te[ei].frame(t).static.labels
            F = lab.shape[0]
            for x, y in h[:, :2]:
                inside = 0 <= x < F and 0 <= y < F
                hits.append(inside and lab[int(y), int(x)] in (SIDEWALK, CROSSING))
        frac = float(np.mean(hits))
        print(f"walkable fraction {frac:.3f}")
        assert frac >= 0.9

    def test_loss_falls_from_first_to_last_stage(self, run):
        log = read_log(run["out"] / "checkpoints" / "rpn.log")
        assert log[0][1] == 20 and log[-1][1] == 1
        assert log[-1][2] < log[0][2]


class TestReachabilityTransfer:
    @pytest.mark.parametrize("dt", [15, 5])
    def test_beats_copy_and_analytic_warp(self, run, dt):
        rpn, rtn = run["rpn"], run["rtn"]
        now_t, fut_t = frame_pairs(run["test"], dt)
        now = rpn.hypotheses(now_t.static)
        target = rpn.hypotheses(fut_t.static)
        pred = rtn.transfer(now, now_t.egos, now_t.ego, now_t.static)
        warped = np.array([apply_egomotion_array(e, b) for e, b in zip(now_t.egos, now)])

        def l1(x):
            return float(np.abs(x - target).sum(axis=(1, 2)).mean())

        print(f"dt={dt}: rtn {l1(pred):.2f}, copy {l1(now):.2f}, warp {l1(warped):.2f}")
        assert l1(pred) < l1(now)
        assert l1(pred) < l1(warped)

    def test_stationary_camera_keeps_boxes(self, run):
        cfg = run["cfg"]
        world = replace(cfg.world, ego_speed_max=0.0, ego_zoom_max=1.0, ego_rot_max=0.0)
        eps = [generate_episode(10_000 + s, world) for s in range(6)]
        now_t, _ = frame_pairs(eps, 15)
        now = run["rpn"].hypotheses(now_t.static)
        pred = run["rtn"].transfer(now, now_t.egos, now_t.ego, now_t.static)
        drift = float(np.abs(pred - now).sum(axis=(1, 2)).mean())
        train_err = read_log(run["out"] / "checkpoints" / "rtn.log")[-1][2]
        print(f"stationary drift {drift:.2f}, final training L1 {train_err:.2f}")
        assert drift <= train_err


class TestFutureLocalization:
    def test_fitting_head_no_worse_than_em(self, scenes):
        seen, gt = scenes["seen"], scenes["ds"].target
        fitted = [m for m, s in zip(scenes["mix"], seen) if s]
        em = [em_fit(h, 4, seed=0) for h, s in zip(scenes["hyps"], seen) if s]
        a, b = mean_nll(fitted, gt[seen]), mean_nll(em, gt[seen])
        print(f"fitting head {a:.3f}, EM {b:.3f}")
        assert a - b < 0.5

    def test_narrower_than_reachability_prior(self, run, scenes):
        seen, gt, ds = scenes["seen"], scenes["ds"].target, scenes["ds"]
        prior = ds.table.prior[ds.frame]
        fln = mean_nll([m for m, s in zip(scenes["mix"], seen) if s], gt[seen])
        rpn = mean_nll([uniform_mixture(p, 5.0) for p, s in zip(prior, seen) if s], gt[seen])
        print(f"FLN {fln:.3f}, prior mixture {rpn:.3f}")
        assert fln < rpn


class TestEmergence:
    def test_modes_near_edges_or_obstructions(self, run):
        cfg, te, epn = run["cfg"], run["test"], run["epn"]
        eds = build_epn_dataset(te, epn.class_id, cfg.epn.horizon)
        idx = np.arange(min(len(eds), cfg.epn.events))
        epn.ensure_prior(eds.table)
        near = []
        for i, mix in zip(idx, epn.mixtures(epn.features(eds, idx))):
            ei, t = eds.meta[i]
            lab = te[ei].frame(t).static.labels
            F = lab.shape[0]
            oy, ox = np.nonzero(lab == OBSTRUCTION)
            for x, y in mix.mu[:, :2]:
                d = min(x, y, F - x, F - y)
                if len(ox):
                    d = min(d, float(np.min(np.hypot(ox + 0.5 - x, oy + 0.5 - y))))
                near.append(d <= 8)
        frac = float(np.mean(near))
        print(f"modes within 8 px of an edge or obstruction: {frac:.3f}")
        assert frac >= 0.8
