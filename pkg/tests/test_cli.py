import csv
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from mplab.bench import branch_statistics
from mplab.cli import burn_outlines, main
from mplab.mixture import GaussianMixture
from mplab.plots import density_raster, pgm_text, read_pgm, to_graymap
from mplab.worldsim import PEDESTRIAN, VEHICLE, WorldConfig, generate_episode, read_episode

TINY = """\
world.p_cross = 0.5
world.p_continue = 0.5
world.p_wait = 0.0
world.ped_speed_min = 1.0
world.ped_speed_max = 1.0
data.train_episodes = 3
data.test_episodes = 3
data.scenes = 12
ewta.stages = 4, 1
ewta.steps_per_stage = 10
train.hidden = 16
train.layers = 1
train.fit_steps = 10
train.fit_hidden = 16
train.log_every = 5
rtn.steps = 10
"""


def run(*argv):
    return main([str(a) for a in argv])


def files(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.conf").write_text(TINY)
    assert run("gen", "--config", d / "tiny.conf", "--seed", 2, "--workers", 1,
               "--out", d / "data") == 0
    for stage in ("rpn", "rtn", "fln", "epn"):
        assert run("train", stage, "--config", d / "tiny.conf", "--data", d / "data",
                   "--seed", 2, "--out", d / "ck") == 0
    return d


class TestGen:
    def test_prints_counts_and_branch_statistics(self, work, capsys, tmp_path):
        assert run("gen", "--config", work / "tiny.conf", "--seed", 2, "--out", tmp_path) == 0
        out = capsys.readouterr().out
        assert "train: 3 episodes" in out and "test: 3 episodes" in out
        assert "branch decisions" in out and "cross=" in out

    def test_byte_identical_and_worker_independent(self, work, tmp_path):
        assert run("gen", "--config", work / "tiny.conf", "--seed", 2, "--workers", 2,
                   "--out", tmp_path) == 0
        assert files(tmp_path) == files(work / "data")

    def test_branch_depth_above_cap_rejected_before_generation(self, tmp_path, capsys):
        conf = tmp_path / "bad.conf"
        conf.write_text("world.branch_cap = 2\n")
        assert run("gen", "--config", conf, "--out", tmp_path / "out") == 1
        assert "branch_cap" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_unknown_key_named(self, tmp_path, capsys):
        conf = tmp_path / "bad.conf"
        conf.write_text("world.nonsense = 3\n")
        assert run("gen", "--config", conf, "--out", tmp_path / "out") == 1
        assert "world.nonsense" in capsys.readouterr().err

    def test_default_world_has_both_classes(self):
        eps = [generate_episode(s, WorldConfig()) for s in range(40)]
        assert branch_statistics(eps)["with_both_classes"] >= 0.95 * 40
        for ep in eps[:5]:
            classes = {a.class_id for st in ep.states for a in st.values()}
            assert {PEDESTRIAN, VEHICLE} <= classes

    def test_bad_arguments_exit_1(self):
        assert run("gen") == 1
        assert run("frobnicate") == 1


class TestTrain:
    def test_missing_prerequisite(self, work, tmp_path, capsys):
        code = run("train", "fln", "--config", work / "tiny.conf", "--data", work / "data",
                   "--out", tmp_path)
        assert code == 1
        assert "requires: rtn" in capsys.readouterr().err

    def test_log_final_stage_is_k1(self, work):
        rows = list(csv.DictReader((work / "ck" / "fln.log").open()))
        assert rows[-1]["k"] == "1" and rows[0]["k"] == "4"
        assert (work / "ck" / "fln-fit.log").exists()

    def test_rerun_identical_checkpoint(self, work, tmp_path):
        (tmp_path / "rpn.ck").write_bytes((work / "ck" / "rpn.ck").read_bytes())
        assert run("train", "rtn", "--config", work / "tiny.conf", "--data", work / "data",
                   "--seed", 2, "--out", tmp_path) == 0
        assert (tmp_path / "rtn.ck").read_bytes() == (work / "ck" / "rtn.ck").read_bytes()

    def test_missing_data(self, work, tmp_path):
        assert run("train", "rpn", "--data", tmp_path / "none", "--out", tmp_path) == 1


class TestEval:
    def test_kalman_only(self, work, tmp_path):
        conf = tmp_path / "k.conf"
        conf.write_text(TINY + "eval.methods = kalman\n")
        assert run("eval", "--config", conf, "--data", work / "data", "--out", tmp_path) == 0
        rows = list(csv.DictReader((tmp_path / "report.csv").open()))
        assert [r["split"] for r in rows] == ["all", "challenging", "very challenging"]
        assert all(r["method"] == "kalman" and r["nll"] == "" for r in rows)
        assert (tmp_path / "records.csv").exists() and (tmp_path / "report_fde.png").exists()

    def test_missing_checkpoint(self, work, tmp_path, capsys):
        conf = tmp_path / "b.conf"
        conf.write_text(TINY + "eval.methods = kalman, bayesian\n")
        assert run("eval", "--config", conf, "--data", work / "data", "--checkpoints",
                   work / "ck", "--out", tmp_path) == 1
        assert "bayesian" in capsys.readouterr().err

    def test_deterministic_report(self, work, tmp_path):
        conf = tmp_path / "f.conf"
        conf.write_text(TINY + "eval.methods = kalman, linear, fln\n")
        for d in ("a", "b"):
            assert run("eval", "--config", conf, "--data", work / "data", "--checkpoints",
                       work / "ck", "--out", tmp_path / d, "--no-figures") == 0
        assert files(tmp_path / "a") == files(tmp_path / "b")
        methods = {r["method"] for r in csv.DictReader((tmp_path / "a" / "report.csv").open())}
        assert methods == {"kalman", "linear", "fln"}


class TestRender:
    def test_tight_single_component_peaks_at_mean(self):
        mix = GaussianMixture(np.ones(1), np.array([[10.5, 20.5, 3, 3]]), np.full((1, 4), 0.7))
        gray = to_graymap(density_raster(mix, 64, 48))
        assert gray.shape == (48, 64)
        assert np.unravel_index(np.argmax(gray), gray.shape) == (20, 10)
        assert gray.max() == 255 and gray.min() >= 0

    def test_pgm_format(self, tmp_path):
        gray = np.array([[0, 255, 3], [4, 5, 6]])
        text = pgm_text(gray)
        assert text.splitlines()[:3] == ["P2", "3 2", "255"]
        (tmp_path / "g.pgm").write_text(text)
        assert_array_equal(read_pgm(tmp_path / "g.pgm"), gray)

    def test_outlines_at_max_intensity(self):
        gray = burn_outlines(np.zeros((16, 16), int), [np.array([8.0, 8.0, 4.0, 4.0])])
        assert gray[6, 6] == gray[10, 10] == gray[6, 8] == 255
        assert gray[8, 8] == 0

    def _agent(self, work):
        ep_path = sorted((work / "data" / "test").glob("*.txt"))[0]
        ep = read_episode(ep_path)
        for t in range(4, ep.length - 15):
            for aid in sorted(ep.observed[t]):
                if ep.states[t][aid].class_id == PEDESTRIAN and all(
                        aid in ep.observed[s] and ep.visible(aid, s) >= 0.25
                        for s in range(t - 4, t + 1)):
                    return ep_path, aid, t
        raise AssertionError("no renderable agent")

    def test_render_checkpoint(self, work, tmp_path):
        ep_path, aid, t = self._agent(work)
        out = tmp_path / "a.pgm"
        args = ("render", "--checkpoint", work / "ck" / "fln.ck", "--episode", ep_path,
                "--agent", aid, "--t", t, "--out", out, "--outlines")
        assert run(*args) == 0
        assert out.read_text().splitlines()[0] == "P2"
        gray = read_pgm(out)
        assert gray.shape == (64, 64) and gray.sum() > 0 and gray.max() == 255
        first = out.read_bytes()
        assert run(*args) == 0
        assert out.read_bytes() == first

    def test_render_emergence(self, work, tmp_path):
        ep_path, _, t = self._agent(work)
        assert run("render", "--checkpoint", work / "ck" / "epn.ck", "--episode", ep_path,
                   "--t", t, "--out", tmp_path / "e.pgm") == 0
        assert read_pgm(tmp_path / "e.pgm").sum() > 0

    def test_invisible_agent(self, work, tmp_path, capsys):
        ep_path, _, t = self._agent(work)
        assert run("render", "--checkpoint", work / "ck" / "fln.ck", "--episode", ep_path,
                   "--agent", 9999, "--t", t, "--out", tmp_path / "x.pgm") == 1
        assert "not visible" in capsys.readouterr().err


class TestBench:
    def test_bench_chain_is_reproducible(self, work, tmp_path, capsys):
        for d in ("a", "b"):
            assert run("bench", "--config", work / "tiny.conf", "--seed", 5, "--workers", 1,
                       "--out", tmp_path / d) == 0
        a, b = files(tmp_path / "a"), files(tmp_path / "b")
        assert a == b
        for name in ("report.csv", "metrics.csv", "records.csv", "report_fde.png",
                     "training_loss.png", "checkpoints/fln.ck", "checkpoints/epn.ck",
                     "checkpoints/bayesian.ck", "checkpoints/fln_noprior.ck"):
            assert name in a
        assert "coverage_fln" in capsys.readouterr().out
