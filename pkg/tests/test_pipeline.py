import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from mplab.ewta import EwtaSchedule
from mplab.geometry import clamp_array
from mplab.pipeline.features import (SLOT_WINDOW, from_heading_frame, heading_index,
                                     local_patch, observed_track, slot_centres, slot_grid,
                                     slot_windows, to_heading_frame, track_vector)
from mplab.pipeline.models import (SceneInput, TrainConfig, build_epn_dataset, build_fln_dataset,
                                   build_rpn_dataset, predict, rtn_targets, train_epn, train_fln,
                                   train_rpn, train_rtn)
from mplab.pipeline.store import log_text, model_bytes, model_from_bytes
from mplab.worldsim import PEDESTRIAN, VEHICLE, WorldConfig, generate_episode
from mplab.worldsim.maps import OFF_MAP, STATIC_CLASSES
from mplab.worldsim.render import static_features

WORLD = WorldConfig(p_cross=0.5, p_continue=0.5, p_wait=0.0, ped_speed_min=1.0,
                    ped_speed_max=1.0)
TINY = TrainConfig(lr=2e-3, batch=16, hidden=32, layers=2,
                   schedule=EwtaSchedule((20, 4, 1), 40), fit_steps=60, fit_hidden=32,
                   rtn_steps=60, log_every=10)


@pytest.fixture(scope="module")
def episodes():
    return [generate_episode(s, WORLD) for s in range(6)]


@pytest.fixture(scope="module")
def trained(episodes):
    rpn = train_rpn(build_rpn_dataset(episodes, PEDESTRIAN), 3, tc=TINY)
    rtn = train_rtn(rpn, episodes, 3, tc=TINY)
    fds = build_fln_dataset(episodes, PEDESTRIAN, 5, 15, t_stride=2)
    fln = train_fln(rtn, fds, 3, 4, TINY)
    eds = build_epn_dataset(episodes, PEDESTRIAN, 5)
    epn = train_epn(rtn, eds, 3, 8, TINY)
    return {"rpn": rpn, "rtn": rtn, "fln": fln, "epn": epn, "fds": fds, "eds": eds}


class TestHeadingFrame:
    @pytest.mark.parametrize("d,rot", [((3, 0.5), 0), ((0.2, 2), 1), ((-4, 1), 2),
                                       ((1, -5), 3), ((0, 0), 0)])
    def test_heading_index(self, d, rot):
        track = np.array([[10, 10, 3, 3], [10 + d[0], 10 + d[1], 3, 3]], float)
        assert heading_index(track) == rot

    @pytest.mark.parametrize("rot", range(4))
    def test_travel_direction_maps_to_plus_x(self, rot):
        dirs = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}
        out = to_heading_frame(np.array([*dirs[rot], 2.0, 5.0]), rot)
        assert_allclose(out[:2], [1, 0], atol=1e-12)
        assert_allclose(out[2:], [2, 5] if rot % 2 == 0 else [5, 2])

    @settings(max_examples=60)
    @given(arrays(float, (5, 4), elements=st.floats(-50, 50)),
           arrays(int, 5, elements=st.integers(0, 3)))
    def test_round_trip(self, off, rot):
        assert_allclose(from_heading_frame(to_heading_frame(off, rot), rot), off, atol=1e-9)

    @settings(max_examples=40)
    @given(arrays(float, (3, 4), elements=st.floats(-30, 30)),
           arrays(float, (3, 4), elements=st.floats(-30, 30)),
           arrays(int, 3, elements=st.integers(0, 3)))
    def test_scene_input_inverse(self, boxes, anchor, rot):
        inp = SceneInput(np.zeros((3, 1)), anchor, rot)
        assert_allclose(inp.to_boxes(inp.to_offsets(boxes)[:, None])[:, 0], boxes, atol=1e-9)


class TestFeatures:
    def test_track_vector_layout(self):
        track = np.array([[30, 32, 3, 3], [31, 32, 3, 3], [32, 32, 3, 3]], float)
        v = track_vector(track, 64, 0)
        assert v.shape == (12,)
        assert_allclose(v[:4], [0, 0, 0, 0])
        assert_allclose(v[4:6], [-2 / 8, 0])

    def test_patch_shape_and_rotation(self, episodes):
        ep = episodes[0]
        p0 = local_patch(ep, 0, (40.0, 40.0), 0).reshape(2, 20, 20)
        p2 = local_patch(ep, 0, (40.0, 40.0), 2).reshape(2, 20, 20)
        assert p0.shape == (2, 20, 20)
        assert np.all((p0 >= 0) & (p0 <= 1))
        # a half turn mirrors both axes of the window
        assert_allclose(p2, p0[:, ::-1, ::-1], atol=0.26)

    @pytest.mark.parametrize("n,grid", [(20, (5, 4)), (4, (2, 2)), (7, (7, 1)), (1, (1, 1))])
    def test_slot_grid(self, n, grid):
        assert slot_grid(n) == grid
        c = slot_centres(n, 64)
        assert c.shape == (n, 2) and np.all((c > 0) & (c < 64))

    def test_slot_windows_pad_with_off_map(self):
        static = np.zeros((1, 6, 16, 16))
        static[:, STATIC_CLASSES.index(1)] = 1.0
        w = slot_windows(static.reshape(1, -1), 4, 64)
        side = 2 * SLOT_WINDOW + 1
        assert w.shape == (1, 4, 6 * side * side + 2)
        win = w[0, 0, :-2].reshape(6, side, side)
        # with 4 slots, slot 0 sits in cell (4, 4) and its window stays in the frame
        assert win[STATIC_CLASSES.index(OFF_MAP)].sum() == 0
        corner = slot_windows(static.reshape(1, -1), 16, 64)[0, 0, :-2].reshape(6, side, side)
        assert corner[STATIC_CLASSES.index(OFF_MAP), 0, 0] == 1
        assert corner[STATIC_CLASSES.index(1), 0, 0] == 0
        assert_allclose(w[0, :, -2:], [[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5], [0.5, 0.5]])

    def test_observed_track_ends_at_current_box(self, episodes):
        ep = episodes[0]
        keys = build_fln_dataset([ep], PEDESTRIAN, 5, 15).meta
        _, t, aid = keys[0]
        trk = observed_track(ep, aid, t, 5)
        assert trk.shape == (5, 4)
        assert_array_equal(trk[-1], ep.observed[t][aid].as_array())


class TestDatasets:
    def test_rpn_one_sample_per_frame_with_all_boxes(self, episodes):
        ds = build_rpn_dataset(episodes, PEDESTRIAN)
        for (ei, t), tg in zip(ds.keys, ds.targets):
            ep = episodes[ei]
            vis = [a for a in ep.frame(t).boxes.get(PEDESTRIAN, {})
                   if ep.visible(a, t) >= WORLD.visibility]
            assert len(tg) == len(vis) > 0

    def test_rpn_skips_frames_without_class(self, episodes):
        ds = build_rpn_dataset(episodes, PEDESTRIAN)
        skipped = [(ei, t) for ei, ep in enumerate(episodes) for t in range(ep.length)
                   if (ei, t) not in set(ds.keys)]
        for ei, t in skipped:
            ep = episodes[ei]
            assert not any(ep.visible(a, t) >= WORLD.visibility
                           for a in ep.frame(t).boxes.get(PEDESTRIAN, {}))

    def test_rpn_input_is_static_grid(self, episodes):
        ds = build_rpn_dataset(episodes, PEDESTRIAN)
        ei, t = ds.keys[0]
        assert_array_equal(ds.static[0], static_features(episodes[ei], t).astype(np.float32))

    def test_fln_targets_are_realized_boxes(self, episodes):
        ds = build_fln_dataset(episodes, PEDESTRIAN, 5, 15)
        for i in (0, len(ds) // 2, len(ds) - 1):
            ei, t, aid = ds.meta[i]
            assert_array_equal(ds.target[i], episodes[ei].observed[t + 15][aid].as_array())

    def test_epn_no_events_error(self, episodes):
        with pytest.raises(ValueError, match="no emergence events"):
            build_epn_dataset(episodes[:1], VEHICLE + 10, 5)


class TestTraining:
    def test_rpn_log_ends_at_k1(self, trained):
        log = trained["rpn"].log
        assert log[0][1] == 20 and log[-1][1] == 1
        assert [k for _, k, _ in log] == sorted((k for _, k, _ in log), reverse=True)

    def test_rtn_targets_dt0_equal_rpn(self, trained, episodes):
        rpn = trained["rpn"]
        got = rtn_targets(rpn, episodes[1], 7, 0)
        want = rpn.hypotheses(static_features(episodes[1], 7))[0]
        assert_allclose(got, want)
        with pytest.raises(ValueError):
            rtn_targets(rpn, episodes[1], 30, 20)

    def test_rtn_targets_ignore_agents(self, trained):
        ep = generate_episode(1, WORLD)
        a = rtn_targets(trained["rpn"], ep, 3, 5)
        ep.states[8] = {}
        ep._frames.clear()
        assert_array_equal(rtn_targets(trained["rpn"], ep, 3, 5), a)

    def test_fln_requires_rtn(self, trained):
        with pytest.raises(ValueError, match="requires: rtn"):
            train_fln(None, trained["fds"], 0, 4, TINY, with_prior=True)

    def test_head_sizes(self, trained):
        fln, epn, rpn = trained["fln"], trained["epn"], trained["rpn"]
        N = TINY.n
        table = trained["fds"].table
        assert rpn.n == N and rpn.hypotheses(table.static[:2]).shape == (2, N, 4)
        assert trained["rtn"].prior_for(table).shape == (len(table.keys), N, 4)
        assert fln.sampler.sizes[-1] == 4 * N and fln.fitter.sizes[-1] == 9 * 4
        assert epn.fitter.sizes[-1] == 9 * 8

    def test_epn_inputs_exclude_masks(self, trained):
        fln, epn = trained["fln"], trained["epn"]
        fw = fln.features(trained["fds"], [0]).X.shape[1]
        ew = epn.features(trained["eds"], [0]).X.shape[1]
        masks = trained["fds"].masks.shape[1]
        assert ew == 8 * 256 + 4 + 4 * TINY.n
        assert fw >= ew + masks

    def test_predict_invariants(self, trained):
        fln = trained["fln"]
        inp = fln.features(trained["fds"], [3])
        h1, m1 = predict(fln, inp)
        h2, m2 = predict(fln, inp)
        assert h1 == h2 and m1 == m1
        assert_array_equal(m1.mu, m2.mu)
        assert abs(m1.pi.sum() - 1) < 1e-12
        c = clamp_array(np.array([b.as_array() for b in h1]), 64, 64)
        x0, y0 = c[:, 0] - c[:, 2] / 2, c[:, 1] - c[:, 3] / 2
        assert np.all(x0 >= -1e-9) and np.all(x0 + c[:, 2] <= 64 + 1e-9)
        assert np.all(y0 >= -1e-9) and np.all(y0 + c[:, 3] <= 64 + 1e-9)

    def test_predict_shape_mismatch(self, trained):
        fln = trained["fln"]
        inp = fln.features(trained["fds"], [0])
        with pytest.raises(ValueError, match="input width"):
            predict(fln, SceneInput(inp.X[:, :-1], inp.anchor, inp.rot))

    def test_training_is_deterministic(self, episodes, trained):
        rpn = train_rpn(build_rpn_dataset(episodes, PEDESTRIAN), 3, tc=TINY)
        assert model_bytes(rpn) == model_bytes(trained["rpn"])
        other = train_rpn(build_rpn_dataset(episodes, PEDESTRIAN), 4, tc=TINY)
        assert model_bytes(other) != model_bytes(trained["rpn"])


class TestStore:
    @pytest.mark.parametrize("name", ["rpn", "rtn", "fln", "epn"])
    def test_round_trip_bytes(self, trained, name):
        data = model_bytes(trained[name])
        assert data.startswith(b"MPLAB-CK v1")
        assert model_bytes(model_from_bytes(data)) == data

    def test_loaded_predictor_predicts_identically(self, trained):
        fln = trained["fln"]
        back = model_from_bytes(model_bytes(fln))
        ds = trained["fds"]
        ds.table.prior = None
        fln.ensure_prior(ds.table)
        want = fln.mixtures(fln.features(ds, [0, 5]))
        ds.table.prior = None
        back.ensure_prior(ds.table)
        got = back.mixtures(back.features(ds, [0, 5]))
        for a, b in zip(want, got):
            assert_array_equal(a.mu, b.mu)
            assert_array_equal(a.sigma, b.sigma)

    def test_log_text(self):
        assert log_text([(0, 20, 1.5), (10, 1, 0.25)]) == "step,k,loss\n0,20,1.5\n10,1,0.25\n"
