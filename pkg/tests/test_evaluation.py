
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from mplab.evaluation import (REPORT_HEADER, EvalRecord, evaluate, oracle_select, read_report,
                              records_csv, report_csv, score, stratify, write_report)
from mplab.geometry import BBox, center_distance
from mplab.mixture import GaussianMixture


def mix_at(*centres):
    K = len(centres)
    return GaussianMixture(np.full(K, 1 / K), [[x, y, 4, 4] for x, y in centres], np.ones((K, 4)))


class TestOracleSelect:
    def test_single_component(self):
        assert oracle_select(mix_at((3, 4)), BBox(0, 0, 4, 4)) == BBox(3, 4, 4, 4)

    def test_closest_mode(self):
        assert oracle_select(mix_at((0, 0), (10, 0)), BBox(9, 0, 4, 4)).x == 10

    def test_tie_goes_to_lower_index(self):
        assert oracle_select(mix_at((0, 0), (10, 0)), BBox(5, 0, 4, 4)).x == 0
        assert oracle_select([BBox(10, 0, 1, 1), BBox(0, 0, 1, 1)], BBox(5, 0, 1, 1)).x == 10

    def test_empty(self):
        with pytest.raises(ValueError):
            oracle_select([], BBox(0, 0, 1, 1))


class TestStratify:
    def test_worked_example(self):
        ch, vc, avg = stratify([1, 2, 3, 6, 8])
        assert avg == 4.0
        assert_array_equal(ch, [False, False, False, True, True])
        assert not vc.any()

    def test_all_equal(self):
        ch, vc, _ = stratify([2.0] * 5)
        assert not ch.any() and not vc.any()

    def test_outlier_in_both(self):
        ch, vc, _ = stratify([1, 1, 1, 9])
        assert ch[-1] and vc[-1]

    def test_empty(self):
        with pytest.raises(ValueError):
            stratify([])

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=40))
    def test_subset_monotonicity(self, errors):
        e = np.array(errors)
        ch, vc, avg = stratify(e)
        assert np.all(ch[vc])
        if vc.any():
            assert e[vc].mean() >= e[ch].mean() >= e.mean() - 1e-9


def rec(scene, method, gt, pred, kfde=1.0):
    return EvalRecord(scene, method, gt, pred, kfde)


class TestEvaluate:
    def test_exact_unimodal(self):
        gt = BBox(10, 10, 4, 4)
        (row, *_) = evaluate([rec("s", "m", gt, gt)])
        assert (row.fde, row.iou, row.nll) == (0.0, 1.0, None)

    def test_closest_mode_exact(self):
        gt = BBox(10, 10, 4, 4)
        rows = evaluate([rec("s", "m", gt, mix_at((10, 10), (50, 50)))])
        assert rows[0].fde == 0.0 and rows[0].nll is not None

    def test_iou_clips_prediction_only(self):
        # x extent [-1, 3]: the clipped prediction keeps 3/4 of the unclipped truth
        gt = BBox(1, 10, 4, 4)
        fde, ov, _ = score(rec("s", "m", gt, BBox(1, 10, 4, 4)))
        assert fde == 0.0
        assert ov == pytest.approx(0.75)

    def test_reordering_invariant(self):
        rng = np.random.default_rng(0)
        recs = []
        for i in range(12):
            gt = BBox(*rng.uniform(10, 50, 2), 4, 4)
            recs.append(rec(f"s{i}", "mix", gt, mix_at(*rng.uniform(0, 60, (3, 2))), rng.uniform(1, 9)))
            recs.append(rec(f"s{i}", "box", gt, BBox(*rng.uniform(0, 60, 2), 4, 4), recs[-1].kalman_fde))
        a = report_csv(evaluate(recs))
        b = report_csv(evaluate(list(reversed(recs))))
        assert a == b

    def test_rows_per_method_and_split(self):
        gt = BBox(10, 10, 4, 4)
        recs = [rec(f"s{i}", m, gt, gt, float(i)) for i in range(5) for m in ("a", "b")]
        rows = evaluate(recs)
        assert [(r.method, r.split) for r in rows] == [
            (m, s) for m in ("a", "b") for s in ("all", "challenging", "very challenging")]
        assert rows[1].count == 2   # kalman errors 3, 4 exceed the mean 2

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate([])

    @settings(max_examples=40)
    @given(st.lists(st.tuples(st.floats(0, 60), st.floats(0, 60)), min_size=2, max_size=5),
           st.floats(0, 60), st.floats(0, 60))
    def test_oracle_beats_any_single_mode(self, centres, gx, gy):
        gt = BBox(gx, gy, 4, 4)
        mix = mix_at(*centres)
        best = center_distance(oracle_select(mix, gt), gt)
        assert all(best <= center_distance(BBox(x, y, 4, 4), gt) for x, y in centres)


class TestReport:
    def test_header_and_empty_nll(self, tmp_path):
        gt = BBox(10, 10, 4, 4)
        rows = evaluate([rec("s", "kalman", gt, gt), rec("s", "fln", gt, mix_at((10, 10)))])
        text = report_csv(rows)
        lines = text.splitlines()
        assert lines[0] == ",".join(REPORT_HEADER) == "method,split,fde,iou,nll"
        kal = [ln for ln in lines if ln.startswith("kalman,all")][0]
        assert kal.endswith(",")
        p = tmp_path / "r.csv"
        write_report(rows, p)
        back = read_report(p)
        assert back[0].method == "fln" and back[0].nll == pytest.approx(rows[0].nll, abs=1e-6)
        assert next(r for r in back if r.method == "kalman").nll is None

    def test_records_csv(self):
        gt = BBox(10, 10, 4, 4)
        text = records_csv([rec("s", "kalman", gt, gt, 2.5)])
        assert text.splitlines()[1].startswith("s,kalman,10.000000")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("a,b\n")
        with pytest.raises(ValueError):
            read_report(p)
