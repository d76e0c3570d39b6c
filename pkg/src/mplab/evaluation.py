"""Oracle metrics, difficulty splits and CSV reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import BBox, center_distance, clamp_to_frame, iou
from .mixture import GaussianMixture, modes, nll

SPLITS = ("all", "challenging", "very challenging")
REPORT_HEADER = ("method", "split", "fde", "iou", "nll")


@dataclass(frozen=True)
class EvalRecord:
    scenario: str
    method: str
    gt: BBox
    prediction: object          # GaussianMixture, list of BBox, or BBox
    kalman_fde: float

    @property
    def probabilistic(self) -> bool:
        return isinstance(self.prediction, GaussianMixture)


@dataclass(frozen=True)
class ReportRow:
    method: str
    split: str
    fde: float
    iou: float
    nll: float | None
    count: int = 0


def candidates(pred) -> list[BBox]:
    if isinstance(pred, GaussianMixture):
        return [b for b, _ in modes(pred)]
    if isinstance(pred, BBox):
        return [pred]
    boxes = list(pred)
    if not boxes:
        raise ValueError("empty prediction")
    return [b if isinstance(b, BBox) else BBox.from_array(b) for b in boxes]


def oracle_select(pred, gt: BBox) -> BBox:
    """Candidate closest to ``gt`` by center distance; ties go to the lower index."""
    best, best_d = None, math.inf
    for b in candidates(pred):
        d = center_distance(b, gt)
        if d < best_d:
            best, best_d = b, d
    return best


def stratify(kalman_errors) -> tuple[np.ndarray, np.ndarray, float]:
    """Boolean masks ``(challenging, very_challenging)`` and the mean error.

    Challenging means above the mean Kalman error, very challenging above
    twice the mean.
    """
    e = np.asarray(kalman_errors, dtype=float)
    if e.size == 0:
        raise ValueError("cannot stratify an empty record set")
    avg = float(e.mean())
    return e > avg, e > 2 * avg, avg


def _split_masks(records) -> dict[str, set[str]]:
    per_scene: dict[str, float] = {}
    for r in records:
        per_scene.setdefault(r.scenario, r.kalman_fde)
    scenes = sorted(per_scene)
    ch, vc, _ = stratify([per_scene[s] for s in scenes])
    return {
        "all": set(scenes),
        "challenging": {s for s, m in zip(scenes, ch) if m},
        "very challenging": {s for s, m in zip(scenes, vc) if m},
    }


def score(record: EvalRecord, frame: tuple[float, float] = (64, 64)) -> tuple[float, float, float | None]:
    sel = oracle_select(record.prediction, record.gt)
    fde = center_distance(sel, record.gt)
    ov = iou(clamp_to_frame(sel, *frame), record.gt)
    ll = nll(record.prediction, record.gt) if record.probabilistic else None
    return fde, ov, ll


def evaluate(records, frame: tuple[float, float] = (64, 64), splits=SPLITS) -> list[ReportRow]:
    """Mean oracle FDE / IOU / NLL per method and difficulty split."""
    records = list(records)
    if not records:
        raise ValueError("evaluate needs at least one record")
    masks = _split_masks(records)
    scored: dict[str, dict[str, tuple]] = {}
    prob: dict[str, bool] = {}
    for r in records:
        scored.setdefault(r.method, {})[r.scenario] = score(r, frame)
        prob[r.method] = prob.get(r.method, True) and r.probabilistic
    rows = []
    for method in sorted(scored):
        for split in splits:
            vals = [scored[method][s] for s in sorted(masks[split]) if s in scored[method]]
            if vals:
                fde = math.fsum(v[0] for v in vals) / len(vals)
                ov = math.fsum(v[1] for v in vals) / len(vals)
                ll = math.fsum(v[2] for v in vals) / len(vals) if prob[method] else None
            else:
                fde = ov = math.nan
                ll = math.nan if prob[method] else None
            rows.append(ReportRow(method, split, fde, ov, ll, len(vals)))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{v:.6f}"


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in rows:
        w.writerow([r.method, r.split, _fmt(r.fde), _fmt(r.iou), _fmt(r.nll)])
    return buf.getvalue()


def read_report(path) -> list[ReportRow]:
    rows = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != REPORT_HEADER:
            raise ValueError(f"unexpected report header {rd.fieldnames}")
        for d in rd:
            rows.append(ReportRow(d["method"], d["split"], float(d["fde"]), float(d["iou"]),
                                  float(d["nll"]) if d["nll"] else None))
    return rows


def write_report(rows, path) -> None:
    Path(path).write_text(report_csv(rows))


def records_csv(records, frame: tuple[float, float] = (64, 64)) -> str:
    """Per-scenario scores for inspection."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "method", "gt_x", "gt_y", "gt_w", "gt_h", "kalman_fde",
                "fde", "iou", "nll"])
    for r in sorted(records, key=lambda r: (r.method, r.scenario)):
        fde, ov, ll = score(r, frame)
        w.writerow([r.scenario, r.method, *(_fmt(float(v)) for v in r.gt.as_array()),
                    _fmt(r.kalman_fde), _fmt(fde), _fmt(ov), _fmt(ll)])
    return buf.getvalue()
