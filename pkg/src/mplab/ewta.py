"""Evolving winner-takes-all loss over N box hypotheses.

Each ground truth penalises the mean L2 distance (over the full 4-D box
vector) of its ``k`` closest hypotheses.  Training starts with ``k = N`` and
shrinks ``k`` stage by stage down to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox

N_HYPOTHESES = 20


def _as_boxes(b) -> np.ndarray:
    if isinstance(b, BBox):
        return b.as_array()
    if isinstance(b, (list, tuple)) and b and isinstance(b[0], BBox):
        return np.array([x.as_array() for x in b])
    return np.asarray(b, dtype=float)


@dataclass(frozen=True)
class EwtaSchedule:
    stages: tuple[int, ...] = (20, 10, 5, 2, 1)
    steps_per_stage: int = 2000

    def __post_init__(self):
        st = tuple(int(s) for s in self.stages)
        if not st or st[-1] != 1 or any(a <= b for a, b in zip(st, st[1:])):
            raise ValueError(f"stages must be strictly decreasing and end at 1, got {st}")
        if self.steps_per_stage <= 0:
            raise ValueError("steps_per_stage must be positive")
        object.__setattr__(self, "stages", st)

    @property
    def n(self) -> int:
        return self.stages[0]

    @property
    def total_steps(self) -> int:
        return len(self.stages) * self.steps_per_stage


def halving_stages(n: int) -> tuple[int, ...]:
    """``n, n/2, ...`` with integer rounding, ending at 1."""
    out = [n]
    while out[-1] > 1:
        out.append(max(1, out[-1] // 2))
    return tuple(out)


def stage_for_step(sched: EwtaSchedule, step: int) -> int:
    if step < 0:
        raise ValueError("step must be >= 0")
    i = min(step // sched.steps_per_stage, len(sched.stages) - 1)
    return sched.stages[i]


def ewta_loss(hyps, gt, k: int) -> tuple[float, list[int]]:
    """Mean L2 distance of the ``k`` closest hypotheses and their indices.

    Ties in distance go to the lower index.
    """
    H = _as_boxes(hyps).reshape(-1, 4)
    g = _as_boxes(gt).reshape(4)
    if not 1 <= k <= len(H):
        raise ValueError(f"k={k} outside [1, {len(H)}]")
    d = np.linalg.norm(H - g, axis=1)
    win = np.argsort(d, kind="stable")[:k]
    return float(d[win].mean()), sorted(int(i) for i in win)


def multi_target_loss(hyps, gts, k: int) -> float:
    G = _as_boxes(gts).reshape(-1, 4)
    if len(G) == 0:
        raise ValueError("multi_target_loss needs at least one ground truth")
    return float(np.mean([ewta_loss(hyps, g, k)[0] for g in G]))


def ewta_loss_and_grad(H, G, k: int, valid=None):
    """Batched multi-target EWTA loss and its gradient.

    ``H`` is ``(B, N, 4)``, ``G`` is ``(B, M, 4)`` with boolean ``valid``
    ``(B, M)`` marking real targets.  The loss is the batch mean of the
    per-sample mean over valid targets; the gradient has the shape of ``H``
    and is zero for every non-winning hypothesis.
    """
    H = np.asarray(H, dtype=float)
    G = np.asarray(G, dtype=float)
    B, N, _ = H.shape
    M = G.shape[1]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside [1, {N}]")
    valid = np.ones((B, M), bool) if valid is None else np.asarray(valid, bool)
    diff = H[:, None, :, :] - G[:, :, None, :]               # (B, M, N, 4)
    d = np.sqrt(np.sum(diff * diff, axis=-1))                # (B, M, N)
    order = np.argsort(d, axis=-1, kind="stable")[..., :k]   # (B, M, k)
    dk = np.take_along_axis(d, order, axis=-1)
    n_valid = np.maximum(valid.sum(axis=1), 1)               # (B,)
    w = valid / n_valid[:, None] / B                          # weight per (b, m)
    loss = float(np.sum(dk.mean(axis=-1) * w))
    unit = np.divide(diff, d[..., None], out=np.zeros_like(diff), where=d[..., None] > 0)
    sel = np.zeros_like(d)
    np.put_along_axis(sel, order, 1.0 / k, axis=-1)
    coef = sel * w[..., None]                                # (B, M, N)
    grad = np.sum(coef[..., None] * unit, axis=1)             # (B, N, 4)
    return loss, grad


def index_l1_and_grad(H, T):
    """Mean elementwise L1 between index-matched box sets and its gradient."""
    H = np.asarray(H, dtype=float)
    T = np.asarray(T, dtype=float)
    n = H.shape[0]
    diff = H - T
    return float(np.abs(diff).sum() / n), np.sign(diff) / n
