"""Reference predictors: constant-velocity Kalman filter, least-squares
extrapolation and Monte-Carlo dropout sampling fitted with EM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox
from .mixture import GaussianMixture, em_fit

PROCESS_NOISE = 1e-2
OBS_NOISE = 1e-1
INIT_COV = 10.0


def transition(dt: float = 1.0) -> np.ndarray:
    F = np.eye(8)
    F[:4, 4:] = dt * np.eye(4)
    return F


H_OBS = np.hstack([np.eye(4), np.zeros((4, 4))])


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray   # (cx, cy, w, h, vcx, vcy, vw, vh)
    P: np.ndarray   # 8x8 covariance
    q: float = PROCESS_NOISE
    r: float = OBS_NOISE

    @classmethod
    def init(cls, box: BBox, q: float = PROCESS_NOISE, r: float = OBS_NOISE,
             p0: float = INIT_COV) -> "KalmanState":
        x = np.concatenate([box.as_array(), np.zeros(4)])
        return cls(x, p0 * np.eye(8), q, r)

    @property
    def box(self) -> BBox:
        return BBox.from_array(self.x[:4])

    @property
    def velocity(self) -> np.ndarray:
        return self.x[4:6].copy()


def kalman_update(state: KalmanState, obs: BBox) -> KalmanState:
    """One constant-velocity predict step followed by a correction with ``obs``."""
    F = transition()
    x = F @ state.x
    P = F @ state.P @ F.T + state.q * np.eye(8)
    S = H_OBS @ P @ H_OBS.T + state.r * np.eye(4)
    K = np.linalg.solve(S, H_OBS @ P).T
    x = x + K @ (obs.as_array() - H_OBS @ x)
    # Joseph form keeps the covariance symmetric positive semi-definite
    IKH = np.eye(8) - K @ H_OBS
    P = IKH @ P @ IKH.T + state.r * K @ K.T
    return KalmanState(x, 0.5 * (P + P.T), state.q, state.r)


def kalman_predict(state: KalmanState, dt: int) -> BBox:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return BBox.from_array((transition(dt) @ state.x)[:4])


def kalman_filter(track, q: float = PROCESS_NOISE, r: float = OBS_NOISE) -> KalmanState:
    """Initialise on the first box and correct with the remaining ones."""
    track = list(track)
    if not track:
        raise ValueError("empty track")
    st = KalmanState.init(track[0], q, r)
    for b in track[1:]:
        st = kalman_update(st, b)
    return st


def kalman_forecast(track, dt: int) -> BBox:
    return kalman_predict(kalman_filter(track), dt)


def linear_extrapolate(track, dt: int) -> BBox:
    """Least-squares line through each box component, evaluated ``dt`` past the last."""
    A = np.array([b.as_array() for b in track])
    n = len(A)
    if n == 1:
        return track[0]
    s = np.arange(n, dtype=float)
    coef = np.polyfit(s, A, 1)
    return BBox.from_array(coef[0] * (n - 1 + dt) + coef[1])


def bayesian_predict(model, inputs, n: int = 20, seed: int = 0, K: int = 4) -> GaussianMixture:
    """Mixture fitted by EM to ``n`` Monte-Carlo dropout passes of a Bayesian FLN.

    ``inputs`` is one prepared feature row for ``model`` (see
    :meth:`mplab.pipeline.FuturePredictor.features`).
    """
    if not getattr(model, "bayesian", False):
        raise ValueError("bayesian_predict needs a model trained with the bayesian flag")
    boxes = model.mc_samples(inputs, n, seed)
    return em_fit([BBox.from_array(b) for b in boxes], K, seed=seed)
