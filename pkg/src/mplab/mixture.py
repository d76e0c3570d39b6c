"""Diagonal Gaussian mixtures over 4-D boxes ``[x, y, w, h]``.

Densities are evaluated in log space with log-sum-exp.  Every component
scale is kept at or above ``SIGMA_FLOOR``, both in the network head
transform and in the EM fitter, so the two fitters are comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BBox

SIGMA_FLOOR = 1e-3
DIM = 4
LOG_2PI = math.log(2 * math.pi)


def logsumexp(a, axis=-1, keepdims=False):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class GaussianMixture:
    pi: np.ndarray      # (K,)
    mu: np.ndarray      # (K, 4)
    sigma: np.ndarray   # (K, 4)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).reshape(-1)
        mu = np.asarray(self.mu, dtype=float).reshape(len(pi), DIM)
        sigma = np.asarray(self.sigma, dtype=float).reshape(len(pi), DIM)
        if len(pi) == 0:
            raise ValueError("mixture needs at least one component")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be >= 0 and sum to 1, got {pi}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("non-finite mixture parameters")
        if np.any(sigma < SIGMA_FLOOR):
            raise ValueError(f"component scale below floor {SIGMA_FLOOR}")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def K(self) -> int:
        return len(self.pi)

    def to_dict(self) -> dict:
        return {"k": self.K, "pi": self.pi.tolist(), "mu": self.mu.tolist(),
                "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d) -> "GaussianMixture":
        mix = cls(np.array(d["pi"]), np.array(d["mu"]), np.array(d["sigma"]))
        if mix.K != int(d["k"]):
            raise ValueError(f"k={d['k']} but {mix.K} components given")
        return mix

    def log_density(self, x) -> np.ndarray:
        """Log density at points ``x`` of shape ``(..., 4)``."""
        return mixture_log_density(self.pi, self.mu, self.sigma, x)


def component_log_density(mu, sigma, x) -> np.ndarray:
    """``log N(x; mu_k, diag sigma_k^2)`` with shape ``(..., K)``."""
    x = np.asarray(x, dtype=float)[..., None, :]
    z = (x - mu) / sigma
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sigma), axis=-1) - 0.5 * DIM * LOG_2PI


def mixture_log_density(pi, mu, sigma, x) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    return logsumexp(logpi + component_log_density(mu, sigma, x), axis=-1)


def nll(mix: GaussianMixture, gt) -> float:
    """Negative log density (nats) of the mixture at a box."""
    x = gt.as_array() if isinstance(gt, BBox) else np.asarray(gt, dtype=float)
    return float(-mix.log_density(x))


def split_head(raw, K: int):
    """Split raw head outputs ``(..., K*9)`` into logits, means and raw scales."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != K * 9:
        raise ValueError(f"head output length {raw.shape[-1]} != K*9 = {K * 9}")
    r = raw.reshape(raw.shape[:-1] + (K, 9))
    return r[..., 0], r[..., 1:5], r[..., 5:9]


def head_params(raw, K: int):
    """Batched head transform: softmax weights, raw means, softplus + floor scales."""
    logits, mu, s = split_head(raw, K)
    logpi = logits - logsumexp(logits, axis=-1, keepdims=True)
    return np.exp(logpi), mu.copy(), softplus(s) + SIGMA_FLOOR


def head_to_mixture(raw, K: int) -> GaussianMixture:
    pi, mu, sigma = head_params(np.asarray(raw, dtype=float).reshape(-1), K)
    return GaussianMixture(pi / pi.sum(), mu, sigma)


def head_nll_and_grad(raw, gt, K: int):
    """Per-sample NLL of ``head_to_mixture(raw)`` at ``gt`` and the gradient of their mean.

    ``raw`` is ``(B, K*9)``, ``gt`` is ``(B, 4)``.  Returns ``(nll (B,), d mean / d raw)``.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    gt = np.atleast_2d(np.asarray(gt, dtype=float))
    logits, mu, s = split_head(raw, K)
    sigma = softplus(s) + SIGMA_FLOOR
    logpi = logits - logsumexp(logits, axis=-1, keepdims=True)
    diff = gt[:, None, :] - mu
    z = diff / sigma
    logn = -0.5 * np.sum(z * z, -1) - np.sum(np.log(sigma), -1) - 0.5 * DIM * LOG_2PI
    joint = logpi + logn
    lse = logsumexp(joint, axis=-1, keepdims=True)
    out = -lse[:, 0]
    resp = np.exp(joint - lse)                         # posterior responsibilities
    B = raw.shape[0]
    g = np.empty(raw.shape[:-1] + (K, 9))
    g[..., 0] = np.exp(logpi) - resp
    g[..., 1:5] = -resp[..., None] * diff / sigma ** 2
    dsig = -resp[..., None] * (diff ** 2 / sigma ** 3 - 1.0 / sigma)
    g[..., 5:9] = dsig * sigmoid(s)
    return out, g.reshape(raw.shape) / B


@dataclass
class EmResult:
    mixture: GaussianMixture
    history: list[float]     # mean NLL after each iteration
    iterations: int


def _mean_nll(pi, mu, sigma, X) -> float:
    return float(-np.mean(mixture_log_density(pi, mu, sigma, X)))


def em_fit(samples, K: int, seed: int = 0, max_iters: int = 200, tol: float = 1e-8,
           return_result: bool = False):
    """Diagonal-covariance EM with floored scales.

    The mean NLL over samples is asserted non-increasing at every iteration
    (up to a relative round-off allowance of 1e-12).
    """
    X = np.array([b.as_array() if isinstance(b, BBox) else np.asarray(b, float) for b in samples],
                 dtype=float).reshape(-1, DIM)
    n = len(X)
    if n == 0:
        raise ValueError("em_fit needs at least one sample")
    if K < 1 or K > n:
        raise ValueError(f"cannot fit K={K} components to {n} samples")
    rng = np.random.default_rng([seed, 0xE3])
    mu = X[np.sort(rng.choice(n, size=K, replace=False))].copy()
    sigma = np.tile(np.maximum(X.std(axis=0), SIGMA_FLOOR), (K, 1))
    pi = np.full(K, 1.0 / K)
    prev = _mean_nll(pi, mu, sigma, X)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        with np.errstate(divide="ignore"):
            joint = np.log(pi) + component_log_density(mu, sigma, X)
        resp = np.exp(joint - logsumexp(joint, axis=-1, keepdims=True))
        Nk = resp.sum(axis=0)
        live = Nk > 0
        pi = Nk / n
        new_mu = mu.copy()
        new_sigma = sigma.copy()
        new_mu[live] = (resp[:, live].T @ X) / Nk[live, None]
        for k in np.flatnonzero(live):
            var = resp[:, k] @ (X - new_mu[k]) ** 2 / Nk[k]
            new_sigma[k] = np.maximum(np.sqrt(var), SIGMA_FLOOR)
        mu, sigma = new_mu, new_sigma
        cur = _mean_nll(pi, mu, sigma, X)
        history.append(cur)
        assert cur <= prev + 1e-12 * max(1.0, abs(prev)), f"EM NLL increased: {prev} -> {cur}"
        if prev - cur < tol:
            break
        prev = cur
    mix = GaussianMixture(pi / pi.sum(), mu, sigma)
    if return_result:
        return EmResult(mix, history, it)
    return mix


def sample(mix: GaussianMixture, n: int, seed: int = 0) -> list[BBox]:
    rng = np.random.default_rng([seed, 0x5A])
    comp = rng.choice(mix.K, size=n, p=mix.pi)
    draws = mix.mu[comp] + mix.sigma[comp] * rng.standard_normal((n, DIM))
    return [BBox.from_array(d) for d in draws]


def modes(mix: GaussianMixture) -> list[tuple[BBox, float]]:
    """Component means with their weights, in component order."""
    return [(BBox.from_array(m), float(p)) for m, p in zip(mix.mu, mix.pi)]


def denormalise(mix: GaussianMixture, anchor, scale) -> GaussianMixture:
    """Map a mixture over ``(box - anchor) / scale`` back to box space."""
    anchor = np.asarray(anchor, dtype=float)
    scale = np.asarray(scale, dtype=float)
    return GaussianMixture(mix.pi, anchor + scale * mix.mu,
                           np.maximum(scale * mix.sigma, SIGMA_FLOOR))
