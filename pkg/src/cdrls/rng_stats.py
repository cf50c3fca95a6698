"""Seeded random streams, the Gaussian tail function, and the noise-variance estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

# Purpose tags folded into stream ids so that (run, node, purpose) streams never collide.
PURPOSE_PARAMS = 0
PURPOSE_AR = 1
PURPOSE_NOISE = 2
PURPOSE_TRUTH = 3


def derive_seed(master_seed: int, index: int) -> int:
    """Split ``master_seed`` into the 64-bit seed of child ``index``.

    Child seeds depend only on ``(master_seed, index)``, so growing the number of
    Monte Carlo runs never changes the streams of earlier runs.
    """
    state = np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(2, np.uint32)
    return (int(state[0]) << 32) | int(state[1])


class RngStream:
    """Independent generator for one ``(seed, stream_id)`` pair."""

    def __init__(self, seed: int, stream_id=()):
        if isinstance(stream_id, int):
            stream_id = (stream_id,)
        self.seed = int(seed)
        self.stream_id = tuple(int(k) for k in stream_id)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.stream_id))
        )

    def uniform(self, a=0.0, b=1.0, size=None):
        return self.generator.uniform(a, b, size)

    def gaussian(self, mu=0.0, sigma=1.0, size=None):
        return mu + sigma * self.generator.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_uniform(stream: RngStream, a: float, b: float) -> float:
    if a > b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if a == b:
        return float(a)
    return float(stream.uniform(a, b))


def sample_gaussian(stream: RngStream, mu: float, sigma: float) -> float:
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    draw = stream.gaussian()
    return float(mu) if sigma == 0 else float(mu + sigma * draw)


def q_function(z):
    """Standard Gaussian upper tail probability ``P(Z > z)``."""
    if np.ndim(z):
        return special.erfc(np.asarray(z, dtype=float) / math.sqrt(2.0)) / 2.0
    return math.erfc(float(z) / math.sqrt(2.0)) / 2.0


def q_inverse(p: float) -> float:
    """Inverse of :func:`q_function` on ``(0, 1)``."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"q_inverse requires 0 < p < 1, got {p}")
    return float(math.sqrt(2.0) * special.erfcinv(2.0 * p))


def calibrate_tau(pi_star: float) -> float:
    """Threshold whose asymptotic censoring ratio is ``pi_star``.

    For innovations that are eventually pure noise, ``P(|eps| <= tau*sigma)`` is
    ``1 - 2Q(tau)``; solving for the target ratio gives ``Q^{-1}((1 - pi_star)/2)``.
    """
    pi_star = float(pi_star)
    if not 0.0 <= pi_star < 1.0:
        raise ValueError(f"pi_star must lie in [0, 1), got {pi_star}")
    if pi_star == 0.0:
        return 0.0
    return q_inverse((1.0 - pi_star) / 2.0)


@dataclass(frozen=True)
class VarianceEstimator:
    """Running mean of squared innovations.

    ``sigma_sq`` may be a scalar or an array with one entry per node; ``t`` is the
    shared slot counter. The first update discards the prior because its weight
    ``(t - 1)/t`` is zero at ``t = 1``.
    """

    t: int = 1
    sigma_sq: float | np.ndarray = 0.0

    @property
    def sigma(self):
        return np.sqrt(self.sigma_sq)


def variance_update(est: VarianceEstimator, residual) -> VarianceEstimator:
    t = est.t
    if t < 1:
        raise ValueError(f"estimator slot counter must be >= 1, got {t}")
    residual = np.asarray(residual, dtype=float)
    sigma_sq = (t - 1) * np.asarray(est.sigma_sq, dtype=float) / t + residual * residual / t
    if sigma_sq.ndim == 0:
        sigma_sq = float(sigma_sq)
    return VarianceEstimator(t=t + 1, sigma_sq=sigma_sq)
