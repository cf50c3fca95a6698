"""Accuracy and cost metrics over completed runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .graph import Network


@dataclass
class MetricsLog:
    """Everything recorded during one run.

    ``error_norms[i]`` is the stacked network error ``||e(t)||`` at slot
    ``slots[i]``. The cumulative counters have one entry per executed slot
    (index ``t - 1``); communication counters are in units of scalars, so one
    ``p``-vector message costs ``p``.
    """

    kind: str
    J: int
    p: int
    slots: np.ndarray
    error_norms: np.ndarray
    cum_mults: np.ndarray
    cum_comm: np.ndarray
    cum_forced: np.ndarray
    censor_counts: np.ndarray
    node_censored: np.ndarray
    clamp_events: int = 0
    max_inbox_age: int = 0
    estimates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.cum_mults)

    def error_at(self, t: int) -> float:
        idx = np.searchsorted(self.slots, t)
        if idx >= len(self.slots) or self.slots[idx] != t:
            raise UsageError(f"slot {t} not recorded in this log")
        return float(self.error_norms[idx])

    def censor_fraction(self, T: int | None = None) -> float:
        T = self.T if T is None else T
        return float(self.censor_counts[:T].sum()) / (T * self.J) if T else 0.0


def _errors(logs, t) -> np.ndarray:
    logs = list(logs)
    if not logs:
        raise UsageError("need at least one log")
    return np.array([log.error_at(t) for log in logs])


def smrd(logs, t: int) -> float:
    """Squared mean-root deviation ``(mean_runs ||e(t)||)^2``."""
    return float(_errors(logs, t).mean() ** 2)


def msd(logs, t: int) -> float:
    """Mean-square deviation ``mean_runs ||e(t)||^2``."""
    e = _errors(logs, t)
    return float(np.mean(e * e))


def smrd_series(logs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(slots, smrd, msd)`` over the slots common to all logs."""
    logs = list(logs)
    if not logs:
        raise UsageError("need at least one log")
    n = min(len(log.slots) for log in logs)
    slots = logs[0].slots[:n]
    errs = np.stack([log.error_norms[:n] for log in logs])
    return slots, errs.mean(axis=0) ** 2, np.mean(errs * errs, axis=0)


TABLE1_KINDS = ("drls", "cdrls1", "cdrls2", "cdrls3")


def table1_predictions(pi_star: float, p: int, net: Network) -> dict[str, tuple[float, float]]:
    """Leading-order ``(communication, computation)`` per step per node."""
    if not 0.0 <= pi_star < 1.0:
        raise ValueError(f"pi_star must lie in [0, 1), got {pi_star}")
    comm = 2.0 * p * net.num_edges / net.J
    full = 7.0 * p * p / 2.0
    keep = 1.0 - pi_star
    return {
        "drls": (comm, full),
        "cdrls1": (comm, full * keep + p * p * pi_star),
        "cdrls2": (comm * keep, full * keep),
        "cdrls3": (comm * keep * keep, full * keep),
    }


def empirical_costs(log: MetricsLog, T: int | None = None) -> tuple[float, float]:
    """Measured communication per step per node and the ``p**2`` coefficient of computation.

    Forced-receive traffic is kept out of the communication figure.
    """
    T = log.T if T is None else T
    if T < 1:
        raise ValueError("T must be >= 1")
    comm = float(log.cum_comm[T - 1]) / (T * log.J)
    comp = float(log.cum_mults[T - 1]) / (T * log.J * log.p * log.p)
    return comm, comp


def truncated_cost(s, x, H, tau, sigma) -> float:
    """Network sum of the truncated quadratic loss at estimates ``s``.

    Each node contributes ``0`` when ``|x - h @ s| <= tau * sigma`` and
    ``(x - h @ s)**2 / 2 - (tau * sigma)**2 / 2`` otherwise.
    """
    r = np.atleast_1d(x - np.einsum("...i,...i->...", H, s))
    band = np.broadcast_to(np.asarray(tau * np.asarray(sigma, dtype=float)), r.shape)
    cost = np.where(np.abs(r) <= band, 0.0, 0.5 * r * r - 0.5 * band * band)
    return float(cost.sum())


def decay_rate_fit(series, t_min: int, t_max: int) -> float:
    """Least-squares slope of ``log(value)`` against ``log(t)`` on ``[t_min, t_max]``."""
    t, v = (np.asarray(a, dtype=float) for a in zip(*series))
    keep = (t >= t_min) & (t <= t_max)
    t, v = t[keep], v[keep]
    if len(t) < 2:
        raise ValueError("need at least two points in the fit window")
    if np.any(~(v > 0)) or not np.all(np.isfinite(v)):
        raise ValueError("values must be positive and finite (diverged run?)")
    return float(np.polyfit(np.log(t), np.log(v), 1)[0])
