"""Per-node update kernels of (censored) decentralized RLS.

Every kernel broadcasts over leading axes, so the same function updates a
single node (``s`` of shape ``(p,)``) or a whole network at once (``s`` of shape
``(J, p)``, ``phi_inv`` of shape ``(J, p, p)``).

Multiplication tallies follow leading-order bookkeeping: a ``p x p``
matrix-vector product costs ``p**2`` and the symmetric rank-one downdate costs
``p*(p+1)/2``; inner products and scalings (``O(p)``) are not counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericError, UsageError
from .rng_stats import VarianceEstimator


def matvec_cost(p: int) -> int:
    return p * p


def rank1_cost(p: int) -> int:
    return p * (p + 1) // 2


def phi_update_cost(p: int) -> int:
    """``Phi^{-1} h`` plus the symmetric outer product."""
    return matvec_cost(p) + rank1_cost(p)


def estimate_update_cost(p: int, censored: bool, with_delta: bool = True) -> int:
    cost = matvec_cost(p) if with_delta else 0
    if not censored:
        cost += matvec_cost(p)
    return cost


@dataclass(frozen=True)
class StepDatum:
    x: float
    h: np.ndarray
    slot: int

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if not np.all(np.isfinite(h)):
            raise ValueError("regressor must be finite")
        if self.slot < 1:
            raise ValueError(f"slot must be >= 1, got {self.slot}")
        object.__setattr__(self, "h", h)


@dataclass
class NodeState:
    """State held by one node.

    ``psi`` and ``v`` are only used by the original (multiplier) form of D-RLS;
    ``v[k]`` is this node's multiplier towards neighbor ``k``. ``inbox`` maps a
    neighbor to ``(estimate, slot_received)``.
    """

    s: np.ndarray
    phi_inv: np.ndarray
    delta: np.ndarray
    psi: np.ndarray
    v: dict = field(default_factory=dict)
    sigma: VarianceEstimator | float = field(default_factory=VarianceEstimator)
    inbox: dict = field(default_factory=dict)
    mult_count: int = 0

    @classmethod
    def initial(cls, p: int, gamma: float, neighbors=(), sigma=None) -> "NodeState":
        zero = np.zeros(p)
        return cls(
            s=zero.copy(),
            phi_inv=gamma * np.eye(p),
            delta=zero.copy(),
            psi=zero.copy(),
            v={k: zero.copy() for k in neighbors},
            sigma=VarianceEstimator() if sigma is None else sigma,
            inbox={k: (zero.copy(), 0) for k in neighbors},
        )

    @property
    def p(self) -> int:
        return self.s.shape[-1]


def innovation(x, h, s):
    """Prediction error ``x - h @ s`` of an incoming datum."""
    return x - np.einsum("...i,...i->...", h, s)


def censor_decide(innov, tau, sigma):
    """Censoring indicator: ``0`` when ``|innov| <= tau * sigma`` (datum discarded), else ``1``."""
    return (np.abs(innov) > tau * sigma).astype(np.int8)


def phi_update(phi_inv, h, lam: float = 1.0, slot=None):
    """Rank-one RLS update ``(lam * Phi + h h^T)^{-1}`` given ``Phi^{-1}``.

    Passing ``h = 0`` gives the censored update ``Phi^{-1} / lam``. The result is
    symmetrized to stop round-off asymmetry from accumulating.
    """
    g = np.einsum("...ij,...j->...i", phi_inv, h)
    denom = lam + np.einsum("...i,...i->...", h, g)
    out = (phi_inv - g[..., :, None] * g[..., None, :] / denom[..., None, None]) / lam
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out).all(axis=(-1, -2))) if out.ndim > 2 else None
        node = int(bad[0][0]) if bad is not None and len(bad) else None
        raise NumericError("non-finite inverse covariance", node=node, slot=slot)
    return out


def estimate_update_new_form(s, x, h, c, rho, phi_inv_new, delta=None):
    """``s + c * Phi^{-1} h (x - h @ s) - rho * Phi^{-1} delta``.

    ``c`` is the censoring indicator (per node when batched). With ``c = 0`` this
    is the censored update; ``rho = 0`` with ``c = 1`` is plain RLS. ``delta=None``
    drops the consensus term entirely (no product is formed).
    """
    c = np.asarray(c, dtype=float)
    gain = np.einsum("...ij,...j->...i", phi_inv_new, h)
    out = s + c[..., None] * gain * innovation(x, h, s)[..., None]
    if delta is not None:
        out = out - rho * np.einsum("...ij,...j->...i", phi_inv_new, delta)
    return out


def delta_update(delta, own_now, own_prev, nb_now, nb_prev, lam: float = 1.0, mask=None):
    """Consensus multiplier update.

    ``delta + sum_k (own_now - nb_now[k]) - lam * sum_k (own_prev - nb_prev[k])``
    where ``nb_*`` stack neighbor estimates along axis ``-2``. ``mask`` (shape
    ``nb_now.shape[:-1]``) selects which rows are neighbors.
    """
    diff_now = own_now[..., None, :] - nb_now
    diff_prev = own_prev[..., None, :] - nb_prev
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)[..., None]
        diff_now = np.where(keep, diff_now, 0.0)
        diff_prev = np.where(keep, diff_prev, 0.0)
    return delta + diff_now.sum(axis=-2) - lam * diff_prev.sum(axis=-2)


# -- original (multiplier) form ------------------------------------------------


def original_form_step(state: NodeState, d: StepDatum, neighbor_v: dict, lam: float = 1.0) -> NodeState:
    """Covariance, cross-covariance and estimate updates of the multiplier form.

    ``neighbor_v[k]`` is neighbor ``k``'s multiplier towards this node from the
    previous slot. Multipliers are advanced separately by :func:`v_update` once
    all neighbors have produced their new estimates.
    """
    missing = set(state.v) - set(neighbor_v)
    if missing:
        raise UsageError(f"missing neighbor multipliers for {sorted(missing)}")
    phi_inv = phi_update(state.phi_inv, d.h, lam, slot=d.slot)
    psi = lam * state.psi + d.h * d.x
    coupling = np.zeros_like(psi)
    for k, v_own in state.v.items():
        coupling = coupling + (v_own - neighbor_v[k])
    s = phi_inv @ (psi - 0.5 * coupling)
    mults = phi_update_cost(state.p) + matvec_cost(state.p)
    return replace(state, phi_inv=phi_inv, psi=psi, s=s, mult_count=state.mult_count + mults)


def v_update(state: NodeState, neighbor_s: dict, rho: float) -> NodeState:
    """``v[k] += rho * (s - s_k)`` for every neighbor ``k``.

    With this step size (and the factor 1/2 in the estimate update) the
    multiplier form reproduces the delta form exactly, because
    ``rho * delta(t) = 1/2 * sum_k [(v[k] - v_k)(t) - lam * (v[k] - v_k)(t-1)]``.
    """
    return replace(state, v={k: v + rho * (state.s - neighbor_s[k]) for k, v in state.v.items()})
