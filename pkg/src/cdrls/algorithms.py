"""Slot-synchronous orchestration of D-RLS, its censored variants, and the baselines.

A slot runs in two phases. First every node decides whether to censor and
updates its covariance and estimate from its own state and inbox snapshot.
Then the messages mandated by the algorithm are delivered and the consensus
multipliers are refreshed. All per-node arithmetic goes through the kernels in
:mod:`cdrls.node_core`, vectorized over nodes.

Inbox layout: ``inbox[k, i]`` is node ``k``'s latest copy of neighbor ``i``'s
estimate; ``sent[i, k]`` marks a message from ``i`` to ``k``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, SourceExhausted
from .graph import Network
from .metrics import MetricsLog
from .node_core import (
    NodeState,
    VarianceEstimator,
    censor_decide,
    delta_update,
    estimate_update_new_form,
    innovation,
    matvec_cost,
    phi_update,
    phi_update_cost,
)
from .rng_stats import variance_update

CLAMP_NORM = 1e6
FULL_RECORD_MAX_T = 5000
SPARSE_RECORD_EVERY = 10


class AlgorithmKind(str, enum.Enum):
    DRLS_ORIGINAL = "drls_original"
    DRLS = "drls"
    CDRLS1 = "cdrls1"
    CDRLS2 = "cdrls2"
    CDRLS3 = "cdrls3"
    ACRLS = "acrls"
    DIFFUSION_LMS = "diffusion_lms"

    @property
    def censors(self) -> bool:
        return self in (AlgorithmKind.CDRLS1, AlgorithmKind.CDRLS2, AlgorithmKind.CDRLS3, AlgorithmKind.ACRLS)


@dataclass
class SlotTranscript:
    """What happened in one slot.

    ``c[j]`` is node ``j``'s censoring indicator (``0`` = censored); ``sent[i, k]``
    marks a scheduled message ``i -> k``; ``forced[k, i]`` marks a forced receive
    by ``k`` of ``i``'s estimate. ``messages`` counts the ``p``-vector messages
    (the multiplier form sends two per edge direction).
    """

    slot: int
    c: np.ndarray
    sent: np.ndarray
    forced: np.ndarray
    mults: np.ndarray
    messages: int

    @property
    def transmissions(self) -> int:
        return int(self.sent.sum())

    @property
    def forced_receives(self) -> int:
        return int(self.forced.sum())


@dataclass
class World:
    """Stacked state of every node plus the parameters shared by all of them."""

    net: Network
    s: np.ndarray
    phi_inv: np.ndarray
    delta: np.ndarray
    lam: float = 1.0
    rho: float = 0.0
    inbox: np.ndarray = None
    inbox_slot: np.ndarray = None
    ref_own: np.ndarray = None
    ref_nb: np.ndarray = None
    psi: np.ndarray = None
    v: np.ndarray = None
    variance: VarianceEstimator | None = None
    known_sigma: np.ndarray | None = None
    mult: np.ndarray = None
    v_scale: float = 1.0
    clamp_events: int = 0
    max_inbox_age: int = 0
    weights: np.ndarray | None = None
    t: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, net: Network, p: int, gamma: float, lam: float = 1.0, rho: float = 0.0,
                known_sigma=None, weights=None, v_scale: float = 1.0) -> "World":
        J = net.J
        s = np.zeros((J, p))
        return cls(
            net=net,
            s=s,
            phi_inv=np.broadcast_to(gamma * np.eye(p), (J, p, p)).copy(),
            delta=np.zeros((J, p)),
            lam=lam,
            rho=rho,
            inbox=np.zeros((J, J, p)),
            inbox_slot=np.zeros((J, J), dtype=np.int64),
            ref_own=s.copy(),
            ref_nb=np.zeros((J, J, p)),
            psi=np.zeros((J, p)),
            v=np.zeros((J, J, p)),
            variance=None if known_sigma is not None else VarianceEstimator(1, np.zeros(J)),
            known_sigma=None if known_sigma is None else np.sqrt(np.asarray(known_sigma, dtype=float)),
            mult=np.zeros(J, dtype=np.int64),
            weights=weights,
            v_scale=v_scale,
        )

    @property
    def J(self) -> int:
        return self.s.shape[0]

    @property
    def p(self) -> int:
        return self.s.shape[1]

    def node(self, j: int) -> NodeState:
        """Snapshot of node ``j`` as a :class:`NodeState`."""
        nbrs = self.net.neighbors[j]
        sigma = self.known_sigma[j] if self.known_sigma is not None else VarianceEstimator(
            self.variance.t, float(self.variance.sigma_sq[j]))
        return NodeState(
            s=self.s[j].copy(),
            phi_inv=self.phi_inv[j].copy(),
            delta=self.delta[j].copy(),
            psi=self.psi[j].copy(),
            v={k: self.v[j, k].copy() for k in nbrs},
            sigma=sigma,
            inbox={k: (self.inbox[j, k].copy(), int(self.inbox_slot[j, k])) for k in nbrs},
            mult_count=int(self.mult[j]),
        )


# -- helpers -------------------------------------------------------------------


def _censor(world: World, x, H, tau):
    innov = innovation(x, H, world.s)
    if world.known_sigma is not None:
        sigma = world.known_sigma
    else:
        world.variance = variance_update(world.variance, innov)
        sigma = world.variance.sigma
    return censor_decide(innov, tau, sigma)


def _checked(s, t):
    bad = ~np.isfinite(s).all(axis=1)
    if bad.any():
        raise NumericError("non-finite estimate", node=int(np.flatnonzero(bad)[0]), slot=t)
    return s


def _finish(world: World, t, c, sent, forced, mults, messages=None) -> SlotTranscript:
    world.mult += mults
    world.t = t
    if messages is None:
        messages = int(sent.sum())
    return SlotTranscript(t, c, sent, forced, mults, messages)


def _no_traffic(J):
    return np.zeros((J, J), dtype=bool)


def _full_cost(p):
    return phi_update_cost(p) + 2 * matvec_cost(p)


# -- steps -------------------------------------------------------------------------


def _step_exchange_all(world: World, x, H, t, c) -> SlotTranscript:
    """Every node updates (censored or not), transmits, receives, refreshes delta."""
    J, p = world.J, world.p
    adj = world.net.adjacency
    used = c.astype(bool)
    phi_new = np.where(used[:, None, None], phi_update(world.phi_inv, H, world.lam, slot=t), world.phi_inv / world.lam)
    s_new = _checked(estimate_update_new_form(world.s, x, H, c, world.rho, phi_new, world.delta), t)
    nb_now = np.broadcast_to(s_new[None, :, :], (J, J, p))
    world.delta = delta_update(world.delta, s_new, world.ref_own, nb_now, world.ref_nb, world.lam, mask=adj)
    world.phi_inv, world.s = phi_new, s_new
    world.ref_own, world.ref_nb = s_new, nb_now
    world.inbox = nb_now
    world.inbox_slot = np.where(adj, t, world.inbox_slot)
    mults = np.where(used, _full_cost(p), matvec_cost(p))
    return _finish(world, t, c, adj.copy(), _no_traffic(J), mults)


def step_drls(world: World, x, H, t) -> SlotTranscript:
    return _step_exchange_all(world, x, H, t, np.ones(world.J, dtype=np.int8))


def step_cdrls1(world: World, x, H, t, tau) -> SlotTranscript:
    return _step_exchange_all(world, x, H, t, _censor(world, x, H, tau))


def _step_selective(world: World, x, H, t, c, both_ends: bool) -> SlotTranscript:
    """Shared body of CD-RLS-2/3: only uncensored nodes update and transmit."""
    J, p = world.J, world.p
    adj = world.net.adjacency
    used = c.astype(bool)
    phi_new = np.where(used[:, None, None], phi_update(world.phi_inv, H, world.lam, slot=t), world.phi_inv)
    s_upd = _checked(estimate_update_new_form(world.s, x, H, c, world.rho, phi_new, world.delta), t)
    s_new = np.where(used[:, None], s_upd, world.s)
    if both_ends:
        s_new = _clamp(world, s_new)

    sent = adj & used[:, None]
    if both_ends:
        sent = sent & used[None, :]
    received = sent.T
    inbox = np.where(received[:, :, None], s_new[None, :, :], world.inbox)
    delta_new = delta_update(world.delta, s_new, world.ref_own, inbox, world.ref_nb, world.lam, mask=adj)

    world.delta = np.where(used[:, None], delta_new, world.delta)
    world.ref_own = np.where(used[:, None], s_new, world.ref_own)
    world.ref_nb = np.where(used[:, None, None], inbox, world.ref_nb)
    world.phi_inv, world.s = phi_new, s_new
    world.inbox = inbox
    world.inbox_slot = np.where(received, t, world.inbox_slot)
    mults = np.where(used, _full_cost(p), 0)
    return sent, mults


def _clamp(world: World, s):
    norms = np.linalg.norm(s, axis=1)
    over = norms > CLAMP_NORM
    if over.any():
        world.clamp_events += int(over.sum())
        s = np.where(over[:, None], s * (CLAMP_NORM / np.where(over, norms, 1.0))[:, None], s)
    return s


def step_cdrls2(world: World, x, H, t, tau) -> SlotTranscript:
    c = _censor(world, x, H, tau)
    sent, mults = _step_selective(world, x, H, t, c, both_ends=False)
    _track_age(world, t)
    return _finish(world, t, c, sent, _no_traffic(world.J), mults)


def step_cdrls3(world: World, x, H, t, tau, d_max: int) -> SlotTranscript:
    """Censored nodes idle; links carry traffic only between two uncensored ends.

    A node that has not heard from a neighbor for ``d_max`` slots pulls that
    neighbor's current estimate (no delta refresh that slot).
    """
    c = _censor(world, x, H, tau)
    sent, mults = _step_selective(world, x, H, t, c, both_ends=True)
    adj = world.net.adjacency
    age = _track_age(world, t)
    forced = adj & (age >= d_max)
    if forced.any():
        world.inbox = np.where(forced[:, :, None], world.s[None, :, :], world.inbox)
        world.inbox_slot = np.where(forced, t, world.inbox_slot)
    return _finish(world, t, c, sent, forced, mults)


def _track_age(world: World, t):
    age = np.where(world.net.adjacency, t - world.inbox_slot, 0)
    if age.size:
        world.max_inbox_age = max(world.max_inbox_age, int(age.max()))
    return age


def step_acrls(world: World, x, H, t, tau) -> SlotTranscript:
    """Censored RLS at every node, no collaboration."""
    p = world.p
    c = _censor(world, x, H, tau)
    used = c.astype(bool)
    phi_new = np.where(used[:, None, None], phi_update(world.phi_inv, H, world.lam, slot=t), world.phi_inv / world.lam)
    world.s = _checked(estimate_update_new_form(world.s, x, H, c, 0.0, phi_new), t)
    world.phi_inv = phi_new
    mults = np.where(used, phi_update_cost(p) + matvec_cost(p), 0)
    return _finish(world, t, c, _no_traffic(world.J), _no_traffic(world.J), mults)


def diffusion_weights(net: Network, scheme: str = "uniform") -> np.ndarray:
    """Row-stochastic combination matrix over closed neighborhoods."""
    adj = net.adjacency
    deg = net.degrees
    if scheme == "uniform":
        W = np.where(adj | np.eye(net.J, dtype=bool), 1.0 / (deg[:, None] + 1.0), 0.0)
    elif scheme == "metropolis":
        W = np.where(adj, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
        np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    else:
        raise ConfigError(f"unknown diffusion weights {scheme!r}")
    return W


def lms_step_size(t: int, scale: float = 1.5) -> float:
    return scale / np.sqrt(t)


def step_diffusion_lms(world: World, x, H, t, step_schedule=lms_step_size) -> SlotTranscript:
    """Adapt-then-combine LMS; all ``O(p)`` per node, so no ``p**2`` multiplications are tallied."""
    J = world.J
    mu = step_schedule(t)
    adapted = world.s + mu * H * innovation(x, H, world.s)[:, None]
    world.s = _checked(world.weights @ adapted, t)
    c = np.ones(J, dtype=np.int8)
    return _finish(world, t, c, world.net.adjacency.copy(), _no_traffic(J), np.zeros(J, dtype=np.int64))


def step_drls_original(world: World, x, H, t) -> SlotTranscript:
    """Multiplier form: covariance, cross-covariance, estimate, then per-edge multipliers."""
    J, p = world.J, world.p
    adj = world.net.adjacency
    phi_new = phi_update(world.phi_inv, H, world.lam, slot=t)
    psi = world.lam * world.psi + H * x[:, None]
    pair = np.where(adj[:, :, None], world.v - np.swapaxes(world.v, 0, 1), 0.0)
    s_new = _checked(np.einsum("jab,jb->ja", phi_new, psi - 0.5 * pair.sum(axis=1)), t)
    step = world.v_scale * world.rho
    world.v = np.where(adj[:, :, None], world.v + step * (s_new[:, None, :] - s_new[None, :, :]), world.v)
    world.phi_inv, world.psi, world.s = phi_new, psi, s_new
    mults = np.full(J, phi_update_cost(p) + matvec_cost(p))
    sent = adj.copy()
    return _finish(world, t, np.ones(J, dtype=np.int8), sent, _no_traffic(J), mults, messages=2 * int(sent.sum()))


# -- runner ------------------------------------------------------------------------


def make_world(kind, config, net: Network, source, v_scale: float = 1.0) -> World:
    kind = AlgorithmKind(kind)
    known = None
    if kind.censors and config.variance == "known":
        known = source.noise_var
        if known is None:
            raise ConfigError("variance = known needs a source with known noise variances")
    weights = diffusion_weights(net, config.diffusion_weights) if kind is AlgorithmKind.DIFFUSION_LMS else None
    return World.initial(net, source.p, config.gamma_for(kind.value), config.lam, config.rho,
                         known_sigma=known, weights=weights, v_scale=v_scale)


def step(kind, world: World, x, H, t, config, tau=None) -> SlotTranscript:
    kind = AlgorithmKind(kind)
    if tau is None:
        tau = config.resolved_tau()
    if kind is AlgorithmKind.DRLS:
        return step_drls(world, x, H, t)
    if kind is AlgorithmKind.DRLS_ORIGINAL:
        return step_drls_original(world, x, H, t)
    if kind is AlgorithmKind.CDRLS1:
        return step_cdrls1(world, x, H, t, tau)
    if kind is AlgorithmKind.CDRLS2:
        return step_cdrls2(world, x, H, t, tau)
    if kind is AlgorithmKind.CDRLS3:
        return step_cdrls3(world, x, H, t, tau, config.d_max)
    if kind is AlgorithmKind.ACRLS:
        return step_acrls(world, x, H, t, tau)
    scale = config.lms_step
    return step_diffusion_lms(world, x, H, t, lambda k: lms_step_size(k, scale))


def recorded(t: int, T: int) -> bool:
    return T <= FULL_RECORD_MAX_T or t % SPARSE_RECORD_EVERY == 0 or t == T


def run(kind, config, net: Network, source, *, record_estimates: bool = False, observer=None,
        v_scale: float = 1.0) -> MetricsLog:
    """Run ``config.T`` slots of ``kind`` from the standard initial state.

    Initial state: zero estimates and multipliers, ``Phi^{-1}(0) = gamma * I``
    and inboxes holding every neighbor's ``s(0)``. A finite source that runs dry
    ends the run early; ``meta['effective_T']`` records how far it got.
    ``observer(t, world, transcript)`` is called after every slot. ``v_scale``
    rescales the multiplier step of the original form (negative controls only).
    """
    kind = AlgorithmKind(kind)
    world = make_world(kind, config, net, source, v_scale=v_scale)
    tau = config.resolved_tau()
    T = config.T
    J, p = world.J, world.p
    slots, errs, ests = [], [], []
    cum_mults = np.zeros(T, dtype=np.int64)
    cum_comm = np.zeros(T, dtype=np.int64)
    cum_forced = np.zeros(T, dtype=np.int64)
    censored = np.zeros(T, dtype=np.int64)
    node_censored = np.zeros(J, dtype=np.int64)
    total_mults = total_comm = total_forced = 0
    effective_T = 0
    for t in range(1, T + 1):
        try:
            x, H = source.next_slot(t)
        except SourceExhausted:
            break
        tr = step(kind, world, x, H, t, config, tau)
        total_mults += int(tr.mults.sum())
        total_comm += p * tr.messages
        total_forced += p * tr.forced_receives
        cum_mults[t - 1], cum_comm[t - 1], cum_forced[t - 1] = total_mults, total_comm, total_forced
        cens = tr.c == 0
        censored[t - 1] = int(cens.sum())
        node_censored += cens
        if recorded(t, T):
            slots.append(t)
            errs.append(float(np.linalg.norm(world.s - source.truth(t))))
        if record_estimates:
            ests.append(world.s.copy())
        if observer is not None:
            observer(t, world, tr)
        effective_T = t
    n = effective_T
    return MetricsLog(
        kind=kind.value,
        J=J,
        p=p,
        slots=np.array(slots, dtype=np.int64),
        error_norms=np.array(errs, dtype=float),
        cum_mults=cum_mults[:n],
        cum_comm=cum_comm[:n],
        cum_forced=cum_forced[:n],
        censor_counts=censored[:n],
        node_censored=node_censored,
        clamp_events=world.clamp_events,
        max_inbox_age=world.max_inbox_age,
        estimates=np.array(ests).reshape(n, J, p) if record_estimates else None,
        meta={"effective_T": n, "tau": config.resolved_tau() if kind.censors else None},
    )
