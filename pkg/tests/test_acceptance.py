"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a single PASS/FAIL line (shown in the terminal summary) and
then asserts. Run on its own with ``python3 tests/test_acceptance.py``.
"""

import math
import os
import sys
import time
from importlib import resources

import numpy as np
import pytest

from cdrls import harness
from cdrls.algorithms import run
from cdrls.cli import main
from cdrls.config import load_config, loads
from cdrls.datasource import synthetic_default
from cdrls.graph import connected_random_geometric, from_edges
from cdrls.metrics import decay_rate_fit, empirical_costs, smrd_series, table1_predictions
from cdrls.node_core import estimate_update_new_form, phi_update
from cdrls.rng_stats import derive_seed

CENSORED = ("cdrls1", "cdrls2", "cdrls3")
RUNS = 20


def shipped(name):
    return load_config(resources.files("cdrls") / "configs" / name)


class Experiment:
    """Monte Carlo logs of several algorithms under one config."""

    def __init__(self, cfg, kinds):
        self.cfg = cfg
        self.net = harness.build_network(cfg)
        start = time.perf_counter()
        self.logs = {k: harness.run_monte_carlo(cfg.with_algorithm(k), k, self.net) for k in kinds}
        self.seconds = time.perf_counter() - start

    def series(self, kind):
        return smrd_series(self.logs[kind])

    def censor_fraction(self, kind):
        return float(np.mean([log.censor_fraction() for log in self.logs[kind]]))

    def slope(self, kind):
        slots, sm, _ = self.series(kind)
        return decay_rate_fit(list(zip(slots, sm)), 200, 2000)


_CACHE = {}


def experiment(name):
    if name not in _CACHE:
        base = shipped("paper_synthetic.cfg").replace(runs=RUNS)
        if name == "online":
            _CACHE[name] = Experiment(base, ("drls", "cdrls1", "cdrls2", "cdrls3", "acrls"))
        elif name == "known":
            _CACHE[name] = Experiment(base.replace(variance="known"), ("drls",) + CENSORED)
        elif name == "tracking":
            _CACHE[name] = Experiment(shipped("paper_tracking.cfg").replace(T=400), ())
        else:
            raise KeyError(name)
    return _CACHE[name]


def _states(kind, cfg, net, seed):
    out = []
    run(kind, cfg, net, synthetic_default(net.J, seed),
        observer=lambda t, w, tr: out.append((w.s.copy(), w.phi_inv.copy(), w.delta.copy())))
    return out


def _trending_down(sm, t_from=100, t_to=2000, blocks=8):
    """Log-spaced block means after ``t_from`` decrease strictly."""
    edges = np.unique(np.round(np.geomspace(t_from, t_to, blocks + 1)).astype(int))
    means = [sm[a - 1:b].mean() for a, b in zip(edges[:-1], edges[1:])]
    return all(b < a for a, b in zip(means, means[1:])), means


# -- 1 ------------------------------------------------------------------------------------


def test_criterion_01_form_equivalence(tmp_path, acceptance_report):
    cfg = tmp_path / "cmp.cfg"
    cfg.write_text("algorithm = drls\nJ = 5\ntopology = geometric\nrange = 0.3\np = 4\nT = 100\n"
                   "rho = 0.01\nlambda = 1.0\nseed = 0\n")
    start = time.perf_counter()
    code = main(["compare-forms", str(cfg), "--out", str(tmp_path / "cmp")])
    seconds = time.perf_counter() - start
    _, rows = harness.read_csv(tmp_path / "cmp" / "deviation.csv")
    worst = max(r[1] for r in rows)
    ok = code == 0 and len(rows) == 100 and worst <= 1e-6 and seconds < 5
    acceptance_report(1, ok, f"max deviation {worst:.2e} (<= 1e-6), {seconds:.2f}s (< 5s)")
    assert ok


# -- 2 ------------------------------------------------------------------------------------


def test_criterion_02_degeneracy_lattice(acceptance_report):
    net = connected_random_geometric(15, 0.3, 1)[0]
    base = loads("algorithm = drls\nT = 200\nruns = 1\n")
    ref = _states("drls", base, net, seed=5)
    part_a = {}
    for kind in CENSORED:
        other = _states(kind, base.replace(algorithms=(kind,), tau=0.0), net, seed=5)
        part_a[kind] = len(other) == 200 and all(
            all(np.array_equal(x, y) for x, y in zip(sa, sb)) for sa, sb in zip(ref, other))

    cd1 = _states("cdrls1", base.replace(algorithms=("cdrls1",), pi_star=0.6, rho=0.0), net, seed=6)
    ac = _states("acrls", base.replace(algorithms=("acrls",), pi_star=0.6, rho=0.0), net, seed=6)
    part_b = all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) for a, b in zip(cd1, ac))

    edgeless = from_edges(15, [])
    cfg_c = base.replace(T=500)
    src = synthetic_default(15, 7)
    log = run("drls", cfg_c, edgeless, src, record_estimates=True)
    replay = synthetic_default(15, 7)
    data = [replay.next_slot(t) for t in range(1, 501)]
    X = np.stack([d[0] for d in data])
    H = np.stack([d[1] for d in data])
    P = np.broadcast_to(30.0 * np.eye(4), (15, 4, 4)).copy()
    s = np.zeros((15, 4))
    for t in range(500):
        P = phi_update(P, H[t], 1.0)
        s = estimate_update_new_form(s, X[t], H[t], np.ones(15), 0.0, P)
    rls_gap = np.abs(log.estimates[-1] - s).max()
    ridge_gap = max(
        np.abs(s[j] - np.linalg.solve(H[:, j].T @ H[:, j] + np.eye(4) / 30.0, H[:, j].T @ X[:, j])).max()
        for j in range(15))
    part_c = rls_gap <= 1e-6 and ridge_gap <= 1e-6

    ok = all(part_a.values()) and part_b and part_c
    acceptance_report(2, ok, f"(a) tau=0 bit-identical {part_a}; (b) rho=0 CD-RLS-1 == AC-RLS {part_b}; "
                             f"(c) edgeless vs RLS {rls_gap:.1e}, RLS vs ridge {ridge_gap:.1e}")
    assert ok


# -- 3 ------------------------------------------------------------------------------------


def test_criterion_03_censoring_ratio(acceptance_report):
    exp = experiment("online")
    assert exp.cfg.variance == "online" and exp.cfg.pi_star == 0.6 and exp.cfg.T == 2000
    fractions = {k: exp.censor_fraction(k) for k in ("acrls",) + CENSORED}
    in_band = all(0.57 <= f <= 0.66 for f in fractions.values())
    ok = in_band and exp.seconds < 120
    shown = ", ".join(f"{k} {f:.4f}" for k, f in fractions.items())
    acceptance_report(3, ok, f"censor fractions [{shown}] (band [0.57, 0.66]); "
                             f"{RUNS} runs x 5 algorithms in {exp.seconds:.1f}s (< 120s)")
    assert ok


# -- 4 ------------------------------------------------------------------------------------


def test_criterion_04_convergence_rate(acceptance_report):
    # Convergence theory fixes sigma_j(t) = sigma_j, i.e. known-variance mode.
    exp = experiment("known")
    start = time.perf_counter()
    parts = {}
    for kind in CENSORED:
        _, sm, _ = exp.series(kind)
        down, _ = _trending_down(sm)
        slope = exp.slope(kind)
        parts[kind] = (bool(np.all(np.isfinite(sm))), down, slope)
    drls_slope = exp.slope("drls")
    seconds = exp.seconds + time.perf_counter() - start
    ok = all(fin and down and -1.3 <= sl <= -0.6 for fin, down, sl in parts.values())
    ok = ok and all(drls_slope <= sl + 0.15 for _, _, sl in parts.values()) and seconds < 300
    online = experiment("online")
    diag = ", ".join(f"{k} {online.slope(k):.3f}" for k in ("drls",) + CENSORED)
    shown = ", ".join(f"{k} slope {sl:.3f} finite={fin} trending={down}" for k, (fin, down, sl) in parts.items())
    acceptance_report(4, ok, f"[{shown}]; drls slope {drls_slope:.3f}; {seconds:.1f}s; "
                             f"online-estimator slopes for reference: {diag}")
    assert ok


# -- 5 ------------------------------------------------------------------------------------


def _cost_check(exp):
    net, p = exp.net, exp.cfg.p
    rows = {}
    for kind in ("drls",) + CENSORED:
        logs = exp.logs[kind]
        f = float(np.mean([log.censor_fraction() for log in logs]))
        comm, comp = np.mean([empirical_costs(log, 2000) for log in logs], axis=0)
        pred_comm, pred_comp = table1_predictions(f, p, net)[kind]
        rows[kind] = (f, comm / pred_comm - 1.0, comp * p * p / pred_comp - 1.0)
    ok = all(abs(rows[k][1]) <= 0.05 for k in ("cdrls2", "cdrls3"))
    ok = ok and all(abs(r[2]) <= 0.10 for r in rows.values())
    return ok, rows


def test_criterion_05_table1(acceptance_report):
    ok, rows = _cost_check(experiment("known"))
    online_ok, online_rows = _cost_check(experiment("online"))
    shown = "; ".join(f"{k} f={f:.3f} comm {dc:+.1%} comp {dp:+.1%}" for k, (f, dc, dp) in rows.items())
    diag = "; ".join(f"{k} comm {dc:+.1%} comp {dp:+.1%}" for k, (_, dc, dp) in online_rows.items()
                     if k != "drls")
    acceptance_report(5, ok, f"known variance: {shown}. online estimator for reference "
                             f"({'within' if online_ok else 'outside'} tolerance): {diag}")
    assert ok


# -- 6 ------------------------------------------------------------------------------------


def test_criterion_06_staleness(acceptance_report):
    exp = experiment("online")
    base = exp.cfg.with_algorithm("cdrls3")
    ages = [log.max_inbox_age for log in exp.logs["cdrls3"]]
    bounded = max(ages) <= base.d_max
    never = harness.run_monte_carlo(base.replace(d_max=10**6), "cdrls3", exp.net)
    tight = harness.run_monte_carlo(base.replace(d_max=3), "cdrls3", exp.net)
    forced_never = sum(int(log.cum_forced[-1]) for log in never)
    forced_tight = [int(log.cum_forced[-1]) for log in tight]
    tight_bounded = max(log.max_inbox_age for log in tight) <= 3
    clamps = sum(log.clamp_events for log in exp.logs["cdrls3"] + never + tight)
    ok = bounded and tight_bounded and forced_never == 0 and min(forced_tight) > 0 and clamps == 0
    acceptance_report(6, ok, f"max inbox age {max(ages)} (d_max={base.d_max}); forced units "
                             f"{forced_never} at d_max=1e6, min {min(forced_tight)} per run at d_max=3; "
                             f"clamp events {clamps}")
    assert ok


# -- 7 ------------------------------------------------------------------------------------


def test_criterion_07_smrd_below_msd(acceptance_report):
    checked, worst = 0, -math.inf
    for name in ("online", "known"):
        exp = experiment(name)
        for logs in exp.logs.values():
            _, sm, ms = smrd_series(logs)
            checked += len(sm)
            worst = max(worst, float(np.max(sm - ms)))
    exp = experiment("tracking")
    for kind in exp.cfg.algorithms:
        logs = harness.run_monte_carlo(exp.cfg.with_algorithm(kind).replace(runs=5), kind, exp.net)
        _, sm, ms = smrd_series(logs)
        checked += len(sm)
        worst = max(worst, float(np.max(sm - ms)))
    ok = worst <= 0.0
    acceptance_report(7, ok, f"{checked} recorded slots, max(smrd - msd) = {worst:.3e}")
    assert ok


# -- 8 ------------------------------------------------------------------------------------


def test_criterion_08_inversion_lemma(acceptance_report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for k in range(1000):
        p = int(rng.integers(1, 10))
        lam = (1.0, 0.95)[k % 2]
        A = rng.standard_normal((p, p))
        Phi = A @ A.T + p * np.eye(p)
        h = rng.standard_normal(p)
        out = phi_update(np.linalg.inv(Phi), h, lam)
        worst = max(worst, float(np.abs(out @ (lam * Phi + np.outer(h, h)) - np.eye(p)).max()))
    cfg = shipped("paper_synthetic.cfg").replace(runs=1)
    net = harness.build_network(cfg)
    top = {}
    for kind in ("drls", "cdrls2"):
        seen = [0.0]

        def watch(t, world, tr):
            seen[0] = max(seen[0], float(np.linalg.eigvalsh(world.phi_inv).max()))

        run(kind, cfg.with_algorithm(kind), net, synthetic_default(15, derive_seed(cfg.seed, 0)), observer=watch)
        top[kind] = seen[0]
    ok = worst <= 1e-8 and all(v <= cfg.gamma + 1e-10 for v in top.values())
    acceptance_report(8, ok, f"max |Phi^-1 (lam Phi + hh^T) - I| = {worst:.1e} over 1000 draws; "
                             f"max eig Phi^-1 over 2000 slots {top} (gamma = {cfg.gamma})")
    assert ok


# -- 9 ------------------------------------------------------------------------------------


def test_criterion_09_tracking(acceptance_report):
    cfg = shipped("paper_tracking.cfg")
    assert cfg.lam == 0.95 and cfg.pi_star == 0.3
    net = harness.build_network(cfg)
    ts = np.arange(200, 334)
    stats = {}
    for kind in cfg.algorithms:
        ck = cfg.with_algorithm(kind)
        sq, mults, comm = [], [], []
        for r in range(cfg.runs):
            src = harness.make_source(ck, r)
            log = run(kind, ck, net, src, record_estimates=True)
            truth = np.array([src.truth(t)[0] for t in ts])
            sq.append((log.estimates[ts - 1, :, 0] - truth[:, None]) ** 2)
            mults.append(log.cum_mults[-1])
            comm.append(log.cum_comm[-1])
        stats[kind] = (float(np.sqrt(np.mean(sq))), float(np.mean(mults)), float(np.mean(comm)))
    d_rmse, d_mults, d_comm = stats["drls"]
    ok = all(rmse < 0.2 for rmse, _, _ in stats.values())
    ok = ok and all(stats[k][1] < d_mults for k in cfg.algorithms if k != "drls")
    ok = ok and all(stats[k][2] < d_comm for k in ("cdrls2", "cdrls3"))
    shown = "; ".join(f"{k} rmse {r:.3f} mults {m / d_mults:.2f}x comm {c / d_comm:.2f}x"
                      for k, (r, m, c) in stats.items())
    acceptance_report(9, ok, f"{shown} (relative to D-RLS)")
    assert ok


# -- 10 -----------------------------------------------------------------------------------


def _ingest_ok(path):
    rep = harness.ingest(path, 0, range(1, 10), max_records=45_720)
    good = (rep.raw_records, rep.retained, rep.per_node) == (45_730, 45_720, 3048) and rep.normalized_ok
    return good, rep


def test_criterion_10_real_data_path(casp_full, tmp_path, acceptance_report):
    good, rep = _ingest_ok(casp_full)
    cli_code = main(["ingest", str(casp_full), "--x-col", "0", "--feature-cols", "1,2,3,4,5,6,7,8,9",
                     "--max-records", "45720"])
    user_file = os.environ.get("CDRLS_CASP_PATH")
    user_note = "no user CASP file (set CDRLS_CASP_PATH to include it)"
    if user_file:
        user_good, _ = _ingest_ok(user_file)
        good = good and user_good
        user_note = f"user CASP file {'ok' if user_good else 'FAILED'}"
    cfg = shipped("paper_realdata.cfg").replace(algorithms=("cdrls2",), csv_path=str(casp_full),
                                                max_records=45_720, T=500, runs=1)
    res = harness.simulate(cfg, tmp_path / "real")
    _, rows = harness.read_csv(tmp_path / "real" / "smrd.csv")
    finite = len(rows) == 500 and all(math.isfinite(r[1]) for r in rows)
    ok = good and cli_code == 0 and finite and res["cdrls2"].effective_T == 500
    acceptance_report(10, ok, f"raw {rep.raw_records}, retained {rep.retained}, per node {rep.per_node}, "
                              f"|mean| {rep.max_abs_mean:.1e}, |std-1| {rep.max_std_error:.1e}; "
                              f"CD-RLS-2 smrd(500) = {rows[-1][1]:.4g}; {user_note}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
