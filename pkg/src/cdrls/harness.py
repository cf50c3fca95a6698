"""Monte Carlo driver: builds graphs and sources from a config, runs, writes CSV tables.

Run ``r`` of a config draws every random stream from ``derive_seed(seed, r)``,
so adding runs never changes earlier ones and results do not depend on the
worker count. Output files are written by the parent process only, into a
scratch directory that is moved into place once everything has succeeded.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import shutil
import subprocess
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algorithms import AlgorithmKind, run
from .config import CENSORING, RunConfig
from .datasource import DatasetSource, load_csv, normalize_and_partition, synthetic_default
from .errors import ConfigError, DeviationError, NumericError, ValidationError
from .graph import Network, connected_random_geometric, laplacian_max_eigenvalue, load_edge_list, random_geometric
from .metrics import MetricsLog, smrd_series
from .rng_stats import derive_seed

SWEEP_PARAMS = {"pi_star": "pi_star", "rho": "rho", "lambda": "lam", "d_max": "d_max"}
COMPARE_TOL = 1e-6


def build_network(cfg: RunConfig) -> Network:
    if cfg.topology == "edges":
        net = load_edge_list(cfg.edges_path)
        if net.J != cfg.J:
            raise ConfigError(f"J must match the edge list (got J={cfg.J}, file has {net.J} nodes)")
        return net
    if cfg.connect:
        return connected_random_geometric(cfg.J, cfg.range, cfg.topology_seed)[0]
    return random_geometric(cfg.J, cfg.range, cfg.topology_seed)


def load_dataset(cfg: RunConfig) -> DatasetSource:
    records = load_csv(cfg.csv_path, cfg.x_col, cfg.feature_cols, cfg.max_records)
    data = normalize_and_partition(records, cfg.J)
    data.truth(0)  # solve the batch problem once, before any copies are made
    return data


def make_source(cfg: RunConfig, run_index: int, dataset: DatasetSource | None = None):
    seed = derive_seed(cfg.seed, run_index)
    if cfg.source == "csv":
        if dataset is None:
            dataset = load_dataset(cfg)
        return dataclasses.replace(dataset, _t=0)
    return synthetic_default(cfg.J, seed, tracking=cfg.source == "tracking", p=cfg.p, q=cfg.q,
                             overlap=cfg.overlap)


def _one_run(job) -> MetricsLog:
    cfg, kind, net, run_index, dataset = job
    return run(kind, cfg, net, make_source(cfg, run_index, dataset))


def run_monte_carlo(cfg: RunConfig, kind: str, net: Network | None = None, workers: int = 1,
                    dataset: DatasetSource | None = None) -> list[MetricsLog]:
    """All ``cfg.runs`` runs of ``kind``, in run order."""
    net = build_network(cfg) if net is None else net
    if cfg.source == "csv" and dataset is None:
        dataset = load_dataset(cfg)
    jobs = [(cfg, kind, net, r, dataset) for r in range(cfg.runs)]
    if workers <= 1 or cfg.runs == 1:
        return [_one_run(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, cfg.runs)) as pool:
        return list(pool.map(_one_run, jobs))


# -- aggregation -------------------------------------------------------------------


@dataclass
class Aggregate:
    """Run-averaged tables of one algorithm."""

    kind: str
    smrd: list          # (slot, smrd, msd)
    costs: list         # (slot, cum_mults, cum_comm, cum_forced)
    censoring: list     # (slot, cumulative censor fraction)
    effective_T: int
    clamp_events: int
    max_inbox_age: int

    @property
    def smrd_at_T(self) -> float:
        return self.smrd[-1][1] if self.smrd else math.nan

    @property
    def total_multiplications(self) -> float:
        return self.costs[-1][1] if self.costs else 0.0

    @property
    def total_comm_units(self) -> float:
        return self.costs[-1][2] if self.costs else 0.0


def aggregate(kind: str, logs: list[MetricsLog]) -> Aggregate:
    T = min(log.T for log in logs)
    slots, sm, ms = smrd_series(logs)
    keep = slots <= T
    smrd_rows = [(int(t), float(a), float(b)) for t, a, b in zip(slots[keep], sm[keep], ms[keep])]

    def mean_of(attr):
        return np.mean([getattr(log, attr)[:T] for log in logs], axis=0) if T else np.zeros(0)

    mults, comm, forced = mean_of("cum_mults"), mean_of("cum_comm"), mean_of("cum_forced")
    t_axis = np.arange(1, T + 1)
    cens = np.mean([np.cumsum(log.censor_counts[:T]) / (t_axis * log.J) for log in logs], axis=0) if T else []
    return Aggregate(
        kind=kind,
        smrd=smrd_rows,
        costs=[(int(t), float(a), float(b), float(c)) for t, a, b, c in zip(t_axis, mults, comm, forced)],
        censoring=[(int(t), float(f)) for t, f in zip(t_axis, cens)],
        effective_T=T,
        clamp_events=sum(log.clamp_events for log in logs),
        max_inbox_age=max(log.max_inbox_age for log in logs),
    )


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_csv(path) -> tuple[list[str], list[list[float]]]:
    """Load a table written by this module; numbers come back as floats."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[_number(v) for v in row] for row in rows[1:]]


def _number(cell: str):
    try:
        return float(cell)
    except ValueError:
        return cell


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def write_tables(agg: Aggregate, cfg: RunConfig, directory: Path, wall_time: float, extra=None):
    directory.mkdir(parents=True, exist_ok=True)
    _write_csv(directory / "smrd.csv", ["slot", "smrd", "msd"], agg.smrd)
    _write_csv(directory / "costs.csv",
               ["slot", "cum_multiplications", "cum_comm_units", "forced_receive_units"], agg.costs)
    _write_csv(directory / "censoring.csv", ["slot", "censor_fraction"], agg.censoring)
    text = cfg.with_algorithm(agg.kind).to_text()
    (directory / "config.cfg").write_text(text, encoding="utf-8")
    meta = {
        "algorithm": agg.kind,
        "config": text,
        "git_describe": git_describe(),
        "wall_time_s": wall_time,
        "runs": cfg.runs,
        "effective_T": agg.effective_T,
        "tau": cfg.resolved_tau() if agg.kind in CENSORING else None,
        "clamp_events": agg.clamp_events,
        "max_inbox_age": agg.max_inbox_age,
    }
    meta.update(extra or {})
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Staging:
    """Scratch directory next to ``out_dir``; contents are moved in on success."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)

    def __enter__(self) -> Path:
        self.out_dir.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out_dir.name}.", dir=self.out_dir.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out_dir.mkdir(parents=True, exist_ok=True)
                for item in sorted(self.tmp.iterdir()):
                    target = self.out_dir / item.name
                    if target.is_dir():
                        shutil.rmtree(target)
                    os.replace(item, target)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


# -- commands --------------------------------------------------------------------


def simulate(cfg: RunConfig, out_dir, workers: int = 1) -> dict[str, Aggregate]:
    """Run every configured algorithm and write its tables.

    One algorithm writes straight into ``out_dir``; several get one
    subdirectory each. Any failure leaves ``out_dir`` untouched.
    """
    net = build_network(cfg)
    dataset = load_dataset(cfg) if cfg.source == "csv" else None
    results = {}
    with _Staging(out_dir) as tmp:
        for kind in cfg.algorithms:
            start = time.perf_counter()
            logs = run_monte_carlo(cfg.with_algorithm(kind), kind, net, workers, dataset)
            agg = aggregate(kind, logs)
            target = tmp if len(cfg.algorithms) == 1 else tmp / kind
            write_tables(agg, cfg, target, time.perf_counter() - start)
            results[kind] = agg
    return results


def _sweep_config(cfg: RunConfig, kind: str, param: str, value) -> RunConfig:
    changes = {"algorithms": (kind,), SWEEP_PARAMS[param]: value}
    if param == "pi_star":
        changes["tau"] = None
    if kind not in CENSORING:
        changes.update(pi_star=None, tau=None)
    elif cfg.pi_star is None and cfg.tau is None and param != "pi_star":
        raise ConfigError(f"pi_star/tau must be set for censoring algorithm {kind}")
    return cfg.replace(**changes)


def parse_sweep_values(param: str, text: str) -> list:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"param must be one of {', '.join(SWEEP_PARAMS)} (got {param!r})")
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise ConfigError("values must list at least one value (got empty list)")
    cast = int if param == "d_max" else float
    try:
        return [cast(v) for v in items]
    except ValueError:
        raise ConfigError(f"values must be numbers for {param} (got {text!r})") from None


def sweep(cfg: RunConfig, param: str, values, out_dir, workers: int = 1) -> list[dict]:
    """One simulation per (algorithm, value) plus ``sweep_summary.csv``.

    Runs that blow up are recorded with a ``diverged`` flag instead of
    aborting the sweep, as are runs whose final SMRD exceeds the SMRD after
    the first slot. ``rho_above_bound`` marks step sizes beyond
    ``1 / (gamma * lambda_max(L))`` and ``clamped`` marks estimate clamping.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"param must be one of {', '.join(SWEEP_PARAMS)} (got {param!r})")
    values = list(values)
    if not values:
        raise ConfigError("values must list at least one value (got empty list)")
    net = build_network(cfg)
    lam_max = laplacian_max_eigenvalue(net)
    dataset = load_dataset(cfg) if cfg.source == "csv" else None
    summary = []
    with _Staging(out_dir) as tmp:
        for kind in cfg.algorithms:
            for value in values:
                sub = _sweep_config(cfg, kind, param, value)
                run_dir = tmp / f"{kind}_{param}={value}"
                flags = []
                bound = 1.0 / (sub.gamma_for(kind) * lam_max) if lam_max > 0 else math.inf
                if kind not in ("acrls", "diffusion_lms") and sub.rho > bound:
                    flags.append("rho_above_bound")
                start = time.perf_counter()
                try:
                    with np.errstate(over="ignore", invalid="ignore"):
                        agg = aggregate(kind, run_monte_carlo(sub, kind, net, workers, dataset))
                except NumericError as exc:
                    flags.append("diverged")
                    run_dir.mkdir(parents=True)
                    (run_dir / "config.cfg").write_text(sub.to_text(), encoding="utf-8")
                    (run_dir / "error.txt").write_text(f"{exc}\n", encoding="utf-8")
                    summary.append({"algorithm": kind, "value": value, "smrd_at_T": math.nan,
                                    "total_multiplications": math.nan, "total_comm_units": math.nan,
                                    "flags": ";".join(flags)})
                    continue
                if agg.clamp_events:
                    flags.append("clamped")
                if agg.smrd and not agg.smrd_at_T <= agg.smrd[0][1]:
                    flags.append("diverged")
                write_tables(agg, sub, run_dir, time.perf_counter() - start,
                             extra={"sweep_param": param, "sweep_value": value, "flags": flags})
                summary.append({"algorithm": kind, "value": value, "smrd_at_T": agg.smrd_at_T,
                                "total_multiplications": agg.total_multiplications,
                                "total_comm_units": agg.total_comm_units, "flags": ";".join(flags)})
        header = ["algorithm", "value", "smrd_at_T", "total_multiplications", "total_comm_units", "flags"]
        _write_csv(tmp / "sweep_summary.csv", header, [[row[k] for k in header] for row in summary])
    return summary


@dataclass
class Comparison:
    deviation: np.ndarray   # per-slot max |s_new_form - s_original|
    tolerance: float

    @property
    def max_deviation(self) -> float:
        return float(self.deviation.max()) if self.deviation.size else 0.0

    @property
    def first_failure(self) -> int | None:
        bad = np.flatnonzero(~(self.deviation <= self.tolerance))
        return int(bad[0]) + 1 if bad.size else None


def compare_forms(cfg: RunConfig, out_dir=None, *, tolerance: float = COMPARE_TOL,
                  v_scale: float = 1.0) -> Comparison:
    """Run both D-RLS formulations on the same stream (run 0) and compare estimates slot by slot.

    Raises :class:`DeviationError` naming the first slot whose deviation
    exceeds ``tolerance``; ``deviation.csv`` is written either way.
    """
    if "drls" not in cfg.algorithms:
        raise ConfigError(f"algorithm must include drls for compare-forms (got {','.join(cfg.algorithms)})")
    base = cfg.replace(algorithms=("drls",), pi_star=None, tau=None)
    net = build_network(base)
    dataset = load_dataset(base) if base.source == "csv" else None
    new = run("drls", base, net, make_source(base, 0, dataset), record_estimates=True)
    orig = run(AlgorithmKind.DRLS_ORIGINAL, base, net, make_source(base, 0, dataset),
               record_estimates=True, v_scale=v_scale)
    diff = np.abs(new.estimates - orig.estimates)
    dev = diff.reshape(len(diff), -1).max(axis=1) if diff.size else np.zeros(len(diff))
    result = Comparison(dev, tolerance)
    if out_dir is not None:
        with _Staging(out_dir) as tmp:
            _write_csv(tmp / "deviation.csv", ["slot", "max_deviation"],
                       [(t + 1, float(d)) for t, d in enumerate(dev)])
    slot = result.first_failure
    if slot is not None:
        raise DeviationError(
            f"forms disagree at slot {slot}: deviation {dev[slot - 1]!r} exceeds {tolerance!r}",
            slot=slot, deviation=float(dev[slot - 1]),
        )
    return result


@dataclass
class IngestReport:
    raw_records: int
    loaded: int
    retained: int
    per_node: int
    J: int
    max_abs_mean: float
    max_std_error: float
    ground_truth: np.ndarray

    @property
    def normalized_ok(self) -> bool:
        return self.max_abs_mean <= 1e-9 and self.max_std_error <= 1e-9

    def lines(self) -> list[str]:
        return [
            f"raw records: {self.raw_records}",
            f"loaded: {self.loaded}",
            f"retained: {self.retained} (J={self.J})",
            f"per node: {self.per_node}",
            f"max |mean| after normalization: {self.max_abs_mean:.3e}",
            f"max |std - 1| after normalization: {self.max_std_error:.3e}",
            f"normalization check: {'ok' if self.normalized_ok else 'FAILED'}",
            "batch least-squares fit: " + ", ".join(f"{v:.6g}" for v in self.ground_truth),
        ]


def ingest(path, x_col: int, feature_cols, max_records: int | None = None, J: int = 15) -> IngestReport:
    if J < 1:
        raise ValidationError(f"J must be >= 1 (got {J})")
    records = load_csv(path, x_col, feature_cols, max_records)
    data = normalize_and_partition(records, J)
    z = np.column_stack([data.x, data.H])
    return IngestReport(
        raw_records=records.total_rows,
        loaded=len(records),
        retained=len(data.x),
        per_node=data.per_node,
        J=J,
        max_abs_mean=float(np.abs(z.mean(axis=0)).max()),
        max_std_error=float(np.abs(z.std(axis=0) - 1.0).max()),
        ground_truth=data.truth(0),
    )
