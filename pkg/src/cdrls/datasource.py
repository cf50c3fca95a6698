"""Per-slot observation streams: synthetic AR regressors and CSV regression data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import DataError, SourceExhausted, UsageError
from .rng_stats import PURPOSE_AR, PURPOSE_NOISE, PURPOSE_PARAMS, PURPOSE_TRUTH, RngStream

TRACKING_PERIOD = 500.0
TRACKING_FREEZE_SLOT = math.ceil(1000 / 3)
AR_BURN_IN = 50
_CHUNK = 4096


class GroundTruth:
    """The unknown parameter vector as a function of the slot.

    With ``magnitudes`` given, entry ``i`` follows ``magnitudes[i] * sin(3*pi*t/500)``
    up to slot ``ceil(1000/3)`` and stays at that value afterwards.
    """

    def __init__(self, p: int, value=None, magnitudes=None):
        self.p = p
        self.magnitudes = None if magnitudes is None else np.asarray(magnitudes, dtype=float)
        self.value = np.ones(p) if value is None else np.asarray(value, dtype=float)

    @property
    def tracking(self) -> bool:
        return self.magnitudes is not None

    def __call__(self, t: int) -> np.ndarray:
        if self.magnitudes is None:
            return self.value
        t_eff = min(t, TRACKING_FREEZE_SLOT)
        return self.magnitudes * np.sin(3.0 * np.pi * t_eff / TRACKING_PERIOD)


def ar_step(r, beta, q, omega):
    """One step of ``r(t) = (1-q)*beta*r(t-1) + sqrt(q)*omega(t)``."""
    return (1.0 - q) * beta * r + math.sqrt(q) * omega


class SyntheticSource:
    """Autoregressive regressors with a linear-Gaussian observation model.

    Each node runs its own AR chain. Regressor rows are windows of ``p``
    consecutive chain samples, newest first. By default the windows tile the chain
    (it advances ``p`` samples per slot); ``overlap=True`` slides them by one.
    Observations are ``x = h @ s0(t) + eps`` with ``eps ~ N(0, sigma_sq[j])``.

    ``beta``, ``sigma_omega_sq``, ``sigma_sq`` and ``r0`` may be overridden with
    per-node arrays; anything left as ``None`` is drawn from the node's parameter
    stream.
    """

    def __init__(
        self,
        J: int,
        seed: int,
        p: int = 4,
        q: float = 0.5,
        *,
        truth: GroundTruth | None = None,
        overlap: bool = False,
        beta=None,
        sigma_omega_sq=None,
        sigma_sq=None,
        r0=None,
        burn_in: int = AR_BURN_IN,
    ):
        self.J, self.p, self.q = J, p, q
        self.seed = seed
        self.overlap = overlap
        self.truth = truth if truth is not None else GroundTruth(p)

        params = [RngStream(seed, (PURPOSE_PARAMS, j)) for j in range(J)]
        draws = np.array([s.uniform(size=4) for s in params])  # beta, sigma_omega^2/2, alpha, r0
        self.beta = draws[:, 0] if beta is None else _per_node(beta, J)
        self.sigma_omega_sq = 2.0 * draws[:, 1] if sigma_omega_sq is None else _per_node(sigma_omega_sq, J)
        self.sigma_sq = 1e-3 * draws[:, 2] if sigma_sq is None else _per_node(sigma_sq, J)
        r_init = 2.0 * draws[:, 3] - 1.0 if r0 is None else _per_node(r0, J)

        self._ar_streams = [RngStream(seed, (PURPOSE_AR, j)) for j in range(J)]
        self._noise_streams = [RngStream(seed, (PURPOSE_NOISE, j)) for j in range(J)]
        self._coef = (1.0 - q) * self.beta
        self._last_r = r_init.copy()
        self._buf = np.empty((J, 0))
        self._pos = 0
        self._noise = np.empty((J, 0))
        self._noise_pos = 0
        self._extend_ar()
        self._pos = burn_in
        self._t = 0

    @property
    def noise_var(self) -> np.ndarray:
        return self.sigma_sq

    @property
    def horizon(self):
        return None

    def _extend_ar(self):
        fresh = np.empty((self.J, _CHUNK))
        bound = np.sqrt(3.0 * self.sigma_omega_sq)
        for j, stream in enumerate(self._ar_streams):
            omega = stream.uniform(-bound[j], bound[j], size=_CHUNK)
            fresh[j], _ = lfilter(
                [math.sqrt(self.q)], [1.0, -self._coef[j]], omega, zi=[self._coef[j] * self._last_r[j]]
            )
        self._last_r = fresh[:, -1].copy()
        self._buf = np.concatenate([self._buf[:, self._pos:], fresh], axis=1)
        self._pos = 0

    def _next_noise(self) -> np.ndarray:
        if self._noise_pos >= self._noise.shape[1]:
            self._noise = np.stack([s.generator.standard_normal(_CHUNK) for s in self._noise_streams])
            self._noise_pos = 0
        z = self._noise[:, self._noise_pos]
        self._noise_pos += 1
        return z

    def next_slot(self, t: int):
        """Observations of slot ``t`` for every node, as ``(x[J], H[J, p])``."""
        if t != self._t + 1:
            raise UsageError(f"slots must be requested in order: expected {self._t + 1}, got {t}")
        if self._pos + self.p > self._buf.shape[1]:
            self._extend_ar()
        window = self._buf[:, self._pos:self._pos + self.p]
        self._pos += 1 if self.overlap else self.p
        H = window[:, ::-1].copy()
        x = H @ self.truth(t) + np.sqrt(self.sigma_sq) * self._next_noise()
        self._t = t
        return x, H


def _per_node(values, J):
    arr = np.broadcast_to(np.asarray(values, dtype=float), (J,)).copy()
    return arr


def synthetic_default(J: int, seed: int, *, tracking: bool = False, p: int = 4, **overrides) -> SyntheticSource:
    """Synthetic AR setup: ``p=4``, ``q=0.5``, ``s0 = 1_p`` (or the tracking signal)."""
    truth = GroundTruth(p)
    if tracking:
        truth = GroundTruth(p, magnitudes=RngStream(seed, (PURPOSE_TRUTH,)).uniform(size=p))
    return SyntheticSource(J, seed, p=p, q=overrides.pop("q", 0.5), truth=truth, **overrides)


# -- CSV regression data ---------------------------------------------------


@dataclass
class CsvRecords:
    """Parsed regression rows; ``total_rows`` counts rows before truncation.

    ``columns`` holds the file column of the target followed by those of the
    features.
    """

    x: np.ndarray
    H: np.ndarray
    total_rows: int
    header: list[str] | None = None
    columns: tuple[int, ...] | None = None

    def __len__(self):
        return len(self.x)

    def __iter__(self):
        for xi, hi in zip(self.x, self.H):
            yield float(xi), hi

    def as_pairs(self):
        return [(float(xi), hi.tolist()) for xi, hi in zip(self.x, self.H)]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, x_column: int, feature_columns, max_records: int | None = None) -> CsvRecords:
    """Read comma-separated numeric rows; a non-numeric first row is taken as a header."""
    feature_columns = [int(c) for c in feature_columns]
    needed = max([x_column, *feature_columns]) + 1
    header = None
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not all(_is_number(cell) for cell in row):
                header = [cell.strip() for cell in row]
                continue
            if len(row) < needed:
                raise DataError(f"{path}:{lineno}: expected at least {needed} columns, found {len(row)}")
            if header is not None and len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, found {len(row)}")
            values = []
            for col in [x_column, *feature_columns]:
                try:
                    values.append(float(row[col]))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric value {row[col]!r} in column {col}"
                    ) from None
            rows.append(values)
    total = len(rows)
    if max_records is not None:
        rows = rows[:max_records]
    data = np.array(rows, dtype=float).reshape(len(rows), 1 + len(feature_columns))
    return CsvRecords(x=data[:, 0], H=data[:, 1:], total_rows=total, header=header,
                      columns=(x_column, *feature_columns))


@dataclass
class DatasetSource:
    """Normalized records split into equal contiguous shards, one per node.

    Node ``j`` replays shard ``j`` in order, one record per slot.
    """

    x: np.ndarray
    H: np.ndarray
    J: int
    mean: np.ndarray
    std: np.ndarray
    ground_truth: np.ndarray | None = None
    _t: int = field(default=0, repr=False)

    @property
    def p(self) -> int:
        return self.H.shape[1]

    @property
    def per_node(self) -> int:
        return len(self.x) // self.J

    @property
    def horizon(self) -> int:
        return self.per_node

    @property
    def noise_var(self):
        return None

    def shard(self, j: int) -> range:
        n = self.per_node
        return range(j * n, (j + 1) * n)

    def truth(self, t: int) -> np.ndarray:
        if self.ground_truth is None:
            self.ground_truth = batch_least_squares(self.x, self.H)
        return self.ground_truth

    def next_slot(self, t: int):
        if t != self._t + 1:
            raise UsageError(f"slots must be requested in order: expected {self._t + 1}, got {t}")
        if t > self.per_node:
            raise SourceExhausted(f"node shards hold {self.per_node} records; slot {t} requested")
        idx = np.arange(self.J) * self.per_node + (t - 1)
        self._t = t
        return self.x[idx].copy(), self.H[idx].copy()


def normalize_and_partition(records: CsvRecords, J: int) -> DatasetSource:
    """Z-score target and features over the first ``J * (N // J)`` records and shard them."""
    n_keep = J * (len(records) // J)
    if n_keep == 0:
        raise DataError(f"need at least J={J} records, got {len(records)}")
    data = np.column_stack([records.x[:n_keep], records.H[:n_keep]])
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    for col in np.flatnonzero(std == 0):
        label = "target" if col == 0 else f"feature {col - 1}"
        if records.columns is not None:
            src = records.columns[col]
            name = records.header[src] if records.header is not None else None
            label += f" (column {src}{', ' + repr(name) if name else ''})"
        raise DataError(f"zero-variance column: {label}")
    z = (data - mean) / std
    return DatasetSource(x=z[:, 0].copy(), H=z[:, 1:].copy(), J=J, mean=mean, std=std)


def batch_least_squares(x, H) -> np.ndarray:
    """Minimizer of ``sum (x_i - h_i @ s)^2`` via the normal equations."""
    x = np.asarray(x, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] < H.shape[1] or np.linalg.matrix_rank(H) < H.shape[1]:
        raise DataError("design matrix is rank-deficient")
    return np.linalg.solve(H.T @ H, H.T @ x)
