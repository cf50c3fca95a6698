"""Communication topologies: random geometric graphs and explicit edge lists."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

EXACT_EIG_MAX_NODES = 32


@dataclass(frozen=True)
class Network:
    """Undirected graph on nodes ``0..J-1``.

    ``adjacency`` is a symmetric boolean matrix with an empty diagonal; the
    neighbor lists and the Laplacian are derived from it once.
    """

    adjacency: np.ndarray
    positions: np.ndarray | None = None
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    laplacian: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ValidationError("adjacency must be a non-empty square matrix")
        if adj.diagonal().any():
            raise ValidationError("adjacency must have a zero diagonal")
        if not np.array_equal(adj, adj.T):
            raise ValidationError("adjacency must be symmetric")
        adj.setflags(write=False)
        lap = np.diag(adj.sum(axis=1)).astype(np.int64) - adj.astype(np.int64)
        lap.setflags(write=False)
        nbrs = tuple(tuple(int(k) for k in np.flatnonzero(row)) for row in adj)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "laplacian", lap)
        object.__setattr__(self, "neighbors", nbrs)
        if self.positions is not None:
            pos = np.array(self.positions, dtype=float)
            pos.setflags(write=False)
            object.__setattr__(self, "positions", pos)

    @property
    def J(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency))
        return [(int(a), int(b)) for a, b in zip(i, j)]


def geometric_from_positions(positions, comm_range: float) -> Network:
    pos = np.asarray(positions, dtype=float)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    adj = dist <= comm_range
    np.fill_diagonal(adj, False)
    return Network(adj, positions=pos)


def random_geometric(J: int, comm_range: float, seed) -> Network:
    """Place ``J`` nodes uniformly on the unit square; link pairs within ``comm_range``.

    The result may be disconnected.
    """
    if J < 1:
        raise ValidationError(f"J must be >= 1, got {J}")
    if not 0 < comm_range <= np.sqrt(2):
        raise ValidationError(f"range must lie in (0, sqrt(2)], got {comm_range}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return geometric_from_positions(rng.random((J, 2)), comm_range)


def connected_random_geometric(J: int, comm_range: float, seed: int, max_attempts: int = 10_000) -> tuple[Network, int]:
    """Resample geometric graphs until one is connected.

    Attempt ``a`` uses the seed sequence ``(seed, a)`` so the accepted graph is a
    pure function of ``seed``. Returns the network and the attempt index.
    """
    for attempt in range(max_attempts):
        net = random_geometric(J, comm_range, [seed, attempt])
        if is_connected(net):
            return net, attempt
    raise ValidationError(
        f"no connected geometric graph with J={J}, range={comm_range} in {max_attempts} attempts"
    )


def from_edges(J: int, edges) -> Network:
    if J < 1:
        raise ValidationError(f"J must be >= 1, got {J}")
    adj = np.zeros((J, J), dtype=bool)
    for pair in edges:
        i, j = (int(v) for v in pair)
        if i == j:
            raise ValidationError(f"self-loop not allowed: ({i}, {j})")
        if not (0 <= i < J and 0 <= j < J):
            raise ValidationError(f"edge ({i}, {j}) has an endpoint outside [0, {J})")
        adj[i, j] = adj[j, i] = True
    return Network(adj)


def load_edge_list(path) -> Network:
    """Read ``J`` on the first data line, then one ``i j`` pair per line.

    ``#`` starts a comment.
    """
    J = None
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if J is None:
                if len(parts) != 1:
                    raise ValueError
                J = int(parts[0])
                continue
            if len(parts) != 2:
                raise ValueError
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: cannot parse {raw!r}") from None
    if J is None:
        raise ValidationError(f"{path}: missing node count")
    return from_edges(J, edges)


def is_connected(net: Network) -> bool:
    seen = np.zeros(net.J, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in net.neighbors[node]:
            if not seen[nb]:
                seen[nb] = True
                queue.append(nb)
    return bool(seen.all())


def laplacian_max_eigenvalue(net: Network, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    lap = net.laplacian.astype(float)
    if net.J <= EXACT_EIG_MAX_NODES:
        return max(float(np.linalg.eigvalsh(lap)[-1]), 0.0)
    return _power_iteration(lap, tol, max_iter)


def _power_iteration(mat: np.ndarray, tol: float, max_iter: int) -> float:
    rng = np.random.default_rng(0)
    vec = rng.standard_normal(mat.shape[0])
    vec /= np.linalg.norm(vec)
    value = 0.0
    for _ in range(max_iter):
        w = mat @ vec
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        value = float(vec @ w)
        vec = w / norm
        if np.linalg.norm(mat @ vec - value * vec) <= tol * max(value, 1.0):
            break
    return value
