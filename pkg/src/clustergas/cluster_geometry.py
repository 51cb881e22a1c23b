"""Particle configurations in a hard-wall box and their connectivity clusters.

Two particles belong to the same cluster when a chain of pair distances
<= R links them (ties count as connected; plain comparison, no epsilon).
The decomposition uses a sparse hash grid of cell size exactly R, scanning
the 3^d neighbouring cells, with union-find for the transitive closure.
There are no periodic images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .common import DomainError, ParameterError

__all__ = [
    "Configuration",
    "ClusterDecomposition",
    "ClusterStats",
    "decompose",
    "stats",
    "config_to_csv",
    "config_from_csv",
    "decomposition_to_csv",
]


@dataclass(frozen=True)
class Configuration:
    dim: int
    box_side: float
    positions: np.ndarray  # (N, dim), coordinates in [0, box_side]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.size == 0:
            pos = pos.reshape(0, self.dim)
        if pos.ndim == 1:
            pos = pos[:, None]
        object.__setattr__(self, "positions", pos)
        if self.dim not in (1, 2, 3):
            raise ParameterError("dim must be 1, 2 or 3")
        if self.box_side <= 0:
            raise ParameterError("box_side must be positive")
        if pos.shape[1] != self.dim:
            raise ParameterError("positions shape does not match dim")
        if pos.size and (pos.min() < 0.0 or pos.max() > self.box_side):
            raise ParameterError("coordinates must lie in [0, box_side]")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def volume(self) -> float:
        return self.box_side ** self.dim


@dataclass(frozen=True)
class ClusterDecomposition:
    connectivity_radius: float
    labels: np.ndarray  # per-particle cluster id, contiguous from 0
    sizes: tuple  # cluster cardinalities, one per cluster id

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    def partition(self) -> set:
        """The decomposition as a set of frozensets of particle indices."""
        groups = {}
        for i, lab in enumerate(self.labels):
            groups.setdefault(int(lab), []).append(i)
        return {frozenset(g) for g in groups.values()}


@dataclass(frozen=True)
class ClusterStats:
    counts: dict  # k -> N_k
    rho: dict  # k -> N_k / |box|
    q: dict  # k -> k rho_k / rho_ref
    rho_ref: float = field(default=0.0)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:  # path compression
            p[i], i = root, p[i]
        return root

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def _labels_from_uf(uf: _UnionFind, n: int) -> np.ndarray:
    roots = [uf.find(i) for i in range(n)]
    remap = {}
    labels = np.empty(n, dtype=np.int64)
    for i, r in enumerate(roots):
        labels[i] = remap.setdefault(r, len(remap))
    return labels


def decompose(config: Configuration, R: float) -> ClusterDecomposition:
    """Connected components of the geometric graph at radius R.

    The result does not depend on particle order: labels are renumbered by
    first appearance, sizes listed per label.
    """
    if R <= 0:
        raise ParameterError("connectivity radius R must be positive")
    pos = config.positions
    n = config.n
    if n == 0:
        return ClusterDecomposition(R, np.empty(0, dtype=np.int64), ())
    cells = np.floor(pos / R).astype(np.int64)
    grid: dict = {}
    for i, key in enumerate(map(tuple, cells)):
        grid.setdefault(key, []).append(i)
    offsets = list(product((-1, 0, 1), repeat=config.dim))
    uf = _UnionFind(n)
    r2 = R * R
    for key, members in grid.items():
        cand = []
        for off in offsets:
            nb = tuple(k + o for k, o in zip(key, off))
            if nb in grid:
                cand.extend(grid[nb])
        cand = np.asarray(cand, dtype=np.int64)
        cpos = pos[cand]
        for i in members:
            d2 = ((cpos - pos[i]) ** 2).sum(axis=1)
            for j in cand[d2 <= r2]:
                if j > i:
                    uf.union(i, int(j))
    labels = _labels_from_uf(uf, n)
    sizes = tuple(int(c) for c in np.bincount(labels))
    return ClusterDecomposition(R, labels, sizes)


def stats(decomp: ClusterDecomposition, volume: float, rho_ref: float) -> ClusterStats:
    """Counts N_k, densities rho_k = N_k/volume and fractions q_k = k rho_k / rho_ref."""
    if volume <= 0:
        raise ParameterError("volume must be positive")
    if rho_ref <= 0:
        raise ParameterError("rho_ref must be positive")
    counts: dict = {}
    for s in decomp.sizes:
        counts[s] = counts.get(s, 0) + 1
    counts = dict(sorted(counts.items()))
    rho = {k: nk / volume for k, nk in counts.items()}
    q = {k: k * rk / rho_ref for k, rk in rho.items()}
    return ClusterStats(counts=counts, rho=rho, q=q, rho_ref=rho_ref)


def config_to_csv(config: Configuration, path) -> None:
    header = ["id"] + ["x", "y", "z"][: config.dim]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(config.positions):
            fh.write(",".join([str(i)] + [format(v, ".17g") for v in row]) + "\n")


def config_from_csv(path, box_side: float) -> Configuration:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "id" or header[1:] != ["x", "y", "z"][: len(header) - 1]:
            raise DomainError(f"unrecognized configuration header: {header}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    dim = len(header) - 1
    pos = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), dim)
    return Configuration(dim=dim, box_side=box_side, positions=pos)


def decomposition_to_csv(decomp: ClusterDecomposition, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("id,cluster_id\n")
        for i, lab in enumerate(decomp.labels):
            fh.write(f"{i},{int(lab)}\n")
