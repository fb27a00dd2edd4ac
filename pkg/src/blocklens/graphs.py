"""Sparse undirected graphs, symmetrization of directed records, and
temporal aggregation of daily snapshot series.

Graphs are simple (no self-loops, no multi-edges) and immutable after
construction; node identity is a dense index 0..n-1 with an optional
registry of external labels.
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Graph",
    "SnapshotSeries",
    "symmetrize",
    "aggregate_cumulative",
    "aggregate_window",
    "density",
    "degree_dispersion",
    "write_edgelist",
    "read_edgelist",
]


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes 0..n-1.

    ``edges`` is an (E, 2) int array with each row (i, j), i < j, rows
    sorted lexicographically; this canonical form makes serialization
    byte-stable.
    """

    n: int
    edges: np.ndarray
    node_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 0:
            raise ValueError("node count must be nonnegative")
        if len(e):
            if e.min() < 0 or e.max() >= self.n:
                raise ValueError(f"edge endpoint out of range [0, {self.n})")
            if (e[:, 0] == e[:, 1]).any():
                bad = e[e[:, 0] == e[:, 1]][0]
                raise ValueError(f"self-loop not allowed: {tuple(bad)}")
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
        if self.node_ids is not None and len(self.node_ids) != self.n:
            raise ValueError("node_ids length must equal n")
        object.__setattr__(self, "edges", e)
        self.edges.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def nonisolated(self) -> np.ndarray:
        """Boolean mask of nodes with degree >= 1."""
        return self.degrees() > 0

    def subgraph(self, mask: np.ndarray) -> tuple["Graph", np.ndarray]:
        """Induced subgraph on ``mask`` nodes; returns it with the array of
        original indices kept (position = new index)."""
        keep = np.where(np.asarray(mask, dtype=bool))[0]
        remap = -np.ones(self.n, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        if len(self.edges):
            sel = mask[self.edges[:, 0]] & mask[self.edges[:, 1]]
            sub = remap[self.edges[sel]]
        else:
            sub = np.empty((0, 2), dtype=np.int64)
        ids = tuple(self.node_ids[i] for i in keep) if self.node_ids else None
        return Graph(len(keep), sub, ids), keep


def symmetrize(
    directed_edges: Iterable[tuple[int, int]],
    node_count: int,
    node_ids: Sequence[str] | None = None,
) -> Graph:
    """Undirected graph with {i, j} present iff (i, j) or (j, i) occurs.

    Self-loops in the input are dropped silently; an endpoint outside
    [0, node_count) raises with the offending record.
    """
    pairs = set()
    for rec in directed_edges:
        i, j = int(rec[0]), int(rec[1])
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise ValueError(f"invalid node index in record {rec!r}")
        if i == j:
            continue
        pairs.add((i, j) if i < j else (j, i))
    e = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return Graph(node_count, e, tuple(node_ids) if node_ids else None)


@dataclass(frozen=True)
class SnapshotSeries:
    """One directed edge list per calendar day over a shared node registry."""

    dates: tuple[_dt.date, ...]
    snapshots: tuple[tuple[tuple[int, int], ...], ...]
    node_ids: tuple[str, ...]
    flagged_self_loops: int = 0

    def __post_init__(self):
        if len(self.dates) != len(self.snapshots):
            raise ValueError("dates and snapshots must have equal length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        n = len(self.node_ids)
        for day, snap in zip(self.dates, self.snapshots):
            for i, j in snap:
                if not (0 <= i < n and 0 <= j < n):
                    raise ValueError(f"unregistered node in snapshot {day}: ({i}, {j})")

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def day_index(self, day: _dt.date) -> int:
        if not self.dates or not (self.dates[0] <= day <= self.dates[-1]):
            raise ValueError(f"day {day} outside series range")
        idx = 0
        for k, d in enumerate(self.dates):
            if d <= day:
                idx = k
        return idx


def aggregate_cumulative(series: SnapshotSeries, upto_day: _dt.date) -> Graph:
    """Union of all directed transactions on days <= upto_day, symmetrized."""
    k = series.day_index(upto_day)
    pairs: list[tuple[int, int]] = []
    for snap in series.snapshots[: k + 1]:
        pairs.extend(snap)
    return symmetrize(pairs, series.n, series.node_ids)


def aggregate_window(series: SnapshotSeries, start_day: _dt.date, end_day: _dt.date) -> Graph:
    """As cumulative but restricted to [start_day, end_day]; an empty window
    yields an empty graph."""
    pairs: list[tuple[int, int]] = []
    for day, snap in zip(series.dates, series.snapshots):
        if start_day <= day <= end_day:
            pairs.extend(snap)
    return symmetrize(pairs, series.n, series.node_ids)


def density(g: Graph, restrict_nonisolated: bool = False) -> float:
    """Link density 2|E| / n_eff^2, the full adjacency sum over n^2.

    With ``restrict_nonisolated`` the denominator counts only nodes of
    degree >= 1 (the convention used for the aggregation pipeline).
    """
    n_eff = int(g.nonisolated().sum()) if restrict_nonisolated else g.n
    if n_eff == 0:
        raise ValueError("no nodes left after restriction")
    return 2.0 * g.num_edges / float(n_eff) ** 2


def degree_dispersion(g: Graph, restrict_nonisolated: bool = True) -> float:
    """Dispersion ratio Var[k]/E[k] of the degree sequence (population
    variance); 1 for a Poisson degree distribution."""
    k = g.degrees().astype(float)
    if restrict_nonisolated:
        k = k[k > 0]
    if len(k) == 0 or k.mean() == 0:
        raise ValueError("zero mean degree")
    return float(k.var() / k.mean())


def write_edgelist(g: Graph, path) -> None:
    """Text format: header ``N=<n>``, then one ``i j`` line per edge in
    canonical order. Deterministic for equal graphs."""
    with open(path, "w") as fh:
        fh.write(f"N={g.n}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def read_edgelist(path) -> Graph:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("N="):
            raise ValueError(f"bad edge-list header: {header!r}")
        n = int(header[2:])
        pairs = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i, j = line.split()
            pairs.append((int(i), int(j)))
    return Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))
