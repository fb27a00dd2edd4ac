"""Planted two-block ensembles: block affinities, degree corrections, and
Bernoulli samplers for the plain and degree-corrected block models."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .graphs import Graph

__all__ = [
    "AffinityMatrix",
    "Bimodal",
    "PowerLaw",
    "Constant",
    "ThetaDistribution",
    "DegreeCorrections",
    "PlantedSample",
    "bipartite_affinity",
    "sample_thetas",
    "sample_dcsbm",
    "sample_sbm",
]


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric m x m block affinities in scaled form c_ab = N * p_ab,
    together with block fractions summing to one."""

    c: np.ndarray
    block_fractions: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        n = np.asarray(self.block_fractions, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("affinity matrix must be square")
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("affinity matrix must be symmetric")
        if (c < 0).any():
            raise ValueError("affinities must be nonnegative")
        if len(n) != c.shape[0] or (n < 0).any() or abs(n.sum() - 1.0) > 1e-9:
            raise ValueError("block fractions must be nonnegative and sum to 1")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "block_fractions", n)
        self.c.setflags(write=False)
        self.block_fractions.setflags(write=False)

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def c_tilde(self) -> float:
        """Grand mean of the scaled affinities, sum c_ab / m^2."""
        return float(self.c.sum()) / self.m**2

    @property
    def mean_degree(self) -> float:
        n = self.block_fractions
        return float(n @ self.c @ n)

    def p(self, n_nodes: int) -> np.ndarray:
        return self.c / n_nodes


def bipartite_affinity(c: float, r: float) -> AffinityMatrix:
    """Two-block affinity with within-block c and cross-block c*r at equal
    block fractions; bipartite for r > 1, modular for r < 1."""
    if c <= 0 or r <= 0:
        raise ValueError("c and r must be positive")
    mat = np.array([[c, c * r], [c * r, c]], dtype=float)
    return AffinityMatrix(mat, np.array([0.5, 0.5]))


@dataclass(frozen=True)
class Bimodal:
    """Two-level degree corrections 1 +- delta on equal halves (mean 1)."""

    delta: float

    def __post_init__(self):
        if not 0 <= self.delta < 1:
            raise ValueError("delta must be in [0, 1)")

    def levels(self) -> tuple[float, float]:
        return 1.0 + self.delta, 1.0 - self.delta

    def e_theta_log_theta(self) -> float:
        hi, lo = self.levels()
        lo_term = lo * np.log(lo) if lo > 0 else 0.0
        return 0.5 * (hi * np.log(hi) + lo_term)


@dataclass(frozen=True)
class PowerLaw:
    """Pareto degree corrections with tail exponent alpha; the lower cutoff
    (alpha-2)/(alpha-1) pins the mean at 1. Requires alpha > 3 so that the
    sparse-limit analysis applies."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 3:
            raise ValueError("power-law exponent must exceed 3")

    @property
    def theta_min(self) -> float:
        return (self.alpha - 2) / (self.alpha - 1)

    def e_theta_log_theta(self) -> float:
        return float(np.log(self.theta_min) + 1.0 / (self.alpha - 2))


@dataclass(frozen=True)
class Constant:
    """All corrections equal to one (plain block model)."""

    def e_theta_log_theta(self) -> float:
        return 0.0


ThetaDistribution = Union[Bimodal, PowerLaw, Constant]


@dataclass(frozen=True)
class DegreeCorrections:
    thetas: np.ndarray
    source: ThetaDistribution
    seed: int | None = None

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=float)
        if (t <= 0).any():
            raise ValueError("degree corrections must be positive")
        object.__setattr__(self, "thetas", t)
        self.thetas.setflags(write=False)


def sample_thetas(dist: ThetaDistribution, n: int, seed) -> DegreeCorrections:
    """Draw per-node corrections.

    Bimodal assigns exactly ceil(n/2) nodes the high level and the rest the
    low level, with the node order shuffled by the seed; PowerLaw draws
    i.i.d. Pareto values.
    """
    rng = np.random.default_rng(seed)
    if isinstance(dist, Constant):
        t = np.ones(n)
    elif isinstance(dist, Bimodal):
        hi, lo = dist.levels()
        if dist.delta == 0:
            t = np.ones(n)
        else:
            t = np.array([hi] * ((n + 1) // 2) + [lo] * (n // 2))
            rng.shuffle(t)
    elif isinstance(dist, PowerLaw):
        t = dist.theta_min * (1.0 + rng.pareto(dist.alpha - 1, size=n))
    else:
        raise TypeError(f"unknown distribution {dist!r}")
    return DegreeCorrections(t, dist, seed if isinstance(seed, int) else None)


@dataclass(frozen=True)
class PlantedSample:
    graph: Graph
    labels: np.ndarray
    thetas: DegreeCorrections
    affinity: AffinityMatrix
    seed: object
    clip_events: int = 0

    def __post_init__(self):
        g = np.asarray(self.labels, dtype=np.int64)
        if len(g) != self.graph.n:
            raise ValueError("labels must cover all nodes")
        object.__setattr__(self, "labels", g)
        self.labels.setflags(write=False)


def planted_labels(affinity: AffinityMatrix, n: int) -> np.ndarray:
    """Contiguous block fill to sizes floor(n_a * n); remainder nodes go to
    block 0 for reproducibility."""
    sizes = np.floor(affinity.block_fractions * n).astype(int)
    sizes[0] += n - sizes.sum()
    return np.repeat(np.arange(affinity.m), sizes)


def sample_dcsbm(
    affinity: AffinityMatrix,
    thetas: DegreeCorrections,
    n: int,
    seed,
) -> PlantedSample:
    """Bernoulli sample: pair {i,j} linked with min(1, theta_i theta_j
    c_{g_i g_j} / n). Clipped pairs are counted, not resampled."""
    if len(thetas.thetas) != n:
        raise ValueError("thetas length must equal n")
    rng = np.random.default_rng(seed)
    g = planted_labels(affinity, n)
    t = thetas.thetas
    prob = np.outer(t, t) * affinity.c[np.ix_(g, g)] / n
    clip = int((np.triu(prob, 1) > 1.0).sum())
    prob = np.minimum(prob, 1.0)
    u = rng.random((n, n))
    adj = np.triu(u, 1) < np.triu(prob, 1)
    edges = np.argwhere(adj)
    return PlantedSample(Graph(n, edges), g, thetas, affinity, seed, clip)


def sample_sbm(affinity: AffinityMatrix, n: int, seed) -> PlantedSample:
    """Plain block model: all degree corrections equal to one."""
    unit = DegreeCorrections(np.ones(n), Constant())
    return sample_dcsbm(affinity, unit, n, seed)


def _dist_meta(dist: ThetaDistribution) -> dict:
    if isinstance(dist, Bimodal):
        return {"kind": "bimodal", "delta": dist.delta}
    if isinstance(dist, PowerLaw):
        return {"kind": "powerlaw", "alpha": dist.alpha, "theta_min": dist.theta_min}
    return {"kind": "constant"}


def sample_metadata(sample: PlantedSample) -> str:
    """JSON sidecar with assignment, corrections, affinity, and seed."""
    meta = {
        "n": sample.graph.n,
        "labels": sample.labels.tolist(),
        "thetas": sample.thetas.thetas.tolist(),
        "theta_source": _dist_meta(sample.thetas.source),
        "affinity_c": sample.affinity.c.tolist(),
        "block_fractions": sample.affinity.block_fractions.tolist(),
        "seed": sample.seed if isinstance(sample.seed, (int, str)) else repr(sample.seed),
        "clip_events": sample.clip_events,
    }
    return json.dumps(meta, indent=2, sort_keys=True)
