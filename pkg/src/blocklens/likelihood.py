"""Exact Bernoulli log-likelihood of a graph under block-model parameters,
sparse-limit ensemble-average forms, and the analytic crossing point of the
block-structure and degree-based misspecified fits.

All logarithms are natural; values are in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .generators import AffinityMatrix, Bimodal, Constant, PowerLaw, ThetaDistribution
from .graphs import Graph

__all__ = [
    "Assignment",
    "LoglikReport",
    "AsymptoticLoglik",
    "exact_loglik",
    "ensemble_mean_loglik",
    "asymptotic_L_real",
    "asymptotic_L_bs",
    "asymptotic_L_db",
    "crossing_delta",
]


@dataclass(frozen=True)
class Assignment:
    """Per-node block labels in 0..m-1."""

    labels: np.ndarray
    m: int

    def __post_init__(self):
        g = np.asarray(self.labels, dtype=np.int64)
        if len(g) and (g.min() < 0 or g.max() >= self.m):
            raise ValueError("labels must lie in [0, m)")
        object.__setattr__(self, "labels", g)
        self.labels.setflags(write=False)

    @property
    def block_fractions(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.m) / max(len(self.labels), 1)


@dataclass(frozen=True)
class LoglikReport:
    value: float
    edge_term: float
    nonedge_term: float
    n: int
    diagnostics: tuple[str, ...] = ()

    @property
    def per_node(self) -> float:
        return self.value / self.n


def _pair_probs(affinity, thetas, labels, n):
    t = np.ones(n) if thetas is None else np.asarray(thetas, dtype=float)
    g = np.asarray(labels, dtype=np.int64)
    return t, g, affinity.c / n


def exact_loglik(
    g: Graph,
    affinity: AffinityMatrix,
    thetas: np.ndarray | None,
    assign: Assignment,
) -> LoglikReport:
    """Total log-likelihood sum over unordered pairs of
    a_ij log q_ij + (1 - a_ij) log(1 - q_ij) with q_ij = theta_i theta_j
    p_{g_i g_j}.

    The non-edge part is aggregated over (block, theta-value) classes, so
    graphs with few distinct theta values cost O(E + K^2) rather than O(n^2).
    A pair probability above 1 is a domain error; a pair whose probability
    contradicts the observation yields -inf with a diagnostic.
    """
    n = g.n
    t, lab, p = _pair_probs(affinity, thetas, assign.labels, n)
    if len(lab) != n:
        raise ValueError("assignment length must equal node count")

    # distinct (block, theta) classes
    keys = np.stack([lab.astype(float), t], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    counts = np.bincount(inv)
    cls_g = uniq[:, 0].astype(np.int64)
    cls_t = uniq[:, 1]
    q_cls = np.outer(cls_t, cls_t) * p[np.ix_(cls_g, cls_g)]

    # unordered pair counts between classes (diagonal: within-class pairs)
    npairs = np.outer(counts, counts).astype(float)
    np.fill_diagonal(npairs, counts * (counts - 1))
    npairs /= 2.0

    bad = (q_cls > 1.0) & (npairs > 0)
    if bad.any():
        a, b = np.argwhere(bad)[0]
        i = int(np.where(inv == a)[0][0])
        cand = np.where(inv == b)[0]
        j = int(cand[0] if cand[0] != i else cand[1])
        raise ValueError(
            f"pair probability {q_cls[a, b]:.6g} > 1 for pair ({i}, {j}); "
            "model undefined at these parameters"
        )

    diagnostics: list[str] = []
    sat = (q_cls >= 1.0) & (npairs > 0)
    safe = (q_cls < 1.0) & (npairs > 0)
    with np.errstate(divide="ignore"):
        log1mq = np.where(safe, np.log1p(-np.where(safe, q_cls, 0.0)), 0.0)
    # q == 1 classes contribute nothing here; they are fine only when every
    # such pair is an observed edge, which the saturation count checks below
    total_non = float((npairs * log1mq).sum())
    n_sat_pairs = float(npairs[sat].sum()) if sat.any() else 0.0

    edges = g.edges
    if len(edges):
        qe = t[edges[:, 0]] * t[edges[:, 1]] * p[lab[edges[:, 0]], lab[edges[:, 1]]]
        zero_edge = qe <= 0.0
        if zero_edge.any():
            i, j = edges[np.argmax(zero_edge)]
            diagnostics.append(
                f"edge ({i}, {j}) observed but its model probability is 0"
            )
        with np.errstate(divide="ignore"):
            edge_term = float(np.log(qe[~zero_edge]).sum())
            corr = np.log1p(-np.minimum(qe, 1.0 - 1e-300))
        sat_e = qe >= 1.0
        n_sat_pairs -= float(sat_e.sum())
        corr = np.where(sat_e, 0.0, corr)
        nonedge_term = total_non - float(corr.sum())
        if zero_edge.any():
            edge_term = -math.inf
    else:
        edge_term, nonedge_term = 0.0, total_non

    if n_sat_pairs > 0.5:
        diagnostics.append(
            "a pair with probability 1 is not an edge; likelihood is -inf"
        )
        nonedge_term = -math.inf

    value = edge_term + nonedge_term
    return LoglikReport(value, edge_term, nonedge_term, n, tuple(diagnostics))


def ensemble_mean_loglik(
    affinity: AffinityMatrix,
    thetas: np.ndarray | None,
    assign: Assignment,
    n: int,
) -> float:
    """Exact ensemble mean of the total log-likelihood under its own
    parameters: sum over pairs of q log q + (1-q) log(1-q). Finite-size
    oracle for Monte-Carlo averages of ``exact_loglik``."""
    t, lab, p = _pair_probs(affinity, thetas, assign.labels, n)
    q = np.outer(t, t) * p[np.ix_(lab, lab)]
    iu = np.triu_indices(n, k=1)
    qv = q[iu]
    if (qv > 1.0).any():
        raise ValueError("pair probability above 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(qv > 0, qv * np.log(qv), 0.0)
        term = term + np.where(qv < 1, (1 - qv) * np.log1p(-qv), 0.0)
    return float(term.sum())


@dataclass(frozen=True)
class AsymptoticLoglik:
    """Per-node sparse-limit average log-likelihood split as
    value(N) = n_free + log_n_coeff * log N, so that size-independent
    comparisons can use ``n_free`` alone (the log N parts cancel whenever
    the compared models share the same mean affinity)."""

    n_free: float
    log_n_coeff: float

    def per_node(self, n: int) -> float:
        return self.n_free + self.log_n_coeff * math.log(n)


def _block_term(affinity: AffinityMatrix) -> float:
    c = affinity.c
    nf = affinity.block_fractions
    with np.errstate(divide="ignore", invalid="ignore"):
        lc = np.where(c > 0, np.log(np.where(c > 0, c, 1.0)), 0.0)
    return float((c * np.outer(nf, nf) * lc).sum())


def asymptotic_L_real(affinity: AffinityMatrix, theta_dist: ThetaDistribution) -> AsymptoticLoglik:
    """Ensemble average per node of the correctly specified model: separates
    a block-structure term and a degree-correction term."""
    ct = affinity.c_tilde
    nf = 0.5 * (_block_term(affinity) + 2 * ct * theta_dist.e_theta_log_theta() - ct)
    return AsymptoticLoglik(nf, -ct / 2)


def asymptotic_L_bs(affinity: AffinityMatrix) -> AsymptoticLoglik:
    """True blocks and affinities, degree corrections ignored."""
    ct = affinity.c_tilde
    return AsymptoticLoglik(0.5 * (_block_term(affinity) - ct), -ct / 2)


def asymptotic_L_db(affinity: AffinityMatrix, theta_dist: ThetaDistribution) -> AsymptoticLoglik:
    """Degree-based fit: groups defined by the two correction levels, with
    affinity c_tilde theta_a theta_b. Defined for the two-level (bimodal or
    constant) corrections only."""
    ct = affinity.c_tilde
    if isinstance(theta_dist, Constant):
        theta_term = 0.0
    elif isinstance(theta_dist, Bimodal):
        theta_term = theta_dist.e_theta_log_theta()
    else:
        raise TypeError("degree-based fit is defined for two-level corrections")
    nf = 0.5 * (ct * math.log(ct) + 2 * ct * theta_term - ct)
    return AsymptoticLoglik(nf, -ct / 2)


def crossing_delta(c: float, r: float, tol: float = 1e-12) -> float | None:
    """Heterogeneity level where the block-structure and degree-based fits
    exchange rank, for the two-block affinity (c, c*r). Bisection on (0, 1)
    to |f| < tol; None when no crossing exists (e.g. r = 1)."""
    from .generators import bipartite_affinity

    aff = bipartite_affinity(c, r)

    def f(delta: float) -> float:
        return asymptotic_L_bs(aff).n_free - asymptotic_L_db(aff, Bimodal(delta)).n_free

    lo, hi = 0.0, 1.0 - 1e-12
    flo, fhi = f(1e-15), f(hi)
    if not (flo > 0 > fhi):
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol:
            return mid
        if fm > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
