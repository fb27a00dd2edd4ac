"""Turn a learned two-block affinity into a structure label: bipartite,
core-periphery, modular, or uniform."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bp import LearnedModel
from .generators import AffinityMatrix

__all__ = [
    "StructureLabel",
    "normalize_affinity",
    "classify_affinity",
    "core_fraction_filter",
]

DEFAULT_REL_TOL = 0.05


@dataclass(frozen=True)
class StructureLabel:
    """Label plus the witness triple (c11, c12, c22) after canonical
    relabeling (block with the larger within-affinity first), normalized so
    the full matrix sums to one."""

    tag: str
    witness: tuple[float, float, float]
    core_fraction: float | None = None

    def __str__(self):
        return self.tag


def normalize_affinity(affinity: AffinityMatrix) -> np.ndarray:
    """Entries divided by the total over the full m x m grid (both mirror
    off-diagonal entries counted); idempotent."""
    total = float(affinity.c.sum())
    if total <= 0:
        raise ValueError("cannot normalize an all-zero affinity matrix")
    return affinity.c / total


def classify_affinity(
    affinity: AffinityMatrix,
    block_fractions: np.ndarray | None = None,
    rel_tol: float = DEFAULT_REL_TOL,
) -> StructureLabel:
    """Two-block trichotomy by the ordering of the canonical entries.

    After relabeling so c11 >= c22: within-band spread below ``rel_tol``
    is Uniform; then c12 > c11 is Bipartite, c12 > c22 CorePeriphery
    (ties c11 == c12 fall here), and c12 <= c22 Modular.
    """
    if affinity.m != 2:
        raise ValueError("classification supports two blocks only")
    nf = affinity.block_fractions if block_fractions is None else np.asarray(block_fractions)
    c = affinity.c
    swap = c[1, 1] > c[0, 0]
    if swap:
        c = c[::-1, ::-1]
        nf = nf[::-1]
    c11, c12, c22 = float(c[0, 0]), float(c[0, 1]), float(c[1, 1])
    total = c11 + 2 * c12 + c22
    if total <= 0:
        raise ValueError("cannot classify an all-zero affinity matrix")
    witness = (c11 / total, c12 / total, c22 / total)
    core_frac = float(nf[0])

    vals = np.array([c11, c12, c22])
    if (vals.max() - vals.min()) <= rel_tol * vals.max():
        return StructureLabel("uniform", witness, core_frac)
    if c12 > c11:
        return StructureLabel("bipartite", witness, core_frac)
    if c12 > c22:
        return StructureLabel("coreperiphery", witness, core_frac)
    return StructureLabel("modular", witness, core_frac)


def core_fraction_filter(model: LearnedModel, lo: float = 0.4, hi: float = 0.6) -> bool:
    """True when the canonical first-block fraction lies in [lo, hi]."""
    label = classify_affinity(model.affinity)
    return lo <= label.core_fraction <= hi
