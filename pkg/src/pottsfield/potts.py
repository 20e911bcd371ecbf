"""The Potts Markov random field on a lattice.

Labels take values 1..k.  The sufficient statistic S(z) counts edges whose
endpoints share a label; the data-free conditional of one site is a softmax
of beta times its per-label neighbour counts.  The Swendsen-Wang cluster
move is provided for simulating from the field at fixed beta (it is the
calibration workhorse, not a posterior sampler).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .lattice import EdgeSet

__all__ = [
    "LabelField",
    "sufficient_statistic",
    "prior_conditional",
    "swendsen_wang_step",
]

# below this many sites a pure-python union-find beats building a sparse graph
_SMALL_LATTICE = 256


@dataclass(frozen=True)
class LabelField:
    """Per-site labels in 1..k on a flat lattice."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if labels.ndim != 1:
            raise DataError(f"labels must be a flat array, got shape {labels.shape}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if labels.size and (labels.min() < 1 or labels.max() > self.k):
            raise DataError(
                f"labels must lie in 1..{self.k}, found range "
                f"[{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "k", int(self.k))

    @property
    def n(self) -> int:
        return self.labels.size


def sufficient_statistic(z: LabelField, edges: EdgeSet) -> int:
    """Count of edges whose two endpoints carry the same label."""
    e = edges.edges
    if e.size and e.max() >= z.n:
        raise DataError(
            f"edge set addresses site {e.max()} but the label field has {z.n} sites"
        )
    if not e.size:
        return 0
    lab = z.labels
    return int(np.count_nonzero(lab[e[:, 0]] == lab[e[:, 1]]))


def _neighbour_labels(i: int, z: LabelField, edges: EdgeSet) -> np.ndarray:
    e = edges.edges
    nbr = np.concatenate([e[e[:, 0] == i, 1], e[e[:, 1] == i, 0]])
    return z.labels[nbr]


def prior_conditional(
    i: int, z: LabelField, beta: float, edges: EdgeSet
) -> np.ndarray:
    """Conditional label distribution of site ``i`` given its neighbours.

    Component j is proportional to exp(beta * #{neighbours labelled j});
    returned as a length-k simplex vector.
    """
    if not np.isfinite(beta):
        raise ConfigError(f"beta must be finite, got {beta}")
    if not 0 <= i < z.n:
        raise IndexError(f"site index {i} out of range for n={z.n}")
    nbr_labels = _neighbour_labels(i, z, edges)
    counts = np.bincount(nbr_labels, minlength=z.k + 1)[1:].astype(np.float64)
    w = beta * counts
    w -= w.max()
    p = np.exp(w)
    return p / p.sum()


def _components_unionfind(n: int, bonds: np.ndarray) -> np.ndarray:
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in bonds:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    roots = np.fromiter((find(a) for a in range(n)), dtype=np.int64, count=n)
    return roots


def connected_components(n: int, bonds: np.ndarray) -> tuple[int, np.ndarray]:
    """Connected components of the bond graph on ``n`` sites.

    Components are numbered 0..ncomp-1 in order of their smallest member
    site, so the labelling is independent of the traversal strategy.
    """
    if bonds.size == 0:
        return n, np.arange(n, dtype=np.int64)
    if n <= _SMALL_LATTICE:
        comp = _components_unionfind(n, bonds)
    else:
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components as _cc

        graph = coo_matrix(
            (np.ones(len(bonds), dtype=np.int8), (bonds[:, 0], bonds[:, 1])),
            shape=(n, n),
        )
        _, comp = _cc(graph, directed=False)
    # canonical numbering: components ordered by smallest contained site index
    _, first, canon = np.unique(comp, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return order.size, rank[canon]


def swendsen_wang_step(
    z: LabelField, beta: float, edges: EdgeSet, rng: np.random.Generator
) -> LabelField:
    """One Swendsen-Wang sweep.

    Bonds are drawn Bernoulli(1 - exp(-beta)) on like-labelled edges only;
    every connected component of the bond graph is reassigned a single
    label drawn uniformly from 1..k.
    """
    if beta < 0:
        raise ConfigError(f"beta must be non-negative, got {beta}")
    e = edges.edges
    lab = z.labels
    like = lab[e[:, 0]] == lab[e[:, 1]]
    p_bond = -np.expm1(-beta)  # 1 - exp(-beta)
    u = rng.random(int(like.sum()))
    bonds = e[like][u < p_bond]
    ncomp, comp = connected_components(z.n, bonds)
    new_labels = rng.integers(1, z.k + 1, size=ncomp, dtype=np.int32)
    return LabelField(new_labels[comp], z.k)
