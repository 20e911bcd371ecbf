"""Sequential Bayesian updating of the displacement hyperparameters.

After a chain has been fitted to one image, the per-site label allocation
frequencies weight the minimum distances to the reference objects; the
weighted count/mean/variance per label then merge with the running
Normal/Inverse-Gamma prior state by exact conjugate algebra, giving the
displacement hyperparameters to plug into the next image's field prior.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import ChainResult
from .errors import ConfigError, DataError
from .externalfield import DeltaHyper, distance_transform
from .io import load_json, save_json
from .lattice import LatticeSpec, site_coords
from .potts import LabelField

__all__ = [
    "LabelWeights",
    "DeltaSufficientStats",
    "DeltaPriorState",
    "posterior_weights",
    "posterior_weights_from_counts",
    "delta_sufficient_stats",
    "intra_object_mean_distance",
    "update_delta_hyperparams",
    "pool_sufficient_stats",
    "update_from_counts",
    "save_delta_prior",
    "load_delta_prior",
]


@dataclass(frozen=True)
class LabelWeights:
    """Per-site posterior label probabilities; rows sum to one."""

    w: np.ndarray  # (n, k)

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        if w.ndim != 2:
            raise DataError(f"weights must be (n, k), got shape {w.shape}")
        if np.any(w < 0):
            raise DataError("weights must be non-negative")
        if not np.allclose(w.sum(axis=1), 1.0, atol=1e-12):
            raise DataError("weight rows must sum to 1")
        object.__setattr__(self, "w", w)

    @property
    def k(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class DeltaSufficientStats:
    """Weighted count, mean, and variance of min-distances, per label (mm)."""

    nu_hat: np.ndarray
    m_hat: np.ndarray
    s2_hat: np.ndarray

    def __post_init__(self):
        for name in ("nu_hat", "m_hat", "s2_hat"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, arr)
        if np.any(self.nu_hat < 0) or np.any(self.s2_hat < 0):
            raise DataError("nu_hat and s2_hat must be non-negative")

    @property
    def empty(self) -> np.ndarray:
        return self.nu_hat == 0


@dataclass(frozen=True)
class DeltaPriorState:
    """Running Gaussian prior state for the displacement, per label."""

    n_prior: np.ndarray
    mu_prior: np.ndarray
    sigma2_prior: np.ndarray

    def __post_init__(self):
        for name in ("n_prior", "mu_prior", "sigma2_prior"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, arr)
        if np.any(self.n_prior <= 0):
            raise ConfigError("prior pseudo-counts must be > 0")
        if np.any(self.sigma2_prior <= 0):
            raise ConfigError("prior variances must be > 0")

    @property
    def k(self) -> int:
        return self.n_prior.size

    def as_hyper(self) -> DeltaHyper:
        """Plug-in displacement hyperparameters for refreshing the field prior."""
        return DeltaHyper(
            mu_delta=float(self.mu_prior[0]),
            sigma2_delta=float(self.sigma2_prior[0]),
            per_label={
                j + 1: (float(self.mu_prior[j]), float(self.sigma2_prior[j]))
                for j in range(self.k)
            },
        )


def posterior_weights_from_counts(counts: np.ndarray, retained: int) -> LabelWeights:
    if retained < 1:
        raise DataError("no retained iterations; cannot form posterior weights")
    counts = np.asarray(counts, dtype=np.float64)
    return LabelWeights(counts / float(retained))


def posterior_weights(result: ChainResult) -> LabelWeights:
    """Allocation frequency of each label at each site over retained sweeps."""
    return posterior_weights_from_counts(result.counts, result.retained)


def delta_sufficient_stats(
    w: LabelWeights, dists: np.ndarray
) -> DeltaSufficientStats:
    """Weighted count, mean, and variance of per-label minimum distances.

    ``dists`` holds one distance field per label, shape (k, n).  Labels with
    zero total weight come back flagged empty (zero count, zero moments).
    """
    dists = np.asarray(dists, dtype=np.float64)
    if dists.shape != (w.k, w.w.shape[0]):
        raise DataError(
            f"distance fields have shape {dists.shape}, expected {(w.k, w.w.shape[0])}"
        )
    nu = w.w.sum(axis=0)
    safe = np.where(nu > 0, nu, 1.0)
    m = (w.w * dists.T).sum(axis=0) / safe
    s2 = (w.w * (dists.T - m[None, :]) ** 2).sum(axis=0) / safe
    m = np.where(nu > 0, m, 0.0)
    s2 = np.where(nu > 0, s2, 0.0)
    return DeltaSufficientStats(nu, m, s2)


def intra_object_mean_distance(
    reference: LabelField, spec: LatticeSpec, j: int
) -> float:
    """Average pairwise distance (mm) between the reference sites of label j.

    Quadratic in the object size; meant for small objects.  Used as an
    additive correction for the underestimation bias of minimum distances.
    """
    members = np.flatnonzero(reference.labels == j)
    if members.size == 0:
        raise DataError(f"label {j} is empty in the reference")
    coords = site_coords(spec)[members].astype(np.float64) * np.asarray(
        spec.voxel_size
    )
    diff = coords[:, None, :] - coords[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2)).mean())


def update_delta_hyperparams(
    prior: DeltaPriorState, stats: DeltaSufficientStats
) -> DeltaPriorState:
    """Exact conjugate merge of the prior state with the weighted statistics."""
    if stats.nu_hat.size != prior.k:
        raise DataError(
            f"stats cover {stats.nu_hat.size} labels, prior covers {prior.k}"
        )
    nu_new = prior.n_prior + stats.nu_hat
    m_new = (prior.n_prior * prior.mu_prior + stats.nu_hat * stats.m_hat) / nu_new
    s2_new = (
        prior.n_prior * prior.sigma2_prior
        + stats.nu_hat * stats.s2_hat
        + (prior.n_prior * stats.nu_hat / nu_new) * (stats.m_hat - m_new) ** 2
    ) / nu_new
    return DeltaPriorState(nu_new, m_new, s2_new)


def pool_sufficient_stats(
    a: DeltaSufficientStats, b: DeltaSufficientStats
) -> DeltaSufficientStats:
    """Combine statistics from two batches into one, exactly."""
    nu = a.nu_hat + b.nu_hat
    safe = np.where(nu > 0, nu, 1.0)
    m = (a.nu_hat * a.m_hat + b.nu_hat * b.m_hat) / safe
    s2 = (
        a.nu_hat * (a.s2_hat + (a.m_hat - m) ** 2)
        + b.nu_hat * (b.s2_hat + (b.m_hat - m) ** 2)
    ) / safe
    m = np.where(nu > 0, m, 0.0)
    s2 = np.where(nu > 0, s2, 0.0)
    return DeltaSufficientStats(nu, m, s2)


def update_from_counts(
    counts: np.ndarray,
    retained: int,
    reference: LabelField,
    spec: LatticeSpec,
    prior: DeltaPriorState,
    bias_correction: bool = False,
) -> DeltaPriorState:
    """Full update pipeline from allocation counts to a new prior state.

    With ``bias_correction`` the intra-object mean distance of each
    reference object is added to its weighted mean distance before the
    conjugate merge, compensating the downward bias of minimum distances.
    """
    weights = posterior_weights_from_counts(counts, retained)
    if weights.k != prior.k:
        raise DataError(f"counts cover {weights.k} labels, prior covers {prior.k}")
    dists = np.stack(
        [distance_transform(reference, spec, j) for j in range(1, weights.k + 1)]
    )
    stats = delta_sufficient_stats(weights, dists)
    if bias_correction:
        corrections = np.array(
            [
                intra_object_mean_distance(reference, spec, j)
                for j in range(1, weights.k + 1)
            ]
        )
        stats = DeltaSufficientStats(
            stats.nu_hat,
            np.where(stats.empty, stats.m_hat, stats.m_hat + corrections),
            stats.s2_hat,
        )
    return update_delta_hyperparams(prior, stats)


# -- persistence -----------------------------------------------------------------


def save_delta_prior(path: str | Path, prior: DeltaPriorState) -> None:
    rows = [
        {
            "label": j + 1,
            "n": float(prior.n_prior[j]),
            "mu": float(prior.mu_prior[j]),
            "sigma2": float(prior.sigma2_prior[j]),
        }
        for j in range(prior.k)
    ]
    save_json(path, {"kind": "delta_prior", "labels": rows})


def load_delta_prior(path: str | Path) -> DeltaPriorState:
    doc = load_json(path)
    if not isinstance(doc, dict) or doc.get("kind") != "delta_prior":
        raise DataError(f"{path} does not hold a displacement prior state")
    rows = sorted(doc["labels"], key=lambda r: int(r["label"]))
    return DeltaPriorState(
        np.array([r["n"] for r in rows], dtype=np.float64),
        np.array([r["mu"] for r in rows], dtype=np.float64),
        np.array([r["sigma2"] for r in rows], dtype=np.float64),
    )
