"""Spatial external-field prior built from a reference labelling.

Each site/label pair gets a log-density describing how plausible that label
is at that location, derived from the Euclidean distances (in millimetres)
to the reference object's sites under a Gaussian displacement model.  The
exact mode averages the Gaussian density over every reference site of the
label (a mixture with one component per site); the approx mode keeps only
the nearest component, which a precomputed distance transform makes linear
in the lattice size.  Values are floored so downstream softmaxes never see
-inf.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.special import logsumexp

from . import io
from .errors import ConfigError, DataError
from .lattice import LatticeSpec, site_coords
from .potts import LabelField

__all__ = [
    "LOG_FLOOR",
    "DeltaHyper",
    "FieldPrior",
    "distance_transform",
    "build_field_prior",
    "refresh_field_prior",
    "reference_checksum",
    "save_field_prior",
    "load_field_prior",
]

# well below any double-precision log-likelihood contribution; keeps the
# per-site softmax finite where the Gaussian tail underflows
LOG_FLOOR = -7.0e2

_CHUNK = 512  # sites per exact-mode distance block


@dataclass(frozen=True)
class DeltaHyper:
    """Displacement mean / variance (mm, mm^2), with optional per-label values."""

    mu_delta: float = 0.0
    sigma2_delta: float = 1.0
    per_label: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        pairs = [(self.mu_delta, self.sigma2_delta)] + list(self.per_label.values())
        for mu, sigma2 in pairs:
            if sigma2 <= 0:
                raise ConfigError(f"sigma2_delta must be > 0, got {sigma2}")
            if mu < 0:
                raise ConfigError(f"mu_delta must be >= 0, got {mu}")
        object.__setattr__(
            self,
            "per_label",
            {int(j): (float(m), float(s)) for j, (m, s) in self.per_label.items()},
        )

    def for_label(self, j: int) -> tuple[float, float]:
        return self.per_label.get(j, (self.mu_delta, self.sigma2_delta))

    def to_dict(self) -> dict:
        return {
            "mu_delta": self.mu_delta,
            "sigma2_delta": self.sigma2_delta,
            "per_label": {str(j): list(v) for j, v in self.per_label.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DeltaHyper":
        return cls(
            mu_delta=float(doc["mu_delta"]),
            sigma2_delta=float(doc["sigma2_delta"]),
            per_label={
                int(j): (float(v[0]), float(v[1]))
                for j, v in doc.get("per_label", {}).items()
            },
        )


@dataclass(frozen=True)
class FieldPrior:
    """Per-site, per-label log-densities plus provenance."""

    log_density: np.ndarray  # (n, k)
    source: str  # checksum of the reference labelling
    hyper: DeltaHyper
    mode: str
    spec: LatticeSpec

    def __post_init__(self):
        arr = np.ascontiguousarray(self.log_density, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"log_density must be (n, k), got shape {arr.shape}")
        if arr.shape[0] != self.spec.n:
            raise DataError(
                f"log_density has {arr.shape[0]} sites, lattice has {self.spec.n}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError("field prior contains non-finite values")
        object.__setattr__(self, "log_density", arr)

    @property
    def k(self) -> int:
        return self.log_density.shape[1]


def reference_checksum(reference: LabelField) -> str:
    digest = hashlib.sha256(reference.labels.astype(np.uint8).tobytes())
    return digest.hexdigest()


def _gaussian_logpdf(d: np.ndarray, mu: float, sigma2: float) -> np.ndarray:
    return -0.5 * np.log(2.0 * np.pi * sigma2) - (d - mu) ** 2 / (2.0 * sigma2)


def distance_transform(
    reference: LabelField, spec: LatticeSpec, j: int
) -> np.ndarray:
    """Exact Euclidean distance (mm) from every site to the nearest site with
    reference label ``j``; anisotropic voxel sizes are respected."""
    if reference.n != spec.n:
        raise DataError(
            f"reference has {reference.n} sites, lattice has {spec.n}"
        )
    mask = reference.labels != j
    if not mask.any():
        return np.zeros(spec.n)
    if mask.all():
        raise DataError(f"label {j} is empty in the reference")
    grid = mask.reshape(spec.grid_shape)
    sampling = tuple(reversed(spec.voxel_size))  # grid axes run z, y, x
    return distance_transform_edt(grid, sampling=sampling).ravel()


def _exact_plane(
    coords_mm: np.ndarray, member_coords: np.ndarray, mu: float, sigma2: float
) -> np.ndarray:
    from scipy.spatial.distance import cdist

    n = coords_mm.shape[0]
    log_nj = np.log(member_coords.shape[0])
    out = np.empty(n)
    for start in range(0, n, _CHUNK):
        block = coords_mm[start : start + _CHUNK]
        dist = cdist(block, member_coords)
        out[start : start + _CHUNK] = (
            logsumexp(_gaussian_logpdf(dist, mu, sigma2), axis=1) - log_nj
        )
    return out


def build_field_prior(
    reference: LabelField,
    spec: LatticeSpec,
    hyper: DeltaHyper,
    mode: str = "exact",
    allow_empty: bool = False,
    workers: int = 1,
) -> FieldPrior:
    """Evaluate the field prior for every site and label.

    mode "exact": log of the mean Gaussian density over all reference sites
    of the label.  mode "approx": log Gaussian density of the minimum
    distance only.  Labels empty in the reference raise unless
    ``allow_empty`` is set, in which case their plane is filled with the
    floor value.
    """
    if mode not in ("exact", "approx"):
        raise ConfigError(f"mode must be 'exact' or 'approx', got {mode!r}")
    if reference.n != spec.n:
        raise DataError(
            f"reference has {reference.n} sites, lattice has {spec.n}"
        )
    k = reference.k
    counts = np.bincount(reference.labels, minlength=k + 1)[1:]
    empty = np.flatnonzero(counts == 0) + 1
    if empty.size and not allow_empty:
        raise DataError(
            f"labels {empty.tolist()} are empty in the reference; "
            "pass allow_empty=True to fill them with the floor value"
        )
    coords_mm = site_coords(spec).astype(np.float64) * np.asarray(spec.voxel_size)

    def plane(j: int) -> np.ndarray:
        if counts[j - 1] == 0:
            return np.full(spec.n, LOG_FLOOR)
        mu, sigma2 = hyper.for_label(j)
        if mode == "approx":
            d = distance_transform(reference, spec, j)
            vals = _gaussian_logpdf(d, mu, sigma2)
        else:
            members = coords_mm[reference.labels == j]
            vals = _exact_plane(coords_mm, members, mu, sigma2)
        return np.maximum(vals, LOG_FLOOR)

    labels = range(1, k + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            planes = list(pool.map(plane, labels))
    else:
        planes = [plane(j) for j in labels]
    log_density = np.stack(planes, axis=1)
    return FieldPrior(
        log_density=log_density,
        source=reference_checksum(reference),
        hyper=hyper,
        mode=mode,
        spec=spec,
    )


def refresh_field_prior(
    reference: LabelField,
    spec: LatticeSpec,
    updated_hyper: DeltaHyper,
    mode: str = "exact",
    allow_empty: bool = False,
    workers: int = 1,
) -> FieldPrior:
    """Rebuild the prior after the displacement hyperparameters change.

    ``updated_hyper`` normally carries per-label values produced by the
    sequential update; labels without an override fall back to the shared
    mean/variance.
    """
    return build_field_prior(
        reference, spec, updated_hyper, mode, allow_empty=allow_empty, workers=workers
    )


def save_field_prior(path: str | Path, prior: FieldPrior) -> None:
    """k float64 planes in site order; the header carries hyper/source/mode."""
    extra = {
        "kind": "field_prior",
        "k": prior.k,
        "hyper": prior.hyper.to_dict(),
        "reference_checksum": prior.source,
        "mode": prior.mode,
    }
    io.save_planes(path, prior.log_density.T, prior.spec, extra)


def load_field_prior(path: str | Path) -> FieldPrior:
    planes, spec, extra = io.load_planes(path)
    if extra.get("kind") != "field_prior":
        raise DataError(f"{path} does not hold a field prior")
    return FieldPrior(
        log_density=planes.T,
        source=str(extra.get("reference_checksum", "")),
        hyper=DeltaHyper.from_dict(extra["hyper"]),
        mode=str(extra.get("mode", "")),
        spec=spec,
    )
