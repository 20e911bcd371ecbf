"""Regular 2D/3D lattice geometry.

Site linearisation is shared by every module in the package: a site at
integer coordinates (x, y) or (x, y, z) has flat index

    i = x + nx * y            (2D)
    i = x + nx * (y + ny * z) (3D)

so x varies fastest.  A flat array of length n reshapes to the grid as
``arr.reshape(ny, nx)`` or ``arr.reshape(nz, ny, nx)`` in C order.
Only first-order (axis-aligned, distance-1) neighbourhoods are supported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "LatticeSpec",
    "EdgeSet",
    "BlockPartition",
    "build_lattice",
    "neighbours",
    "neighbour_table",
    "site_coords",
]


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice dimensions plus per-axis voxel size in millimetres."""

    dims: tuple[int, ...]
    voxel_size: tuple[float, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ConfigError(f"lattice must be 2D or 3D, got dims={self.dims!r}")
        if any(d < 1 for d in dims):
            raise ConfigError(f"all lattice dimensions must be >= 1, got {dims}")
        voxel = tuple(float(v) for v in self.voxel_size) or (1.0,) * len(dims)
        if len(voxel) != len(dims):
            raise ConfigError(
                f"voxel_size has {len(voxel)} entries for {len(dims)} dimensions"
            )
        if any(v <= 0 for v in voxel):
            raise ConfigError(f"voxel sizes must be strictly positive, got {voxel}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", voxel)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def grid_shape(self) -> tuple[int, ...]:
        """Numpy shape whose C-order ravel matches the site indexing."""
        return tuple(reversed(self.dims))


@dataclass(frozen=True)
class EdgeSet:
    """Unique unordered first-order neighbour pairs, as an (m, 2) index array."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise DataError(f"edges must have shape (m, 2), got {edges.shape}")
        object.__setattr__(self, "edges", edges)

    def __len__(self) -> int:
        return self.edges.shape[0]


@dataclass(frozen=True)
class BlockPartition:
    """Two-colouring of the lattice; no edge joins two sites of one block."""

    block_of: np.ndarray
    blocks: tuple[np.ndarray, np.ndarray] = field(init=False)

    def __post_init__(self):
        block_of = np.asarray(self.block_of, dtype=np.uint8)
        object.__setattr__(self, "block_of", block_of)
        object.__setattr__(
            self,
            "blocks",
            (np.flatnonzero(block_of == 0), np.flatnonzero(block_of == 1)),
        )


def site_coords(spec: LatticeSpec) -> np.ndarray:
    """Integer coordinates of every site, shape (n, ndim), columns x,y[,z]."""
    nx = spec.dims[0]
    idx = np.arange(spec.n, dtype=np.int64)
    x = idx % nx
    if spec.ndim == 2:
        y = idx // nx
        return np.stack([x, y], axis=1)
    ny = spec.dims[1]
    y = (idx // nx) % ny
    z = idx // (nx * ny)
    return np.stack([x, y, z], axis=1)


def build_lattice(spec: LatticeSpec) -> tuple[EdgeSet, BlockPartition]:
    """Enumerate every first-order edge once and two-colour the sites.

    Edges are listed axis by axis (x, then y, then z), each axis in site-scan
    order; the partition assigns each site the parity of its coordinate sum.
    """
    idx = np.arange(spec.n, dtype=np.int64).reshape(spec.grid_shape)
    pieces = []
    # axes of the reshaped grid run z, y, x; walk them as x, y, z
    for axis in range(spec.ndim):
        grid_axis = spec.ndim - 1 - axis
        lo = np.take(idx, np.arange(spec.dims[axis] - 1), axis=grid_axis)
        hi = np.take(idx, np.arange(1, spec.dims[axis]), axis=grid_axis)
        pieces.append(np.stack([lo.ravel(), hi.ravel()], axis=1))
    edges = np.concatenate(pieces, axis=0) if pieces else np.empty((0, 2), np.int64)
    parity = (site_coords(spec).sum(axis=1) % 2).astype(np.uint8)
    return EdgeSet(edges), BlockPartition(parity)


def neighbours(spec: LatticeSpec, i: int) -> np.ndarray:
    """First-order neighbour indices of site ``i``, in -x,+x,-y,+y[,-z,+z] order."""
    if not 0 <= i < spec.n:
        raise IndexError(f"site index {i} out of range for n={spec.n}")
    coord = site_coords(spec)[i]
    out = []
    stride = 1
    for axis, size in enumerate(spec.dims):
        if coord[axis] > 0:
            out.append(i - stride)
        if coord[axis] < size - 1:
            out.append(i + stride)
        stride *= size
    return np.array(out, dtype=np.int64)


def neighbour_table(spec: LatticeSpec) -> np.ndarray:
    """Padded neighbour index table, shape (n, 2*ndim).

    Missing neighbours (lattice boundary) hold the sentinel value ``n``;
    gather through an array padded with one extra entry.
    """
    coords = site_coords(spec)
    n = spec.n
    table = np.full((n, 2 * spec.ndim), n, dtype=np.int64)
    idx = np.arange(n, dtype=np.int64)
    stride = 1
    for axis, size in enumerate(spec.dims):
        has_lo = coords[:, axis] > 0
        has_hi = coords[:, axis] < size - 1
        table[has_lo, 2 * axis] = idx[has_lo] - stride
        table[has_hi, 2 * axis + 1] = idx[has_hi] + stride
        stride *= size
    return table
