"""Canonical on-disk formats.

A volume file is a single JSON header line, a newline, then the raw payload
as little-endian values in site order (multi-plane payloads store plane 0
completely, then plane 1, ...).  The header records lattice geometry, the
element type, the plane count, and a CRC32 checksum of the payload bytes,
so round trips are byte-exact and truncation is detected.  Scalar tables
travel as CSV with floats printed at 17 significant digits, and structured
configuration as JSON.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ChecksumError, DataError, FormatError
from .lattice import LatticeSpec
from .potts import LabelField

__all__ = [
    "MAGIC",
    "VolumeHeader",
    "write_volume",
    "read_volume",
    "save_labels",
    "load_labels",
    "save_image",
    "load_image",
    "save_planes",
    "load_planes",
    "ImageVolume",
    "write_csv",
    "read_csv",
    "save_json",
    "load_json",
    "fmt_float",
]

MAGIC = "PFVOL1"

_DTYPES = {"uint8": np.dtype("<u1"), "float64": np.dtype("<f8")}


@dataclass(frozen=True)
class ImageVolume:
    """Per-site real intensities plus the lattice geometry they live on."""

    values: np.ndarray
    spec: LatticeSpec

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != (self.spec.n,):
            raise DataError(
                f"image has {values.size} values for a lattice of {self.spec.n} sites"
            )
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class VolumeHeader:
    magic: str
    dims: tuple[int, ...]
    voxel_size: tuple[float, ...]
    element: str  # "uint8" | "float64"
    planes: int
    endian: str
    checksum: str  # crc32 of payload bytes, 8 hex digits
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def spec(self) -> LatticeSpec:
        return LatticeSpec(self.dims, self.voxel_size)

    @classmethod
    def for_payload(
        cls,
        spec: LatticeSpec,
        element: str,
        payload: np.ndarray,
        extra: Mapping[str, Any] | None = None,
    ) -> "VolumeHeader":
        if element not in _DTYPES:
            raise DataError(f"unsupported element type {element!r}")
        planes = 1 if payload.ndim == 1 else payload.shape[0]
        raw = _payload_bytes(payload, element)
        return cls(
            magic=MAGIC,
            dims=spec.dims,
            voxel_size=spec.voxel_size,
            element=element,
            planes=planes,
            endian="little",
            checksum=f"{zlib.crc32(raw):08x}",
            extra=dict(extra or {}),
        )


def _payload_bytes(payload: np.ndarray, element: str) -> bytes:
    return np.ascontiguousarray(payload, dtype=_DTYPES[element]).tobytes()


def write_volume(path: str | Path, header: VolumeHeader, payload: np.ndarray) -> None:
    """Write header + payload; validates the header against the payload first."""
    if header.magic != MAGIC:
        raise FormatError(f"refusing to write magic {header.magic!r}")
    if header.element not in _DTYPES:
        raise DataError(f"unsupported element type {header.element!r}")
    raw = _payload_bytes(payload, header.element)
    expected = header.n * header.planes * _DTYPES[header.element].itemsize
    if len(raw) != expected:
        raise DataError(
            f"payload is {len(raw)} bytes but header implies {expected} "
            f"(n={header.n}, planes={header.planes}, element={header.element})"
        )
    if f"{zlib.crc32(raw):08x}" != header.checksum:
        raise DataError("header checksum does not match payload")
    doc = {
        "magic": header.magic,
        "dims": list(header.dims),
        "voxel_size": list(header.voxel_size),
        "element": header.element,
        "planes": header.planes,
        "endian": header.endian,
        "checksum": header.checksum,
        "extra": _plain(header.extra),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(doc, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(raw)


def read_volume(path: str | Path) -> tuple[VolumeHeader, np.ndarray]:
    """Inverse of :func:`write_volume`; verifies magic, length, and checksum."""
    with open(path, "rb") as fh:
        line = fh.readline()
        raw = fh.read()
    try:
        doc = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable volume header in {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise FormatError(f"{path} is not a {MAGIC} volume")
    try:
        header = VolumeHeader(
            magic=doc["magic"],
            dims=tuple(int(d) for d in doc["dims"]),
            voxel_size=tuple(float(v) for v in doc["voxel_size"]),
            element=doc["element"],
            planes=int(doc["planes"]),
            endian=doc["endian"],
            checksum=doc["checksum"],
            extra=doc.get("extra", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed volume header in {path}: {exc}") from exc
    if header.element not in _DTYPES:
        raise FormatError(f"unsupported element type {header.element!r} in {path}")
    dtype = _DTYPES[header.element]
    expected = header.n * header.planes * dtype.itemsize
    if len(raw) != expected or f"{zlib.crc32(raw):08x}" != header.checksum:
        raise ChecksumError(
            f"{path}: payload fails checksum (got {len(raw)} bytes, expected {expected})"
        )
    flat = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))
    payload = flat if header.planes == 1 else flat.reshape(header.planes, header.n)
    return header, payload


# -- typed convenience wrappers ------------------------------------------------


def save_labels(
    path: str | Path,
    labels: LabelField,
    spec: LatticeSpec,
    extra: Mapping[str, Any] | None = None,
) -> None:
    if labels.n != spec.n:
        raise DataError(f"label field has {labels.n} sites, lattice has {spec.n}")
    if labels.k > 255:
        raise DataError(f"k={labels.k} does not fit the uint8 label encoding")
    merged = {"k": labels.k, **(extra or {})}
    payload = labels.labels.astype(np.uint8)
    header = VolumeHeader.for_payload(spec, "uint8", payload, merged)
    write_volume(path, header, payload)


def load_labels(path: str | Path) -> tuple[LabelField, LatticeSpec]:
    header, payload = read_volume(path)
    if header.element != "uint8" or header.planes != 1:
        raise FormatError(f"{path} does not hold a single uint8 label plane")
    k = int(header.extra.get("k", payload.max(initial=1)))
    return LabelField(payload.astype(np.int32), k), header.spec


def save_image(
    path: str | Path, image: ImageVolume, extra: Mapping[str, Any] | None = None
) -> None:
    header = VolumeHeader.for_payload(image.spec, "float64", image.values, extra)
    write_volume(path, header, image.values)


def load_image(path: str | Path) -> ImageVolume:
    header, payload = read_volume(path)
    if header.element != "float64" or header.planes != 1:
        raise FormatError(f"{path} does not hold a single float64 intensity plane")
    return ImageVolume(payload, header.spec)


def save_planes(
    path: str | Path,
    planes: np.ndarray,
    spec: LatticeSpec,
    extra: Mapping[str, Any] | None = None,
) -> None:
    """Store a (planes, n) or (n, planes) float array as float64 planes.

    Integer counts survive exactly (values stay below 2**53).
    """
    arr = np.asarray(planes, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == spec.n and arr.shape[1] != spec.n:
        arr = arr.T
    header = VolumeHeader.for_payload(spec, "float64", arr, extra)
    write_volume(path, header, arr)


def load_planes(path: str | Path) -> tuple[np.ndarray, LatticeSpec, dict]:
    header, payload = read_volume(path)
    if header.element != "float64":
        raise FormatError(f"{path} does not hold float64 planes")
    arr = payload if payload.ndim == 2 else payload[None, :]
    return arr, header.spec, dict(header.extra)


# -- CSV / JSON helpers --------------------------------------------------------


def fmt_float(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


def write_csv(
    path: str | Path, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            out = {}
            for key in fieldnames:
                val = row.get(key, "")
                if isinstance(val, (float, np.floating)):
                    val = fmt_float(val)
                out[key] = val
            writer.writerow(out)


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _plain(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays so json can serialise them."""
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def save_json(path: str | Path, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: str | Path) -> Any:
    with open(path) as fh:
        return json.load(fh)
