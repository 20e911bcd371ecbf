"""Synthetic ground-truth phantoms: a water-equivalent disc body carrying
circular tissue inserts on an inner and an outer ring.

The inner ring can be rotated about the phantom centre and the whole
phantom translated, mimicking setup variation between repeat scans of a
physical calibration object.  Rendering adds per-class Gaussian noise and,
optionally, a smooth low-frequency bias field that depresses the effective
contrast-to-noise ratio the way shading artefacts do.

Default class means and standard deviations follow the nine tissue types
of a commercial electron-density phantom (lung inhale/exhale, adipose,
breast, water, muscle, liver, spongy bone, dense bone); truth generation is
deterministic, only rendering consumes randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import NoisePriors
from .errors import ConfigError, DataError
from .io import ImageVolume, load_json, save_json
from .lattice import LatticeSpec, site_coords
from .potts import LabelField

__all__ = [
    "TISSUE_CLASSES",
    "Insert",
    "PhantomSpec",
    "default_spec",
    "default_noise_priors",
    "generate_truth",
    "render_image",
    "save_phantom_spec",
    "load_phantom_spec",
]

# (name, mean intensity, intensity SD); intensity units are scanner numbers
TISSUE_CLASSES = [
    ("lung_inhale", -612.6, 90.06),
    ("lung_exhale", -495.8, 89.16),
    ("adipose", -316.8, 79.36),
    ("breast", -295.9, 67.42),
    ("water", -294.5, 152.0),
    ("muscle", -263.3, 71.55),
    ("liver", -259.6, 88.50),
    ("spongy_bone", -191.1, 87.36),
    ("dense_bone", 77.9, 89.94),
]

MEAN_PRIOR_SD = 26.88  # prior SD of each class mean
VARIANCE_PRIOR_DF = 25.0  # inverse-gamma degrees of freedom for each class variance

WATER_LABEL = 5


@dataclass(frozen=True)
class Insert:
    label: int
    centre: tuple[float, float]  # mm, before rotation/translation
    radius: float  # mm
    ring: str  # "inner" | "outer"

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError(f"insert radius must be > 0, got {self.radius}")
        if self.ring not in ("inner", "outer"):
            raise ConfigError(f"ring must be 'inner' or 'outer', got {self.ring!r}")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, ...] = (128, 128)
    voxel_size: tuple[float, ...] = (1.0, 1.0)
    body_radius: float = 60.0
    body_label: int = WATER_LABEL
    inserts: tuple[Insert, ...] = ()
    class_means: tuple[float, ...] = tuple(c[1] for c in TISSUE_CLASSES)
    class_sds: tuple[float, ...] = tuple(c[2] for c in TISSUE_CLASSES)
    class_names: tuple[str, ...] = tuple(c[0] for c in TISSUE_CLASSES)
    rotation_deg: float = 0.0  # applied to inner-ring insert centres
    translation: tuple[float, float] = (0.0, 0.0)  # mm, applied to everything
    bias_amplitude: float = 0.0  # intensity units; 0 disables the bias field
    bias_length_scale: float = 64.0  # mm, base wavelength of the bias modes
    seed: int = 0

    def __post_init__(self):
        if self.body_radius <= 0:
            raise ConfigError(f"body radius must be > 0, got {self.body_radius}")
        if not 0.0 <= self.rotation_deg < 360.0:
            raise ConfigError(
                f"rotation must lie in [0, 360) degrees, got {self.rotation_deg}"
            )
        if len(self.class_means) != len(self.class_sds):
            raise ConfigError("class means and SDs differ in length")
        if any(sd < 0 for sd in self.class_sds):
            raise ConfigError("class SDs must be non-negative")
        if not 1 <= self.body_label <= self.k:
            raise ConfigError(f"body label {self.body_label} outside 1..{self.k}")
        for ins in self.inserts:
            if not 1 <= ins.label <= self.k:
                raise ConfigError(f"insert label {ins.label} outside 1..{self.k}")
        if self.bias_amplitude < 0:
            raise ConfigError("bias amplitude must be non-negative")
        if self.bias_length_scale <= 0:
            raise ConfigError("bias length scale must be > 0")

    @property
    def k(self) -> int:
        return len(self.class_means)

    @property
    def lattice(self) -> LatticeSpec:
        return LatticeSpec(self.dims, self.voxel_size)

    @property
    def centre(self) -> tuple[float, float]:
        return (
            0.5 * self.dims[0] * self.voxel_size[0] + self.translation[0],
            0.5 * self.dims[1] * self.voxel_size[1] + self.translation[1],
        )


def default_spec(**overrides) -> PhantomSpec:
    """The stock nine-class phantom: four inserts on each ring.

    Inner ring radius 28 mm (lung inhale/exhale, adipose, breast), outer
    ring radius 46 mm (muscle, liver, spongy bone, dense bone), insert
    radius 9 mm, centred in a 128 mm field of view.
    """
    cx = cy = 64.0
    inner_r, outer_r, ins_r = 28.0, 46.0, 9.0
    inner_labels = [1, 2, 3, 4]
    outer_labels = [6, 7, 8, 9]
    inserts = []
    for idx, lab in enumerate(inner_labels):
        ang = math.radians(90.0 * idx)
        inserts.append(
            Insert(
                lab,
                (cx + inner_r * math.cos(ang), cy + inner_r * math.sin(ang)),
                ins_r,
                "inner",
            )
        )
    for idx, lab in enumerate(outer_labels):
        ang = math.radians(45.0 + 90.0 * idx)
        inserts.append(
            Insert(
                lab,
                (cx + outer_r * math.cos(ang), cy + outer_r * math.sin(ang)),
                ins_r,
                "outer",
            )
        )
    return replace(PhantomSpec(inserts=tuple(inserts)), **overrides)


def default_noise_priors() -> NoisePriors:
    """Informative conjugate priors matching the stock tissue classes."""
    means = np.array([c[1] for c in TISSUE_CLASSES])
    sds = np.array([c[2] for c in TISSUE_CLASSES])
    k = means.size
    return NoisePriors(
        m=means,
        phi2=np.full(k, MEAN_PRIOR_SD**2),
        nu=np.full(k, VARIANCE_PRIOR_DF),
        s2=sds**2,
    )


def _transformed_centres(spec: PhantomSpec) -> list[tuple[float, float, float, int]]:
    """Insert centres after inner-ring rotation and global translation."""
    cx, cy = spec.centre
    theta = math.radians(spec.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    out = []
    for ins in spec.inserts:
        x = ins.centre[0] + spec.translation[0]
        y = ins.centre[1] + spec.translation[1]
        if ins.ring == "inner" and theta != 0.0:
            dx, dy = x - cx, y - cy
            x = cx + cos_t * dx - sin_t * dy
            y = cy + sin_t * dx + cos_t * dy
        out.append((x, y, ins.radius, ins.label))
    return out


def generate_truth(spec: PhantomSpec) -> LabelField:
    """Rasterise the phantom by centre-of-voxel inclusion.

    Sites inside an insert take its label; everything else (body and
    surround) takes the body label.  Deterministic: the seed only affects
    rendering.
    """
    centres = _transformed_centres(spec)
    cx, cy = spec.centre
    for a in range(len(centres)):
        xa, ya, ra, _ = centres[a]
        if math.hypot(xa - cx, ya - cy) + ra > spec.body_radius:
            raise ConfigError(
                f"insert {spec.inserts[a].label} extends outside the body disc"
            )
        for b in range(a + 1, len(centres)):
            xb, yb, rb, _ = centres[b]
            if math.hypot(xa - xb, ya - yb) < ra + rb:
                raise ConfigError(
                    f"inserts {spec.inserts[a].label} and {spec.inserts[b].label} overlap"
                )
    lat = spec.lattice
    coords = site_coords(lat).astype(np.float64)
    px = (coords[:, 0] + 0.5) * lat.voxel_size[0]
    py = (coords[:, 1] + 0.5) * lat.voxel_size[1]
    labels = np.full(lat.n, spec.body_label, dtype=np.int32)
    for x, y, radius, lab in centres:
        inside = (px - x) ** 2 + (py - y) ** 2 <= radius**2
        labels[inside] = lab
    return LabelField(labels, spec.k)


def _bias_field(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    lat = spec.lattice
    coords = site_coords(lat).astype(np.float64)
    px = (coords[:, 0] + 0.5) * lat.voxel_size[0]
    py = (coords[:, 1] + 0.5) * lat.voxel_size[1]
    wavelengths = spec.bias_length_scale * np.array([4.0, 2.0, 1.0])
    angles = rng.uniform(0.0, 2.0 * np.pi, size=wavelengths.size)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=wavelengths.size)
    total = np.zeros(lat.n)
    for lam, ang, phase in zip(wavelengths, angles, phases):
        proj = px * math.cos(ang) + py * math.sin(ang)
        total += np.cos(2.0 * np.pi * proj / lam + phase)
    return spec.bias_amplitude * total / wavelengths.size


def render_image(
    truth: LabelField, spec: PhantomSpec, rng: np.random.Generator | None = None
) -> ImageVolume:
    """Class mean + class-SD Gaussian noise + optional smooth bias field.

    The noise is drawn before the bias phases, so two renders from the same
    seed that differ only in bias amplitude differ exactly by the bias.
    """
    lat = spec.lattice
    if truth.n != lat.n:
        raise DataError(f"truth has {truth.n} sites, lattice has {lat.n}")
    if truth.k != spec.k:
        raise DataError(f"truth has k={truth.k}, phantom has k={spec.k}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    means = np.asarray(spec.class_means)[truth.labels - 1]
    sds = np.asarray(spec.class_sds)[truth.labels - 1]
    values = means + sds * rng.standard_normal(lat.n)
    if spec.bias_amplitude > 0:
        values = values + _bias_field(spec, rng)
    return ImageVolume(values, lat)


# -- persistence -----------------------------------------------------------------


def save_phantom_spec(path: str | Path, spec: PhantomSpec) -> None:
    doc = {
        "kind": "phantom_spec",
        "dims": list(spec.dims),
        "voxel_size": list(spec.voxel_size),
        "body_radius": spec.body_radius,
        "body_label": spec.body_label,
        "inserts": [
            {
                "label": ins.label,
                "centre": list(ins.centre),
                "radius": ins.radius,
                "ring": ins.ring,
            }
            for ins in spec.inserts
        ],
        "class_means": list(spec.class_means),
        "class_sds": list(spec.class_sds),
        "class_names": list(spec.class_names),
        "rotation_deg": spec.rotation_deg,
        "translation": list(spec.translation),
        "bias_amplitude": spec.bias_amplitude,
        "bias_length_scale": spec.bias_length_scale,
        "seed": spec.seed,
    }
    save_json(path, doc)


def load_phantom_spec(path: str | Path) -> PhantomSpec:
    doc = load_json(path)
    if not isinstance(doc, dict) or doc.get("kind") != "phantom_spec":
        raise DataError(f"{path} does not hold a phantom spec")
    try:
        return PhantomSpec(
            dims=tuple(int(d) for d in doc["dims"]),
            voxel_size=tuple(float(v) for v in doc["voxel_size"]),
            body_radius=float(doc["body_radius"]),
            body_label=int(doc["body_label"]),
            inserts=tuple(
                Insert(
                    int(i["label"]),
                    (float(i["centre"][0]), float(i["centre"][1])),
                    float(i["radius"]),
                    str(i["ring"]),
                )
                for i in doc["inserts"]
            ),
            class_means=tuple(float(v) for v in doc["class_means"]),
            class_sds=tuple(float(v) for v in doc["class_sds"]),
            class_names=tuple(str(s) for s in doc["class_names"]),
            rotation_deg=float(doc["rotation_deg"]),
            translation=(
                float(doc["translation"][0]),
                float(doc["translation"][1]),
            ),
            bias_amplitude=float(doc["bias_amplitude"]),
            bias_length_scale=float(doc["bias_length_scale"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataError(f"malformed phantom spec in {path}: {exc}") from exc
