"""Synthetic occlusion benchmark: parametric road scenes with straight lanes
radiating from a vanishing point, rectangular occluders, brightness scaling,
and Gaussian noise.

Ground-truth labels see through occluders (occluded lane pixels stay
labeled); only the rendered image and the occlusion mask change with the
occluders, which is exactly what makes occluded-region recovery measurable.
Pixel (h, w) has continuous center (w + 0.5, h + 0.5); a pixel belongs to a
lane when its center lies strictly closer than thickness/2 to the polyline.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

LANE_INTENSITY = 0.9
ROAD_INTENSITY = 0.22


@dataclass(frozen=True)
class Occluder:
    x0: int
    y0: int
    x1: int
    y1: int
    intensity: float


@dataclass(frozen=True)
class SceneSpec:
    image_size: tuple[int, int] = (32, 64)          # (H, W)
    vanishing_point: tuple[float, float] = (32.0, 4.0)  # (x, y) continuous px
    lane_count: int = 2
    lane_angles: tuple[float, ...] = (-0.5, 0.5)    # radians from vertical
    lane_thickness: float = 2.5
    occluders: tuple[Occluder, ...] = ()
    brightness: float = 1.0
    noise_std: float = 0.0
    max_lanes: int = 4

    def validate(self):
        h, w = self.image_size
        if h < 1 or w < 1:
            raise ValueError("image size must be positive")
        if not 1 <= self.lane_count <= self.max_lanes:
            raise ValueError(f"lane_count {self.lane_count} outside 1..{self.max_lanes}")
        if len(self.lane_angles) != self.lane_count:
            raise ValueError("need one angle per lane")
        if any(b <= a for a, b in zip(self.lane_angles, self.lane_angles[1:])):
            raise ValueError("lane angles must be strictly increasing")
        if self.lane_thickness <= 0:
            raise ValueError("lane thickness must be positive")
        if not 0.0 < self.brightness <= 1.0:
            raise ValueError("brightness must lie in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        for occ in self.occluders:
            if not (0 <= occ.x0 < occ.x1 <= w and 0 <= occ.y0 < occ.y1 <= h):
                raise ValueError(f"occluder {occ} outside image bounds {self.image_size}")


@dataclass
class Sample:
    image: np.ndarray            # (3, H, W) float64 in [0, 1]
    label: np.ndarray            # (H, W) int, 0 = background, 1..C left-to-right
    existence: np.ndarray        # (max_lanes,) binary
    occlusion_mask: np.ndarray   # (H, W) bool: lane pixel hidden by an occluder


@dataclass
class DatasetItem:
    index: int
    seed: int
    spec: SceneSpec
    sample: Sample


# ------------------------------------------------------------- rasterization

def _mark_segment(mask: np.ndarray, p0, p1, radius: float):
    """OR into ``mask`` the pixels whose centers lie within ``radius`` of the
    segment p0-p1 (continuous coordinates); restricted to a bounding box."""
    h, w = mask.shape
    x0, y0 = p0
    x1, y1 = p1
    wlo = max(0, int(np.floor(min(x0, x1) - radius - 0.5)))
    whi = min(w, int(np.ceil(max(x0, x1) + radius - 0.5)) + 1)
    hlo = max(0, int(np.floor(min(y0, y1) - radius - 0.5)))
    hhi = min(h, int(np.ceil(max(y0, y1) + radius - 0.5)) + 1)
    if wlo >= whi or hlo >= hhi:
        return
    xs = np.arange(wlo, whi) + 0.5
    ys = np.arange(hlo, hhi) + 0.5
    px, py = np.meshgrid(xs, ys)
    dx, dy = x1 - x0, y1 - y0
    norm2 = dx * dx + dy * dy
    if norm2 == 0.0:
        dist2 = (px - x0) ** 2 + (py - y0) ** 2
    else:
        t = np.clip(((px - x0) * dx + (py - y0) * dy) / norm2, 0.0, 1.0)
        dist2 = (px - (x0 + t * dx)) ** 2 + (py - (y0 + t * dy)) ** 2
    mask[hlo:hhi, wlo:whi] |= dist2 < radius * radius


def rasterize_polyline(points, thickness: float, size: tuple[int, int]) -> np.ndarray:
    """Boolean mask of one polyline drawn with the given thickness."""
    mask = np.zeros(size, dtype=bool)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    radius = thickness / 2.0
    if len(pts) == 1:
        _mark_segment(mask, pts[0], pts[0], radius)
    for a, b in zip(pts[:-1], pts[1:]):
        _mark_segment(mask, a, b, radius)
    return mask


def _bottom_x(points) -> float:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return float(pts[np.argmax(pts[:, 1]), 0])


def rasterize_lanes(polylines, thickness: float, size: tuple[int, int],
                    max_classes: int | None = None, binary: bool = False) -> np.ndarray:
    """Integer label map from lane polylines (lists of (x, y) points).

    Class ids are assigned left-to-right by bottom-row intersection; overlaps
    resolve in favor of the later (more rightward) class. ``binary`` collapses
    every lane into class 1 and accepts any lane count.
    """
    label = np.zeros(size, dtype=np.int64)
    lanes = [p for p in polylines if len(p) > 0]
    if not binary and max_classes is not None and len(lanes) > max_classes:
        raise ValueError(f"{len(lanes)} lanes exceed the {max_classes}-class limit")
    order = sorted(range(len(lanes)), key=lambda i: _bottom_x(lanes[i]))
    for class_id, idx in enumerate(order, start=1):
        mask = rasterize_polyline(lanes[idx], thickness, size)
        label[mask] = 1 if binary else class_id
    return label


# ------------------------------------------------------------------ rendering

def lane_polylines(spec: SceneSpec) -> list[np.ndarray]:
    """Straight segments from the vanishing point to the bottom edge."""
    h, _ = spec.image_size
    xv, yv = spec.vanishing_point
    lines = []
    for angle in spec.lane_angles:
        x_end = xv + np.tan(angle) * (h - yv)
        lines.append(np.array([[xv, yv], [x_end, float(h)]]))
    return lines


def occluder_union(spec: SceneSpec) -> np.ndarray:
    mask = np.zeros(spec.image_size, dtype=bool)
    for occ in spec.occluders:
        mask[occ.y0:occ.y1, occ.x0:occ.x1] = True
    return mask


def generate_scene(spec: SceneSpec, seed: int) -> Sample:
    """Render one scene; deterministic given (spec, seed)."""
    spec.validate()
    h, w = spec.image_size
    label = rasterize_lanes(lane_polylines(spec), spec.lane_thickness, (h, w),
                            max_classes=spec.max_lanes)
    gray = np.full((h, w), ROAD_INTENSITY)
    gray[label > 0] = LANE_INTENSITY
    for occ in spec.occluders:
        gray[occ.y0:occ.y1, occ.x0:occ.x1] = occ.intensity
    image = np.broadcast_to(gray, (3, h, w)).copy()
    image *= spec.brightness
    rng = np.random.default_rng(seed)
    if spec.noise_std > 0:
        image = image + rng.normal(0.0, spec.noise_std, size=(3, h, w))
    image = np.clip(image, 0.0, 1.0)
    occlusion = (label > 0) & occluder_union(spec)
    existence = np.zeros(spec.max_lanes, dtype=np.int64)
    existence[:spec.lane_count] = 1
    return Sample(image=image, label=label, existence=existence, occlusion_mask=occlusion)


# ----------------------------------------------------------------- generation

@dataclass(frozen=True)
class SceneDistribution:
    """Sampling ranges for random scenes; ``sample(rng)`` draws a SceneSpec."""

    image_size: tuple[int, int] = (32, 64)
    max_lanes: int = 4
    lane_count_range: tuple[int, int] = (2, 4)
    angle_limit: float = 0.85
    angle_jitter: float = 0.12
    vp_x_range: tuple[float, float] = (0.40, 0.60)   # fraction of width
    vp_y_range: tuple[float, float] = (0.05, 0.20)   # fraction of height
    lane_thickness: float = 2.5
    occluder_prob: float = 1.0
    occluder_coverage: float = 0.4                   # fraction of image area
    occluder_size_range: tuple[float, float] = (0.15, 0.40)
    occluder_intensity_range: tuple[float, float] = (0.35, 0.75)
    max_occluders: int = 10
    brightness_range: tuple[float, float] = (0.3, 1.0)
    noise_std: float = 0.02

    def sample(self, rng: np.random.Generator) -> SceneSpec:
        h, w = self.image_size
        count = int(rng.integers(self.lane_count_range[0], self.lane_count_range[1] + 1))
        base = np.linspace(-self.angle_limit, self.angle_limit, count + 2)[1:-1]
        angles = base + rng.uniform(-self.angle_jitter, self.angle_jitter, size=count)
        angles = np.sort(angles)
        # enforce strict ordering even under extreme jitter draws
        for i in range(1, count):
            if angles[i] <= angles[i - 1]:
                angles[i] = angles[i - 1] + 1e-3
        vp = (rng.uniform(*self.vp_x_range) * w, rng.uniform(*self.vp_y_range) * h)
        occluders = []
        if rng.uniform() < self.occluder_prob:
            union = np.zeros((h, w), dtype=bool)
            target = self.occluder_coverage * h * w
            while union.sum() < target and len(occluders) < self.max_occluders:
                ow = max(2, int(rng.uniform(*self.occluder_size_range) * w))
                oh = max(2, int(rng.uniform(*self.occluder_size_range) * h))
                x0 = int(rng.integers(0, max(1, w - ow + 1)))
                y0 = int(rng.integers(0, max(1, h - oh + 1)))
                occ = Occluder(x0, y0, x0 + ow, y0 + oh,
                               float(rng.uniform(*self.occluder_intensity_range)))
                occluders.append(occ)
                union[occ.y0:occ.y1, occ.x0:occ.x1] = True
        return SceneSpec(
            image_size=self.image_size,
            vanishing_point=vp,
            lane_count=count,
            lane_angles=tuple(float(a) for a in angles),
            lane_thickness=self.lane_thickness,
            occluders=tuple(occluders),
            brightness=float(rng.uniform(*self.brightness_range)),
            noise_std=self.noise_std,
            max_lanes=self.max_lanes,
        )


def sample_seed(seed: int, index: int) -> int:
    """Stable per-sample seed derived from (dataset seed, index)."""
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def generate_dataset(dist: SceneDistribution, n: int, seed: int) -> list[DatasetItem]:
    """n rendered scenes; per-sample seed = hash(seed, index)."""
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    items = []
    for index in range(n):
        s = sample_seed(seed, index)
        rng = np.random.default_rng(s)
        spec = dist.sample(rng)
        scene_seed = int(rng.integers(2**62))
        items.append(DatasetItem(index=index, seed=scene_seed, spec=spec,
                                 sample=generate_scene(spec, scene_seed)))
    return items


def samples_of(items) -> list[Sample]:
    return [it.sample if isinstance(it, DatasetItem) else it for it in items]


# ------------------------------------------------------------------ persisting

def _spec_to_kv(spec: SceneSpec) -> dict[str, str]:
    occ = ";".join(f"{o.x0}:{o.y0}:{o.x1}:{o.y1}:{o.intensity!r}" for o in spec.occluders)
    return {
        "spec.image_h": str(spec.image_size[0]),
        "spec.image_w": str(spec.image_size[1]),
        "spec.vp_x": repr(spec.vanishing_point[0]),
        "spec.vp_y": repr(spec.vanishing_point[1]),
        "spec.lane_count": str(spec.lane_count),
        "spec.angles": ",".join(repr(a) for a in spec.lane_angles),
        "spec.thickness": repr(spec.lane_thickness),
        "spec.occluders": occ or "-",
        "spec.brightness": repr(spec.brightness),
        "spec.noise_std": repr(spec.noise_std),
        "spec.max_lanes": str(spec.max_lanes),
    }


def _spec_from_kv(kv: dict[str, str]) -> SceneSpec:
    occluders = []
    if kv["spec.occluders"] != "-":
        for chunk in kv["spec.occluders"].split(";"):
            x0, y0, x1, y1, inten = chunk.split(":")
            occluders.append(Occluder(int(x0), int(y0), int(x1), int(y1), float(inten)))
    return SceneSpec(
        image_size=(int(kv["spec.image_h"]), int(kv["spec.image_w"])),
        vanishing_point=(float(kv["spec.vp_x"]), float(kv["spec.vp_y"])),
        lane_count=int(kv["spec.lane_count"]),
        lane_angles=tuple(float(a) for a in kv["spec.angles"].split(",")),
        lane_thickness=float(kv["spec.thickness"]),
        occluders=tuple(occluders),
        brightness=float(kv["spec.brightness"]),
        noise_std=float(kv["spec.noise_std"]),
        max_lanes=int(kv["spec.max_lanes"]),
    )


def save_dataset(items: list[DatasetItem], out_dir):
    """Write images/labels/masks as PNG plus a line-delimited manifest."""
    from pathlib import Path
    from PIL import Image

    out = Path(out_dir)
    for sub in ("images", "labels", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for it in items:
        stem = f"{it.index:06d}.png"
        img = (np.clip(it.sample.image, 0, 1) * 255).round().astype(np.uint8)
        Image.fromarray(img.transpose(1, 2, 0)).save(out / "images" / stem)
        Image.fromarray(it.sample.label.astype(np.uint8)).save(out / "labels" / stem)
        Image.fromarray((it.sample.occlusion_mask * 255).astype(np.uint8)).save(
            out / "masks" / stem)
        kv = {"index": str(it.index), "seed": str(it.seed),
              "image": f"images/{stem}", "label": f"labels/{stem}", "mask": f"masks/{stem}",
              "existence": ",".join(str(int(e)) for e in it.sample.existence)}
        kv.update(_spec_to_kv(it.spec))
        lines.append(" ".join(f"{k}={v}" for k, v in kv.items()))
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset(root) -> list[DatasetItem]:
    """Read a dataset written by :func:`save_dataset`."""
    from pathlib import Path
    from PIL import Image

    rootp = Path(root)
    manifest = rootp / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest.txt under {rootp}")
    items = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        kv = dict(part.split("=", 1) for part in line.split(" "))
        img = np.asarray(Image.open(rootp / kv["image"]), dtype=np.float64) / 255.0
        label = np.asarray(Image.open(rootp / kv["label"]), dtype=np.int64)
        mask = np.asarray(Image.open(rootp / kv["mask"])) > 0
        existence = np.array([int(e) for e in kv["existence"].split(",")], dtype=np.int64)
        sample = Sample(image=np.ascontiguousarray(img.transpose(2, 0, 1)), label=label,
                        existence=existence, occlusion_mask=mask)
        items.append(DatasetItem(index=int(kv["index"]), seed=int(kv["seed"]),
                                 spec=_spec_from_kv(kv), sample=sample))
    return items
