"""Loaders for the three public lane-detection dataset formats.

All loaders yield :class:`esalane.synth.Sample` records resized to the
conventional per-dataset resolution. None of them are needed by the synthetic
benchmark; they exist so trained models can be pointed at real data.

TuSimple: a line-delimited JSON label file; each record holds ``lanes`` (one
x list per lane, -2 marking absent), ``h_samples`` (shared y anchors), and
``raw_file`` (image path relative to the root).

CULane: a list file with lines ``<image> <label_png> f1 f2 f3 f4`` where the
four flags are per-slot lane existence and the label PNG stores class ids.

BDD-style: ``images/`` plus ``labels/<stem>.json`` files of the form
``{"lanes": [[[x, y], ...], ...]}`` where each physical lane is annotated by
its two boundary polylines. Boundary pairs are averaged into an 8 px thick
centerline; a binary (single-class) label results.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .synth import Sample, rasterize_lanes, rasterize_polyline

log = logging.getLogger(__name__)

TUSIMPLE_SIZE = (368, 640)
CULANE_SIZE = (288, 800)
BDD_SIZE = (360, 640)
BDD_THICKNESS = 8.0


def _load_image(path: Path, target_hw: tuple[int, int]) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        orig_w, orig_h = rgb.size
        resized = rgb.resize((target_hw[1], target_hw[0]), Image.BILINEAR)
        arr = np.asarray(resized, dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1)), (orig_h, orig_w)


def _scale_points(points, orig_hw, target_hw) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    sy = target_hw[0] / orig_hw[0]
    sx = target_hw[1] / orig_hw[1]
    return pts * np.array([sx, sy])


def load_tusimple(root, label_file, target_hw=TUSIMPLE_SIZE, thickness: float = 8.0,
                  max_lanes: int = 4):
    """Iterate Samples from a TuSimple-format label file.

    Malformed records are skipped with a warning; a referenced image that
    does not exist raises.
    """
    rootp = Path(root)
    with open(label_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                lanes_x = rec["lanes"]
                h_samples = rec["h_samples"]
                raw_file = rec["raw_file"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                log.warning("skipping malformed record at line %d: %s", lineno, exc)
                continue
            image, orig_hw = _load_image(rootp / raw_file, target_hw)
            polylines = []
            for xs in lanes_x:
                pts = [(x, y) for x, y in zip(xs, h_samples) if x != -2]
                if len(pts) >= 2:
                    polylines.append(_scale_points(pts, orig_hw, target_hw))
            if len(polylines) > max_lanes:
                log.warning("record at line %d has %d lanes; keeping the first %d",
                            lineno, len(polylines), max_lanes)
                polylines = polylines[:max_lanes]
            label = rasterize_lanes(polylines, thickness, target_hw, max_classes=max_lanes)
            existence = np.zeros(max_lanes, dtype=np.int64)
            existence[:len(polylines)] = 1
            yield Sample(image=image, label=label, existence=existence,
                         occlusion_mask=np.zeros(target_hw, dtype=bool))


def load_culane(root, list_file, target_hw=CULANE_SIZE):
    """Iterate Samples from a CULane list file (image, label PNG, 4 flags)."""
    rootp = Path(root)
    with open(list_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(
                    f"malformed line {lineno}: expected image, label and 4 "
                    f"existence flags, got {len(parts)} fields")
            img_path, label_path, *flags = parts
            image, _ = _load_image(rootp / img_path.lstrip("/"), target_hw)
            lp = rootp / label_path.lstrip("/")
            if not lp.is_file():
                raise FileNotFoundError(f"label not found: {lp}")
            with Image.open(lp) as im:
                lab_img = im.convert("L").resize((target_hw[1], target_hw[0]), Image.NEAREST)
                label = np.asarray(lab_img, dtype=np.int64)
            if label.max() > 4:
                raise ValueError(f"label values outside 0..4 in {lp}")
            existence = np.array([int(f) for f in flags], dtype=np.int64)
            if not set(existence.tolist()) <= {0, 1}:
                raise ValueError(f"malformed existence flags on line {lineno}")
            yield Sample(image=image, label=label, existence=existence,
                         occlusion_mask=np.zeros(target_hw, dtype=bool))


# ----------------------------------------------------------------- BDD-style

def resample_polyline(points, n: int) -> np.ndarray:
    """Resample a polyline to n points equally spaced along its arc length."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 1:
        return np.repeat(pts, n, axis=0)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        return np.repeat(pts[:1], n, axis=0)
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(targets, cum, pts[:, 0])
    out[:, 1] = np.interp(targets, cum, pts[:, 1])
    return out


def centerline_of(a, b, n: int | None = None) -> np.ndarray:
    """Pointwise midpoint of two boundary polylines after arc-length
    resampling to a common point count (both oriented by increasing y)."""
    aa = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    bb = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if aa[-1, 1] < aa[0, 1]:
        aa = aa[::-1]
    if bb[-1, 1] < bb[0, 1]:
        bb = bb[::-1]
    n = n or max(len(aa), len(bb), 16)
    return 0.5 * (resample_polyline(aa, n) + resample_polyline(bb, n))


def _mean_x(points) -> float:
    return float(np.asarray(points, dtype=np.float64).reshape(-1, 2)[:, 0].mean())


def pair_boundary_lines(lines, max_gap: float):
    """Greedily pair adjacent boundary polylines of the same lane.

    Lines are sorted by mean x; consecutive lines closer than ``max_gap``
    form a pair, leftovers are reported unpaired.
    """
    order = sorted(range(len(lines)), key=lambda i: _mean_x(lines[i]))
    pairs, unpaired = [], []
    i = 0
    while i < len(order):
        if i + 1 < len(order):
            a, b = lines[order[i]], lines[order[i + 1]]
            if abs(_mean_x(b) - _mean_x(a)) <= max_gap:
                pairs.append((a, b))
                i += 2
                continue
        unpaired.append(lines[order[i]])
        i += 1
    return pairs, unpaired


def load_bdd(root, target_hw=BDD_SIZE, thickness: float = BDD_THICKNESS,
             pair_gap_fraction: float = 0.06):
    """Iterate binary-lane Samples from a BDD-style directory.

    Each lane's two boundary polylines are averaged into a centerline and
    rasterized ``thickness`` pixels thick into a single class. Unpairable
    boundary lines fall back to being rasterized directly (with a warning).
    """
    rootp = Path(root)
    image_dir = rootp / "images"
    label_dir = rootp / "labels"
    if not image_dir.is_dir() or not label_dir.is_dir():
        raise FileNotFoundError(f"expected images/ and labels/ under {rootp}")
    for img_path in sorted(image_dir.iterdir()):
        if img_path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        ann_path = label_dir / (img_path.stem + ".json")
        if not ann_path.is_file():
            raise FileNotFoundError(f"annotation not found: {ann_path}")
        with open(ann_path) as fh:
            ann = json.load(fh)
        image, orig_hw = _load_image(img_path, target_hw)
        lines = [_scale_points(l, orig_hw, target_hw) for l in ann.get("lanes", [])
                 if len(l) >= 2]
        pairs, unpaired = pair_boundary_lines(lines, pair_gap_fraction * target_hw[1])
        polylines = [centerline_of(a, b) for a, b in pairs]
        if unpaired:
            log.warning("%s: %d unpaired boundary lines rasterized directly",
                        img_path.name, len(unpaired))
            polylines.extend(unpaired)
        label = rasterize_lanes(polylines, thickness, target_hw, binary=True)
        yield Sample(image=image, label=label,
                     existence=np.array([int(label.any())], dtype=np.int64),
                     occlusion_mask=np.zeros(target_hw, dtype=bool))
