"""Evaluation protocols: point-accuracy scoring (TuSimple style), thick-lane
IoU F1 matching (CULane style), and binary pixel metrics (BDD style), plus
probability-map-to-lane-points decoding.

The IoU matching maximizes the number of pairs whose IoU clears the
threshold, breaking ties by total IoU; with at most a handful of lanes per
image this equals exhaustive permutation search (the test suite checks that
against an independent brute-force matcher).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .synth import rasterize_polyline

TUSIMPLE_POINT_TOL = 20.0
TUSIMPLE_LANE_ACC = 0.85
CULANE_THICKNESS = 30.0
CULANE_IOU = 0.5


@dataclass
class LanePoints:
    """Polyline lane: (x, y) points with strictly increasing integer y."""

    points: np.ndarray                 # (K, 2) float, columns (x, y)
    class_id: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) < 2:
            raise ValueError("a lane needs at least two points")
        ys = self.points[:, 1]
        if np.any(np.diff(ys) <= 0):
            raise ValueError("lane point y-coordinates must strictly increase")

    def xs_at(self) -> dict[int, float]:
        return {int(y): float(x) for x, y in self.points}


@dataclass
class MetricReport:
    protocol: str                      # tusimple | culane | bdd | occlusion
    values: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def check(self, tol: float = 1e-9):
        for key, v in self.values.items():
            if not -tol <= v <= 1.0 + tol:
                raise AssertionError(f"rate {key}={v} outside [0, 1]")
        if {"precision", "recall", "f1"} <= self.values.keys():
            p, r = self.values["precision"], self.values["recall"]
            expected = 2 * p * r / (p + r) if p + r > 0 else 0.0
            if abs(expected - self.values["f1"]) > tol:
                raise AssertionError("f1 inconsistent with precision/recall")


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, and F1; zero-denominator rates are defined as 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


# -------------------------------------------------------------------- decode

def lanes_from_probability(prob, existence, row_anchors, prob_threshold: float = 0.5,
                           exist_threshold: float = 0.5) -> list[LanePoints]:
    """Decode per-channel lane polylines from a (C+1, H, W) probability map.

    At each row anchor the x position is the probability-weighted centroid of
    the above-threshold values (pixel centers at w + 0.5); channels gated off
    by the existence vector, and lanes with fewer than 2 points, are dropped.
    """
    p = np.asarray(prob, dtype=np.float64)
    anchors = [int(y) for y in row_anchors]
    if not anchors:
        raise ValueError("row_anchors must be non-empty")
    if not 0.0 < prob_threshold < 1.0 or not 0.0 < exist_threshold < 1.0:
        raise ValueError("thresholds must lie in (0, 1)")
    h = p.shape[1]
    if any(y < 0 or y >= h for y in anchors):
        raise ValueError("row anchors outside image height")
    lanes = []
    for c in range(1, p.shape[0]):
        if existence is not None and existence[c - 1] < exist_threshold:
            continue
        pts = []
        for y in sorted(set(anchors)):
            row = p[c, y]
            above = row > prob_threshold
            if not above.any():
                continue
            w = np.nonzero(above)[0]
            vals = row[w]
            x = float(((w + 0.5) * vals).sum() / vals.sum())
            pts.append((x, y))
        if len(pts) >= 2:
            lanes.append(LanePoints(np.array(pts), class_id=c))
    return lanes


def label_to_lanes(label, row_anchors, max_lanes: int | None = None) -> list[LanePoints]:
    """Ground-truth lanes from an integer label map: per class, the mean x of
    its pixels at each anchor row (pixel centers at w + 0.5)."""
    lab = np.asarray(label)
    n_classes = int(lab.max()) if max_lanes is None else max_lanes
    lanes = []
    for c in range(1, n_classes + 1):
        pts = []
        for y in sorted(set(int(a) for a in row_anchors)):
            w = np.nonzero(lab[y] == c)[0]
            if len(w):
                pts.append((float(w.mean() + 0.5), y))
        if len(pts) >= 2:
            lanes.append(LanePoints(np.array(pts), class_id=c))
    return lanes


# ------------------------------------------------------------------ tusimple

def _correct_points(pred: LanePoints, gt: LanePoints, tol: float) -> int:
    pxs = pred.xs_at()
    return sum(1 for y, xg in gt.xs_at().items()
               if y in pxs and abs(pxs[y] - xg) < tol)


def tusimple_score(preds, gts, tol: float = TUSIMPLE_POINT_TOL,
                   lane_acc: float = TUSIMPLE_LANE_ACC) -> MetricReport:
    """Point-accuracy protocol over per-image lane lists.

    A point is correct when |x_pred - x_gt| < tol at a shared anchor; each gt
    lane takes its best-matching prediction. A gt lane whose best per-lane
    accuracy falls below ``lane_acc`` is a false negative; predictions beyond
    the matched ones count as false positives. Rates are relative to total
    predicted / gt lane counts.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same images")
    correct_total = 0
    gt_points_total = 0
    tp = fp = fn = 0
    n_pred_lanes = n_gt_lanes = 0
    for img_preds, img_gts in zip(preds, gts):
        n_pred_lanes += len(img_preds)
        n_gt_lanes += len(img_gts)
        matched = 0
        for gt in img_gts:
            counts = [_correct_points(pr, gt, tol) for pr in img_preds]
            best = max(counts) if counts else 0
            correct_total += best
            gt_points_total += len(gt.points)
            if len(gt.points) and best / len(gt.points) >= lane_acc:
                matched += 1
            else:
                fn += 1
        tp += matched
        fp += max(0, len(img_preds) - matched)
    accuracy = correct_total / gt_points_total if gt_points_total else 0.0
    report = MetricReport(
        protocol="tusimple",
        values={"accuracy": accuracy,
                "fp": fp / n_pred_lanes if n_pred_lanes else 0.0,
                "fn": fn / n_gt_lanes if n_gt_lanes else 0.0},
        counts={"tp": tp, "fp": fp, "fn": fn},
    )
    report.check()
    return report


# -------------------------------------------------------------------- masks

def lane_iou(a, b, empty_value: float = 1.0) -> float:
    """Intersection over union of two binary masks.

    ``empty_value`` is returned when both masks are empty (1.0 treats an
    empty prediction of an empty ground truth as correct; matching code that
    must not pair degenerate lanes passes 0.0).
    """
    am = np.asarray(a, dtype=bool)
    bm = np.asarray(b, dtype=bool)
    if am.shape != bm.shape:
        raise ValueError(f"mask shapes differ: {am.shape} vs {bm.shape}")
    union = np.logical_or(am, bm).sum()
    if union == 0:
        return empty_value
    return float(np.logical_and(am, bm).sum() / union)


def _lane_mask(lane, thickness: float, size) -> np.ndarray:
    pts = lane.points if isinstance(lane, LanePoints) else np.asarray(lane, dtype=np.float64)
    return rasterize_polyline(pts, thickness, size)


def match_lanes_by_iou(iou: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """One-to-one matching maximizing (pairs above threshold, total IoU)."""
    if iou.size == 0:
        return []
    qualifies = iou > threshold
    # big constant makes pair count dominate total IoU in the assignment score
    big = iou.sum() + 1.0
    score = np.where(qualifies, big + iou, 0.0)
    rows, cols = linear_sum_assignment(score, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if qualifies[r, c]]


def culane_f1(preds, gts, image_size, thickness: float = CULANE_THICKNESS,
              iou_threshold: float = CULANE_IOU) -> MetricReport:
    """Thick-lane IoU F1 over per-image lane lists.

    Lanes are rasterized at ``thickness`` pixels; pairs with IoU above the
    threshold under the maximizing one-to-one matching are true positives.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same images")
    tp = fp = fn = 0
    for img_preds, img_gts in zip(preds, gts):
        pmasks = [_lane_mask(l, thickness, image_size) for l in img_preds]
        gmasks = [_lane_mask(l, thickness, image_size) for l in img_gts]
        iou = np.array([[lane_iou(pm, gm, empty_value=0.0) for gm in gmasks]
                        for pm in pmasks]).reshape(len(pmasks), len(gmasks))
        pairs = match_lanes_by_iou(iou, iou_threshold)
        tp += len(pairs)
        fp += len(pmasks) - len(pairs)
        fn += len(gmasks) - len(pairs)
    precision, recall, f1 = f1_from_counts(tp, fp, fn)
    report = MetricReport(
        protocol="culane",
        values={"precision": precision, "recall": recall, "f1": f1},
        counts={"tp": tp, "fp": fp, "fn": fn},
    )
    report.check()
    return report


def bdd_score(pred, gt) -> MetricReport:
    """Binary-mask pixel accuracy and lane IoU."""
    pm = np.asarray(pred, dtype=bool)
    gm = np.asarray(gt, dtype=bool)
    if pm.shape != gm.shape:
        raise ValueError(f"mask shapes differ: {pm.shape} vs {gm.shape}")
    report = MetricReport(
        protocol="bdd",
        values={"pixel_accuracy": float((pm == gm).mean()),
                "iou": lane_iou(pm, gm, empty_value=1.0)},
    )
    report.check()
    return report


# ----------------------------------------------------------------- report IO

def format_report(report: MetricReport) -> str:
    lines = [f"protocol = {report.protocol}"]
    lines += [f"{k} = {v:.10g}" for k, v in sorted(report.values.items())]
    lines += [f"{k} = {v}" for k, v in sorted(report.counts.items())]
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, txt_path=None, json_path=None):
    if txt_path is not None:
        with open(txt_path, "w") as fh:
            fh.write(format_report(report))
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({"protocol": report.protocol, "values": report.values,
                       "counts": report.counts}, fh, indent=1, sort_keys=True)
            fh.write("\n")


def read_report_json(path) -> MetricReport:
    with open(path) as fh:
        d = json.load(fh)
    return MetricReport(protocol=d["protocol"], values=d["values"],
                        counts={k: int(v) for k, v in d.get("counts", {}).items()})


# ------------------------------------------------- CULane-style lane files

def write_lane_file(path, lanes):
    """One lane per line as interleaved 'x y' pairs."""
    with open(path, "w") as fh:
        for lane in lanes:
            pts = lane.points if isinstance(lane, LanePoints) else np.asarray(lane)
            fh.write(" ".join(f"{v:.4f}" for v in np.asarray(pts).reshape(-1)) + "\n")


def read_lane_file(path) -> list[np.ndarray]:
    lanes = []
    with open(path) as fh:
        for line in fh:
            vals = [float(v) for v in line.split()]
            if vals:
                lanes.append(np.array(vals).reshape(-1, 2))
    return lanes
