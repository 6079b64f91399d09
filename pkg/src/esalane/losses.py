"""Training objectives: cross-entropy segmentation, existence BCE, the
attention-weighted MSE with its mass-anchoring regularizer, and the combined
objective. Includes the finite-difference gradient oracle used everywhere.

The weighted loss reduces the squared error between the attention-weighted
prediction and the attention-weighted ground truth, then anchors the mean of
the weighted prediction to a fraction ``upsilon`` of the mean lane mass so
the attention cannot collapse to all zeros.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import _tensor, _values

log = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Objective coefficients: total = alpha*seg + beta*exist + gamma*esa,
    with esa = mse + lam*|mean(weighted pred) - upsilon*mean(lane gt)|."""

    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 50.0
    lam: float = 1.0
    upsilon: float = 0.8

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.lam, self.upsilon)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("loss weights must be finite and non-negative")
        if not 0.0 <= self.upsilon <= 1.0:
            raise ValueError("upsilon must lie in [0, 1]")


@dataclass
class LossReport:
    """Per-term values of one objective evaluation (absent terms are 0)."""

    seg: float = 0.0
    exist: float = 0.0
    esa_h: float = 0.0
    esa_v: float = 0.0
    total: float = 0.0

    def check_total(self, w: LossWeights, tol: float = 1e-9):
        expected = w.alpha * self.seg + w.beta * self.exist + w.gamma * (self.esa_h + self.esa_v)
        if abs(expected - self.total) > tol:
            raise AssertionError(f"loss total {self.total} != decomposition {expected}")


def softmax_over_channels(logits) -> ad.Tensor:
    """Stabilized per-pixel softmax across the channel axis of (...,K,H,W)."""
    t = _tensor(logits)
    if not np.isfinite(t.data).all():
        raise ValueError("logits contain non-finite values")
    return ad.softmax(t, axis=-3)


def spatial_mean(values) -> ad.Tensor:
    """Arithmetic mean over every element of a map."""
    t = _tensor(values)
    if t.size == 0:
        raise ValueError("cannot average an empty map")
    return ad.tmean(t)


def onehot_lane_channels(label, lanes: int) -> np.ndarray:
    """One-hot lane channels of an integer label map; background yields none.

    (H, W) -> (C, H, W) and (N, H, W) -> (N, C, H, W), channel c-1 marks
    label value c.
    """
    lab = np.asarray(label)
    if lab.size and (lab.min() < 0 or lab.max() > lanes):
        raise ValueError(f"label values must lie in 0..{lanes}")
    classes = np.arange(1, lanes + 1)
    if lab.ndim == 2:
        return (lab[None, :, :] == classes[:, None, None]).astype(np.float64)
    if lab.ndim == 3:
        return (lab[:, None, :, :] == classes[None, :, None, None]).astype(np.float64)
    raise ValueError("label must be (H, W) or (N, H, W)")


def segmentation_loss(logits, label, class_weights=None) -> ad.Tensor:
    """Mean cross entropy of (...,C+1,H,W) logits against integer labels."""
    t = _tensor(logits)
    lab = np.asarray(label)
    if lab.shape != t.shape[:-3] + t.shape[-2:]:
        raise ValueError(f"logits {t.shape} and label {lab.shape} disagree")
    return ad.cross_entropy(t, lab, class_weights=class_weights)


def existence_loss(pred, gt) -> ad.Tensor:
    """Mean binary cross entropy over per-lane existence probabilities."""
    p = _tensor(pred)
    t = np.asarray(gt, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"existence shapes differ: {p.shape} vs {t.shape}")
    if p.data.min() <= 0.0 or p.data.max() >= 1.0:
        log.warning("existence predictions outside (0, 1); clamping to [%g, %g]",
                    PROB_EPS, 1.0 - PROB_EPS)
    p = ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    ll = ad.add(ad.mul(t, ad.log(p)), ad.mul(1.0 - t, ad.log(ad.sub(1.0, p))))
    return ad.neg(ad.tmean(ll))


def esa_loss(prob_map, matrix, label, w: LossWeights) -> ad.Tensor:
    """Weighted MSE against weighted ground truth plus the anchoring term.

    mse  = mean over C*H*W (batched: N*C*H*W) of (M*(P_lane - onehot))^2
    reg  = |mean(M*P_lane) - upsilon * mean(onehot)|
    loss = mse + lam * reg
    """
    p = _tensor(prob_map)
    m = _tensor(matrix)
    lanes = m.shape[-3]
    if p.shape[-3] != lanes + 1 or p.shape[-2:] != m.shape[-2:]:
        raise ValueError(f"probability map {p.shape} does not pair with matrix {m.shape}")
    gt = onehot_lane_channels(label, lanes)
    if gt.shape != m.shape:
        raise ValueError(f"label one-hot {gt.shape} does not match matrix {m.shape}")
    e_pred = ad.mul(p[..., 1:, :, :], m)
    e_gt = ad.mul(ad.as_tensor(gt), m)
    diff = ad.sub(e_pred, e_gt)
    mse = ad.tmean(ad.mul(diff, diff))
    anchor = ad.absolute(ad.sub(ad.tmean(e_pred), w.upsilon * float(gt.mean())))
    return ad.add(mse, ad.mul(anchor, w.lam))


def combined_esa_loss(esa_h=None, esa_v=None):
    """Sum of the attention losses that are present."""
    if esa_h is None and esa_v is None:
        raise ValueError("at least one attention loss term must be present")
    if esa_h is None:
        return esa_v
    if esa_v is None:
        return esa_h
    return ad.add(_tensor(esa_h), _tensor(esa_v))


def total_loss(seg, exist=None, esa_h=None, esa_v=None,
               w: LossWeights = LossWeights()) -> tuple[ad.Tensor, LossReport]:
    """Weighted sum of the enabled terms plus a per-term report."""
    total = ad.mul(_tensor(seg), w.alpha)
    report = LossReport(seg=float(_values(seg)))
    if exist is not None:
        total = ad.add(total, ad.mul(_tensor(exist), w.beta))
        report.exist = float(_values(exist))
    if esa_h is not None or esa_v is not None:
        total = ad.add(total, ad.mul(combined_esa_loss(esa_h, esa_v), w.gamma))
        report.esa_h = float(_values(esa_h)) if esa_h is not None else 0.0
        report.esa_v = float(_values(esa_v)) if esa_v is not None else 0.0
    report.total = float(total.data)
    return total, report


def finite_difference_gradient(f, params: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    ``f`` receives an array of ``params.shape`` and returns a float; the
    estimate is (f(p + eps*e_i) - f(p - eps*e_i)) / (2*eps) per coordinate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(p)
    flat = p.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(p)
        flat[i] = orig - eps
        lo = f(p)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"function not finite near coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative disagreement between two gradient estimates."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
