"""Expanded self-attention core: confidence vectors, directional expansion,
weighted maps, and the confidence encoder.

A confidence vector holds one value per image row (horizontal flavor) or per
column (vertical flavor) and per lane channel. Expanding it across the other
axis yields a full-size attention matrix that is row-constant (horizontal)
or column-constant (vertical). The matrices weight the lane channels of a
probability map during training only; inference never touches this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
DIRECTIONS = (HORIZONTAL, VERTICAL)

# Pre-sigmoid clamp keeping encoder outputs strictly inside (0, 1) in float64.
_LOGIT_CLAMP = 30.0


def _values(x) -> np.ndarray:
    if isinstance(x, (ConfidenceVector, EsaMatrix, WeightedMap, ProbabilityMap)):
        x = x.values
    return x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)


def _tensor(x) -> ad.Tensor:
    if isinstance(x, (ConfidenceVector, EsaMatrix, WeightedMap, ProbabilityMap)):
        x = x.values
    return ad.as_tensor(x)


@dataclass
class ConfidenceVector:
    """Per-row (horizontal) or per-column (vertical) lane confidences.

    ``values`` is (C, L) or batched (N, C, L) where L is the image height for
    the horizontal direction and the width for the vertical one. Entries are
    strictly inside (0, 1).
    """

    direction: str
    values: object  # ndarray or Tensor

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        v = _values(self)
        if v.ndim not in (2, 3):
            raise ValueError("confidence values must be (C, L) or (N, C, L)")
        if v.size and (v.min() <= 0.0 or v.max() >= 1.0):
            raise ValueError("confidence values must lie strictly in (0, 1)")

    @property
    def array(self) -> np.ndarray:
        return _values(self)


@dataclass
class EsaMatrix:
    """Full-size expansion of a confidence vector: (C, H, W) or (N, C, H, W).

    Horizontal matrices are constant along each row, vertical ones along each
    column; all entries lie strictly in (0, 1).
    """

    direction: str
    values: object

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        v = _values(self)
        if v.ndim not in (3, 4):
            raise ValueError("matrix values must be (C, H, W) or (N, C, H, W)")

    @property
    def array(self) -> np.ndarray:
        return _values(self)

    def check_invariants(self):
        v = _values(self)
        if v.min() <= 0.0 or v.max() >= 1.0:
            raise ValueError("matrix entries must lie strictly in (0, 1)")
        axis = -1 if self.direction == HORIZONTAL else -2
        spread = v.max(axis=axis) - v.min(axis=axis)
        if spread.max() != 0.0:
            raise ValueError(f"{self.direction} matrix is not constant along its expansion axis")


@dataclass
class ProbabilityMap:
    """Channel-softmaxed scores: (C+1, H, W) or (N, C+1, H, W), channel 0 = background."""

    values: object

    def __post_init__(self):
        v = _values(self)
        if v.ndim not in (3, 4):
            raise ValueError("probability map must be (C+1, H, W) or (N, C+1, H, W)")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        sums = v.sum(axis=-3)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("per-pixel channel probabilities must sum to 1")

    @property
    def array(self) -> np.ndarray:
        return _values(self)


@dataclass
class WeightedMap:
    """Lane channels of a probability map after attention weighting: (C, H, W)."""

    values: object

    @property
    def array(self) -> np.ndarray:
        return _values(self)


def expand_values(values, direction: str, extent: int) -> ad.Tensor:
    """Raw directional expansion (no range checks; linear, differentiable).

    Horizontal: (..., C, H) -> (..., C, H, extent) by duplicating each row
    value across ``extent`` columns. Vertical: (..., C, W) ->
    (..., C, extent, W) by duplicating each column value across rows.
    """
    if extent < 1:
        raise ValueError("expansion extent must be >= 1")
    t = _tensor(values)
    if direction == HORIZONTAL:
        return ad.broadcast_new_axis(t, axis=t.ndim, size=extent)
    if direction == VERTICAL:
        return ad.broadcast_new_axis(t, axis=t.ndim - 1, size=extent)
    raise ValueError(f"unknown direction {direction!r}")


def expand_horizontal(conf: ConfidenceVector, width: int) -> EsaMatrix:
    """Duplicate per-row confidences across ``width`` columns."""
    if conf.direction != HORIZONTAL:
        raise ValueError(f"expected a horizontal confidence vector, got {conf.direction}")
    return EsaMatrix(HORIZONTAL, expand_values(conf.values, HORIZONTAL, width))


def expand_vertical(conf: ConfidenceVector, height: int) -> EsaMatrix:
    """Duplicate per-column confidences across ``height`` rows."""
    if conf.direction != VERTICAL:
        raise ValueError(f"expected a vertical confidence vector, got {conf.direction}")
    return EsaMatrix(VERTICAL, expand_values(conf.values, VERTICAL, height))


def expand_confidence(conf: ConfidenceVector, height: int, width: int) -> EsaMatrix:
    if conf.direction == HORIZONTAL:
        return expand_horizontal(conf, width)
    return expand_vertical(conf, height)


def apply_esa_weight(prob_map, matrix) -> WeightedMap:
    """Element-wise product of the lane channels (background dropped).

    ``prob_map`` has C+1 channels, ``matrix`` C channels, equal spatial size.
    Never increases any lane probability because matrix entries are < 1.
    """
    p = _tensor(prob_map)
    m = _tensor(matrix)
    if p.shape[-2:] != m.shape[-2:]:
        raise ValueError(f"spatial shapes differ: {p.shape} vs {m.shape}")
    if p.shape[-3] != m.shape[-3] + 1:
        raise ValueError(
            f"probability map must have one more channel than the matrix "
            f"({p.shape[-3]} vs {m.shape[-3]})")
    lanes = p[..., 1:, :, :]
    return WeightedMap(ad.mul(lanes, m))


def build_esa_input(taps) -> ad.Tensor:
    """Resize 4 feature taps (bilinear) to the smallest tap's resolution and
    concatenate along the channel axis."""
    if len(taps) != 4:
        raise ValueError(f"expected exactly 4 feature taps, got {len(taps)}")
    ts = [_tensor(t) for t in taps]
    target = min(((t.shape[-2], t.shape[-1]) for t in ts), key=lambda hw: hw[0] * hw[1])
    resized = [t if (t.shape[-2], t.shape[-1]) == target else ad.resize_bilinear(t, target)
               for t in ts]
    return ad.concat(resized, axis=-3)


@dataclass(frozen=True)
class EncoderArch:
    """Confidence-encoder hyperparameters (conv widths, then one hidden FC)."""

    conv_widths: tuple[int, ...] = (32, 64, 128)
    hidden: int = 256


class EsaEncoder:
    """Conv + fully connected encoder mapping a feature stack to confidences.

    Three stride-2 3x3 conv blocks with ReLU, global average pooling, one
    hidden FC layer, and a final FC to lanes*extent followed by a sigmoid.
    ``forward_calls`` counts invocations so tests can prove the inference
    path never enters this module.
    """

    def __init__(self, in_channels: int, lanes: int, extent: int, direction: str,
                 arch: EncoderArch = EncoderArch(), rng: np.random.Generator | None = None):
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        if extent <= 0:
            raise ValueError("extent must be positive")
        self.direction = direction
        self.lanes = lanes
        self.extent = extent
        self.arch = arch
        self.forward_calls = 0
        rng = rng or np.random.default_rng(0)
        self.params: dict[str, ad.Tensor] = {}
        cin = in_channels
        for i, cout in enumerate(arch.conv_widths, start=1):
            self._add(f"conv{i}.weight", _he_conv(rng, cout, cin, 3))
            self._add(f"conv{i}.bias", np.zeros(cout))
            cin = cout
        self._add("fc1.weight", _he_linear(rng, cin, arch.hidden))
        self._add("fc1.bias", np.zeros(arch.hidden))
        self._add("fc2.weight", _he_linear(rng, arch.hidden, lanes * extent))
        self._add("fc2.bias", np.zeros(lanes * extent))

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = ad.Tensor(value)

    def forward(self, stack) -> ConfidenceVector:
        self.forward_calls += 1
        x = _tensor(stack)
        squeeze = x.ndim == 3
        if squeeze:
            x = ad.reshape(x, (1,) + x.shape)
        p = self.params
        for i in range(1, len(self.arch.conv_widths) + 1):
            x = ad.relu(ad.conv2d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=2, pad=1))
        x = ad.tmean(x, axis=(2, 3))
        x = ad.relu(ad.add(ad.matmul(x, p["fc1.weight"]), p["fc1.bias"]))
        x = ad.add(ad.matmul(x, p["fc2.weight"]), p["fc2.bias"])
        x = ad.sigmoid(ad.clip(x, -_LOGIT_CLAMP, _LOGIT_CLAMP))
        x = ad.reshape(x, (x.shape[0], self.lanes, self.extent))
        if squeeze:
            x = ad.reshape(x, (self.lanes, self.extent))
        return ConfidenceVector(self.direction, x)

    __call__ = forward

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.params.values())


def esa_encoder_forward(encoder: EsaEncoder, stack) -> ConfidenceVector:
    return encoder.forward(stack)


def _he_conv(rng, cout, cin, k):
    fan_in = cin * k * k
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))


def _he_linear(rng, cin, cout):
    return rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cout))
