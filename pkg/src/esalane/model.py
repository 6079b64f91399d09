"""Tiny encoder-decoder segmentation network with existence branch and
attention attachment.

Encoder: 4 stride-2 3x3 conv stages. Decoder: 4 (nearest-2x upsample + 3x3
conv) stages back to input resolution, then a 1x1 projection to C+1 logits.
The existence head global-pools the deepest tap into C sigmoid outputs. The
attention encoders read the 4 taps during training only; the inference path
never builds them, so inference cost and parameter count match a plain
baseline.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import attention
from .attention import EncoderArch, EsaEncoder, _he_conv, _he_linear

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (32, 64)  # (H, W), both divisible by 16
    lanes: int = 4
    stage_widths: tuple[int, int, int, int] = (8, 16, 32, 64)
    use_existence: bool = True
    esa: frozenset = frozenset()  # subset of {"horizontal", "vertical"}
    seed: int = 0
    esa_arch: EncoderArch = field(default_factory=EncoderArch)

    def __post_init__(self):
        h, w = self.input_size
        if h % 16 or w % 16 or h <= 0 or w <= 0:
            raise ValueError(f"input size {self.input_size} must be positive and divisible by 16")
        if self.lanes < 1:
            raise ValueError("need at least one lane class")
        if len(self.stage_widths) != 4 or any(s < 1 for s in self.stage_widths):
            raise ValueError("stage_widths must be 4 positive integers")
        bad = set(self.esa) - set(attention.DIRECTIONS)
        if bad:
            raise ValueError(f"unknown attention directions {sorted(bad)}")
        object.__setattr__(self, "esa", frozenset(self.esa))
        object.__setattr__(self, "stage_widths", tuple(int(s) for s in self.stage_widths))
        object.__setattr__(self, "input_size", (int(h), int(w)))


@dataclass
class ForwardOutput:
    logits: ad.Tensor                      # (N, C+1, H, W)
    existence: ad.Tensor | None            # (N, C) in (0,1), or None
    taps: tuple                            # 4 encoder feature tensors
    esa_matrices: dict | None              # direction -> EsaMatrix (training only)
    confidences: dict | None = None        # direction -> ConfidenceVector


@dataclass
class InferOutput:
    probabilities: np.ndarray              # (N, C+1, H, W) softmaxed
    existence: np.ndarray | None           # (N, C) or None
    logits: np.ndarray                     # (N, C+1, H, W)


class LaneModel:
    """Model handle: immutable during forward passes, updated by the trainer."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params: dict[str, ad.Tensor] = {}
        root = np.random.SeedSequence(cfg.seed)
        main_ss, esa_h_ss, esa_v_ss = root.spawn(3)
        rng = np.random.default_rng(main_ss)

        w1, w2, w3, w4 = cfg.stage_widths
        enc_plan = [("enc1", 3, w1), ("enc2", w1, w2), ("enc3", w2, w3), ("enc4", w3, w4)]
        for name, cin, cout in enc_plan:
            self._add(f"{name}.weight", _he_conv(rng, cout, cin, 3))
            self._add(f"{name}.bias", np.zeros(cout))
        dec_plan = [("dec1", w4, w3), ("dec2", w3, w2), ("dec3", w2, w1), ("dec4", w1, w1)]
        for name, cin, cout in dec_plan:
            self._add(f"{name}.weight", _he_conv(rng, cout, cin, 3))
            self._add(f"{name}.bias", np.zeros(cout))
        self._add("head.weight", _he_conv(rng, cfg.lanes + 1, w1, 1))
        self._add("head.bias", np.zeros(cfg.lanes + 1))
        if cfg.use_existence:
            self._add("exist.weight", _he_linear(rng, w4, cfg.lanes))
            self._add("exist.bias", np.zeros(cfg.lanes))

        h, w = cfg.input_size
        tap_channels = sum(cfg.stage_widths)
        self.esa_encoders: dict[str, EsaEncoder] = {}
        for direction, ss in ((attention.HORIZONTAL, esa_h_ss), (attention.VERTICAL, esa_v_ss)):
            if direction in cfg.esa:
                extent = h if direction == attention.HORIZONTAL else w
                enc = EsaEncoder(tap_channels, cfg.lanes, extent, direction,
                                 arch=cfg.esa_arch, rng=np.random.default_rng(ss))
                self.esa_encoders[direction] = enc
                for pname, tensor in enc.params.items():
                    self.params[f"esa_{direction}.{pname}"] = tensor

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = ad.Tensor(value)

    # ------------------------------------------------------------------ paths

    def _backbone(self, images: ad.Tensor):
        p = self.params
        x = images
        taps = []
        for i in range(1, 5):
            x = ad.relu(ad.conv2d(x, p[f"enc{i}.weight"], p[f"enc{i}.bias"], stride=2, pad=1))
            taps.append(x)
        d = taps[-1]
        for i in range(1, 5):
            d = ad.relu(ad.conv2d(ad.upsample2x(d), p[f"dec{i}.weight"], p[f"dec{i}.bias"],
                                  stride=1, pad=1))
        logits = ad.conv2d(d, p["head.weight"], p["head.bias"], stride=1, pad=0)
        existence = None
        if self.cfg.use_existence:
            pooled = ad.tmean(taps[-1], axis=(2, 3))
            existence = ad.sigmoid(ad.add(ad.matmul(pooled, p["exist.weight"]), p["exist.bias"]))
        return logits, existence, tuple(taps)

    def train_forward(self, images) -> ForwardOutput:
        x = self._check_images(images)
        logits, existence, taps = self._backbone(x)
        matrices = None
        confidences = None
        if self.esa_encoders:
            h, w = self.cfg.input_size
            stack = attention.build_esa_input(taps)
            matrices, confidences = {}, {}
            for direction, enc in self.esa_encoders.items():
                conf = enc.forward(stack)
                confidences[direction] = conf
                matrices[direction] = attention.expand_confidence(conf, h, w)
        return ForwardOutput(logits, existence, taps, matrices, confidences)

    def infer_forward(self, images) -> InferOutput:
        """Encoder + decoder + existence head only; attention is never built."""
        with ad.no_grad():
            x = self._check_images(images)
            logits, existence, _ = self._backbone(x)
            probs = ad.softmax(logits, axis=-3)
        return InferOutput(probs.data, None if existence is None else existence.data,
                           logits.data)

    def _check_images(self, images) -> ad.Tensor:
        x = ad.as_tensor(images)
        if x.ndim == 3:
            x = ad.reshape(x, (1,) + x.shape)
        h, w = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (h, w):
            raise ValueError(f"expected images (N, 3, {h}, {w}), got {x.shape}")
        return x

    # ------------------------------------------------------------ bookkeeping

    def inference_param_names(self) -> list[str]:
        return [n for n in self.params if not n.startswith("esa_")]

    def parameter_count(self, graph: str = "training") -> int:
        if graph == "training":
            return sum(t.data.size for t in self.params.values())
        if graph == "inference":
            return sum(self.params[n].data.size for n in self.inference_param_names())
        raise ValueError(f"unknown graph {graph!r} (use training|inference)")

    def esa_forward_calls(self) -> int:
        return sum(enc.forward_calls for enc in self.esa_encoders.values())

    def parameter_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


def build_model(cfg: ModelConfig) -> LaneModel:
    return LaneModel(cfg)


def parameter_count(model: LaneModel, graph: str = "training") -> int:
    return model.parameter_count(graph)


# ---------------------------------------------------------------- checkpoints

def _config_to_json(cfg: ModelConfig) -> dict:
    return {
        "input_size": list(cfg.input_size),
        "lanes": cfg.lanes,
        "stage_widths": list(cfg.stage_widths),
        "use_existence": cfg.use_existence,
        "esa": sorted(cfg.esa),
        "seed": cfg.seed,
        "esa_arch": {"conv_widths": list(cfg.esa_arch.conv_widths),
                     "hidden": cfg.esa_arch.hidden},
    }


def _config_from_json(d: dict) -> ModelConfig:
    arch = d.get("esa_arch", {})
    return ModelConfig(
        input_size=tuple(d["input_size"]),
        lanes=d["lanes"],
        stage_widths=tuple(d["stage_widths"]),
        use_existence=d["use_existence"],
        esa=frozenset(d["esa"]),
        seed=d["seed"],
        esa_arch=EncoderArch(conv_widths=tuple(arch.get("conv_widths", (32, 64, 128))),
                             hidden=arch.get("hidden", 256)),
    )


def save_checkpoint(model: LaneModel, path, step: int = 0):
    """Single zip archive: manifest.json + raw little-endian f64 arrays
    keyed by layer path."""
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": _config_to_json(model.cfg),
        "seed": model.cfg.seed,
        "step": int(step),
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in model.params.items()],
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("manifest.json")
        zf.writestr(info, json.dumps(manifest, indent=1, sort_keys=True))
        for name, t in model.params.items():
            zf.writestr(zipfile.ZipInfo(f"params/{name}.f64"),
                        np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[LaneModel, int]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
        model = LaneModel(_config_from_json(manifest["config"]))
        for entry in manifest["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in model.params:
                raise ValueError(f"checkpoint parameter {name!r} not present in model")
            raw = np.frombuffer(zf.read(f"params/{name}.f64"), dtype="<f8")
            model.params[name].data = raw.reshape(shape).astype(np.float64)
    return model, int(manifest["step"])
