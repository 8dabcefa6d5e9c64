"""Attention-gated encoder-decoder network for confidence-map regression.

The encoder is a 13-conv backbone (5 blocks of 2,2,3,3,3 convs with 2x2
max pooling between blocks, batchnorm + relu after every conv).  Two
structurally identical decoders consume the block outputs: each decoder
block bilinearly upsamples, concatenates the matching encoder tap, and
applies 1x1 then 3x3 convs.  The attention decoder ends in a 1x1 conv,
batchnorm, and sigmoid, producing a per-pixel gate in (0,1).  The
confidence decoder's features are multiplied by that gate and reduced by
a final 1x1 conv with no activation, so confidence values are unbounded
(consumers must not assume [0,1]).

Output maps are full input resolution; H and W must be divisible by 16
(four pooling stages).

Weight container format: a single file holding one compact JSON manifest
line (names, shapes, dtype, trainable flags, metadata including the
input-normalization constants) terminated by a newline, followed by each
tensor's raw little-endian float32 payload in manifest order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import NDVI_SCALE, NIR_OFFSET, RGB_MEANS
from .errors import WeightsFormatError
from .tensor import Tensor

WEIGHTS_MAGIC = "canopy-weights"
FORMAT_VERSION = 1
BN_MOMENTUM = 0.99
BN_EPS = 1e-5

# channels per conv, per block
BACKBONE_PLAN = [[64, 64], [128, 128], [256, 256, 256], [512, 512, 512], [512, 512, 512]]
DECODER_PLAN = [[256, 256], [128, 128], [64, 64, 32], [32, 32, 32]]
# kernel sizes within each decoder block (first conv is 1x1)
DECODER_KERNELS = [[1, 3], [1, 3], [1, 3, 3], [1, 3, 3]]


def scaled_plan(plan, width_scale, floor=4):
    if width_scale == 1.0:
        return [list(b) for b in plan]
    return [[max(floor, int(round(c * width_scale))) for c in b] for b in plan]


@dataclass
class ModelParams:
    """Ordered named-tensor container plus the metadata needed to run it."""

    tensors: dict[str, Tensor]
    meta: dict

    def trainable(self):
        return [(n, t) for n, t in self.tensors.items() if t.requires_grad]

    @property
    def n_trainable(self):
        return sum(t.data.size for _, t in self.trainable())

    @property
    def n_total(self):
        return sum(t.data.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        tensors = {}
        for n, t in self.tensors.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad, name=n)
            tensors[n] = c
        return ModelParams(tensors, json.loads(json.dumps(self.meta)))


@dataclass
class ModelOutput:
    confidence: Tensor  # (N, 1, H, W), unbounded
    attention: Tensor  # (N, 1, H, W), in (0, 1)


def _add_conv(tensors, rng, name, cin, cout, k, with_bn=True):
    fan_in = cin * k * k
    fan_out = cout * k * k
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    w = rng.uniform(-limit, limit, size=(cout, cin, k, k)).astype(np.float32)
    tensors[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
    tensors[f"{name}.b"] = Tensor(np.zeros(cout, np.float32), requires_grad=True, name=f"{name}.b")
    if with_bn:
        tensors[f"{name}.bn.gamma"] = Tensor(np.ones(cout, np.float32), requires_grad=True)
        tensors[f"{name}.bn.beta"] = Tensor(np.zeros(cout, np.float32), requires_grad=True)
        tensors[f"{name}.bn.mean"] = Tensor(np.zeros(cout, np.float32), requires_grad=False)
        tensors[f"{name}.bn.var"] = Tensor(np.ones(cout, np.float32), requires_grad=False)


def build_model(seed: int, width_scale: float = 1.0, input_channels: int = 5) -> ModelParams:
    """Construct freshly initialized parameters.

    Conv weights are Glorot-uniform from the given seed, biases zero,
    batchnorm gamma=1 / beta=0 with running mean 0 and variance 1.  The
    same seed always yields bit-identical parameters.  width_scale < 1
    shrinks every channel count proportionally (floor of 4) for
    desk-scale training; 1.0 is the full published plan.
    """
    rng = np.random.default_rng(seed)
    bplan = scaled_plan(BACKBONE_PLAN, width_scale)
    dplan = scaled_plan(DECODER_PLAN, width_scale)
    tensors: dict[str, Tensor] = {}

    cin = input_channels
    for bi, block in enumerate(bplan, start=1):
        for ci_, cout in enumerate(block, start=1):
            _add_conv(tensors, rng, f"backbone.block{bi}.conv{ci_}", cin, cout, 3)
            cin = cout

    taps = [bplan[0][-1], bplan[1][-1], bplan[2][-1], bplan[3][-1], bplan[4][-1]]
    for head in ("attention", "confidence"):
        x_ch = taps[4]
        skip = [taps[3], taps[2], taps[1], taps[0]]
        for bi, (block, kernels) in enumerate(zip(dplan, DECODER_KERNELS), start=1):
            cin = x_ch + skip[bi - 1]
            for ci_, (cout, k) in enumerate(zip(block, kernels), start=1):
                _add_conv(tensors, rng, f"{head}.block{bi}.conv{ci_}", cin, cout, k)
                cin = cout
            x_ch = block[-1]
        _add_conv(tensors, rng, f"{head}.head.conv", x_ch, 1, 1, with_bn=(head == "attention"))

    meta = {
        "format_version": FORMAT_VERSION,
        "input_channels": input_channels,
        "rgb_means": list(RGB_MEANS),
        "nir_offset": NIR_OFFSET,
        "ndvi_scale": NDVI_SCALE,
        "bn_momentum": BN_MOMENTUM,
        "bn_eps": BN_EPS,
        "width_scale": width_scale,
        "backbone_plan": bplan,
        "decoder_plan": dplan,
    }
    return ModelParams(tensors, meta)


def _cbr(params: ModelParams, name: str, x: Tensor, training: bool) -> Tensor:
    t = params.tensors
    x = T.conv2d(x, t[f"{name}.w"], t[f"{name}.b"])
    x = T.batchnorm(
        x,
        t[f"{name}.bn.gamma"],
        t[f"{name}.bn.beta"],
        t[f"{name}.bn.mean"].data,
        t[f"{name}.bn.var"].data,
        training=training,
        momentum=params.meta["bn_momentum"],
        eps=params.meta["bn_eps"],
    )
    return T.relu(x)


def _backbone(params: ModelParams, x: Tensor, training: bool):
    plan = params.meta["backbone_plan"]
    taps = []
    for bi in range(1, 6):
        if bi > 1:
            x = T.maxpool2(x)
        for ci in range(1, len(plan[bi - 1]) + 1):
            x = _cbr(params, f"backbone.block{bi}.conv{ci}", x, training)
        taps.append(x)
    return taps  # outputs of blocks 1..5


def _decoder(params: ModelParams, head: str, taps, training: bool) -> Tensor:
    c12, c22, c33, c43, c53 = taps
    skips = [c43, c33, c22, c12]
    plan = params.meta["decoder_plan"]
    x = c53
    for bi in range(1, 5):
        x = T.concat_channels(T.upsample2(x), skips[bi - 1])
        for ci in range(1, len(plan[bi - 1]) + 1):
            x = _cbr(params, f"{head}.block{bi}.conv{ci}", x, training)
    return x


def forward(params: ModelParams, x, mode: str = "infer") -> ModelOutput:
    """Run the network.  x: (N, 5, H, W) with H, W divisible by 16.

    mode="train" uses batch statistics and updates batchnorm running
    buffers in place; mode="infer" is a pure function of (params, x).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 4:
        raise ValueError("forward expects input of shape (N, C, H, W)")
    n, c, h, w = x.data.shape
    want = params.meta["input_channels"]
    if c != want:
        raise ValueError(f"forward expects {want} input channels, got {c}")
    if h % 16 or w % 16:
        raise ValueError(
            f"input spatial dims must be divisible by 16 (four pooling stages), got {h}x{w}"
        )

    training = mode == "train"
    taps = _backbone(params, x, training)

    att = _decoder(params, "attention", taps, training)
    t = params.tensors
    att = T.conv2d(att, t["attention.head.conv.w"], t["attention.head.conv.b"])
    att = T.batchnorm(
        att,
        t["attention.head.conv.bn.gamma"],
        t["attention.head.conv.bn.beta"],
        t["attention.head.conv.bn.mean"].data,
        t["attention.head.conv.bn.var"].data,
        training=training,
        momentum=params.meta["bn_momentum"],
        eps=params.meta["bn_eps"],
    )
    attention_map = T.sigmoid(att)

    conf = _decoder(params, "confidence", taps, training)
    gated = T.multiply(attention_map, conf)
    confidence = T.conv2d(gated, t["confidence.head.conv.w"], t["confidence.head.conv.b"])
    return ModelOutput(confidence=confidence, attention=attention_map)


# ---------------------------------------------------------------------------
# weight container


def save_weights(params: ModelParams, path):
    entries = []
    for name, t in params.tensors.items():
        if t.data.dtype != np.float32:
            raise ValueError(f"weight container stores float32 only; {name} is {t.data.dtype}")
        entries.append(
            {
                "name": name,
                "shape": list(t.data.shape),
                "dtype": "float32",
                "trainable": bool(t.requires_grad),
            }
        )
    manifest = {
        "magic": WEIGHTS_MAGIC,
        "format_version": FORMAT_VERSION,
        "meta": params.meta,
        "tensors": entries,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        for _, t in params.tensors.items():
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_weights(path) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise WeightsFormatError("weight container has no manifest line")
    try:
        manifest = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightsFormatError(f"bad weight manifest: {e}") from e
    if manifest.get("magic") != WEIGHTS_MAGIC:
        raise WeightsFormatError("not a weight container (magic mismatch)")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise WeightsFormatError(f"unsupported weight format version {manifest.get('format_version')}")

    payload = blob[nl + 1 :]
    tensors: dict[str, Tensor] = {}
    off = 0
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        nbytes = int(np.prod(shape)) * 4
        if off + nbytes > len(payload):
            raise WeightsFormatError(f"truncated payload at tensor {e['name']}")
        arr = np.frombuffer(payload[off : off + nbytes], dtype="<f4").reshape(shape).copy()
        tensors[e["name"]] = Tensor(arr, requires_grad=e["trainable"], name=e["name"])
        off += nbytes
    if off != len(payload):
        raise WeightsFormatError("weight payload longer than manifest describes")
    return ModelParams(tensors, manifest["meta"])
