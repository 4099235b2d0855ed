"""Attention U-Net for unobstructed-FoV segmentation.

Encoder: an input double-conv block, then three downsampling blocks
(2x2 average pool + double conv, channels doubling). Decoder: three
upsampling blocks (2x2 stride-2 transpose conv, skip concatenation,
double conv halving channels), then a 1x1 projection and a sigmoid.

Every double-conv stage is conv(3x3, pad 1) -> instance norm -> attention
(spatial, channel, or none) -> ReLU, twice. The attention flavor is
swappable so ablations share one architecture.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..tensor import read_rten_from, rten_bytes
from .layers import (
    AvgPool2d,
    ChannelAttention,
    Conv2d,
    ConvTranspose2d,
    InstanceNorm2d,
    ReLU,
    SpatialAttention,
    sigmoid,
)

ATTENTION_KINDS = ("spatial", "channel", "none")


@dataclass
class ModelConfig:
    in_channels: int = 24
    base_channels: int = 16
    depth: int = 3
    attention: str = "spatial"
    attention_kernel: int = 7
    attention_reduction: int = 4

    def __post_init__(self):
        if self.depth != 3:
            raise ValueError("the architecture is fixed at depth 3")
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
        if self.attention_kernel % 2 == 0:
            raise ValueError("attention kernel must be odd")


def _make_attention(cfg: ModelConfig, channels, rng, dtype, name):
    if cfg.attention == "spatial":
        return SpatialAttention(cfg.attention_kernel, rng=rng, dtype=dtype, name=name)
    if cfg.attention == "channel":
        return ChannelAttention(channels, cfg.attention_reduction, rng=rng,
                                dtype=dtype, name=name)
    return None


class _ConvUnit:
    """conv 3x3 -> instance norm -> attention -> ReLU."""

    def __init__(self, c_in, c_out, cfg, rng, dtype, name):
        self.conv = Conv2d(c_in, c_out, 3, pad=1, rng=rng, dtype=dtype, name=f"{name}.conv")
        self.norm = InstanceNorm2d(c_out, dtype=dtype, name=f"{name}.norm")
        self.att = _make_attention(cfg, c_out, rng, dtype, f"{name}.att")
        self.act = ReLU()

    def parameters(self):
        ps = self.conv.parameters() + self.norm.parameters()
        if self.att is not None:
            ps += self.att.parameters()
        return ps

    def forward(self, x):
        x = self.norm.forward(self.conv.forward(x))
        if self.att is not None:
            x = self.att.forward(x)
        return self.act.forward(x)

    def backward(self, g):
        g = self.act.backward(g)
        if self.att is not None:
            g = self.att.backward(g)
        return self.conv.backward(self.norm.backward(g))


class _DoubleConv:
    def __init__(self, c_in, c_out, cfg, rng, dtype, name):
        self.u1 = _ConvUnit(c_in, c_out, cfg, rng, dtype, f"{name}.0")
        self.u2 = _ConvUnit(c_out, c_out, cfg, rng, dtype, f"{name}.1")

    def parameters(self):
        return self.u1.parameters() + self.u2.parameters()

    def forward(self, x):
        return self.u2.forward(self.u1.forward(x))

    def backward(self, g):
        return self.u1.backward(self.u2.backward(g))


class _Down:
    def __init__(self, c_in, c_out, cfg, rng, dtype, name):
        self.pool = AvgPool2d()
        self.dc = _DoubleConv(c_in, c_out, cfg, rng, dtype, name)

    def parameters(self):
        return self.dc.parameters()

    def forward(self, x):
        return self.dc.forward(self.pool.forward(x))

    def backward(self, g):
        return self.pool.backward(self.dc.backward(g))


class _Up:
    def __init__(self, c_in, c_out, cfg, rng, dtype, name):
        self.tconv = ConvTranspose2d(c_in, c_out, 2, 2, rng=rng, dtype=dtype,
                                     name=f"{name}.tconv")
        self.dc = _DoubleConv(2 * c_out, c_out, cfg, rng, dtype, name)
        self.c_out = c_out

    def parameters(self):
        return self.tconv.parameters() + self.dc.parameters()

    def forward(self, x, skip):
        up = self.tconv.forward(x)
        if up.shape != skip.shape:
            raise ValueError(f"skip shape {skip.shape} != upsampled {up.shape}")
        return self.dc.forward(np.concatenate([up, skip], axis=3))

    def backward(self, g):
        gc = self.dc.backward(g)
        dup, dskip = gc[..., :self.c_out], gc[..., self.c_out:]
        return self.tconv.backward(dup), dskip


class UNet:
    """Full model. Accepts (B, C, H, W) with H = W = 128 and returns the
    per-cell free-FoV probability map (B, H, W)."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(seed)
        b = config.base_channels
        cfg = config
        self.inc = _DoubleConv(config.in_channels, b, cfg, rng, dtype, "inc")
        self.downs = [_Down(b << i, b << (i + 1), cfg, rng, dtype, f"down{i + 1}")
                      for i in range(config.depth)]
        self.ups = [_Up(b << (i + 1), b << i, cfg, rng, dtype, f"up{config.depth - i}")
                    for i in reversed(range(config.depth))]
        self.outc = Conv2d(b, 1, 1, pad=0, rng=rng, dtype=dtype, name="outc")
        self._cache = None

    def parameters(self):
        ps = self.inc.parameters()
        for d in self.downs:
            ps += d.parameters()
        for u in self.ups:
            ps += u.parameters()
        return ps + self.outc.parameters()

    def param_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def forward(self, x_nchw: np.ndarray) -> np.ndarray:
        x = np.asarray(x_nchw)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (B, {self.config.in_channels}, H, W), got {x.shape}")
        if x.shape[2] % (1 << self.config.depth) or x.shape[3] % (1 << self.config.depth):
            raise ValueError("spatial extents must be divisible by 8")
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)
        skips = [self.inc.forward(x)]
        for d in self.downs:
            skips.append(d.forward(skips[-1]))
        y = skips.pop()
        for u in self.ups:
            y = u.forward(y, skips.pop())
        prob = sigmoid(self.outc.forward(y)[..., 0])
        self._cache = prob
        return prob

    def backward(self, dprob: np.ndarray) -> np.ndarray:
        """Backpropagate d(loss)/d(probability map); returns d(loss)/d(input),
        shaped like the (B, C, H, W) input."""
        prob = self._cache
        g = (dprob * prob * (1.0 - prob)).astype(self.dtype)[..., None]
        g = self.outc.backward(g)
        dskips = []  # skip grads from the shallowest encoder level up
        for u in reversed(self.ups):
            g, dskip = u.backward(g)
            dskips.append(dskip)
        for d, dskip in zip(reversed(self.downs), reversed(dskips)):
            g = d.backward(g) + dskip
        dx = self.inc.backward(g)
        return dx.transpose(0, 3, 1, 2)


# ----------------------------------------------------------------------
# Checkpoints: u32 header length + JSON header + one RTEN record per param
# ----------------------------------------------------------------------

def save_checkpoint(path, model: UNet, epoch: int = 0, metrics: dict | None = None) -> None:
    params = model.parameters()
    header = {
        "format": "radarfov-checkpoint",
        "version": 1,
        "config": asdict(model.config),
        "epoch": int(epoch),
        "metrics": metrics or {},
        "params": [p.name for p in params],
    }
    blob = json.dumps(header).encode()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(rten_bytes(p.value.astype(np.float64)))
    os.replace(tmp, path)


def load_checkpoint(path, dtype=np.float32):
    """Rebuild the model from a checkpoint; returns (model, header)."""
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("format") != "radarfov-checkpoint":
            raise ValueError("not a radarfov checkpoint")
        model = UNet(ModelConfig(**header["config"]), dtype=dtype)
        params = model.parameters()
        if [p.name for p in params] != header["params"]:
            raise ValueError("checkpoint parameter list does not match the model")
        for p in params:
            value = read_rten_from(fh)
            if value.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.value[...] = value.astype(model.dtype)
    return model, header
