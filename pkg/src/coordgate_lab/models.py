"""Declarative model specs and the builders for every model family.

Families (``ModelSpec.kind``):

* ``cnn``   CNN(L,k,c): L convolutions with c channels, last one 1 channel.
* ``ccnn``  cCNN(L,k,c): as ``cnn`` with coordinates concatenated before every conv.
* ``cg``    CG(L,k,c,p): L-conv block with c output channels, gated by a
  p-layer coordinate encoder, then a 1x1 projection to 1 channel.
* ``lcn``   a single locally-connected k x k layer with shared bias (2D).
* ``unet``  U-Net(d); ``gate_placement='resample'`` gives CG U-Net(d) and
  ``'input'`` gives CoordConv-UNet(d).
"""
import dataclasses
import json
import zlib
from dataclasses import dataclass

import numpy as np

from . import snapshot
from .errors import ConfigError, ContractError
from .layers import Conv, CoordGate, Layer, LocallyConnected, Stack
from .tensor import Tensor, add, concat_channels, resample2x

KINDS = ("cnn", "ccnn", "cg", "lcn", "unet")
PLACEMENTS = ("none", "resample", "input")


@dataclass
class ModelSpec:
    kind: str
    L: int = 1
    k: int = 3
    c: int = 1
    p: int = 1
    depth: int = 0
    base_channels: int = 8
    gate_placement: str = "none"
    name: str = None
    dims: int = 1
    in_channels: int = 1
    coords: str = "grid"  # gate input: grid | random | direct
    extent: tuple = None  # spatial extent, required for direct gates and lcn
    channel_cap: int = 64
    residual: bool = True  # unet: predict a correction added to the input

    def __post_init__(self):
        if self.extent is not None:
            self.extent = tuple(int(e) for e in self.extent)
        if self.name is None:
            self.name = self.label()

    def label(self):
        if self.kind == "cnn":
            return f"CNN({self.L},{self.k},{self.c})"
        if self.kind == "ccnn":
            return f"cCNN({self.L},{self.k},{self.c})"
        if self.kind == "cg":
            tag = "" if self.coords == "grid" else f"[{self.coords}]"
            return f"CG({self.L},{self.k},{self.c},{self.p}){tag}"
        if self.kind == "lcn":
            return f"LCN({self.k})"
        if self.kind == "unet":
            prefix = {"none": "", "resample": "CG ", "input": "CoordConv-"}.get(self.gate_placement, "")
            return f"{prefix}U-Net({self.depth})" if prefix != "CoordConv-" else f"CoordConv-UNet({self.depth})"
        return self.kind

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.dims not in (1, 2):
            raise ConfigError(f"dims must be 1 or 2, got {self.dims}")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"kernel size k must be odd and positive, got {self.k}")
        if self.kind in ("cnn", "ccnn", "cg") and (self.L < 1 or self.c < 1):
            raise ConfigError("L and c must be >= 1")
        if self.kind == "cg" and self.p < 1:
            raise ConfigError("CG encoder depth p must be >= 1")
        if self.coords not in ("grid", "random", "direct"):
            raise ConfigError(f"unknown gate coordinates {self.coords!r}")
        if self.coords == "direct" and self.extent is None:
            raise ConfigError("direct gates need 'extent'")
        if self.kind == "lcn" and (self.dims != 2 or self.extent is None):
            raise ConfigError("lcn models are 2D and need 'extent'")
        if self.kind == "unet":
            if self.dims != 2:
                raise ConfigError("U-Nets are 2D")
            if self.depth < 1:
                raise ConfigError("U-Net depth must be >= 1")
            if self.gate_placement not in PLACEMENTS:
                raise ConfigError(f"gate_placement must be one of {PLACEMENTS}")
            if self.gate_placement == "resample" and self.p < 1:
                raise ConfigError("gate encoder depth p must be >= 1")
            if self.extent is not None:
                check_unet_extent(self.extent, self.depth)
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        if d["extent"] is not None:
            d["extent"] = list(d["extent"])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown ModelSpec keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("ModelSpec needs 'kind'")
        return cls(**d).validate()

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def check_unet_extent(extent, depth):
    f = 2 ** depth
    if any(e % f for e in extent):
        raise ConfigError(f"U-Net({depth}) needs extents divisible by {f}, got {tuple(extent)}")


def unet_channels(spec):
    return [min(spec.base_channels * 2 ** lvl, spec.channel_cap) for lvl in range(spec.depth + 1)]


# --- parameter counting from a ModelSpec alone -----------------------------

def _conv_count(k, dims, cin, cout):
    return k ** dims * cin * cout + cout


def _encoder_count(in_dim, width, out, p):
    sizes = [in_dim] + [width] * (p - 1) + [out]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _gate_count(spec, channels, extent):
    if spec.coords == "direct":
        return int(np.prod(extent)) * channels
    return _encoder_count(spec.dims, channels, channels, spec.p)


def count_params(spec):
    """Number of trainable scalars of the model ``spec`` builds."""
    spec.validate()
    d, k, c = spec.dims, spec.k, spec.c
    cin = spec.in_channels
    if spec.kind in ("cnn", "ccnn"):
        extra = d if spec.kind == "ccnn" else 0
        sizes = [cin] + [c] * (spec.L - 1) + [1]
        return sum(_conv_count(k, d, a + extra, b) for a, b in zip(sizes[:-1], sizes[1:]))
    if spec.kind == "cg":
        sizes = [cin] + [c] * spec.L
        n = sum(_conv_count(k, d, a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        return n + _gate_count(spec, c, spec.extent) + _conv_count(1, d, c, 1)
    if spec.kind == "lcn":
        h, w = spec.extent
        return h * w * k * k * cin + 1
    ch = unet_channels(spec)
    extra = 2 if spec.gate_placement == "input" else 0
    n = 0
    for lvl in range(spec.depth + 1):
        a = cin if lvl == 0 else ch[lvl - 1]
        n += _conv_count(3, 2, a + extra, ch[lvl]) + _conv_count(3, 2, ch[lvl], ch[lvl])
    for lvl in range(spec.depth - 1, -1, -1):
        n += _conv_count(3, 2, ch[lvl + 1] + ch[lvl] + extra, ch[lvl]) + _conv_count(3, 2, ch[lvl], ch[lvl])
    n += _conv_count(1, 2, ch[0], 1)
    if spec.gate_placement == "resample":
        for lvl in list(range(1, spec.depth + 1)) + list(range(spec.depth - 1, -1, -1)):
            ext = None if spec.extent is None else tuple(e // 2 ** lvl for e in spec.extent)
            n += _gate_count(spec, ch[lvl], ext)
    return n


# --- built models -----------------------------------------------------------

class UNet(Layer):
    """Encoder-decoder with max-pool down, nearest up and skip concatenation.

    Every level runs two 3x3 conv + ReLU layers. With gates, the block that
    follows each down- or up-sampling step becomes a CoordGate.
    """

    def __init__(self, spec, rng):
        ch = unet_channels(spec)
        self.depth = spec.depth
        self.residual = spec.residual
        coords = "first" if spec.gate_placement == "input" else None
        extra = 2 if coords else 0
        gated = spec.gate_placement == "resample"

        def block(a, b):
            return Stack([Conv(2, a + extra, b, 3, rng), Conv(2, b, b, 3, rng)],
                         final_relu=True, coords=coords)

        def level_extent(lvl):
            return None if spec.extent is None else tuple(e // 2 ** lvl for e in spec.extent)

        def maybe_gate(blk, lvl):
            if not gated:
                return blk
            return CoordGate(blk, ch[lvl], 2, rng, p=spec.p, coords=spec.coords,
                             extent=level_extent(lvl))

        self.down = [maybe_gate(block(spec.in_channels if lvl == 0 else ch[lvl - 1], ch[lvl]), lvl)
                     if lvl > 0 else block(spec.in_channels, ch[0])
                     for lvl in range(spec.depth + 1)]
        self.up = [maybe_gate(block(ch[lvl + 1] + ch[lvl], ch[lvl]), lvl)
                   for lvl in range(spec.depth - 1, -1, -1)]
        self.head = Conv(2, ch[0], 1, 1, rng)

    def __call__(self, x):
        check_unet_extent(x.shape[1:3], self.depth)
        skips = []
        h = x
        for lvl, blk in enumerate(self.down):
            if lvl > 0:
                skips.append(h)
                h = resample2x(h, "down")
            h = blk(h)
        for blk in self.up:
            h = resample2x(h, "up")
            h = blk(concat_channels(h, skips.pop()))
        out = self.head(h)
        return add(out, x) if self.residual else out


class Model:
    """A built network: parameters plus a forward closure."""

    def __init__(self, spec, root):
        self.spec = spec
        self.root = root

    @property
    def name(self):
        return self.spec.name

    def __call__(self, x):
        if not isinstance(x, Tensor):
            x = Tensor._wrap(np.asarray(x, dtype=np.float64))
        return self.root(x)

    forward = __call__

    def named_parameters(self):
        return list(self.root.named_parameters())

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {k: p.values.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise ContractError(f"state is missing parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ContractError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.values[...] = state[k]

    def gates(self):
        found = [(path, layer) for path, layer in self.root.sublayers()
                 if isinstance(layer, CoordGate)]
        if isinstance(self.root, CoordGate):
            found.insert(0, ("", self.root))
        return found

    def save(self, path):
        snapshot.save(path, self.state_dict())

    def load(self, path):
        self.load_state_dict(snapshot.load(path))


def derive_seed(seed, name):
    """Per-model seed from a run seed and a model name (stable across runs)."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def build_model(spec, seed=0):
    if isinstance(spec, dict):
        spec = ModelSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    d, k, c = spec.dims, spec.k, spec.c
    if spec.kind in ("cnn", "ccnn"):
        extra = d if spec.kind == "ccnn" else 0
        sizes = [spec.in_channels] + [c] * (spec.L - 1) + [1]
        convs = [Conv(d, a + extra, b, k, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        root = Stack(convs, coords="all" if spec.kind == "ccnn" else None)
    elif spec.kind == "cg":
        sizes = [spec.in_channels] + [c] * spec.L
        block = Stack([Conv(d, a, b, k, rng) for a, b in zip(sizes[:-1], sizes[1:])])
        root = CoordGate(block, c, d, rng, p=spec.p, coords=spec.coords,
                         extent=spec.extent, proj_out=1)
    elif spec.kind == "lcn":
        root = LocallyConnected(spec.extent, spec.in_channels, 1, k, rng)
    else:
        root = UNet(spec, rng)
    return Model(spec, root)


def export_gating_map(model, extent=None):
    """Freeze every CoordGate of ``model`` at ``extent`` and return the maps by path.

    Encoder parameters are dropped; later forwards multiply by the stored
    maps. U-Net gates are frozen at their level's extent.
    """
    gates = model.gates()
    if not gates:
        raise ContractError(f"{model.name} has no CoordGate to export")
    extent = tuple(extent if extent is not None else (model.spec.extent or ()))
    if not extent:
        raise ContractError("export_gating_map needs the input extent")
    out = {}
    if isinstance(model.root, UNet):
        lvl_of = {}
        for i, blk in enumerate(model.root.down):
            lvl_of[id(blk)] = i
        for j, blk in enumerate(model.root.up):
            lvl_of[id(blk)] = model.root.depth - 1 - j
        for path, gate in gates:
            lvl = lvl_of[id(gate)]
            out[path] = gate.freeze(tuple(e // 2 ** lvl for e in extent))
    else:
        for path, gate in gates:
            out[path or "gate"] = gate.freeze(extent)
    return out
