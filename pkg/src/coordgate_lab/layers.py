"""Layers: convolutions, coordinate maps, CoordGate, CoordConv and locally-connected.

A layer is a small object whose trainable tensors are attributes; nested
layers (and lists of them) are discovered by :meth:`Layer.named_parameters`
in attribute order, which fixes parameter paths for checkpoints.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor, concat_channels, conv1d, conv2d, hadamard, lcn2d, matmul_channels, no_grad, relu,
)


class Layer:
    def named_parameters(self, prefix=""):
        for name, v in vars(self).items():
            if isinstance(v, Tensor):
                if v.requires_grad:
                    yield prefix + name, v
            elif isinstance(v, Layer):
                yield from v.named_parameters(f"{prefix}{name}.")
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Layer):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def sublayers(self, prefix=""):
        for name, v in vars(self).items():
            items = [(name, v)] if isinstance(v, Layer) else []
            if isinstance(v, (list, tuple)):
                items = [(f"{name}.{i}", it) for i, it in enumerate(v) if isinstance(it, Layer)]
            for path, layer in items:
                yield prefix + path, layer
                yield from layer.sublayers(f"{prefix}{path}.")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv(Layer):
    """Same-padded (or valid) convolution over 1 or 2 spatial axes."""

    def __init__(self, dims, cin, cout, k, rng, padding="same_zero"):
        if k % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {k}")
        shape = (k,) * dims + (cin, cout)
        fan_in = cin * k ** dims
        self.dims = dims
        self.padding = padding
        self.weight = Tensor(_uniform(rng, shape, fan_in), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (cout,), fan_in), requires_grad=True)

    @property
    def out_channels(self):
        return self.weight.shape[-1]

    def __call__(self, x):
        op = conv1d if self.dims == 1 else conv2d
        return op(x, self.weight, self.bias, self.padding)


HIDDEN_BIAS = 0.1


class Dense(Layer):
    """Pixel-wise fully-connected layer (affine map over channels)."""

    def __init__(self, cin, cout, rng, bias_value=None, he=False):
        if he:
            # Kaiming-uniform for layers feeding a ReLU. A small positive bias
            # keeps units alive where all upstream units are off and moves
            # kinks off the coordinate grid.
            w = rng.uniform(-1.0, 1.0, size=(cin, cout)) * np.sqrt(6.0 / cin)
            b = np.full(cout, HIDDEN_BIAS)
        else:
            w = _uniform(rng, (cin, cout), cin)
            b = _uniform(rng, (cout,), cin)
        self.weight = Tensor(w, requires_grad=True)
        if bias_value is not None:
            b = np.full(cout, float(bias_value))
        self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x):
        return matmul_channels(x, self.weight, self.bias)


class Stack(Layer):
    """Convolutions with ReLU between them (and after the last if ``final_relu``)."""

    def __init__(self, convs, final_relu=False, coords=None):
        self.convs = list(convs)
        self.final_relu = final_relu
        self.coords = coords  # None, "first" or "all": where coordinates are concatenated

    @property
    def out_channels(self):
        return self.convs[-1].out_channels

    def __call__(self, x):
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            if self.coords == "all" or (self.coords == "first" and i == 0):
                x = coordconv_forward(x, make_coordinate_map(x.shape[1:-1]), conv)
            else:
                x = conv(x)
            if i < last or self.final_relu:
                x = relu(x)
        return x


# --- coordinate maps -------------------------------------------------------

@dataclass
class CoordinateMap:
    values: np.ndarray  # [n, 1] in 1D, [h, w, 2] in 2D
    static: bool = True

    @property
    def extent(self):
        return self.values.shape[:-1]


def _ramp(n):
    return np.zeros(1) if n == 1 else np.linspace(-1.0, 1.0, n)


def make_coordinate_map(extent):
    """Linear ramps from -1 to 1 per axis; channel 0 is x (width), channel 1 is y (height)."""
    extent = tuple(int(e) for e in extent)
    if any(e < 1 for e in extent):
        raise ConfigError(f"extents must be >= 1, got {extent}")
    if len(extent) == 1:
        return CoordinateMap(_ramp(extent[0])[:, None])
    if len(extent) == 2:
        h, w = extent
        xs = np.broadcast_to(_ramp(w)[None, :], (h, w))
        ys = np.broadcast_to(_ramp(h)[:, None], (h, w))
        return CoordinateMap(np.stack([xs, ys], axis=-1))
    raise ConfigError(f"coordinate maps support 1 or 2 axes, got {len(extent)}")


def make_random_static_map(extent, seed):
    """Static i.i.d. U(-1, 1) values in place of coordinates (ablation input)."""
    extent = tuple(int(e) for e in extent)
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-1.0, 1.0, size=extent + (len(extent),))
    # uniform() is half-open; keep the open interval
    vals[vals == -1.0] = 0.0
    return CoordinateMap(vals)


# --- gating ----------------------------------------------------------------

@dataclass
class GatingMap:
    values: np.ndarray  # [*extent, channels]
    source: str  # encoded | direct | frozen


class CoordEncoder(Layer):
    """Pixel-wise MLP g(C): ``p`` dense layers, ReLU between, linear output.

    The output bias starts at 1 so an untrained gate is close to identity.
    """

    def __init__(self, in_dim, width, out, p, rng):
        if p < 1:
            raise ConfigError(f"encoder depth p must be >= 1, got {p}")
        sizes = [in_dim] + [width] * (p - 1) + [out]
        self.layers = [Dense(a, b, rng, bias_value=1.0 if i == p - 1 else None, he=i < p - 1)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def __call__(self, coords):
        x = coords if isinstance(coords, Tensor) else Tensor._wrap(coords.values)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


def coord_encoder_forward(coords, layers):
    """Apply ``layers`` [(weight, bias), ...] pixel-wise to a coordinate map.

    ReLU follows every layer except the last.
    """
    if not layers:
        raise ConfigError("encoder needs at least one layer")
    x = Tensor._wrap(coords.values)
    for i, (w, b) in enumerate(layers):
        x = matmul_channels(x, w, b)
        if i < len(layers) - 1:
            x = relu(x)
    return GatingMap(x.values, "encoded"), x


class CoordGate(Layer):
    """``y = proj(block(x) * gate)`` with the gate a function of position only.

    The gate comes from one of: an encoder over a coordinate grid
    (``coords='grid'``), an encoder over a static random map
    (``coords='random'``), a directly trainable map (``coords='direct'``),
    or a frozen exported map.
    """

    def __init__(self, block, channels, dims, rng, p=1, width=None, coords="grid",
                 extent=None, proj_out=None):
        self.block = block
        self.coords = coords
        self.dims = dims
        self.encoder = None
        self.direct = None
        self.frozen = {}
        self._maps = {}
        if coords in ("grid", "random"):
            self.encoder = CoordEncoder(dims, width or channels, channels, p, rng)
            self._map_seed = int(rng.integers(2**31)) if coords == "random" else None
        elif coords == "direct":
            if extent is None:
                raise ConfigError("a directly trainable gate needs the spatial extent")
            self.direct = Tensor(np.ones(tuple(extent) + (channels,)), requires_grad=True)
        else:
            raise ConfigError(f"unknown gate coordinates {coords!r}")
        self.proj = Conv(dims, channels, proj_out, 1, rng) if proj_out else None

    def coordinate_map(self, extent):
        extent = tuple(extent)
        if extent not in self._maps:
            if self.coords == "random":
                self._maps[extent] = make_random_static_map(extent, self._map_seed)
            else:
                self._maps[extent] = make_coordinate_map(extent)
        return self._maps[extent]

    def gate(self, extent):
        extent = tuple(extent)
        if self.frozen:
            if extent not in self.frozen:
                raise ShapeError(f"frozen gate exported for {sorted(self.frozen)}, not {extent}")
            return Tensor._wrap(self.frozen[extent])
        if self.direct is not None:
            if self.direct.shape[:-1] != extent:
                raise ShapeError(f"direct gate extent {self.direct.shape[:-1]} != {extent}")
            return self.direct
        return self.encoder(self.coordinate_map(extent))

    def gating_map(self, extent):
        with no_grad():
            vals = self.gate(extent).values.copy()
        source = "frozen" if self.frozen else ("direct" if self.direct is not None else "encoded")
        return GatingMap(vals, source)

    def freeze(self, extent):
        """Materialise the gate for ``extent`` and drop the encoder parameters."""
        gm = self.gating_map(extent)
        self.frozen[tuple(extent)] = gm.values
        self.encoder = None
        self.direct = None
        return GatingMap(gm.values, "frozen")

    def __call__(self, x):
        y = self.block(x)
        g = self.gate(y.shape[1:-1])
        if g.shape[-1] != y.shape[-1]:
            raise ShapeError(f"gate has {g.shape[-1]} channels, block output has {y.shape[-1]}")
        y = hadamard(y, g)
        return self.proj(y) if self.proj is not None else y


def coordgate_forward(x, block, encoder, coords):
    """Functional CoordGate: channelwise product of ``block(x)`` and ``encoder(coords)``."""
    y = block(x)
    g = encoder(coords)
    if g.shape[-1] != y.shape[-1]:
        raise ShapeError(f"gate has {g.shape[-1]} channels, block output has {y.shape[-1]}")
    return hadamard(y, g)


def coordconv_forward(x, coords, conv):
    """Concatenate coordinate channels to ``x`` and convolve."""
    cv = coords.values if isinstance(coords, CoordinateMap) else coords
    if tuple(cv.shape[:-1]) != tuple(x.shape[1:-1]):
        raise ShapeError(f"coordinate extent {cv.shape[:-1]} != feature extent {x.shape[1:-1]}")
    return conv(concat_channels(x, Tensor._wrap(np.ascontiguousarray(cv))))


class LocallyConnected(Layer):
    """2D locally-connected layer with a shared bias, same_zero padding."""

    def __init__(self, extent, cin, cout, k, rng):
        h, w = extent
        fan_in = cin * k * k
        self.weight = Tensor(_uniform(rng, (h, w, k, k, cin, cout), fan_in), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (cout,), fan_in), requires_grad=True)

    def __call__(self, x):
        return lcn2d(x, self.weight, self.bias)


def lcn_forward(x, kernels, shared_bias):
    return lcn2d(x, kernels, shared_bias)


def pixel_basis_kernels(k):
    """The k*k one-hot kernels, shaped [k, k, 1, k*k] for a 1->k*k convolution."""
    if k % 2 == 0 or k < 1:
        raise ConfigError(f"pixel basis needs an odd kernel size, got {k}")
    return np.eye(k * k).reshape(k, k, 1, k * k)
