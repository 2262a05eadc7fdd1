"""Synthetic data: the 1D Gaussian convolution matrix, the lens-blur field,
procedural blob images, and the zero-padding boundary demonstration."""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, conv2d, no_grad


@dataclass
class ConvolutionMatrix:
    H: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.H.shape[0]


@dataclass
class DatasetPair:
    inputs: np.ndarray  # model input, leading axis = sample
    targets: np.ndarray
    seed: int = 0
    split: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.inputs)


# --- 1D convolution matrix --------------------------------------------------

def gaussian_column_params(xp, n=30):
    """Offset and width of the Gaussian that source pixel ``xp`` spreads into.

    Below the midpoint the offset falls linearly from 1 to 0 at width 0.5;
    from the midpoint on the offset is 0 and the width follows the second
    branch (negative past 3/4 of the line, only its square matters).
    """
    half = n / 2.0
    xp = np.asarray(xp, dtype=np.float64)
    first = xp < half
    delta = np.where(first, 1.0 - xp / half, 0.0)
    sigma = np.where(first, 0.5, 0.5 * (2.0 - xp / half) + 2.0 * (1.0 - xp / half))
    return delta, sigma


def build_H_eq5(n=30):
    """Spatially-varying Gaussian convolution matrix, one unit-peak Gaussian per column.

    ``H[x, x'] = exp(-(x - x' - delta(x'))**2 / (2 sigma(x')**2))``, centred on the
    diagonal (shifted by the column's offset).
    """
    if n < 2:
        raise ConfigError(f"matrix size must be >= 2, got {n}")
    xp = np.arange(n)
    delta, sigma = gaussian_column_params(xp, n)
    x = np.arange(n)[:, None]
    H = np.exp(-((x - xp[None, :] - delta[None, :]) ** 2) / (2.0 * sigma[None, :] ** 2))
    return ConvolutionMatrix(H, {"kind": "gaussian", "n": n})


def toeplitz_from_kernel(kernel, n):
    """Matrix of a same_zero cross-correlation with ``kernel`` on length-``n`` signals."""
    kernel = np.asarray(kernel, dtype=np.float64)
    k = kernel.size
    if k % 2 == 0:
        raise ConfigError("kernel length must be odd")
    r = k // 2
    H = np.zeros((n, n))
    for t in range(k):
        H += kernel[t] * np.eye(n, k=t - r)
    return ConvolutionMatrix(H, {"kind": "toeplitz", "kernel": kernel.tolist()})


def apply_matrix(H, m):
    """``n = H m`` for a vector or a batch of vectors (trailing channel axis allowed)."""
    Hm = H.H if isinstance(H, ConvolutionMatrix) else np.asarray(H)
    m = np.asarray(m, dtype=np.float64)
    squeeze = m.ndim >= 2 and m.shape[-1] == 1 and m.shape[-2] == Hm.shape[1]
    v = m[..., 0] if squeeze else m
    if v.shape[-1] != Hm.shape[1]:
        raise ShapeError(f"matrix is {Hm.shape}, signal length {v.shape[-1]}")
    out = v @ Hm.T
    return out[..., None] if squeeze else out


def gen_1d_dataset(n_samples, n=30, seed=0, H=None):
    """U(0,1) signals and their images under ``H``, shaped [samples, n, 1]."""
    H = build_H_eq5(n) if H is None else H
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.0, 1.0, size=(n_samples, n))
    return DatasetPair(m[..., None], apply_matrix(H, m)[..., None], seed=seed)


# --- 2D lens blur -----------------------------------------------------------

@dataclass
class PSFField:
    sigma: np.ndarray  # [h, w] width of each pixel's Gaussian
    kernels: np.ndarray  # [h, w, k, k], each summing to 1
    params: dict = field(default_factory=dict)

    @property
    def extent(self):
        return self.sigma.shape


def gen_psf_field(h, w, k=11, sigma_min=0.5, sigma_max=2.5):
    """Isotropic Gaussian PSFs widening quadratically with distance from the centre."""
    if k % 2 == 0:
        raise ConfigError("PSF kernel size must be odd")
    if sigma_min <= 0 or sigma_max < sigma_min:
        raise ConfigError("need 0 < sigma_min <= sigma_max")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r = np.hypot(yy - cy, xx - cx)
    r_max = np.hypot(cy, cx)
    rel = r / r_max if r_max > 0 else np.zeros_like(r)
    sigma = sigma_min + (sigma_max - sigma_min) * rel ** 2
    t = np.arange(k) - k // 2
    d2 = t[:, None] ** 2 + t[None, :] ** 2
    kern = np.exp(-d2[None, None] / (2.0 * sigma[..., None, None] ** 2))
    kern /= kern.sum(axis=(2, 3), keepdims=True)
    params = {"h": h, "w": w, "k": k, "sigma_min": sigma_min, "sigma_max": sigma_max}
    return PSFField(sigma, kern, params)


def uniform_psf_field(h, w, kernel):
    """Field with the same (already normalised) kernel everywhere."""
    kernel = np.asarray(kernel, dtype=np.float64)
    kern = np.broadcast_to(kernel, (h, w) + kernel.shape).copy()
    return PSFField(np.full((h, w), np.nan), kern, {"h": h, "w": w, "k": kernel.shape[0], "uniform": True})


def blur_image(image, field):
    """Spread every source pixel with its own PSF, zero outside the frame.

    ``out[y, x] = sum over sources (y', x') of K[y', x'][y - y' + r, x - x' + r] * img[y', x']``.
    Accepts [h, w], [n, h, w] or [n, h, w, 1].
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze_c = img.ndim == 4
    if squeeze_c:
        img = img[..., 0]
    single = img.ndim == 2
    if single:
        img = img[None]
    h, w = field.extent
    if img.shape[1:] != (h, w):
        raise ShapeError(f"image extent {img.shape[1:]} != PSF field extent {(h, w)}")
    k = field.kernels.shape[2]
    r = k // 2
    out = np.zeros((img.shape[0], h + 2 * r, w + 2 * r))
    for dy in range(k):
        for dx in range(k):
            out[:, dy:dy + h, dx:dx + w] += field.kernels[:, :, dy, dx] * img
    out = out[:, r:r + h, r:r + w]
    if single:
        out = out[0]
    return out[..., None] if squeeze_c else out


def gen_procedural_images(n, h, w, seed=0):
    """Grayscale [n, h, w] images in [0, 1]: 5-15 soft-edged ellipses on black."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    scale = min(h, w)
    imgs = np.zeros((n, h, w))
    for i in range(n):
        img = imgs[i]
        for _ in range(rng.integers(5, 16)):
            amp = rng.uniform(0.3, 1.0)
            cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
            a = rng.uniform(0.03, 0.12) * scale
            b = a * rng.uniform(0.4, 1.0)
            th = rng.uniform(0, np.pi)
            soft = rng.uniform(0.05, 0.25)
            u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
            v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
            rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
            blob = amp / (1.0 + np.exp(np.clip((rho - 1.0) / soft, -50, 50)))
            np.maximum(img, blob, out=img)
    return np.clip(imgs, 0.0, 1.0)


def gen_deblur_dataset(n_samples, h=64, w=64, k=11, sigma_min=0.5, sigma_max=2.5, seed=0):
    """Blurred inputs and clean targets, each [n, h, w, 1]."""
    clean = gen_procedural_images(n_samples, h, w, seed)
    field_ = gen_psf_field(h, w, k, sigma_min, sigma_max)
    blurred = blur_image(clean, field_)
    pair = DatasetPair(blurred[..., None], clean[..., None], seed=seed)
    return pair, field_


# --- zero-padding boundary demonstration ------------------------------------

def _box_fraction(a):
    """Exact same_zero 3x3 box filter (weights 1/9) on an object array of Fractions."""
    h, w = a.shape
    p = np.full((h + 2, w + 2), Fraction(0), dtype=object)
    p[1:-1, 1:-1] = a
    acc = np.full((h, w), Fraction(0), dtype=object)
    for dy in range(3):
        for dx in range(3):
            acc = acc + p[dy:dy + h, dx:dx + w]
    return acc / 9


def _box_float(a):
    x = Tensor._wrap(np.ascontiguousarray(a)[None, :, :, None])
    k = Tensor._wrap(np.full((3, 3, 1, 1), 1.0 / 9.0))
    with no_grad():
        return conv2d(x, k, Tensor._wrap(np.zeros(1)), "same_zero").values[0, :, :, 0]


def _pool_ceil(a):
    """2x2 max-pool; odd extents are padded at the far edge (ceil mode)."""
    h, w = a.shape
    H, W = -(-h // 2) * 2, -(-w // 2) * 2
    fill = Fraction(-10**9) if a.dtype == object else -np.inf
    p = np.full((H, W), fill, dtype=a.dtype)
    p[:h, :w] = a
    q = p.reshape(H // 2, 2, W // 2, 2).transpose(0, 2, 1, 3).reshape(H // 2, W // 2, 4)
    return q.max(axis=-1)


def _up_to(a, shape):
    return a.repeat(2, axis=0).repeat(2, axis=1)[:shape[0], :shape[1]]


BOUNDARY_VARIANTS = ("plain", "unet2", "unet4")


def demo_boundary(size=12, layers=5, variant="plain", exact=False):
    """Feature maps from repeated 3x3 box filtering of a constant image.

    ``plain`` applies ``layers`` convolutions. ``unet2``/``unet4`` are the
    encoder-decoder shapes with 2 and 4 down-and-up steps: three convs
    before every resampling, plus twelve extra at the bottom of ``unet2`` so
    both use 24. Returns a list of ``(label, map)``; ``exact=True`` uses
    rational arithmetic.
    """
    box = _box_fraction if exact else _box_float
    one = Fraction(1) if exact else 1.0
    a = np.full((size, size), one, dtype=object if exact else np.float64)
    stages = []
    if variant == "plain":
        for i in range(layers):
            a = box(a)
            stages.append((f"conv{i + 1}", a))
        return stages
    if variant not in BOUNDARY_VARIANTS:
        raise ConfigError(f"unknown boundary variant {variant!r}")
    steps = 2 if variant == "unet2" else 4
    n = 0
    shapes = []

    def convs(a, count):
        nonlocal n
        for _ in range(count):
            a = box(a)
            n += 1
            stages.append((f"conv{n}@{a.shape[0]}x{a.shape[1]}", a))
        return a

    for s in range(steps):
        a = convs(a, 3)
        shapes.append(a.shape)
        a = _pool_ceil(a)
        stages.append((f"down{s + 1}@{a.shape[0]}x{a.shape[1]}", a))
    for s in range(steps):
        a = convs(a, 3 + (12 if variant == "unet2" and s == 0 else 0))
        a = _up_to(a, shapes.pop())
        stages.append((f"up{s + 1}@{a.shape[0]}x{a.shape[1]}", a))
    return stages


def uniform_region(a, value=1, tol=0.0):
    """Pixels equal to the infinite-plane ``value``; returns (count, defect depth).

    Defect depth is one more than the largest border distance of any pixel
    that differs from ``value`` (0 when every pixel matches).
    """
    h, w = a.shape
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.minimum.reduce([yy, xx, h - 1 - yy, w - 1 - xx])
    if a.dtype == object:
        same = np.vectorize(lambda v: v == value, otypes=[bool])(a)
    else:
        same = np.abs(a - value) <= tol
    depth = int(dist[~same].max() + 1) if (~same).any() else 0
    return int(same.sum()), depth
