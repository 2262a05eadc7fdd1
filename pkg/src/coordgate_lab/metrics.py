"""Image-quality metrics, inference timing and the metrics CSV record."""
import csv
import math
import time
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError
from .tensor import Tensor, no_grad

PSNR_MSE_TOL = 1e-9
CSV_COLUMNS = ("model", "params", "psnr_db", "ssim", "mse", "inference_s")


def mse(pred, target):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def psnr_from_mse(m):
    """10 log10(1 / MSE) for unit-range data; a perfect match gives +inf."""
    return math.inf if m == 0 else 10.0 * math.log10(1.0 / m)


def psnr(pred, target):
    return psnr_from_mse(mse(pred, target))


def gaussian_window(size=7, sigma=1.5):
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, win):
    k = win.shape[0]
    return np.einsum("ijkl,kl->ij", sliding_window_view(img, (k, k)), win)


def ssim(pred, target, window=7, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over all fully-contained Gaussian windows of a grayscale pair."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: {a.shape} vs {b.shape}")
    a, b = np.squeeze(a), np.squeeze(b)
    if a.ndim != 2:
        raise ShapeError("ssim expects a single grayscale image")
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def mean_ssim(preds, targets, **kw):
    return float(np.mean([ssim(p, t, **kw) for p, t in zip(preds, targets)]))


def time_inference(model, x, repeats=100, warmup=5):
    """Mean wall-clock seconds per sample of ``model(x)`` over ``repeats`` runs."""
    xt = x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))
    n = xt.shape[0]
    with no_grad():
        for _ in range(warmup):
            model(xt)
        t0 = time.perf_counter()
        for _ in range(repeats):
            model(xt)
        dt = time.perf_counter() - t0
    return dt / repeats / n


@dataclass
class MetricsRecord:
    model: str
    params: int
    psnr_db: float
    ssim: float
    mse: float
    inference_s: float

    def check(self):
        if not math.isfinite(self.psnr_db) and self.mse == 0:
            return self
        if abs(self.psnr_db - psnr_from_mse(self.mse)) > PSNR_MSE_TOL:
            raise ContractError(f"{self.model}: psnr {self.psnr_db} inconsistent with mse {self.mse}")
        return self

    def row(self, timing=True):
        vals = [self.model, str(int(self.params)), repr(float(self.psnr_db)), repr(float(self.ssim)),
                repr(float(self.mse))]
        return vals + [repr(float(self.inference_s))] if timing else vals


def write_metrics_csv(path, records, timing=True):
    cols = CSV_COLUMNS if timing else CSV_COLUMNS[:-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            w.writerow(r.check().row(timing))


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(MetricsRecord(r["model"], int(r["params"]), float(r["psnr_db"]), float(r["ssim"]),
                                 float(r["mse"]), float(r.get("inference_s", "nan"))))
    return out
