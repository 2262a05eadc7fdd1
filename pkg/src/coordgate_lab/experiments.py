"""End-to-end experiment commands: boundary, conv1d, ablation, deblur, report.

Each command takes an :class:`ExperimentConfig`, writes CSV/PGM/snapshot
artifacts into ``config.out`` and returns a small summary dict. Every
artifact is a function of the config and its seed.
"""
import copy
import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import snapshot
from .datagen import (
    BOUNDARY_VARIANTS, build_H_eq5, demo_boundary, gen_1d_dataset, gen_deblur_dataset, uniform_region,
)
from .errors import ConfigError, TrainingAborted
from .metrics import (
    MetricsRecord, mean_ssim, psnr_from_mse, read_metrics_csv, time_inference, write_metrics_csv,
)
from .models import ModelSpec, build_model, check_unet_extent, derive_seed
from .optim import TrainConfig, predict, split_indices, train
from .pgm import save_dataset, to_unit, write_pgm
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

EXPERIMENTS = ("boundary", "conv1d", "ablation", "deblur", "report")


def _cnn(L, k, c):
    return {"kind": "cnn", "L": L, "k": k, "c": c, "dims": 1}


CONV1D_ROSTER = [
    _cnn(1, 7, 1), _cnn(3, 7, 4), _cnn(4, 7, 4), _cnn(4, 7, 20), _cnn(8, 7, 4),
    {"kind": "ccnn", "L": 4, "k": 7, "c": 4, "dims": 1},
    {"kind": "cg", "L": 1, "k": 7, "c": 3, "p": 3, "dims": 1},
]


def _unet(d, placement="none", p=2):
    return {"kind": "unet", "dims": 2, "depth": d, "gate_placement": placement, "p": p,
            "base_channels": 8}


DEBLUR_ROSTER = [_unet(2), _unet(3), _unet(4), _unet(2, "resample"), _unet(4, "resample"),
                 _unet(4, "input")]
DEBLUR_ROSTER_FULL = [_unet(d) for d in (3, 4, 5, 6)] + [_unet(3, "resample"), _unet(6, "resample"),
                                                         _unet(6, "input")]

DEFAULTS = {
    "boundary": {"dataset": {"size": 12, "layers": 5}, "train": {}, "models": [], "options": {}},
    "conv1d": {
        "dataset": {"n_samples": 2000, "n": 30},
        "train": {"epochs": 200, "batch_size": 32, "lr": 1e-3, "patience": 20, "decay": 0.5},
        "models": CONV1D_ROSTER,
        "options": {"timing_repeats": 100, "probe_offset": 0.5},
    },
    "ablation": {
        "dataset": {"n_samples": 2000, "n": 30},
        "train": {"epochs": 200, "batch_size": 32, "lr": 1e-3, "patience": 20, "decay": 0.5},
        "models": [{"kind": "cg", "L": 1, "k": 7, "c": 3, "p": 3, "dims": 1}],
        "options": {"n_seeds": 3},
    },
    "deblur": {
        "dataset": {"n_samples": 1100, "h": 64, "w": 64, "k": 11, "sigma_min": 0.5, "sigma_max": 2.5},
        "train": {"epochs": 100, "batch_size": 8, "lr": 1e-3, "patience": 10, "decay": 0.5},
        "models": DEBLUR_ROSTER,
        "options": {"timing_repeats": 100, "triptychs": 3, "save_dataset": False},
    },
    "report": {"dataset": {}, "train": {}, "models": [], "options": {"runs": None}},
}

FULL_SCALE = {
    "conv1d": {"dataset": {"n_samples": 10000}, "train": {"epochs": 600}},
    "ablation": {"dataset": {"n_samples": 10000}, "train": {"epochs": 600}},
    "deblur": {"dataset": {"n_samples": 20000, "h": 512, "w": 512},
               "train": {"epochs": 600, "patience": 20}, "models": DEBLUR_ROSTER_FULL},
    "boundary": {},
    "report": {},
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    models: list = field(default_factory=list)
    dataset: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    out: str = "runs"

    @classmethod
    def defaults(cls, experiment, full_scale=False):
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
        d = copy.deepcopy(DEFAULTS[experiment])
        if full_scale:
            fs = copy.deepcopy(FULL_SCALE[experiment])
            for key in ("dataset", "train", "options"):
                d[key].update(fs.get(key, {}))
            if "models" in fs:
                d["models"] = fs["models"]
        return cls(experiment=experiment, **d)

    @classmethod
    def from_dict(cls, d, full_scale=False):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in d:
            raise ConfigError("config needs 'experiment'")
        base = cls.defaults(d["experiment"], full_scale)
        for key in ("dataset", "train", "options"):
            getattr(base, key).update(d.get(key, {}))
        if "models" in d:
            base.models = list(d["models"])
        if "seed" in d:
            base.seed = int(d["seed"])
        if "out" in d:
            base.out = d["out"]
        return base.validate()

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def model_specs(self):
        return [ModelSpec.from_dict(dict(m)) for m in self.models]

    def train_config(self, seed=None):
        tc = dict(self.train)
        tc.setdefault("seed", self.seed if seed is None else seed)
        if seed is not None:
            tc["seed"] = seed
        return TrainConfig.from_dict(tc)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        specs = self.model_specs()
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate model names in roster: {names}")
        if self.experiment in ("conv1d", "ablation", "deblur"):
            self.train_config()
            if not specs:
                raise ConfigError("empty model roster")
        if self.experiment == "deblur":
            ext = (self.dataset["h"], self.dataset["w"])
            for s in specs:
                if s.dims != 2:
                    raise ConfigError(f"{s.name}: deblur models must be 2D")
                if s.kind == "unet":
                    check_unet_extent(ext, s.depth)
        if self.experiment in ("conv1d", "ablation"):
            for s in specs:
                if s.dims != 1:
                    raise ConfigError(f"{s.name}: conv1d models must be 1D")
        return self


def slug(name):
    out = "".join(ch if ch.isalnum() else "_" for ch in name)
    while "__" in out:
        out = out.replace("__", "_")
    return out.strip("_")


def _outdir(config):
    p = Path(config.out)
    p.mkdir(parents=True, exist_ok=True)
    (p / "config.json").write_text(config.to_json())
    return p


def _train_one(spec, data, tc, seed, outdir):
    model = build_model(spec, derive_seed(seed, spec.name))
    log.info("training %s (%d params)", spec.name, model.num_params())
    try:
        hist, _ = train(model, data, tc)
    except TrainingAborted as exc:
        exc.model = spec.name
        raise
    hist.write_csv(outdir / f"history_{slug(spec.name)}.csv")
    model.save(outdir / f"checkpoint_{slug(spec.name)}.snap")
    return model, hist


# --- boundary ---------------------------------------------------------------

def cmd_boundary(config):
    out = _outdir(config)
    size = int(config.dataset.get("size", 12))
    layers = int(config.dataset.get("layers", 5))
    rows = []
    for variant in BOUNDARY_VARIANTS:
        stages = demo_boundary(size, layers, variant, exact=True)
        for i, (label, a) in enumerate(stages):
            count, depth = uniform_region(a, 1)
            af = a.astype(np.float64)
            write_pgm(out / f"boundary_{variant}_{i:02d}_{slug(label)}.pgm", af)
            rows.append([variant, i + 1, label, f"{a.shape[0]}x{a.shape[1]}", count, depth,
                         repr(float(af[a.shape[0] // 2, a.shape[1] // 2]))])
    with open(out / "boundary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "stage", "label", "extent", "uniform_pixels", "defect_depth", "center_value"])
        w.writerows(rows)
    return {"rows": rows}


# --- 1D convolution matrix --------------------------------------------------

def effective_matrix(model, n, offset=0.5):
    """Column j = f(offset + e_j) - f(offset); exact for affine models.

    For models with ReLUs this is a finite-step linearisation around the
    constant signal ``offset``.
    """
    base = np.full((1, n, 1), offset)
    probes = base + np.eye(n)[:, :, None]
    with no_grad():
        f0 = model(Tensor._wrap(base)).values[0, :, 0]
        fp = model(Tensor._wrap(probes)).values[:, :, 0]
    return (fp - f0[None, :]).T


def _record(model, name, mse_val, timing_x, repeats, ssim_val=math.nan):
    t = time_inference(model, timing_x, repeats=repeats) if repeats else math.nan
    return MetricsRecord(name, model.num_params(), psnr_from_mse(mse_val), ssim_val, mse_val, t).check()


def cmd_conv1d(config):
    out = _outdir(config)
    n = int(config.dataset.get("n", 30))
    H = build_H_eq5(n)
    data = gen_1d_dataset(int(config.dataset["n_samples"]), n, config.seed, H)
    tc = config.train_config()
    _, va = split_indices(len(data), tc)
    write_pgm(out / "H_true.pgm", to_unit(H.H))
    snapshot.save(out / "H_true.snap", {"H": H.H})
    repeats = int(config.options.get("timing_repeats", 100))
    offset = float(config.options.get("probe_offset", 0.5))
    records = []
    for spec in config.model_specs():
        model, hist = _train_one(spec, data, tc, config.seed, out)
        H_est = effective_matrix(model, n, offset)
        write_pgm(out / f"H_{slug(spec.name)}.pgm", to_unit(H_est, H.H.min(), H.H.max()))
        snapshot.save(out / f"H_{slug(spec.name)}.snap", {"H": H_est})
        if model.gates():
            gm = model.gates()[0][1].gating_map((n,))
            snapshot.save(out / f"gate_{slug(spec.name)}.snap", {"gating_map": gm.values})
        records.append(_record(model, spec.name, hist.best_val_loss, data.inputs[va[:1]], repeats))
        log.info("%s: val PSNR %.2f dB", spec.name, records[-1].psnr_db)
    write_metrics_csv(out / "metrics.csv", records)
    return {"records": records}


def cmd_ablation(config):
    out = _outdir(config)
    n = int(config.dataset.get("n", 30))
    H = build_H_eq5(n)
    n_seeds = int(config.options.get("n_seeds", 3))
    rows = []
    base_spec = config.model_specs()[0]
    for s in range(config.seed, config.seed + n_seeds):
        data = gen_1d_dataset(int(config.dataset["n_samples"]), n, s, H)
        tc = config.train_config(seed=s)
        for variant in ("grid", "random"):
            spec = dataclasses.replace(base_spec, coords=variant, name=f"{base_spec.name}[{variant}]")
            model = build_model(spec, derive_seed(s, spec.name))
            try:
                hist, _ = train(model, data, tc)
            except TrainingAborted as exc:
                exc.model = spec.name
                raise
            tag = f"seed{s}_{variant}"
            hist.write_csv(out / f"history_{tag}.csv")
            gate = model.gates()[0][1]
            snapshot.save(out / f"gate_{tag}.snap", {"gating_map": gate.gating_map((n,)).values,
                                                     "static_input": gate.coordinate_map((n,)).values})
            rows.append([s, variant, spec.name, model.num_params(),
                         repr(psnr_from_mse(hist.best_val_loss)), repr(hist.best_val_loss)])
            log.info("ablation seed %d %s: %.2f dB", s, variant, psnr_from_mse(hist.best_val_loss))
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "variant", "model", "params", "psnr_db", "mse"])
        w.writerows(rows)
    return {"rows": rows}


# --- 2D deblurring -------------------------------------------------------------

def _triptych(clean, blurred, restored):
    sep = np.ones((clean.shape[0], 2))
    return np.concatenate([clean, sep, blurred, sep, np.clip(restored, 0, 1)], axis=1)


def cmd_deblur(config):
    out = _outdir(config)
    ds = config.dataset
    data, field_ = gen_deblur_dataset(int(ds["n_samples"]), int(ds["h"]), int(ds["w"]), int(ds["k"]),
                                      float(ds["sigma_min"]), float(ds["sigma_max"]), config.seed)
    tc = config.train_config()
    tr, va = split_indices(len(data), tc)
    if config.options.get("save_dataset"):
        save_dataset(out / "dataset", data, {"seed": config.seed, "field": field_.params,
                                             "split": {"train": tr.tolist(), "val": va.tolist()}})
    snapshot.save(out / "psf_sigma.snap", {"sigma": field_.sigma})
    xv, yv = data.inputs[va], data.targets[va]
    repeats = int(config.options.get("timing_repeats", 100))
    n_trip = int(config.options.get("triptychs", 3))
    base_mse = float(np.mean((xv - yv) ** 2))
    records = [MetricsRecord("identity", 0, psnr_from_mse(base_mse), mean_ssim(xv, yv), base_mse, 0.0).check()]
    for spec in config.model_specs():
        model, hist = _train_one(spec, data, tc, config.seed, out)
        pred = predict(model, xv, batch_size=16)
        m = float(np.mean((pred - yv) ** 2))
        rec = _record(model, spec.name, m, xv[:1], repeats, mean_ssim(pred, yv))
        records.append(rec)
        for i in range(min(n_trip, len(va))):
            write_pgm(out / f"triptych_{slug(spec.name)}_{i}.pgm",
                      _triptych(yv[i, ..., 0], xv[i, ..., 0], pred[i, ..., 0]))
        log.info("%s: val PSNR %.2f dB, SSIM %.4f", spec.name, rec.psnr_db, rec.ssim)
    write_metrics_csv(out / "metrics.csv", records)
    return {"records": records}


# --- report ------------------------------------------------------------------

def cmd_report(config):
    """Merge ``<out>/<run>/metrics.csv`` files and emit scatter-plot data."""
    root = Path(config.out)
    wanted = config.options.get("runs")
    if wanted:
        missing = [r for r in wanted if not (root / r / "metrics.csv").exists()]
        if missing:
            raise ConfigError(f"missing runs: {', '.join(missing)}")
        runs = list(wanted)
    else:
        runs = sorted(p.parent.name for p in root.glob("*/metrics.csv"))
        if not runs:
            raise ConfigError(f"no runs with metrics.csv under {root}")
    rows = []
    for run in runs:
        for r in read_metrics_csv(root / run / "metrics.csv"):
            rows.append((run, r.check()))
    with open(root / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "model", "params", "psnr_db", "ssim", "mse", "inference_s"])
        for run, r in rows:
            w.writerow([run] + r.row())
    with open(root / "psnr_vs_time.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "model", "x_inference_s", "y_psnr_db", "size_params"])
        for run, r in rows:
            w.writerow([run, r.model, repr(r.inference_s), repr(r.psnr_db), r.params])
    with open(root / "psnr_vs_logparams.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "model", "x_log10_params", "y_psnr_db", "size_params"])
        for run, r in rows:
            if r.params > 0:
                w.writerow([run, r.model, repr(math.log10(r.params)), repr(r.psnr_db), r.params])
    return {"runs": runs, "rows": len(rows)}


COMMANDS = {
    "boundary": cmd_boundary,
    "conv1d": cmd_conv1d,
    "ablation": cmd_ablation,
    "deblur": cmd_deblur,
    "report": cmd_report,
}


def run(config):
    return COMMANDS[config.experiment](config)
