"""Compare the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeats N]

Prints best-of-N wall time per operation for each available backend and the
speedup of the compiled core.
"""
import argparse
import time

import numpy as np

from coordgate_lab import ModelSpec, Tensor, backward, build_model, kernels
from coordgate_lab.tensor import mse_loss


def best_of(fn, repeats):
    fn()
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def cases():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 64, 64, 8))
    w = rng.normal(size=(3, 3, 8, 16))
    b = rng.normal(size=16)
    x1 = rng.normal(size=(32, 1, 30, 4))
    w1 = rng.normal(size=(1, 7, 4, 4))
    xl = rng.normal(size=(4, 16, 16, 2))
    wl = rng.normal(size=(16, 16, 3, 3, 2, 2))
    spec = ModelSpec("unet", dims=2, depth=3, base_channels=8)
    xu, tu = Tensor(rng.uniform(size=(8, 64, 64, 1))), Tensor(rng.uniform(size=(8, 64, 64, 1)))

    def conv_fwd(be):
        return lambda: be.conv2d_forward(x, w, b, 1, 1)

    def conv_bwd(be):
        out, cache = be.conv2d_forward(x, w, b, 1, 1)
        g = np.ones_like(out)
        return lambda: be.conv2d_backward(g, cache, w, x.shape, 1, 1)

    def conv1d_fwd(be):
        return lambda: be.conv2d_forward(x1, w1, b[:4], 0, 3)

    def pool(be):
        return lambda: be.maxpool2_backward(*_pool_args(be))

    def _pool_args(be):
        out, idx = be.maxpool2_forward(x)
        return np.ones_like(out), idx, x.shape

    def lcn(be):
        return lambda: be.lcn_forward(xl, wl, b[:2], 1, 1)

    def unet_step(be):
        def step():
            prev = kernels.use(be.NAME)
            try:
                m = build_model(spec, 0)
                backward(mse_loss(m(xu), tu))
            finally:
                kernels.use(prev)
        return step

    return [("conv2d fwd 8x64x64x8->16", conv_fwd), ("conv2d bwd", conv_bwd),
            ("conv1d fwd 32x30, k=7", conv1d_fwd), ("maxpool2 bwd", pool),
            ("lcn fwd 16x16", lcn), ("U-Net(3) train step, batch 8", unet_step)]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    names = [n for n in ("python", "cython") if n in kernels.available()]
    print(f"{'operation':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, make in cases():
        ts = [best_of(make(kernels.get_backend(n)), args.repeats) for n in names]
        line = f"{label:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in ts)
        if len(ts) == 2:
            line += f"{ts[0] / ts[1]:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
