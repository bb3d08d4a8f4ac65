"""Timing comparison of the jitted kernels against the pure-numpy fallback.

Runs every hot kernel plus one full layer step at a desk-scale problem size
and prints a table of per-call times for both backends. Usage:

    python3 bench/bench_backends.py [--height 32] [--width 32] [--bands 8]
                                    [--repeat 20]
"""

import argparse
import time

import numpy as np

from eqcsc import kernels
from eqcsc.model import ModelConfig, init_model_params, layer_step


def best_time(fn, repeat):
    fn()  # warm call: JIT, allocator, caches
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_cases(height, width, bands):
    rng = np.random.default_rng(0)
    cfg = ModelConfig()
    m, j = cfg.atoms2d, cfg.atoms3d
    k, ks, kb = cfg.kernel2d, cfg.kernel3d_space, cfg.kernel3d_bands

    w2 = rng.standard_normal((m, bands, k, k))
    s = rng.standard_normal((m, height, width))
    r = rng.standard_normal((bands, height, width))
    d3 = rng.standard_normal((j, kb, ks, ks))
    h = rng.standard_normal((j, bands, height, width))
    kern = rng.standard_normal((3, 3, 3))

    params = init_model_params(cfg, bands, np.random.default_rng(1))
    y = rng.random((bands, height, width))
    state = params.zero_state(height, width)

    return [
        ("corr2d_mc", lambda: kernels.corr2d_mc(w2, s)),
        ("corr2d_mc_adj", lambda: kernels.corr2d_mc_adj(w2, r)),
        ("corr2d_mc_wgrad", lambda: kernels.corr2d_mc_wgrad(s, r, k)),
        ("corr3d_mc", lambda: kernels.corr3d_mc(d3, h)),
        ("corr3d_mc_adj", lambda: kernels.corr3d_mc_adj(d3, r)),
        ("corr3d_mc_wgrad", lambda: kernels.corr3d_mc_wgrad(h, r, kb, ks)),
        ("diff3 (central)", lambda: kernels.diff3(h, kern, 1)),
        ("diff3_bwd (central)", lambda: kernels.diff3_bwd(h, kern, 1, h)),
        ("layer_step", lambda: layer_step(state, y, params)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--height", type=int, default=32)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--bands", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(
        f"problem: {args.bands}x{args.height}x{args.width}, "
        f"atoms {ModelConfig().atoms2d}/{ModelConfig().atoms3d}, "
        f"best of {args.repeat}"
    )
    cases = build_cases(args.height, args.width, args.bands)
    times = {}
    for backend in backends:
        prev = kernels.set_backend(backend)
        try:
            kernels.warmup()
            for name, fn in cases:
                times[(backend, name)] = best_time(fn, args.repeat)
        finally:
            kernels.set_backend(prev)

    name_w = max(len(name) for name, _ in cases)
    header = f"{'kernel':<{name_w}}" + "".join(f"  {b + ' (ms)':>12}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    for name, _ in cases:
        row = f"{name:<{name_w}}"
        vals = [times[(b, name)] for b in backends]
        for v in vals:
            row += f"  {v * 1e3:>12.3f}"
        if len(vals) == 2:
            # backends sort as [numba, numpy]; speedup = numpy over numba
            row += f"  {vals[1] / vals[0]:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
