#!/usr/bin/env python3
"""Benchmark the convolution hot paths: numba backend vs pure numpy.

Runs the forward pass, the kernel-gradient pass and the input-gradient pass
on the desk-scale layer shapes and on the full-scale first block, printing a
table with per-call times and the numba speedup.

Usage:
    python benchmarks/bench_kernels.py [--reps N]

Run without ARIM_BACKEND set (or with ARIM_BACKEND=numba) to compare both
paths; under ARIM_BACKEND=numpy the jitted kernels are not compiled and only
the numpy column is reported.
"""

import argparse
import time

import numpy as np

from arim import kernels

# (label, H, W, C_in, C_out, k)
SHAPES = [
    ("desk block1", 29, 512, 3, 8, 7),
    ("desk block2", 15, 512, 8, 12, 5),
    ("desk block3", 8, 512, 12, 16, 3),
    ("desk block4", 1, 512, 16, 16, 3),
    ("full block1", 154, 2048, 3, 32, 13),
]


def time_call(fn, *args, reps):
    fn(*args)  # warmup / JIT
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps


def rotated(kernels_arr):
    return np.ascontiguousarray(kernels_arr[::-1, ::-1].transpose(0, 1, 3, 2))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=5)
    parser.add_argument("--skip-full", action="store_true",
                        help="skip the full-scale shape (slow on small machines)")
    args = parser.parse_args()

    if kernels.numba_conv2d_forward is None:
        print("numba backend unavailable; timing numpy only")

    header = f"{'shape':14s} {'pass':8s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for label, h, w, ci, co, k in SHAPES:
        if args.skip_full and label.startswith("full"):
            continue
        x = rng.standard_normal((h, w, ci))
        ker = rng.standard_normal((k, k, ci, co))
        bias = np.zeros(co)
        g = rng.standard_normal((h, w, co))
        ker_rot = rotated(ker)
        have_numba = kernels.numba_conv2d_forward is not None
        passes = [
            ("forward", kernels.numpy_conv2d_forward, (x, ker, bias),
             kernels.conv2d_forward if have_numba else None),
            ("grad-k", kernels.numpy_conv2d_grad_kernels, (x, g, k),
             kernels.conv2d_grad_kernels if have_numba else None),
            ("grad-in", kernels.numpy_conv2d_forward, (g, ker_rot, np.zeros(ci)),
             kernels.conv2d_forward if have_numba else None),
        ]
        for name, np_fn, np_args, nb_fn in passes:
            t_np = time_call(np_fn, *np_args, reps=args.reps)
            if nb_fn is not None:
                t_nb = time_call(nb_fn, *np_args, reps=args.reps)
                print(f"{label:14s} {name:8s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} "
                      f"{t_np / t_nb:7.2f}x")
            else:
                print(f"{label:14s} {name:8s} {t_np * 1e3:10.2f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
