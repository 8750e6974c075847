"""Time the numba kernels against their numpy twins.

Usage: python benchmarks/bench_kernels.py [--repeat R]

Each kernel is run once untimed (numba compilation), then ``R`` times; the
best wall-clock time is reported with the speedup and how far apart the two
outputs are (the queue loop accumulates in a different order under numpy).
"""

import argparse
import time

import numpy as np

from orderpos.kernels import numba_kernels, numpy_kernels
from orderpos.order_flow import MarkModel
from orderpos.special import debye_coefficients

VBAR = (1.0, 0.6, 0.8, 1.0, 0.7, 0.8)


def case_chain(k):
    cum, code, la, lb = MarkModel.from_mean_vector(VBAR).kernel_arrays()
    paths = 4
    counts = np.zeros((paths, 3), dtype=np.int64)
    states = np.zeros((paths, 0, 3))
    viol = np.zeros(paths, dtype=np.int64)
    k.chain_batch(1, 0, paths, cum, code, la, lb, 1000.0, 100.0, 100.0, 100.0, 10 ** 6,
                  np.zeros(0, dtype=np.int64), counts, states, viol)
    return counts


def case_lob(k):
    cum, code, la, lb = MarkModel.from_mean_vector(VBAR).kernel_arrays()
    cap = 200_000
    out = [np.empty(cap), np.empty(cap, dtype=np.int64), np.empty(cap), np.empty(cap),
           np.empty(cap), np.empty(cap)]
    res = k.lob_run(0, np.empty(0), 1, 0, 1000.0, 1.0, 0.0, 0.0, 90.0, cum, code, la, lb,
                    100.0, 100.0, 100.0, True, np.empty(0), True, False, *out)
    return out[5][:int(res[0])]


def case_exit(k):
    paths = 200
    t = np.empty(paths)
    s = np.empty(paths, dtype=np.int64)
    k.exit_euler(np.uint64(3), np.uint64(0), paths, 0.7, 0.7, 0.0, 0.0, np.pi / 2, 1e-4, 1.0, t, s)
    return np.concatenate([t, s])


def case_sign(k):
    paths = 200
    up = np.empty(paths, dtype=np.int64)
    last = np.empty(paths, dtype=np.int64)
    k.sign_chain(5, 0, paths, 10_000, 0.5, 0.25, 0.25, up, last)
    return up


def case_ive(k):
    rng = np.random.default_rng(0)
    nu = rng.uniform(0.0, 40.0, 20_000)
    x = 10.0 ** rng.uniform(-3.0, 2.0, 20_000)
    out = np.empty_like(x)
    k.ive_many(nu, x, debye_coefficients(), out)
    return out


CASES = {"chain_batch": case_chain, "lob_run": case_lob, "exit_euler": case_exit,
         "sign_chain": case_sign, "ive_many": case_ive}


def best_time(fn, kernels, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn(kernels)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':<12} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}  outputs")
    for name, fn in CASES.items():
        fn(numba_kernels)
        t_nb, r_nb = best_time(fn, numba_kernels, args.repeat)
        t_np, r_np = best_time(fn, numpy_kernels, max(1, args.repeat // 3))
        if np.array_equal(r_nb, r_np):
            same = "identical"
        elif r_nb.shape == r_np.shape:
            same = f"max abs diff {np.max(np.abs(r_nb - r_np)):.1e}"
        else:
            same = f"shapes differ {r_nb.shape} vs {r_np.shape}"
        print(f"{name:<12} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f}  {same}")


if __name__ == "__main__":
    main()
