"""Time the compiled column kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

Shapes follow the Indian Pines raw-pixel setup (200 bands, 150 atoms for
IRLS, 30 atoms for ISTA).  Prints best-of-``repeat`` wall time for each
path, the speedup, and the largest absolute difference between outputs.
"""

import argparse
import time

import numpy as np

from drddl import _kernels as K
from drddl.solvers import lipschitz, pinv


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(n, seed):
    rng = np.random.default_rng(seed)
    D1 = rng.standard_normal((200, 150))
    D1 /= np.linalg.norm(D1, axis=0)
    X = rng.standard_normal((200, n))
    D3 = rng.standard_normal((100, 30))
    D3 /= np.linalg.norm(D3, axis=0)
    Y3 = rng.standard_normal((100, n))
    P1 = np.ascontiguousarray(pinv(D1))
    L3 = lipschitz(D3)
    Dt3 = np.ascontiguousarray(D3.T)
    Z0 = np.zeros((30, n))
    empty = np.zeros((0, 0))
    return {
        "matvec_cols": (lambda f: f(P1, X), K.matvec_cols_nb, K.matvec_cols_np),
        "ista_cols": (lambda f: f(D3, Dt3, Y3, Z0, 0.2, L3, 500, 1e-8, empty)[0],
                      K.ista_cols_nb, K.ista_cols_np),
        "irls_cols": (lambda f: f(D1, P1, X, 50, 1e-6, 1e-8)[0],
                      K.irls_cols_nb, K.irls_cols_np),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500, help="columns per call")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"{'kernel':<12} {'numba s':>10} {'numpy s':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, (run, nb, np_) in cases(args.n, args.seed).items():
        run(nb)  # compile outside the timed region
        t_nb, out_nb = best_of(lambda: run(nb), args.repeat)
        t_np, out_np = best_of(lambda: run(np_), args.repeat)
        diff = float(np.max(np.abs(out_nb - out_np)))
        print(f"{name:<12} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
