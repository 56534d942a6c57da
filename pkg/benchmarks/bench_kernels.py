#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py --n 2000 --p 20 --d 7 --repeat 20

Each kernel is called once before timing so numba compilation is excluded.
Prints one CSV row per kernel: name, numpy seconds, numba seconds, speedup.
With ``--fit`` a last row times a whole sparse fit on simulated data under
each backend (swapped in at runtime, best of 3).
"""
import argparse
import sys
import timeit

import numpy as np

from sicpln import _kernels


def make_inputs(n, p, d, seed):
    rng = np.random.default_rng(seed)
    X = np.hstack([np.ones((n, 1)), rng.uniform(0.5, 1.5, (n, d - 1))])
    B = rng.normal(0, 0.3, (d, p))
    O = np.zeros((n, p))
    M = rng.normal(0, 0.5, (n, p))
    S = rng.uniform(0.1, 0.5, (n, p))
    XB = X @ B
    A = np.exp(O + XB + M + 0.5 * S ** 2)
    Y = rng.poisson(A).astype(float)
    Omega = np.linalg.inv(np.cov(M, rowvar=False) + np.eye(p))
    G = Y - A - M @ Omega
    return {
        "exp_mean": (O, XB, M, S),
        "elbo_data": (Y, O, XB, M, S, A),
        "gram_blocks": (X, A),
        "column_loglik": (Y, XB, O, M, S),
        "row_newton": (G, A, Omega),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--p", type=int, default=20)
    ap.add_argument("--d", type=int, default=7)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fit", action="store_true", help="also time an end-to-end fit")
    args = ap.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    inputs = make_inputs(args.n, args.p, args.d, args.seed)
    print("kernel,numpy_s,numba_s,speedup")
    for name, call_args in inputs.items():
        f_np = getattr(_kernels.numpy_impl, name)
        f_nb = getattr(_kernels.numba_impl, name)
        f_nb(*call_args)  # compile
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat))
        print(f"{name},{t_np:.3e},{t_nb:.3e},{t_np / t_nb:.2f}")
    if args.fit:
        t_np, t_nb = time_fit(args)
        print(f"sicpln_fit,{t_np:.3e},{t_nb:.3e},{t_np / t_nb:.2f}")
    return 0


def time_fit(args):
    from sicpln import SimScenario, gen_counts, sicpln_fit

    data = gen_counts(SimScenario(n=args.n, p=args.p, d=args.d - 1, seed=args.seed)).dataset
    saved = _kernels.backend
    times = []
    try:
        for impl in (_kernels.numpy_impl, _kernels.numba_impl):
            _kernels.backend = impl
            sicpln_fit(data)
            times.append(min(timeit.repeat(lambda: sicpln_fit(data), number=1, repeat=3)))
    finally:
        _kernels.backend = saved
    return times


if __name__ == "__main__":
    sys.exit(main())
