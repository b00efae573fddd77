"""Compare the compiled and numpy observation kernels on random ensembles.

    python3 benchmarks/bench_kernels.py --N 20 40 60 --M 500
"""

import argparse
import timeit

import numpy as np

from dlsn_smc import kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, nargs="+", default=[20, 40, 60])
    ap.add_argument("--M", type=int, default=500)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    print(f"{'N':>4} {'M':>6} " + " ".join(f"{name:>12}" for name in backends) + "   max |diff|")
    for N in args.N:
        X = rng.normal(size=(args.M, N, 2))
        Y = np.triu(rng.random((N, N)) < 0.3, 1).astype(np.int64)
        Y = Y + Y.T
        times, outs = [], []
        for mod in backends.values():
            outs.append(mod.obs_loglik(X, Y, 1.0))
            t = timeit.timeit(lambda: mod.obs_loglik(X, Y, 1.0), number=args.repeats)
            times.append(t / args.repeats)
        diff = max(float(np.max(np.abs(o - outs[0]))) for o in outs)
        print(f"{N:>4} {args.M:>6} " + " ".join(f"{1e3 * t:>10.3f}ms" for t in times) + f"   {diff:.1e}")


if __name__ == "__main__":
    main()
