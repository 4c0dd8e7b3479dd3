"""Compare the compiled kernels with the pure-Python fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--n 20] [--repeat 3]

Times CSR matvec, DIC factorisation, one DIC preconditioner application and a
full PCG solve on the TPFA system of the hex(n) manufactured problem, then
prints the best time of each and the speed-up.
"""

import argparse
import time

import numpy as np

from polyfv import kernels
from polyfv.generate import GenSpec, generate
from polyfv.solver import assemble_tpfa
from polyfv.study import manufactured_problem


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(be, s):
    d, _ = be.dic_factor(s.indptr, s.indices, s.data)
    x = np.ones(s.n)
    out = np.empty(s.n)

    def pcg():
        sol = np.zeros(s.n)
        be.pcg(s.indptr, s.indices, s.data, d, s.b, sol, 1e-16, 10000, False)

    return {
        "matvec": lambda: be.csr_matvec(s.indptr, s.indices, s.data, x, out),
        "dic_factor": lambda: be.dic_factor(s.indptr, s.indices, s.data),
        "dic_apply": lambda: be.dic_apply(s.indptr, s.indices, s.data, d, x, out),
        "pcg_solve": pcg,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="hex")
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    s = assemble_tpfa(generate(GenSpec.default(args.family, args.n)), f=manufactured_problem()[1])
    compiled, pure = kernels.backend(), kernels.backend(pure=True)
    print(f"{args.family}(n={args.n}): {s.n} unknowns, {len(s.data)} non-zeros; "
          f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<12s} {'compiled [s]':>14s} {'python [s]':>14s} {'speed-up':>10s}")
    fast, slow = cases(compiled, s), cases(pure, s)
    for name in fast:
        tc = best_of(fast[name], args.repeat)
        tp = best_of(slow[name], args.repeat)
        print(f"{name:<12s} {tc:14.3e} {tp:14.3e} {tp / tc:10.1f}")


if __name__ == "__main__":
    main()
