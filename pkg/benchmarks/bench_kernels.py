"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 200 500 1000] [--N 1] [--repeat 5]

Times each kernel on its own, then a full centralized solve with each
backend swapped in, and reports the largest difference between the two
solutions. The compiled kernels fix the summation order (which makes block
and centralized products agree bit for bit); BLAS is usually faster.
"""
from __future__ import annotations

import argparse
import contextlib
import timeit

import numpy as np

from fedot import kernels
from fedot.core import FLOOR, gibbs_kernel, solve_centralized
from fedot.stop import StopPolicy
from fedot.synth import GenSpec, generate

KERNEL_FUNCS = ("gemm_rows", "gemm_cols", "ratio", "residual")


@contextlib.contextmanager
def use_kernels(name):
    impl = kernels.load(name)
    saved = {f: getattr(kernels, f) for f in KERNEL_FUNCS}
    for f in KERNEL_FUNCS:
        setattr(kernels, f, getattr(impl, f))
    try:
        yield impl
    finally:
        for f, fn in saved.items():
            setattr(kernels, f, fn)


def available():
    names = []
    for name in kernels.BACKENDS:
        try:
            kernels.load(name)
            names.append(name)
        except ImportError:
            pass
    return names


def bench_ops(impl, n, N, repeat):
    rng = np.random.default_rng(0)
    K = np.ascontiguousarray(rng.random((n, n)))
    X = np.ascontiguousarray(rng.random((n, N)))
    M = np.ascontiguousarray(rng.random((n, N)))
    calls = {
        "gemm_rows": lambda: impl.gemm_rows(K, X),
        "gemm_cols": lambda: impl.gemm_cols(K, X),
        "ratio": lambda: impl.ratio(M, X, FLOOR),
        "residual": lambda: impl.residual(X, M, M),
    }
    number = max(1, 2_000_000 // (n * n))
    return {op: min(timeit.repeat(fn, number=number, repeat=repeat)) / number for op, fn in calls.items()}


def bench_solve(name, problem, K, stop):
    with use_kernels(name):
        t = timeit.default_timer()
        res = solve_centralized(problem, stop, kernel=K)
        return timeit.default_timer() - t, res


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[200, 500, 1000])
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=0.05)
    args = p.parse_args(argv)

    names = available()
    print(f"backends: {', '.join(names)} (selected at import: {kernels.NAME})")
    print(f"{'n':>6} {'op':<10} " + " ".join(f"{nm + ' [us]':>14}" for nm in names))
    for n in args.n:
        times = {nm: bench_ops(kernels.load(nm), n, args.N, args.repeat) for nm in names}
        for op in KERNEL_FUNCS:
            print(f"{n:>6} {op:<10} " + " ".join(f"{times[nm][op] * 1e6:>14.1f}" for nm in names))

    print()
    print(f"{'n':>6} {'backend':<8} {'iters':>6} {'solve [s]':>10} {'max |du|':>10}")
    stop = StopPolicy(threshold=1e-9, max_iterations=5000, divergence_iterations=None)
    for n in args.n:
        problem = generate(GenSpec(n=n, N=args.N, epsilon=args.epsilon))
        K = gibbs_kernel(problem.C, problem.epsilon)
        ref = None
        for nm in names:
            secs, res = bench_solve(nm, problem, K, stop)
            du = 0.0 if ref is None else float(np.max(np.abs(res.state.u - ref.state.u)))
            ref = ref or res
            print(f"{n:>6} {nm:<8} {res.iterations:>6} {secs:>10.3f} {du:>10.2e}")


if __name__ == "__main__":
    main()
