"""Compare the compiled and pure-Python NUTS backends on a logistic posterior.

Usage::

    python3 benchmarks/bench_nuts.py [--n 300] [--p 10] [--samples 2000] [--warmup 500]

Both backends consume the same momenta and per-iteration seeds, so the
script also reports the largest difference between the two chains.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from laplace_audit import fit_laplace, generate_logistic_data, logistic_target, nuts_sample
from laplace_audit.reference import available_backends


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--warmup", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    data = generate_logistic_data(args.n, args.p, args.seed)
    target = logistic_target(data)
    _, st = fit_laplace(target, init=np.full(args.p, 1.0 / np.sqrt(args.p)))
    backends = available_backends()
    chains, times = {}, {}
    for b in backends:
        t0 = time.perf_counter()
        chains[b] = nuts_sample(target, n_samples=args.samples, n_warmup=args.warmup,
                                seed=args.seed, st=st, backend=b)
        times[b] = time.perf_counter() - t0
    leap = int(np.sum(chains[backends[0]].n_leapfrog))
    print(f"logistic n={args.n} p={args.p}: {args.samples} draws + {args.warmup} warmup, "
          f"{leap} sampling leapfrogs")
    for b in backends:
        print(f"  {b:<8} {times[b]:8.3f} s   {args.samples / times[b]:10.0f} draws/s")
    if len(backends) == 2:
        a, c = (chains[b].samples for b in backends)
        print(f"  speedup {times['python'] / times['cython']:.1f}x, "
              f"max |difference| between chains {np.max(np.abs(a - c)):.3g}")
    else:
        print("  compiled backend not built; only the Python backend was timed")


if __name__ == "__main__":
    main()
