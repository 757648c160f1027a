"""Time the compiled lattice kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--m 40] [--L 6] [--K 4] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from segen import _kernels_py, kernels


def random_lattice(rng, m, L, K):
    J = K + 1
    gen = rng.normal(-3.0, 1.0, (m, L, J))
    for a in range(m):
        gen[a, m - a:, :] = -np.inf
    trans = np.log(rng.dirichlet(np.ones(J), size=(m + 1, J)))
    idx = np.arange(J)
    trans[1:, idx, idx] = -np.inf
    return gen, trans


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=40)
    ap.add_argument("--L", type=int, default=6)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    gen, trans = random_lattice(np.random.default_rng(0), args.m, args.L, args.K)
    print(f"m={args.m} L={args.L} K={args.K} repeat={args.repeat} compiled backend: {kernels.BACKEND}")
    impls = {"python": _kernels_py}
    if kernels.BACKEND == "cython":
        from segen import _kernels

        impls["cython"] = _kernels
    base = {}
    for fn in ("semimarkov_forward", "semimarkov_viterbi"):
        for name, mod in impls.items():
            f = getattr(mod, fn)
            sec = min(timeit.repeat(lambda: f(gen, trans), number=args.repeat, repeat=3)) / args.repeat
            base.setdefault(fn, sec)
            print(f"{fn:20s} {name:7s} {sec * 1e3:9.3f} ms  x{base[fn] / sec:6.1f}")
    if "cython" in impls:
        a, c = _kernels_py.semimarkov_forward(gen, trans)
        b, d = impls["cython"].semimarkov_forward(gen, trans)
        print(f"max |alpha diff| {np.nanmax(np.abs(np.where(np.isfinite(a), a - b, 0))):.2e}")


if __name__ == "__main__":
    main()
