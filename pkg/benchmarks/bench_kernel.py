"""Time the compiled and numpy loss kernels on the same programs.

    python benchmarks/bench_kernel.py [--graphs 50] [--repeat 20]

Reports nanoseconds per element for forward and forward+gradient at a few
batch shapes, for each backend and for the size-based default ("auto").
Both backends are checked for agreement before anything is timed.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from lossforge import kernel
from lossforge.evolve import random_graph
from lossforge.integrity import has_cycle
from lossforge.references import reference_loss

SHAPES = [(64, 3), (64, 10), (1000, 10), (2009, 2)]


def _programs(n: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    out = [reference_loss(name).program for name in ("ce", "neuroloss1", "bessel")]
    while len(out) < n + 3:
        g = random_graph(rng)
        if not has_cycle(g):
            out.append(g.program)
    return out


def _inputs(shape, rng):
    y = np.zeros(shape)
    y[np.arange(shape[0]), rng.integers(shape[1], size=shape[0])] = 1.0
    yhat = rng.dirichlet(np.ones(shape[1]), size=shape[0])
    return y, yhat


def _agree(programs, rng) -> None:
    c, p = kernel.BACKENDS["cython"], kernel.BACKENDS["python"]
    y, yhat = _inputs((64, 3), rng)
    with np.errstate(all="ignore"):
        for prog in programs:
            vc, gc = c.forward_grad(prog, y, yhat)
            vp, gp = p.forward_grad(prog, y, yhat)
            np.testing.assert_allclose(vc, vp, rtol=1e-12, atol=1e-300, equal_nan=True)
            np.testing.assert_allclose(gc, gp, rtol=1e-9, atol=1e-12, equal_nan=True)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--graphs", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if "cython" not in kernel.BACKENDS:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(args.seed)
    programs = _programs(args.graphs, args.seed)
    _agree(programs, rng)
    print(f"{len(programs)} programs, mean {np.mean([len(p) for p in programs]):.1f} instructions")
    impls = {**kernel.BACKENDS, "auto": kernel}
    print(f"{'shape':>11} {'call':>13} {'python ns/el':>13} {'cython ns/el':>13} "
          f"{'auto ns/el':>11} {'cython speedup':>15}")
    for shape in SHAPES:
        y, yhat = _inputs(shape, rng)
        n = y.size * len(programs)
        for call in ("forward", "forward_grad"):
            times = {}
            for name, impl in impls.items():
                fn = getattr(impl, call)

                def work():
                    for prog in programs:
                        fn(prog, y, yhat)
                with np.errstate(all="ignore"):
                    best = min(timeit.repeat(work, number=1, repeat=args.repeat))
                times[name] = best / n * 1e9
            print(f"{str(shape):>11} {call:>13} {times['python']:13.1f} {times['cython']:13.1f} "
                  f"{times['auto']:11.1f} {times['python'] / times['cython']:14.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
