"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py --paths 200000 --repeat 3
"""
import argparse
import time

import numpy as np

from reachlp import kernels
from reachlp.data import load
from reachlp.grid import GridSpec, build_grid, parse_rect
from reachlp.reach import constrained_reach
from reachlp.sim import _cumulative, _trap_states, compile_chain


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def simulate_case(n):
    m = load("m5")
    A = frozenset({m.state_id("4")})
    B = frozenset({m.state_id("1"), m.state_id("2")})
    nu = np.full(5, 0.2)
    tp = constrained_reach(m, A, B, nu, 0.5).policy
    chain = compile_chain(m, tp)
    in_b = np.zeros(5, dtype=np.uint8)
    in_b[sorted(B)] = 1
    stop = np.zeros(5, dtype=np.uint8)
    stop[sorted(A)] = 1
    args = (np.uint64(7), 0, n, _cumulative(nu), 100, chain.pol_ptr, chain.pol_pair,
            chain.pol_cum, chain.ker_ptr, chain.ker_dest, chain.ker_cum, in_b, stop,
            _trap_states(m))
    return lambda k: k.simulate_batch(*args)


def bellman_case(size, sweeps):
    spec = GridSpec(size, size, 0.3, target_cells=parse_rect(f"{size // 2}:{size // 2 + 2},0:{size}"))
    m, _ = build_grid(spec)
    P = m.transitions
    indptr, indices = P.indptr.astype(np.int64), P.indices.astype(np.int64)
    data, ptr = P.data.astype(float), m.state_ptr

    def run(k):
        v = np.random.default_rng(0).random(m.n_states)
        out = np.empty_like(v)
        for _ in range(sweeps):
            k.bellman_sweep(indptr, indices, data, ptr, v, out)
            v, out = out, v
        return v
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--grid", type=int, default=60, help="side of the square grid for sweeps")
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    cases = {f"simulate_batch ({args.paths} M5 paths)": simulate_case(args.paths),
             f"bellman_sweep ({args.sweeps} sweeps, {args.grid}x{args.grid} grid)":
                 bellman_case(args.grid, args.sweeps)}
    names = sorted(kernels.BACKENDS)
    print(f"{'kernel':<48}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}  identical")
    for label, fn in cases.items():
        res = {n: best_of(lambda: fn(kernels.BACKENDS[n]), args.repeat) for n in names}
        outs = [res[n][1] for n in names]
        flat = [tuple(np.asarray(a).tobytes() for a in (o if isinstance(o, tuple) else (o,)))
                for o in outs]
        same = all(f == flat[0] for f in flat)
        speed = (res["python"][0] / res["compiled"][0]) if "compiled" in res else float("nan")
        print(f"{label:<48}" + "".join(f"{res[n][0]:>11.4f}s" for n in names)
              + f"{speed:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
