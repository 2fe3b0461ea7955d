"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_backends.py [--side 8] [--repeat 3]

Each workload is run on both backends with identical inputs; outputs are
compared so a speed-up never hides a divergence.
"""
import argparse
import time

import numpy as np

from pamcat import _fallback
from pamcat.exclusion import TorusLattice
from pamcat.pam import step_limit

try:
    from pamcat import _core
except ImportError:  # extension not built
    _core = None


def workloads(side):
    lat = TorusLattice(side)
    nbr, ba, bb = lat.neighbors, lat.bond_a, lat.bond_b
    times = np.array([0.5, 1.0])
    seed = 12345

    def fk(mod):
        out = np.empty((200, 2, 1))
        mod.fk_integrals(nbr, ba, bb, 0.5, 1.0, 1, times, seed, 0, 0, out)
        return out

    def stir(mod):
        occ = (np.arange(lat.site_count) % 2).astype(np.uint8)
        mod.stir(occ, ba, bb, 5.0, seed, 1)
        return occ

    def replicas(mod):
        out = np.empty((200, 2, 4), dtype=np.uint8)
        occ0 = np.zeros(lat.site_count, dtype=np.uint8)
        mod.replica_occupancy(occ0, True, 0.3, ba, bb, times, np.arange(4, dtype=np.int64),
                              seed, 0, 0, out)
        return out

    ev_t, ev_b, _ = _fallback.stir_events(lat.bond_count, 1.0, seed, 2)

    def rk4(mod):
        u = np.ones(lat.site_count)
        occ = (np.arange(lat.site_count) % 3 == 0).astype(np.uint8)
        mod.solve_rk4(u, nbr, occ, ev_t, ev_b, ba, bb, 1.0, 1.0, step_limit(1.0))
        return u

    return {"fk_integrals (200 paths)": fk, "stir (t=5)": stir,
            "replica_occupancy (200)": replicas, "solve_rk4 (t=1)": rk4}


def best_time(fn, mod, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(mod)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _core is None:
        raise SystemExit("compiled extension not available; build with `pip install -e .`")
    print(f"{'workload':28s} {'cython (s)':>11s} {'python (s)':>11s} {'speed-up':>9s}  match")
    for name, fn in workloads(args.side).items():
        tc, oc = best_time(fn, _core, args.repeat)
        tp, op = best_time(fn, _fallback, args.repeat)
        same = np.array_equal(oc, op) if oc.dtype != np.float64 or name.startswith("fk") \
            else np.allclose(oc, op, rtol=1e-12)
        print(f"{name:28s} {tc:11.5f} {tp:11.5f} {tp / tc:9.0f}  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
