"""Pure-Python event loops, mirroring :mod:`pamcat._core` operation by operation.

Used when the compiled extension is unavailable or ``PAMCAT_BACKEND=python``.
The stochastic kernels reproduce the compiled ones bit for bit; they are just
ten to thirty times slower (see ``benchmarks/bench_backends.py``).
"""
import math

import numpy as np

BACKEND = "python"

_CHUNK = 512


class _Stream:
    """Sequential reader over a Philox4x64-10 stream keyed by (seed, stream)."""

    __slots__ = ("_gen", "_buf", "_pos", "_start", "_used")

    def __init__(self, seed, stream, counter=0):
        key = np.array([seed, stream], dtype=np.uint64)
        ctr = np.array([counter // 4, 0, 0, 0], dtype=np.uint64)
        self._gen = np.random.Philox(key=key, counter=ctr)
        self._start = (counter // 4) * 4
        self._used = 0
        self._buf = self._gen.random_raw(_CHUNK).tolist()
        self._pos = 0
        for _ in range(counter % 4):
            self.next()

    def next(self):
        if self._pos == len(self._buf):
            self._buf = self._gen.random_raw(_CHUNK).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        self._used += 1
        return v

    def uniform(self):
        return (self.next() >> 11) * 2.0**-53

    @property
    def counter(self):
        return self._start + self._used


def random_raw(seed, stream, n, counter=0):
    s = _Stream(seed, stream, counter)
    return np.array([s.next() for _ in range(n)], dtype=np.uint64)


def uniforms(seed, stream, n, counter=0):
    s = _Stream(seed, stream, counter)
    return np.array([s.uniform() for _ in range(n)], dtype=np.float64)


def _integral(occ, vac, t):
    if vac <= occ:
        return t - vac
    return occ


def bernoulli(n, rho, seed, stream, counter=0):
    s = _Stream(seed, stream, counter)
    out = np.array([1 if s.uniform() < rho else 0 for _ in range(n)], dtype=np.uint8)
    return out, s.counter


def stir(occ, ba, bb, dt, seed, stream, counter=0):
    s = _Stream(seed, stream, counter)
    nb = len(ba)
    rate = nb / 6.0
    ba = ba.tolist()
    bb = bb.tolist()
    t = 0.0
    while True:
        t += -math.log1p(-s.uniform()) / rate
        if t > dt:
            break
        j = int(s.uniform() * nb)
        if j >= nb:
            j = nb - 1
        a, b = ba[j], bb[j]
        occ[a], occ[b] = occ[b], occ[a]
    return s.counter


def stir_events(nb, t_final, seed, stream, counter=0):
    s = _Stream(seed, stream, counter)
    rate = nb / 6.0
    times, bonds = [], []
    t = 0.0
    while True:
        t += -math.log1p(-s.uniform()) / rate
        if t > t_final:
            break
        j = int(s.uniform() * nb)
        if j >= nb:
            j = nb - 1
        times.append(t)
        bonds.append(j)
    return np.array(times, dtype=np.float64), np.array(bonds, dtype=np.int64), s.counter


def fk_integrals(nbr, ba, bb, rho, kappa, p, times, seed, stream0, sample0, out):
    n_samples, nt = out.shape[0], len(times)
    n_sites, nb = nbr.shape[0], len(ba)
    rate_ex = nb / 6.0
    R = nb / 6.0 + 6.0 * p * kappa
    nbr_l = nbr.tolist()
    ba_l, bb_l = ba.tolist(), bb.tolist()
    times = [float(x) for x in times]
    for i in range(n_samples):
        s = _Stream(seed, stream0 + sample0 + i, 0)
        occ = [1 if s.uniform() < rho else 0 for _ in range(n_sites)]
        pos = [0] * p
        ot = [0.0] * p
        vt = [0.0] * p
        t = 0.0
        k = 0
        while k < nt:
            tn = t + (-math.log1p(-s.uniform()) / R)
            while k < nt and times[k] <= tn:
                d = times[k] - t
                for j in range(p):
                    if occ[pos[j]]:
                        ot[j] += d
                    else:
                        vt[j] += d
                t = times[k]
                for j in range(p):
                    out[i, k, j] = _integral(ot[j], vt[j], t)
                k += 1
            if k == nt:
                break
            d = tn - t
            for j in range(p):
                if occ[pos[j]]:
                    ot[j] += d
                else:
                    vt[j] += d
            t = tn
            x = s.uniform() * R
            if x < rate_ex:
                m = int(x * 6.0)
                if m >= nb:
                    m = nb - 1
                a, b = ba_l[m], bb_l[m]
                occ[a], occ[b] = occ[b], occ[a]
            else:
                m = int((x - rate_ex) / kappa)
                if m >= 6 * p:
                    m = 6 * p - 1
                j = m // 6
                pos[j] = nbr_l[pos[j]][m % 6]
    return out


def _rhs(u, occ, nbr, kappa):
    lap = (u[nbr] - u[:, None]).sum(axis=1)
    return kappa * lap + occ * u


def solve_rk4(u, nbr, occ, ev_times, ev_bonds, ba, bb, kappa, t_final, h_max):
    ne = len(ev_times)
    e = 0
    t = 0.0
    steps = 0
    occf = occ.astype(np.float64)
    while True:
        if e < ne and ev_times[e] < t_final:
            seg_end = float(ev_times[e])
        else:
            seg_end = t_final
        if seg_end > t:
            nsub = max(1, int(math.ceil((seg_end - t) / h_max)))
            h = (seg_end - t) / nsub
            for _ in range(nsub):
                k1 = _rhs(u, occf, nbr, kappa)
                k2 = _rhs(u + 0.5 * h * k1, occf, nbr, kappa)
                k3 = _rhs(u + 0.5 * h * k2, occf, nbr, kappa)
                k4 = _rhs(u + h * k3, occf, nbr, kappa)
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                steps += 1
        t = seg_end
        if seg_end >= t_final:
            break
        a, b = ba[ev_bonds[e]], bb[ev_bonds[e]]
        occ[a], occ[b] = occ[b], occ[a]
        occf[a], occf[b] = occf[b], occf[a]
        e += 1
    return steps


def _colex(occ, binom):
    idx = 0
    m = 0
    for c, o in enumerate(occ):
        if o:
            m += 1
            idx += binom[c][m]
    return idx


def sector_integrals(nbr, ba, bb, n_particles, binom, V, kappa, walker, times,
                     seed, stream0, sample0, out):
    n_samples, nt = out.shape
    n_sites, nb = nbr.shape[0], len(ba)
    rate_ex = nb / (6.0 * kappa)
    R = rate_ex + (6.0 if walker else 0.0)
    nbr_l = nbr.tolist()
    ba_l, bb_l = ba.tolist(), bb.tolist()
    binom_l = binom.tolist()
    V = V.tolist()
    times = [float(x) for x in times]
    for i in range(n_samples):
        s = _Stream(seed, stream0 + sample0 + i, 0)
        occ = [0] * n_sites
        perm = list(range(n_sites))
        for c in range(n_particles):
            r = c + int(s.uniform() * (n_sites - c))
            if r >= n_sites:
                r = n_sites - 1
            perm[c], perm[r] = perm[r], perm[c]
            occ[perm[c]] = 1
        x = int(s.uniform() * n_sites)
        if x >= n_sites:
            x = n_sites - 1
        idx = _colex(occ, binom_l)
        v = V[idx * n_sites + x]
        t = 0.0
        acc = 0.0
        k = 0
        while k < nt:
            tn = t + (-math.log1p(-s.uniform()) / R)
            while k < nt and times[k] <= tn:
                acc += v * (times[k] - t)
                t = times[k]
                out[i, k] = acc
                k += 1
            if k == nt:
                break
            acc += v * (tn - t)
            t = tn
            z = s.uniform() * R
            if z < rate_ex:
                m = int(z / rate_ex * nb)
                if m >= nb:
                    m = nb - 1
                a, b = ba_l[m], bb_l[m]
                if occ[a] != occ[b]:
                    occ[a], occ[b] = occ[b], occ[a]
                    idx = _colex(occ, binom_l)
            else:
                m = int((z - rate_ex) * 6.0 / (R - rate_ex))
                if m >= 6:
                    m = 5
                x = nbr_l[x][m]
            v = V[idx * n_sites + x]
    return out


_STEPS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def walker_potential_integrals(V, hit, start, reentry, radius, seed, stream0,
                               sample0, out, max_steps=100_000_000):
    n_samples = out.shape[0]
    for i in range(n_samples):
        s = _Stream(seed, stream0 + sample0 + i, 0)
        x0, x1, x2 = (int(c) for c in start)
        acc = 0.0
        steps = 0
        while steps < max_steps:
            steps += 1
            acc += V[x0 + radius, x1 + radius, x2 + radius] * (-math.log1p(-s.uniform()) / 6.0)
            dirn = int(s.uniform() * 6.0)
            if dirn >= 6:
                dirn = 5
            d0, d1, d2 = _STEPS[dirn]
            x0 += d0
            x1 += d1
            x2 += d2
            if max(abs(x0), abs(x1), abs(x2)) > radius:
                if s.uniform() < hit[x0 + radius + 1, x1 + radius + 1, x2 + radius + 1]:
                    x0, x1, x2 = (int(c) for c in reentry)
                else:
                    break
        out[i] = acc
    return out


def replica_occupancy(occ0, bernoulli_init, rho, ba, bb, times, sites, seed,
                      stream0, sample0, out):
    n_samples, nt, ns = out.shape
    n_sites, nb = len(occ0), len(ba)
    rate = nb / 6.0
    ba_l, bb_l = ba.tolist(), bb.tolist()
    sites = [int(c) for c in sites]
    times = [float(x) for x in times]
    occ0 = occ0.tolist()
    for i in range(n_samples):
        s = _Stream(seed, stream0 + sample0 + i, 0)
        if bernoulli_init:
            occ = [1 if s.uniform() < rho else 0 for _ in range(n_sites)]
        else:
            occ = list(occ0)
        t = 0.0
        k = 0
        while k < nt:
            t += -math.log1p(-s.uniform()) / rate
            while k < nt and times[k] < t:
                for c in range(ns):
                    out[i, k, c] = occ[sites[c]]
                k += 1
            if k == nt:
                break
            j = int(s.uniform() * nb)
            if j >= nb:
                j = nb - 1
            a, b = ba_l[j], bb_l[j]
            occ[a], occ[b] = occ[b], occ[a]
    return out
