# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loops.

Every function here has a line-for-line twin in :mod:`pamcat._fallback`.
Random draws come from a Philox4x64-10 counter stream keyed by
``(seed, stream)``, laid out exactly like :class:`numpy.random.Philox`, so
both backends consume identical random numbers and make identical discrete
decisions.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport log1p, ceil, INFINITY
from libc.stdint cimport uint8_t, int64_t, uint64_t

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    typedef struct {
        uint64_t k0, k1, block;
        uint64_t buf[4];
        int pos;
    } pc_stream;

    static inline void pc_block(pc_stream *s) {
        uint64_t c0 = s->block + 1, c1 = 0, c2 = 0, c3 = 0;
        uint64_t k0 = s->k0, k1 = s->k1;
        int r;
        if (c0 == 0) c1 = 1;
        for (r = 0; r < 10; r++) {
            __uint128_t p0, p1;
            uint64_t n0, n1, n2, n3;
            if (r > 0) {
                k0 += 0x9E3779B97F4A7C15ULL;
                k1 += 0xBB67AE8584CAA73BULL;
            }
            p0 = (__uint128_t)0xD2E7470EE14C6C93ULL * c0;
            p1 = (__uint128_t)0xCA5A826395121157ULL * c2;
            n0 = (uint64_t)(p1 >> 64) ^ c1 ^ k0;
            n1 = (uint64_t)p1;
            n2 = (uint64_t)(p0 >> 64) ^ c3 ^ k1;
            n3 = (uint64_t)p0;
            c0 = n0; c1 = n1; c2 = n2; c3 = n3;
        }
        s->buf[0] = c0; s->buf[1] = c1; s->buf[2] = c2; s->buf[3] = c3;
        s->pos = 0;
        s->block += 1;
    }

    static inline void pc_init(pc_stream *s, uint64_t seed, uint64_t stream,
                               uint64_t counter) {
        s->k0 = seed;
        s->k1 = stream;
        s->block = counter / 4;
        pc_block(s);
        s->pos = (int)(counter % 4);
    }

    static inline uint64_t pc_next(pc_stream *s) {
        if (s->pos >= 4) pc_block(s);
        return s->buf[s->pos++];
    }

    static inline double pc_uniform(pc_stream *s) {
        return (double)(pc_next(s) >> 11) * 0x1.0p-53;
    }

    static inline uint64_t pc_counter(pc_stream *s) {
        return (s->block - 1) * 4 + (uint64_t)s->pos;
    }
    """
    ctypedef struct pc_stream:
        pass
    void pc_init(pc_stream *s, uint64_t seed, uint64_t stream, uint64_t counter) nogil
    uint64_t pc_next(pc_stream *s) nogil
    double pc_uniform(pc_stream *s) nogil
    uint64_t pc_counter(pc_stream *s) nogil


BACKEND = "cython"


def random_raw(uint64_t seed, uint64_t stream, Py_ssize_t n, uint64_t counter=0):
    cdef pc_stream s
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[:] o = out
    pc_init(&s, seed, stream, counter)
    for i in range(n):
        o[i] = pc_next(&s)
    return out


def uniforms(uint64_t seed, uint64_t stream, Py_ssize_t n, uint64_t counter=0):
    cdef pc_stream s
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    pc_init(&s, seed, stream, counter)
    for i in range(n):
        o[i] = pc_uniform(&s)
    return out


cdef inline double _integral(double occ, double vac, double t) nogil:
    # exact for constant environments: full -> t, empty -> 0
    if vac <= occ:
        return t - vac
    return occ


def bernoulli(Py_ssize_t n, double rho, uint64_t seed, uint64_t stream,
              uint64_t counter=0):
    cdef pc_stream s
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.uint8)
    cdef uint8_t[:] o = out
    pc_init(&s, seed, stream, counter)
    for i in range(n):
        o[i] = 1 if pc_uniform(&s) < rho else 0
    return out, pc_counter(&s)


def stir(uint8_t[:] occ, const int64_t[:] ba, const int64_t[:] bb, double dt,
         uint64_t seed, uint64_t stream, uint64_t counter=0):
    """Apply stirring events over a time span ``dt`` in place."""
    cdef pc_stream s
    cdef Py_ssize_t nb = ba.shape[0], j
    cdef double rate = nb / 6.0, t = 0.0
    cdef uint8_t tmp
    pc_init(&s, seed, stream, counter)
    with nogil:
        while True:
            t += -log1p(-pc_uniform(&s)) / rate
            if t > dt:
                break
            j = <Py_ssize_t>(pc_uniform(&s) * nb)
            if j >= nb:
                j = nb - 1
            tmp = occ[ba[j]]
            occ[ba[j]] = occ[bb[j]]
            occ[bb[j]] = tmp
    return pc_counter(&s)


def stir_events(Py_ssize_t nb, double t_final, uint64_t seed, uint64_t stream,
                uint64_t counter=0):
    """Event times and bond indices of the stirring clock on ``[0, t_final]``."""
    cdef pc_stream s
    cdef Py_ssize_t cap = 64 + <Py_ssize_t>(2.0 * nb / 6.0 * t_final), n = 0, j
    cdef double rate = nb / 6.0, t = 0.0
    times = np.empty(cap, dtype=np.float64)
    bonds = np.empty(cap, dtype=np.int64)
    cdef double[:] tv = times
    cdef int64_t[:] bv = bonds
    pc_init(&s, seed, stream, counter)
    while True:
        t += -log1p(-pc_uniform(&s)) / rate
        if t > t_final:
            break
        j = <Py_ssize_t>(pc_uniform(&s) * nb)
        if j >= nb:
            j = nb - 1
        if n == cap:
            cap *= 2
            times = np.resize(times, cap)
            bonds = np.resize(bonds, cap)
            tv = times
            bv = bonds
        tv[n] = t
        bv[n] = j
        n += 1
    return times[:n].copy(), bonds[:n].copy(), pc_counter(&s)


def fk_integrals(const int64_t[:, :] nbr, const int64_t[:] ba, const int64_t[:] bb,
                 double rho, double kappa, Py_ssize_t p, const double[:] times,
                 uint64_t seed, uint64_t stream0, Py_ssize_t sample0,
                 double[:, :, :] out):
    """Occupation integrals of ``p`` rate-``6 kappa`` walkers in a stirred field.

    Sample ``i`` uses stream ``stream0 + sample0 + i`` and writes
    ``out[i, k, j] = int_0^{times[k]} xi_s(X^j_{kappa s}) ds``.
    """
    cdef Py_ssize_t n_samples = out.shape[0], nt = times.shape[0]
    cdef Py_ssize_t n_sites = nbr.shape[0], nb = ba.shape[0]
    cdef Py_ssize_t i, k, j, m, a, b, site
    cdef double rate_ex = nb / 6.0, R = nb / 6.0 + 6.0 * p * kappa
    cdef double t, tn, d, x
    cdef pc_stream s
    cdef uint8_t tmp
    occ_np = np.empty(n_sites, dtype=np.uint8)
    pos_np = np.empty(p, dtype=np.int64)
    ot_np = np.empty(p, dtype=np.float64)
    vt_np = np.empty(p, dtype=np.float64)
    cdef uint8_t[:] occ = occ_np
    cdef int64_t[:] pos = pos_np
    cdef double[:] ot = ot_np
    cdef double[:] vt = vt_np
    with nogil:
        for i in range(n_samples):
            pc_init(&s, seed, stream0 + <uint64_t>(sample0 + i), 0)
            for site in range(n_sites):
                occ[site] = 1 if pc_uniform(&s) < rho else 0
            for j in range(p):
                pos[j] = 0
                ot[j] = 0.0
                vt[j] = 0.0
            t = 0.0
            k = 0
            while k < nt:
                tn = t + (-log1p(-pc_uniform(&s)) / R)
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
                x = pc_uniform(&s) * R
                if x < rate_ex:
                    m = <Py_ssize_t>(x * 6.0)
                    if m >= nb:
                        m = nb - 1
                    a = ba[m]
                    b = bb[m]
                    tmp = occ[a]
                    occ[a] = occ[b]
                    occ[b] = tmp
                else:
                    m = <Py_ssize_t>((x - rate_ex) / kappa)
                    if m >= 6 * p:
                        m = 6 * p - 1
                    j = m // 6
                    pos[j] = nbr[pos[j], m % 6]
    return out


def solve_rk4(double[:] u, const int64_t[:, :] nbr, uint8_t[:] occ,
              const double[:] ev_times, const int64_t[:] ev_bonds,
              const int64_t[:] ba, const int64_t[:] bb,
              double kappa, double t_final, double h_max):
    """Integrate du/dt = kappa Lap u + occ * u through a list of stirring events.

    ``u`` and ``occ`` are updated in place; returns the number of RK4 steps.
    """
    cdef Py_ssize_t n = u.shape[0], ne = ev_times.shape[0]
    cdef Py_ssize_t e = 0, i, d, nsub, q, steps = 0
    cdef double t = 0.0, seg_end, h, lap
    cdef uint8_t tmp
    k1n = np.empty(n); k2n = np.empty(n); k3n = np.empty(n); k4n = np.empty(n)
    wn = np.empty(n)
    cdef double[:] k1 = k1n, k2 = k2n, k3 = k3n, k4 = k4n, w = wn
    with nogil:
        while True:
            if e < ne and ev_times[e] < t_final:
                seg_end = ev_times[e]
            else:
                seg_end = t_final
            if seg_end > t:
                nsub = <Py_ssize_t>ceil((seg_end - t) / h_max)
                if nsub < 1:
                    nsub = 1
                h = (seg_end - t) / nsub
                for q in range(nsub):
                    for i in range(n):
                        lap = 0.0
                        for d in range(6):
                            lap += u[nbr[i, d]] - u[i]
                        k1[i] = kappa * lap + occ[i] * u[i]
                    for i in range(n):
                        w[i] = u[i] + 0.5 * h * k1[i]
                    for i in range(n):
                        lap = 0.0
                        for d in range(6):
                            lap += w[nbr[i, d]] - w[i]
                        k2[i] = kappa * lap + occ[i] * w[i]
                    for i in range(n):
                        w[i] = u[i] + 0.5 * h * k2[i]
                    for i in range(n):
                        lap = 0.0
                        for d in range(6):
                            lap += w[nbr[i, d]] - w[i]
                        k3[i] = kappa * lap + occ[i] * w[i]
                    for i in range(n):
                        w[i] = u[i] + h * k3[i]
                    for i in range(n):
                        lap = 0.0
                        for d in range(6):
                            lap += w[nbr[i, d]] - w[i]
                        k4[i] = kappa * lap + occ[i] * w[i]
                    for i in range(n):
                        u[i] = u[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                    steps += 1
            t = seg_end
            if seg_end >= t_final:
                break
            tmp = occ[ba[ev_bonds[e]]]
            occ[ba[ev_bonds[e]]] = occ[bb[ev_bonds[e]]]
            occ[bb[ev_bonds[e]]] = tmp
            e += 1
    return steps


def sector_integrals(const int64_t[:, :] nbr, const int64_t[:] ba, const int64_t[:] bb,
                     Py_ssize_t n_particles, const int64_t[:, :] binom,
                     const double[:] V, double kappa, bint walker,
                     const double[:] times, uint64_t seed, uint64_t stream0,
                     Py_ssize_t sample0, double[:, :] out):
    """Integrals of a state potential along the exclusion-plus-walker chain.

    States are ``config_index * n_sites + walker_site`` with colex ranking of
    the occupied sites. Initial state is uniform on the sector.
    """
    cdef Py_ssize_t n_samples = out.shape[0], nt = times.shape[0]
    cdef Py_ssize_t n_sites = nbr.shape[0], nb = ba.shape[0]
    cdef Py_ssize_t i, k, c, m, a, b, x, idx, r, tmpi
    cdef double rate_ex = nb / (6.0 * kappa)
    cdef double R = rate_ex + (6.0 if walker else 0.0)
    cdef double t, tn, acc, v, z
    cdef pc_stream s
    cdef uint8_t tmp
    occ_np = np.empty(n_sites, dtype=np.uint8)
    perm_np = np.empty(n_sites, dtype=np.int64)
    cdef uint8_t[:] occ = occ_np
    cdef int64_t[:] perm = perm_np
    with nogil:
        for i in range(n_samples):
            pc_init(&s, seed, stream0 + <uint64_t>(sample0 + i), 0)
            for c in range(n_sites):
                occ[c] = 0
                perm[c] = c
            # partial Fisher-Yates: first n_particles entries form a uniform subset
            for c in range(n_particles):
                r = c + <Py_ssize_t>(pc_uniform(&s) * (n_sites - c))
                if r >= n_sites:
                    r = n_sites - 1
                tmpi = perm[c]
                perm[c] = perm[r]
                perm[r] = tmpi
                occ[perm[c]] = 1
            x = <Py_ssize_t>(pc_uniform(&s) * n_sites)
            if x >= n_sites:
                x = n_sites - 1
            idx = 0
            m = 0
            for c in range(n_sites):
                if occ[c]:
                    m += 1
                    idx += binom[c, m]
            v = V[idx * n_sites + x]
            t = 0.0
            acc = 0.0
            k = 0
            while k < nt:
                tn = t + (-log1p(-pc_uniform(&s)) / R)
                while k < nt and times[k] <= tn:
                    acc += v * (times[k] - t)
                    t = times[k]
                    out[i, k] = acc
                    k += 1
                if k == nt:
                    break
                acc += v * (tn - t)
                t = tn
                z = pc_uniform(&s) * R
                if z < rate_ex:
                    m = <Py_ssize_t>(z / rate_ex * nb)
                    if m >= nb:
                        m = nb - 1
                    a = ba[m]
                    b = bb[m]
                    if occ[a] != occ[b]:
                        tmp = occ[a]
                        occ[a] = occ[b]
                        occ[b] = tmp
                        idx = 0
                        m = 0
                        for c in range(n_sites):
                            if occ[c]:
                                m += 1
                                idx += binom[c, m]
                else:
                    m = <Py_ssize_t>((z - rate_ex) * 6.0 / (R - rate_ex))
                    if m >= 6:
                        m = 5
                    x = nbr[x, m]
                v = V[idx * n_sites + x]
    return out


def walker_potential_integrals(const double[:, :, :] V, const double[:, :, :] hit,
                               const int64_t[:] start, const int64_t[:] reentry,
                               Py_ssize_t radius, uint64_t seed, uint64_t stream0,
                               Py_ssize_t sample0, double[:] out,
                               Py_ssize_t max_steps=100000000):
    """``int_0^inf V(X_t) dt`` for a rate-6 walker on Z^3.

    ``V`` covers the sup-norm ball of ``radius`` (offset by ``radius``);
    ``hit`` covers the ball of ``radius + 1`` and holds, on its outer shell,
    the probability of ever returning to the ``reentry`` site.
    """
    cdef Py_ssize_t n_samples = out.shape[0], i, dirn, steps
    cdef Py_ssize_t x0, x1, x2
    cdef double acc
    cdef pc_stream s
    with nogil:
        for i in range(n_samples):
            pc_init(&s, seed, stream0 + <uint64_t>(sample0 + i), 0)
            x0 = start[0]
            x1 = start[1]
            x2 = start[2]
            acc = 0.0
            steps = 0
            while steps < max_steps:
                steps += 1
                acc += V[x0 + radius, x1 + radius, x2 + radius] * (-log1p(-pc_uniform(&s)) / 6.0)
                dirn = <Py_ssize_t>(pc_uniform(&s) * 6.0)
                if dirn >= 6:
                    dirn = 5
                if dirn == 0:
                    x0 += 1
                elif dirn == 1:
                    x0 -= 1
                elif dirn == 2:
                    x1 += 1
                elif dirn == 3:
                    x1 -= 1
                elif dirn == 4:
                    x2 += 1
                else:
                    x2 -= 1
                if (x0 > radius or x0 < -radius or x1 > radius or x1 < -radius
                        or x2 > radius or x2 < -radius):
                    if pc_uniform(&s) < hit[x0 + radius + 1, x1 + radius + 1, x2 + radius + 1]:
                        x0 = reentry[0]
                        x1 = reentry[1]
                        x2 = reentry[2]
                    else:
                        break
            out[i] = acc
    return out


def replica_occupancy(const uint8_t[:] occ0, bint bernoulli_init, double rho,
                      const int64_t[:] ba, const int64_t[:] bb, const double[:] times,
                      const int64_t[:] sites, uint64_t seed, uint64_t stream0,
                      Py_ssize_t sample0, uint8_t[:, :, :] out):
    """Occupancy of ``sites`` at each of ``times`` for independent stirring replicas.

    Replica ``i`` uses stream ``stream0 + sample0 + i``; it starts from ``occ0``
    or, with ``bernoulli_init``, from a fresh Bernoulli(rho) configuration.
    """
    cdef Py_ssize_t n_samples = out.shape[0], nt = times.shape[0], ns = sites.shape[0]
    cdef Py_ssize_t n_sites = occ0.shape[0], nb = ba.shape[0]
    cdef Py_ssize_t i, k, j, c
    cdef double rate = nb / 6.0, t
    cdef pc_stream s
    cdef uint8_t tmp
    occ_np = np.empty(n_sites, dtype=np.uint8)
    cdef uint8_t[:] occ = occ_np
    with nogil:
        for i in range(n_samples):
            pc_init(&s, seed, stream0 + <uint64_t>(sample0 + i), 0)
            for c in range(n_sites):
                if bernoulli_init:
                    occ[c] = 1 if pc_uniform(&s) < rho else 0
                else:
                    occ[c] = occ0[c]
            t = 0.0
            k = 0
            while k < nt:
                t += -log1p(-pc_uniform(&s)) / rate
                while k < nt and times[k] < t:
                    for c in range(ns):
                        out[i, k, c] = occ[sites[c]]
                    k += 1
                if k == nt:
                    break
                j = <Py_ssize_t>(pc_uniform(&s) * nb)
                if j >= nb:
                    j = nb - 1
                tmp = occ[ba[j]]
                occ[ba[j]] = occ[bb[j]]
                occ[bb[j]] = tmp
    return out
