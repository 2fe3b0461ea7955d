"""Experiment driver: Lyapunov fits, large-kappa comparison, scans and reproducible runs.

A run is described by an INI file.  The ``[run]`` section holds the master
seed and the ordered stage list; each stage refers to a section whose name
starts with the stage kind (``moment``, ``moment.big``, ...).  Every stage
draws from its own disjoint block of random streams, recorded in the
manifest, so outputs are a function of the configuration alone.
"""
from __future__ import annotations

import configparser
import csv
import functools
import hashlib
import io
import json
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .lattice_kernels import green_value
from .pam import N_BATCHES, PamConfig, fk_exponents
from .polaron import solve_polaron
from .rng import check_seed, stream_base
from .stats import fit_log_slope, weighted_slope

__all__ = [
    "LyapunovEstimate",
    "IntermittencyRow",
    "estimate_lyapunov",
    "estimate_lyapunov_pair",
    "rescaled_lyapunov",
    "theorem_rhs",
    "asymptotic_scan",
    "intermittency_scan",
    "SchemaError",
    "RunManifest",
    "load_config",
    "run",
    "replay",
    "format_csv",
]

REL_STDERR_LIMIT = 0.25


@dataclass
class LyapunovEstimate:
    """Windowed slope of ``(1/p) log E u(0,t)^p``."""

    p: int
    kappa: float
    rho: float
    slope: float
    stderr: float
    window: tuple
    samples: int
    guard_ok: bool
    usable: bool = True
    max_rel_stderr: float = 0.0
    drift_slope: float = math.nan
    drift_stderr: float = math.nan
    drift_window: tuple | None = None


def _batch_means(w, batches):
    n = w.shape[0]
    b = min(batches, n)
    edges = np.arange(b + 1) * n // b
    return np.add.reduceat(w, edges[:-1], axis=0) / np.diff(edges).reshape((-1,) + (1,) * (w.ndim - 1))


def _check_window(window):
    t0, t1 = map(float, window)
    if not 0 < t0 < t1:
        raise ValidationError(f"window must satisfy 0 < t_min < t_max, got {window}")
    return t0, t1


def _times(window, n_times, drift_window=None):
    t0, t1 = _check_window(window)
    grids = [np.linspace(t0, t1, n_times)]
    if drift_window is not None:
        d0, d1 = _check_window(drift_window)
        grids.append(np.linspace(d0, d1, n_times))
    return np.unique(np.concatenate(grids))


def _fit_subset(times, bm, shift, scale, lo, hi):
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    return fit_log_slope(times[sel], bm[:, sel], shift[sel], scale), sel


def _run_fk(kappa, rho, p, times, samples, side, seed, stream0, batches):
    cfg = PamConfig(kappa=kappa, rho=rho, p=p, t_final=float(times[-1]), side=side,
                    samples=samples, seed=seed, times=tuple(times), batches=batches)
    return cfg, fk_exponents(cfg, stream0)


def estimate_lyapunov(kappa: float, rho: float, p: int, window, budget: int, side: int = 16,
                      n_times: int = 5, seed: int = 0, stream0: int | None = None,
                      drift_window=None, batches: int = N_BATCHES) -> LyapunovEstimate:
    """Fit ``lambda_p`` as the slope of ``(1/p) log E u(0,t)^p`` over ``window``.

    ``budget`` is the number of Feynman-Kac samples.  The moments at all
    window times come from the same samples, so the slope error uses the
    delta-method covariance across batches.  The estimate is flagged
    unusable if any point has relative standard error above 25%.
    """
    if budget < 2:
        raise ValidationError("budget must be at least 2 samples")
    times = _times(window, n_times, drift_window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cfg, expo = _run_fk(kappa, rho, p, times, budget, side, seed, stream0, batches)
    shift = rho * p * times
    w = np.exp(expo.sum(axis=2) - shift[None, :])
    bm = _batch_means(w, batches)
    fit, sel = _fit_subset(times, bm, shift, 1.0 / p, *_check_window(window))
    rel = bm.std(axis=0, ddof=1) / math.sqrt(bm.shape[0]) / bm.mean(axis=0)
    max_rel = float(np.max(rel[sel]))
    est = LyapunovEstimate(p, kappa, rho, fit.slope, fit.stderr, tuple(window), budget,
                           cfg.guard_ok, max_rel <= REL_STDERR_LIMIT, max_rel)
    if drift_window is not None:
        dfit, _ = _fit_subset(times, bm, shift, 1.0 / p, *_check_window(drift_window))
        est.drift_slope, est.drift_stderr, est.drift_window = dfit.slope, dfit.stderr, tuple(drift_window)
    return est


def _joint_slopes(times, bms, shift_list, scales, coef_signs):
    """Linear combination of several log-moment slopes with a joint delta-method error."""
    ys, coeffs, rels = [], [], []
    for bm, shift, scale in zip(bms, shift_list, scales):
        m = bm.mean(axis=0)
        y = scale * (shift + np.log(m))
        rel = bm / m[None, :] * scale
        var = np.var(rel, axis=0, ddof=1) / bm.shape[0]
        slope, _, a = weighted_slope(times, y, var)
        ys.append(slope)
        coeffs.append(a)
        rels.append(rel)
    X = np.concatenate(rels, axis=1)
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1)) / X.shape[0]
    c = np.concatenate([s * a for s, a in zip(coef_signs, coeffs)])
    value = sum(s * y for s, y in zip(coef_signs, ys))
    return value, math.sqrt(max(float(c @ cov @ c), 0.0)), ys


@dataclass
class IntermittencyRow:
    kappa: float
    lambda1: float
    se1: float
    lambda2: float
    se2: float
    gap: float
    gap_se: float
    usable: bool = True
    guard_ok: bool = True

    @property
    def significance(self) -> float:
        if self.gap_se == 0:
            return 0.0 if self.gap == 0 else math.copysign(math.inf, self.gap)
        return self.gap / self.gap_se


def estimate_lyapunov_pair(kappa: float, rho: float, window, budget: int, side: int = 16,
                           n_times: int = 5, seed: int = 0, stream0: int | None = None,
                           batches: int = N_BATCHES) -> IntermittencyRow:
    """``lambda_1``, ``lambda_2`` and their gap from one set of two-walker samples.

    Walker 1 alone estimates the first moment; both walkers together the
    second.  Sharing samples makes the gap error much smaller than the
    errors of the two slopes.
    """
    times = _times(window, n_times)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cfg, expo = _run_fk(kappa, rho, 2, times, budget, side, seed, stream0, batches)
    s1 = rho * times
    s2 = 2.0 * rho * times
    bm1 = _batch_means(np.exp(expo[:, :, 0] - s1[None, :]), batches)
    bm2 = _batch_means(np.exp(expo.sum(axis=2) - s2[None, :]), batches)
    f1 = fit_log_slope(times, bm1, s1, 1.0)
    f2 = fit_log_slope(times, bm2, s2, 0.5)
    if rho in (0.0, 1.0):
        gap, gap_se = f2.slope - f1.slope, 0.0
    else:
        gap, gap_se, _ = _joint_slopes(times, [bm1, bm2], [s1, s2], [1.0, 0.5], [-1.0, 1.0])
    rel = max(float(np.max(b.std(axis=0, ddof=1) / math.sqrt(b.shape[0]) / b.mean(axis=0)))
              for b in (bm1, bm2))
    return IntermittencyRow(kappa, f1.slope, f1.stderr, f2.slope, f2.stderr, gap, gap_se,
                            rel <= REL_STDERR_LIMIT, cfg.guard_ok)


def rescaled_lyapunov(kappa: float, rho: float, window, budget: int, side: int = 16,
                      n_times: int = 5, seed: int = 0, stream0: int | None = None,
                      batches: int = N_BATCHES):
    """``kappa^2 lambda*`` and ``kappa (lambda_1 - rho)`` from the same samples.

    ``lambda*`` is the growth rate of ``E exp((1/kappa) int_0^tau (xi(x) - rho)(Z_s) ds)``
    in the rescaled time ``tau = kappa t``, where ``Z_s = (xi_{s/kappa}, X_s)``.
    Substituting ``s = kappa s'`` turns the rescaled exponent at ``tau`` into the
    unscaled one at ``t`` minus ``rho t``.  Returns ``(k2_lambda_star, se, k_gap, se)``.
    """
    times = _times(window, n_times)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, expo = _run_fk(kappa, rho, 1, times, budget, side, seed, stream0, batches)
    tau = kappa * times
    phi_int = expo[:, :, 0] - rho * times[None, :]  # (1/kappa) int_0^tau phi(Z_s) ds
    bm_star = _batch_means(np.exp(phi_int), batches)
    star = fit_log_slope(tau, bm_star, np.zeros_like(tau))
    shift = rho * times
    bm = _batch_means(np.exp(expo[:, :, 0] - shift[None, :]), batches)
    lam = fit_log_slope(times, bm, shift)
    return (kappa ** 2 * star.slope, kappa ** 2 * star.stderr,
            kappa * (lam.slope - rho), kappa * lam.stderr)


@functools.lru_cache(maxsize=1)
def polaron_constant() -> float:
    """Solver value of the polaron constant at coefficient 1."""
    return solve_polaron(1.0).value


def theorem_rhs(rho: float, p: float, p3: float | None = None) -> float:
    """``(1/6) rho(1-rho) G + [6 rho(1-rho) p]^2 P3``, the large-kappa limit of ``kappa(lambda_p - rho)``."""
    if not 0.0 <= rho <= 1.0:
        raise ValidationError("rho must lie in [0, 1]")
    if not p >= 1:
        raise ValidationError("p must be at least 1")
    v = rho * (1.0 - rho)
    if v == 0.0:
        return 0.0
    if p3 is None:
        p3 = polaron_constant()
    return v * green_value((0, 0, 0)) / 6.0 + (6.0 * v * p) ** 2 * p3


def _check_kappas(kappa_list):
    ks = [float(k) for k in kappa_list]
    if not ks or any(not k > 0 for k in ks) or ks != sorted(ks):
        raise ValidationError("kappa list must be nonempty, positive and ascending")
    return ks


def asymptotic_scan(rho: float, p: int, kappa_list, budget: int, window=(1.0, 3.0),
                    side: int = 16, n_times: int = 5, seed: int = 0, stage_index: int = 0,
                    drift_window=None) -> list[dict]:
    """One row per kappa: ``kappa (lambda_p - rho)`` with its error next to :func:`theorem_rhs`."""
    ks = _check_kappas(kappa_list)
    rhs = theorem_rhs(rho, p)
    rows = []
    for i, k in enumerate(ks):
        est = estimate_lyapunov(k, rho, p, window, budget, side, n_times, seed,
                                stream_base("fk", stage_index) + (i << 32), drift_window)
        rows.append({
            "kappa": k,
            "lambda": est.slope,
            "lambda_se": est.stderr,
            "scaled": k * (est.slope - rho),
            "scaled_se": k * est.stderr,
            "rhs": rhs,
            "drift_lambda": est.drift_slope,
            "drift_se": est.drift_stderr,
            "usable": est.usable,
            "guard_ok": est.guard_ok,
        })
    return rows


def intermittency_scan(rho: float, kappa_list, budget: int, window=(0.5, 2.0), side: int = 16,
                       n_times: int = 5, seed: int = 0, stage_index: int = 0) -> list[IntermittencyRow]:
    """``lambda_2 - lambda_1`` with its joint standard error for each kappa."""
    ks = _check_kappas(kappa_list)
    return [estimate_lyapunov_pair(k, rho, window, budget, side, n_times, seed,
                                   stream_base("fk", stage_index) + (i << 32))
            for i, k in enumerate(ks)]


# --- CSV ------------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def format_csv(header, rows) -> str:
    """RFC 4180 CSV with ``\\n`` line ends and floats at 17 significant digits."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        values = [r[h] for h in header] if isinstance(r, dict) else list(r)
        if len(values) != len(header):
            raise ValueError("row length does not match header")
        wr.writerow([_fmt(v) for v in values])
    return buf.getvalue()


# --- configuration ---------------------------------------------------------------------


class SchemaError(ValidationError):
    """Configuration does not match the stage schema; ``keys`` names the offenders."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_or_inf(s):
    return math.inf if s.strip().lower() in ("inf", "infinity") else float(s)


# kind -> {key: (parser, default)}; default None marks a required key
SCHEMAS = {
    "kernels": {"times": (_floats, (1.0,)), "points": (str, "0 0 0"), "green": (_bool, True)},
    "sse": {"side": (int, 8), "rho": (float, None), "t": (float, None), "replicas": (int, 10_000),
            "sites": (_ints, (0,)), "trace": (_bool, False)},
    "moment": {"kappa": (float, None), "rho": (float, None), "p": (int, 1), "t": (float, None),
               "side": (int, 8), "samples": (int, 10_000), "method": (str, "fk"),
               "direct_samples": (int, 1_000)},
    "spectral": {"side": (int, 3), "particles": (int, 2), "kappa": (float, 1.0),
                 "potential_scale": (float, 0.1), "mc_check": (_bool, False),
                 "mc_samples": (int, 20_000), "potential_file": (str, "")},
    "polaron": {"coeff": (float, 1.0), "eps": (float, 0.0), "kcut": (_float_or_inf, math.inf),
                "grid_n": (int, 2048), "rmax_mult": (float, 40.0), "dump_profile": (_bool, False)},
    "lyapunov": {"kappa": (float, None), "rho": (float, None), "p": (int, 1), "t_min": (float, None),
                 "t_max": (float, None), "n_times": (int, 5), "side": (int, 16),
                 "samples": (int, 10_000)},
    "scan": {"rho": (float, None), "p": (int, 1), "kappas": (_floats, None), "t_min": (float, 1.0),
             "t_max": (float, 3.0), "n_times": (int, 5), "side": (int, 16), "samples": (int, 10_000)},
    "intermittency": {"rho": (float, None), "kappas": (_floats, None), "t_min": (float, 0.5),
                      "t_max": (float, 2.0), "n_times": (int, 5), "side": (int, 16),
                      "samples": (int, 10_000)},
}

RUN_SCHEMA = {"seed": (int, 0), "stages": (str, ""), "threads": (int, 1)}


def _parse_section(name, items, schema):
    unknown = sorted(set(items) - set(schema))
    if unknown:
        raise SchemaError(f"section [{name}]: unknown key(s) {', '.join(unknown)}", unknown)
    missing = sorted(k for k, (_, d) in schema.items() if d is None and k not in items)
    if missing:
        raise SchemaError(f"section [{name}]: missing required key(s) {', '.join(missing)}", missing)
    out = {}
    for key, (parse, default) in schema.items():
        if key in items:
            try:
                out[key] = parse(items[key])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"section [{name}]: bad value for '{key}': {exc}", [key]) from None
        else:
            out[key] = default
    return out


def load_config(source) -> dict:
    """Parse and validate a run configuration (a path or the INI text itself).

    Returns ``{"run": {...}, "stages": [(name, kind, params), ...]}``.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source, encoding="utf-8") as fh:
                cp.read_file(fh)
        else:
            cp.read_string(str(source))
    except configparser.Error as exc:
        raise SchemaError(f"cannot parse configuration: {exc}") from None
    if not cp.has_section("run"):
        raise SchemaError("missing [run] section", ["run"])
    run_cfg = _parse_section("run", dict(cp.items("run")), RUN_SCHEMA)
    check_seed(run_cfg["seed"])
    names = [s for s in run_cfg["stages"].replace(",", " ").split()]
    stages = []
    for name in names:
        kind = name.split(".", 1)[0]
        if kind not in SCHEMAS:
            raise SchemaError(f"stage '{name}': unknown stage kind '{kind}'", [name])
        if not cp.has_section(name):
            raise SchemaError(f"stage '{name}': no section [{name}]", [name])
        stages.append((name, kind, _parse_section(name, dict(cp.items(name)), SCHEMAS[kind])))
    if len(set(names)) != len(names):
        raise SchemaError("stage names must be unique", names)
    return {"run": run_cfg, "stages": stages}


# --- stages ---------------------------------------------------------------------------


def _stage_kernels(prm, seed, idx):
    from .lattice_kernels import kernel_value

    pts = [tuple(int(v) for v in p.split()) for p in prm["points"].split(";") if p.strip()]
    if any(len(p) != 3 for p in pts):
        raise ValidationError("points must be ';'-separated triples")
    rows = [{"t": t, "x1": p[0], "x2": p[1], "x3": p[2], "value": kernel_value(t, p)}
            for t in prm["times"] for p in pts]
    out = {"kernels": (["t", "x1", "x2", "x3", "value"], rows)}
    if prm["green"]:
        grows = [{"x1": p[0], "x2": p[1], "x3": p[2], "value": green_value(p)} for p in pts]
        out["green"] = (["x1", "x2", "x3", "value"], grows)
    return out


def _stage_sse(prm, seed, idx):
    from .exclusion import TorusLattice, replica_occupancy

    lat = TorusLattice(prm["side"])
    if not 0 <= prm["rho"] <= 1 or not prm["t"] >= 0 or prm["replicas"] < 2:
        raise ValidationError("sse needs 0 <= rho <= 1, t >= 0 and at least 2 replicas")
    sites = np.array(prm["sites"], dtype=np.int64)
    if np.any((sites < 0) | (sites >= lat.site_count)):
        raise ValidationError("site index out of range")
    occ = replica_occupancy(lat, [prm["t"]], sites, prm["replicas"], seed,
                            stream_base("sse", idx), rho=prm["rho"])[:, 0, :].astype(float)
    n = occ.shape[0]
    rho = prm["rho"]
    se = math.sqrt(rho * (1 - rho) / n)
    rows = []
    for j, s in enumerate(sites):
        m = float(occ[:, j].mean())
        rows.append({"site": int(s), "empirical_mean": m, "oracle_mean": rho,
                     "z_score": (m - rho) / se if se > 0 else 0.0})
    out = {"sse": (["site", "empirical_mean", "oracle_mean", "z_score"], rows)}
    if prm["trace"]:
        trace = [(i, prm["t"], int(s), int(occ[i, j])) for i in range(n) for j, s in enumerate(sites)]
        out["trace"] = (["replica", "time", "site", "occupancy"], trace)
    return out


MOMENT_HEADER = ["method", "p", "t", "mean", "stderr", "n", "guard_ok"]


def _moment_rows(ests):
    return [{"method": e.method, "p": e.p, "t": e.t, "mean": e.mean, "stderr": e.stderr,
             "n": e.n, "guard_ok": e.guard_ok} for e in ests]


def _stage_moment(prm, seed, idx):
    from .pam import annealed_moment, moments_from_exponents

    if prm["method"] not in ("fk", "direct", "both"):
        raise SchemaError(f"moment: method must be fk, direct or both, got {prm['method']!r}", ["method"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cfg = PamConfig(kappa=prm["kappa"], rho=prm["rho"], p=prm["p"], t_final=prm["t"],
                        side=prm["side"], samples=prm["samples"], seed=seed)
        ests = []
        if prm["method"] in ("fk", "both"):
            ests.append(moments_from_exponents(fk_exponents(cfg, stream_base("fk", idx)), cfg.rho,
                                               cfg.times, cfg.guard_ok)[-1])
        if prm["method"] in ("direct", "both"):
            dcfg = PamConfig(kappa=prm["kappa"], rho=prm["rho"], p=prm["p"], t_final=prm["t"],
                             side=prm["side"], samples=prm["direct_samples"], seed=seed)
            ests.append(annealed_moment(dcfg, stream0=stream_base("catalyst", idx)))
    return {"moment": (MOMENT_HEADER, _moment_rows(ests))}


def _stage_spectral(prm, seed, idx):
    from .exclusion import TorusLattice
    from .rng import generator
    from .spectral import SmallSystem, mc_growth_slope, top_eigenpair
    from scipy import sparse

    system = SmallSystem(TorusLattice(prm["side"]), prm["particles"])
    if prm["potential_file"]:
        V = np.loadtxt(prm["potential_file"], dtype=float).ravel()
        if V.shape != (system.size,):
            raise ValidationError(f"potential file must hold {system.size} values, got {V.size}")
    else:
        gen = generator(seed, stream_base("spectral", idx))
        V = gen.uniform(0.0, prm["potential_scale"], system.size)
    res = top_eigenpair(system.generator(prm["kappa"]) + sparse.diags(V))
    slope = se = math.nan
    if prm["mc_check"]:
        slope, se = mc_growth_slope(system, prm["kappa"], V, samples=prm["mc_samples"], seed=seed,
                                    stream0=stream_base("spectral", idx) + 1)
    return {"spectral": (["lambda", "residual", "mc_slope", "mc_stderr"],
                         [{"lambda": res.value, "residual": res.residual, "mc_slope": slope,
                           "mc_stderr": se}])}


def _stage_polaron(prm, seed, idx):
    from .polaron import PolaronOptions, solve_cutoff_polaron

    opts = PolaronOptions(n=prm["grid_n"], rmax_mult=prm["rmax_mult"])
    res = solve_cutoff_polaron(prm["coeff"], prm["eps"], prm["kcut"], opts)
    out = {"polaron": (["coeff", "eps", "kcut", "value", "grad_norm", "iters", "converged"],
                       [{"coeff": prm["coeff"], "eps": prm["eps"], "kcut": prm["kcut"],
                         "value": res.value, "grad_norm": res.grad_norm, "iters": res.iterations,
                         "converged": res.converged}])}
    if prm["dump_profile"]:
        out["profile"] = (["r", "f"], [tuple(r) for r in res.profile.table()])
    return out


LYAP_HEADER = ["kappa", "rho", "p", "t_min", "t_max", "lambda", "stderr", "samples", "usable", "guard_ok"]


def _stage_lyapunov(prm, seed, idx):
    est = estimate_lyapunov(prm["kappa"], prm["rho"], prm["p"], (prm["t_min"], prm["t_max"]),
                            prm["samples"], prm["side"], prm["n_times"], seed,
                            stream_base("fk", idx))
    row = {"kappa": est.kappa, "rho": est.rho, "p": est.p, "t_min": est.window[0],
           "t_max": est.window[1], "lambda": est.slope, "stderr": est.stderr,
           "samples": est.samples, "usable": est.usable, "guard_ok": est.guard_ok}
    return {"lyapunov": (LYAP_HEADER, [row])}


SCAN_HEADER = ["kappa", "lambda", "lambda_se", "scaled", "scaled_se", "rhs", "drift_lambda",
               "drift_se", "usable", "guard_ok"]


def _stage_scan(prm, seed, idx):
    rows = asymptotic_scan(prm["rho"], prm["p"], prm["kappas"], prm["samples"],
                           (prm["t_min"], prm["t_max"]), prm["side"], prm["n_times"], seed, idx)
    return {"scan": (SCAN_HEADER, rows)}


INTERMITTENCY_HEADER = ["kappa", "lambda1", "se1", "lambda2", "se2", "gap", "gap_se"]


def _stage_intermittency(prm, seed, idx):
    rows = intermittency_scan(prm["rho"], prm["kappas"], prm["samples"],
                              (prm["t_min"], prm["t_max"]), prm["side"], prm["n_times"], seed, idx)
    return {"intermittency": (INTERMITTENCY_HEADER, [asdict(r) for r in rows])}


STAGES = {
    "kernels": _stage_kernels,
    "sse": _stage_sse,
    "moment": _stage_moment,
    "spectral": _stage_spectral,
    "polaron": _stage_polaron,
    "lyapunov": _stage_lyapunov,
    "scan": _stage_scan,
    "intermittency": _stage_intermittency,
}

# streams touched by each stage kind (sub-task index = position in the stage list)
STAGE_STREAMS = {
    "kernels": (),
    "sse": ("sse",),
    "moment": ("fk", "catalyst"),
    "spectral": ("spectral",),
    "polaron": (),
    "lyapunov": ("fk",),
    "scan": ("fk",),
    "intermittency": ("fk",),
}


def run_stage(kind: str, params: dict, seed: int, index: int = 0) -> dict:
    """Execute one stage; returns ``{artifact_name: (header, rows)}``."""
    return STAGES[kind](params, seed, index)


# --- manifest -------------------------------------------------------------------------


@dataclass
class RunManifest:
    config: dict
    seed: int
    streams: dict
    version: str
    started: str
    finished: str = ""
    completed: list = field(default_factory=list)
    failed: dict | None = None
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _jsonable(params):
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else list(v) if isinstance(v, tuple) else v)
            for k, v in params.items()}


def _config_text(cfg) -> str:
    """Canonical INI text of a parsed configuration (stored in the manifest for replay)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {"seed": str(cfg["run"]["seed"]), "threads": str(cfg["run"]["threads"]),
                 "stages": " ".join(n for n, _, _ in cfg["stages"])}
    for name, _, prm in cfg["stages"]:
        cp[name] = {k: (" ".join(_fmt(x) for x in v) if isinstance(v, tuple) else _fmt(v))
                    for k, v in prm.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def run(config_file, out_dir: str, threads: int | None = None) -> RunManifest:
    """Run every stage of a configuration, writing ``<stage>_<artifact>.csv`` and ``manifest.json``.

    On a stage failure the manifest still lists the completed stages and the
    failing one, then the error is re-raised.
    """
    from .parallel import set_threads

    cfg = load_config(config_file)
    seed = cfg["run"]["seed"]
    set_threads(threads if threads is not None else cfg["run"]["threads"])
    os.makedirs(out_dir, exist_ok=True)
    streams = {name: {s: stream_base(s, i) for s in STAGE_STREAMS[kind]}
               for i, (name, kind, _) in enumerate(cfg["stages"])}
    manifest = RunManifest(
        config={"text": _config_text(cfg), "run": cfg["run"],
                "stages": [{"name": n, "kind": k, "params": _jsonable(p)} for n, k, p in cfg["stages"]]},
        seed=seed, streams=streams, version=__version__, started=_now())
    path = os.path.join(out_dir, "manifest.json")
    try:
        for i, (name, kind, prm) in enumerate(cfg["stages"]):
            try:
                arts = run_stage(kind, prm, seed, i)
            except Exception as exc:
                manifest.failed = {"stage": name, "error": f"{type(exc).__name__}: {exc}"}
                raise
            for art, (header, rows) in arts.items():
                fname = f"{name}_{art}.csv"
                data = format_csv(header, rows).encode("utf-8")
                with open(os.path.join(out_dir, fname), "wb") as fh:
                    fh.write(data)
                manifest.outputs[fname] = hashlib.sha256(data).hexdigest()
            manifest.completed.append(name)
    finally:
        manifest.finished = _now()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(manifest.to_json())
    return manifest


def replay(manifest_file: str, out_dir: str, threads: int | None = None):
    """Re-run the configuration stored in a manifest; returns ``(manifest, mismatches)``.

    ``mismatches`` lists output files whose digest differs from the original.
    """
    with open(manifest_file, encoding="utf-8") as fh:
        old = json.load(fh)
    new = run(old["config"]["text"], out_dir, threads)
    mism = sorted(f for f in set(old["outputs"]) | set(new.outputs)
                  if old["outputs"].get(f) != new.outputs.get(f))
    return new, mism
