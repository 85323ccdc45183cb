"""Value-function scans and the search for parameters with two global minimizers.

beta(lam, mu) = min over feasible paths of I(u) + lam*psi1(u) + mu*psi2(u) is
concave, and psi at any global minimizer is a supergradient of it.  Where two
global minimizers with different psi coexist, beta has a kink; this module
finds such points by watching the supergradients jump across a parameter grid
and bisecting the jump.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .functional import objective, psi
from .model import InstanceError, ProblemInstance
from .optimize import MinimizeOptions, MultistartError, descend_batch, multistart
from .path import PeriodicPath, ProjectionError, sample_path

log = logging.getLogger(__name__)

SCAN_HEADER = ["lambda", "mu", "beta", "n_global", "psi1_min", "psi1_max", "psi2_min", "psi2_max", "flag"]


class NoJumpFound(RuntimeError):
    """No supergradient jump in the search box: minima may be unique throughout."""


class WitnessError(InstanceError):
    """The two witness points do not give distinct G-integrals."""


@dataclass
class ValueSample:
    lam: float
    mu: float
    beta: float
    supergradients: list
    n_global: int
    minimizers: list = field(default_factory=list, repr=False)
    residuals: list = field(default_factory=list, repr=False)
    fault: Optional[str] = None

    @property
    def spread(self) -> float:
        """Largest sup-distance between two supergradients of this sample."""
        s = np.asarray(self.supergradients)
        if len(s) < 2:
            return 0.0
        return float(np.max(np.abs(s[:, None, :] - s[None, :, :]).max(axis=2)))

    def csv_row(self, flag: bool) -> list:
        s = np.asarray(self.supergradients) if self.supergradients else np.full((1, 2), np.nan)
        return [self.lam, self.mu, self.beta, self.n_global, s[:, 0].min(), s[:, 0].max(),
                s[:, 1].min(), s[:, 1].max(), int(flag)]


def value_function(instance: ProblemInstance, lam: float, mu: float,
                   opts: MinimizeOptions = MinimizeOptions()) -> ValueSample:
    """beta(lam, mu) by multistart, with one Danskin supergradient per global cluster."""
    rep = multistart(instance, lam, mu, opts)
    glob = rep.global_clusters
    return ValueSample(float(lam), float(mu), rep.best.value, [tuple(c.psi) for c in glob], len(glob),
                       [c.representative for c in glob], [c.residual for c in glob])


def _safe_value(instance, lam, mu, opts):
    try:
        return value_function(instance, lam, mu, opts)
    except (MultistartError, ProjectionError, ArithmeticError, InstanceError) as exc:
        return ValueSample(float(lam), float(mu), math.nan, [], 0, fault=str(exc))


def set_gap(a: ValueSample, b: ValueSample) -> float:
    """Smallest sup-distance between a supergradient of ``a`` and one of ``b``."""
    if not a.supergradients or not b.supergradients:
        return 0.0
    pa, pb = np.asarray(a.supergradients), np.asarray(b.supergradients)
    return float(np.min(np.abs(pa[:, None, :] - pb[None, :, :]).max(axis=2)))


@dataclass
class ScanResult:
    lambdas: np.ndarray
    mus: np.ndarray
    samples: list  # row-major: index = i_mu * len(lambdas) + i_lam
    flags: list
    jumps: list  # (gap, index_a, index_b) for confirmed jumps between neighbours

    def sample(self, i_lam: int, i_mu: int) -> ValueSample:
        return self.samples[i_mu * len(self.lambdas) + i_lam]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(SCAN_HEADER)
        for s, f in zip(self.samples, self.flags):
            wr.writerow([repr(float(v)) if isinstance(v, float) else v for v in s.csv_row(f)])
        return buf.getvalue()


def read_scan_csv(text: str) -> list:
    """Parse a scan dump back into dictionaries (validates the header and column count)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != SCAN_HEADER:
        raise ValueError(f"bad scan header: {rows[0] if rows else None}")
    out = []
    for r in rows[1:]:
        if not r:
            continue
        if len(r) != len(SCAN_HEADER):
            raise ValueError(f"bad scan row {r}")
        d = dict(zip(SCAN_HEADER, r))
        rec = {k: float(d[k]) for k in SCAN_HEADER if k not in ("n_global", "flag")}
        rec["n_global"] = int(d["n_global"])
        rec["flag"] = bool(int(d["flag"]))
        out.append(rec)
    return out


def _persistent_jump(instance, a: ValueSample, b: ValueSample, axis: int, threshold: float,
                     depth: int, opts) -> bool:
    """True if the supergradient gap between ``a`` and ``b`` survives ``depth`` bisections."""
    for _ in range(depth):
        if a.spread > threshold or b.spread > threshold:
            return True
        if set_gap(a, b) <= threshold:
            return False
        lam = 0.5 * (a.lam + b.lam) if axis == 0 else a.lam
        mu = 0.5 * (a.mu + b.mu) if axis == 1 else a.mu
        m = _safe_value(instance, lam, mu, opts)
        if m.fault:
            return False
        if m.spread > threshold:
            return True
        a, b = (a, m) if set_gap(a, m) >= set_gap(m, b) else (m, b)
    return set_gap(a, b) > threshold or a.spread > threshold or b.spread > threshold


def scan_plane(instance: ProblemInstance, lam_range: Sequence[float], mu_range: Sequence[float],
               steps=(5, 5), opts: MinimizeOptions = MinimizeOptions(),
               jump_threshold: Optional[float] = None, refine_depth: int = 5) -> ScanResult:
    """Grid evaluation of beta with supergradient-jump flags.

    A neighbouring pair is flagged when the closest supergradients of the two
    cells differ by more than ``jump_threshold`` (default 0.1*L*T) and the gap
    does not shrink below it under ``refine_depth`` midpoint bisections; a cell
    whose own global minimizers have distinct supergradients is flagged too.
    Faulty cells are recorded with NaN beta and never flagged.
    """
    nl, nm = (steps, steps) if isinstance(steps, int) else steps
    if nl < 1 or nm < 1:
        raise ValueError("steps must be positive")
    thr = jump_threshold if jump_threshold is not None else 0.1 * instance.L * instance.T
    lams = np.linspace(lam_range[0], lam_range[1], nl) if nl > 1 else np.array([float(lam_range[0])])
    mus = np.linspace(mu_range[0], mu_range[1], nm) if nm > 1 else np.array([float(mu_range[0])])
    samples = [_safe_value(instance, float(l), float(m), opts) for m in mus for l in lams]
    flags = [s.spread > thr for s in samples]
    jumps = []
    for j in range(nm):
        for i in range(nl):
            k = j * nl + i
            for axis, k2, ok in ((0, k + 1, i + 1 < nl), (1, k + nl, j + 1 < nm)):
                if not ok:
                    continue
                a, b = samples[k], samples[k2]
                if a.fault or b.fault:
                    continue
                gap = max(set_gap(a, b), a.spread, b.spread)
                if gap > thr and _persistent_jump(instance, a, b, axis, thr, refine_depth, opts):
                    flags[k] = flags[k2] = True
                    jumps.append((gap, k, k2))
    jumps.sort(key=lambda x: (-x[0], x[1], x[2]))
    return ScanResult(lams, mus, samples, flags, jumps)


# ---------------------------------------------------------------- certificates

@dataclass
class MultiplicityCertificate:
    lambda_t: float
    mu_t: float
    path_a: PeriodicPath
    path_b: PeriodicPath
    value_a: float
    value_b: float
    value_gap: float
    separation: float
    residual_a: float
    residual_b: float
    exact: bool = True  # False for a near-certificate from a collapsed bracket
    bisection_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_t, "mu": self.mu_t, "value_a": self.value_a, "value_b": self.value_b,
            "value_gap": self.value_gap, "separation": self.separation,
            "residual_a": self.residual_a, "residual_b": self.residual_b, "exact": self.exact,
            "bisection_steps": self.bisection_steps,
            "path_a_csv": self.path_a.to_csv(), "path_b_csv": self.path_b.to_csv(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _certificate_from(instance, s: ValueSample, delta: float, steps: int = 0):
    best = None
    for i in range(len(s.minimizers)):
        for j in range(i + 1, len(s.minimizers)):
            pa, pb = s.minimizers[i], s.minimizers[j]
            sep = pa.distance(pb)
            if sep <= delta:
                continue
            va = objective(instance, s.lam, s.mu, pa).total
            vb = objective(instance, s.lam, s.mu, pb).total
            cand = MultiplicityCertificate(s.lam, s.mu, pa, pb, va, vb, abs(va - vb), sep,
                                           s.residuals[i], s.residuals[j], True, steps)
            if best is None or (cand.value_gap, -cand.separation) < (best.value_gap, -best.separation):
                best = cand
    return best


def find_two_minima(instance: ProblemInstance, lam_box=(-1.0, 1.0), mu_box=(0.5, 2.0), steps=(4, 3),
                    opts: MinimizeOptions = MinimizeOptions(), jump_threshold: Optional[float] = None,
                    bracket_tol: float = 1e-10) -> MultiplicityCertificate:
    """Locate (lam, mu) where the perturbed action has two separated global minimizers.

    Coarse scan, then bisection on the largest confirmed supergradient jump
    along its grid axis until a sample has two global clusters or the bracket
    is narrower than ``bracket_tol``.  Raises :class:`NoJumpFound` if the scan
    shows no jump.
    """
    from .verify import el_residual

    delta = opts.cluster_radius(instance)
    scan = scan_plane(instance, lam_box, mu_box, steps, opts, jump_threshold)
    direct = [c for c in (_certificate_from(instance, s, delta) for s in scan.samples) if c is not None]
    if direct:
        return min(direct, key=lambda c: (c.value_gap, abs(c.lambda_t), abs(c.mu_t)))
    if not scan.jumps:
        raise NoJumpFound(f"no supergradient jump in box lambda={tuple(lam_box)}, mu={tuple(mu_box)}")
    _, ka, kb = scan.jumps[0]
    a, b = scan.samples[ka], scan.samples[kb]
    axis = 0 if a.mu == b.mu else 1
    lo, hi = (a.lam, b.lam) if axis == 0 else (a.mu, b.mu)
    steps_taken = 0
    while abs(hi - lo) >= bracket_tol:
        mid = 0.5 * (lo + hi)
        lam, mu = (mid, a.mu) if axis == 0 else (a.lam, mid)
        m = value_function(instance, lam, mu, opts)
        steps_taken += 1
        cert = _certificate_from(instance, m, delta, steps_taken)
        if cert is not None:
            return cert
        if set_gap(a, m) <= set_gap(m, b):
            a, lo = m, mid
        else:
            b, hi = m, mid
    # collapsed bracket: pair the two flanking minimizers at the midpoint parameters
    lam, mu = (0.5 * (lo + hi), a.mu) if axis == 0 else (a.lam, 0.5 * (lo + hi))
    pa, pb = a.minimizers[0], b.minimizers[0]
    va = objective(instance, lam, mu, pa).total
    vb = objective(instance, lam, mu, pb).total
    return MultiplicityCertificate(lam, mu, pa, pb, va, vb, abs(va - vb), pa.distance(pb),
                                   el_residual(instance, lam, mu, pa), el_residual(instance, lam, mu, pb),
                                   False, steps_taken)


# ---------------------------------------------------------------- non-convexity of psi(K)

@dataclass
class NonconvexityReport:
    point_v: tuple
    point_w: tuple
    gamma: float
    level_points: list
    attained_psi1: list
    interpolation: float
    target: tuple
    min_level_gap: float
    variation_budget: float
    discrete_argument: bool
    floor_distance: float
    floor_runs: int
    floor_path: Optional[PeriodicPath] = None

    def to_dict(self) -> dict:
        return {
            "point_v": list(self.point_v), "point_w": list(self.point_w), "gamma": self.gamma,
            "level_points": [list(map(float, x)) for x in self.level_points],
            "attained_psi1": list(self.attained_psi1), "interpolation": self.interpolation,
            "target": list(self.target), "min_level_gap": self.min_level_gap,
            "variation_budget": self.variation_budget, "discrete_argument": self.discrete_argument,
            "floor_distance": self.floor_distance, "floor_runs": self.floor_runs,
        }


def level_set_points(instance: ProblemInstance, gamma: float, box: float, m: int = 200_001,
                     tol: float = 1e-9) -> list:
    """Points of {H = gamma} in [-box, box] for n = 1 (gamma an extreme value of H).

    Grid scan for near-level cells followed by bounded refinement of +-H.
    For n > 1 only the witness points are returned.
    """
    from scipy.optimize import minimize_scalar

    if instance.n != 1:
        return [np.asarray(instance.v, float), np.asarray(instance.w, float)]
    sign = 1.0 if instance.gamma_side == "inf" else -1.0
    xs = np.linspace(-box, box, m)
    hv = sign * (instance.H.value(0.0, xs[:, None]) - gamma)
    dx = xs[1] - xs[0]
    idx = np.flatnonzero((hv[1:-1] <= hv[:-2]) & (hv[1:-1] <= hv[2:]) & (hv[1:-1] < 1e-3)) + 1
    found = []
    for i in idx:
        res = minimize_scalar(lambda x: sign * (float(instance.H.value(0.0, np.array([[x]]))[0]) - gamma),
                              bounds=(xs[i] - dx, xs[i] + dx), method="bounded",
                              options={"xatol": 1e-13})
        if abs(res.fun) <= tol and all(abs(res.x - y[0]) > 1e-6 for y in found):
            found.append(np.array([res.x]))
    for p in (instance.v, instance.w):
        if all(abs(p[0] - y[0]) > 1e-6 for y in found):
            found.append(np.asarray(p, float))
    return sorted(found, key=lambda y: y[0])


def _penalized_floor(instance, target, runs, N, box, seed, opts, chunk: int = 2000):
    """Smallest |psi(u) - target| reached by penalized descent from ``runs`` random starts."""
    tgt = np.asarray(target, float)
    T = instance.T
    h = T / N
    t = np.arange(N) * h
    a = instance.alpha_on(t)

    def fg(u):
        B = u.shape[0]
        flat = u.reshape(B * N, instance.n)
        tt = np.tile(t, B)
        g, gg = instance.G.value_and_grad(tt, flat)
        hv, gh = instance.H.value_and_grad(tt, flat)
        p1 = h * g.reshape(B, N).sum(axis=1)
        p2 = h * (a[None, :] * hv.reshape(B, N)).sum(axis=1)
        r1, r2 = p1 - tgt[0], p2 - tgt[1]
        grad = 2.0 * h * (r1[:, None, None] * gg.reshape(B, N, -1)
                          + r2[:, None, None] * (a[None, :, None] * gh.reshape(B, N, -1)))
        return r1 * r1 + r2 * r2, grad

    radius = instance.L * (1.0 - opts.eps_margin)
    best, best_nodes = math.inf, None
    for lo in range(0, runs, chunk):
        starts = np.stack([sample_path(instance, N, [seed, 11, k], box, opts.eps_margin,
                                       amplitude=instance.L * T / 4).nodes
                           for k in range(lo, min(runs, lo + chunk))])
        u, f = descend_batch(fg, starts, T, radius, iters=400, tol=1e-8)
        k = int(np.argmin(f))
        if f[k] < best ** 2:
            best, best_nodes = math.sqrt(max(float(f[k]), 0.0)), u[k]
    return best, (PeriodicPath(best_nodes, T) if best_nodes is not None else None)


def nonconvexity_check(instance: ProblemInstance, opts: MinimizeOptions = MinimizeOptions(),
                       floor_runs: int = 10_000, floor_N: int = 16, box: Optional[float] = None,
                       seed: int = 0) -> NonconvexityReport:
    """Evidence that psi(K) is not convex, built from the witness points v, w.

    Reports the two attained points of the constant paths at v and w, an
    interpolation coefficient whose target point avoids the attained set
    {int G(t, x) dt : H(x) = gamma}, the variation-budget argument and an
    empirical distance floor from penalized minimization of |psi(u) - target|^2.
    """
    if not (instance.v and instance.w):
        raise WitnessError("witness points v, w are required")
    N = opts.N
    T = instance.T
    pv = psi(instance, PeriodicPath.constant(instance.v, N, T))
    pw = psi(instance, PeriodicPath.constant(instance.w, N, T))
    if abs(pv[0] - pw[0]) <= 1e-9:
        raise WitnessError(f"G-integrals at v and w coincide ({pv[0]:.12g})")
    gamma = instance.gamma
    span = max(np.max(np.abs(instance.v)), np.max(np.abs(instance.w)))
    level_box = 2.0 * span + 2.0 * instance.L * T
    pts = level_set_points(instance, gamma, level_box)
    attained = sorted(psi(instance, PeriodicPath.constant(x, N, T))[0] for x in pts)
    k = 1
    lam_star = 0.5
    while True:
        t1 = pw[0] + lam_star * (pv[0] - pw[0])
        if all(abs(t1 - a) > 1e-9 for a in attained):
            break
        k += 1
        lam_star = 0.5 + 1.0 / (2 * k)
    target = (t1, pv[1])
    if len(pts) > 1:
        gaps = [float(np.linalg.norm(pts[i] - pts[j])) for i in range(len(pts)) for j in range(i + 1, len(pts))]
        min_gap = min(gaps)
    else:
        min_gap = math.inf
    budget = instance.L * T
    if box is None:
        from .verify import growth_constants

        box = max(growth_constants(instance, 0.0, 0.0).box_radius, abs(t1) / T + instance.L * T)
    floor, fpath = _penalized_floor(instance, target, floor_runs, floor_N, box, seed, opts)
    return NonconvexityReport(tuple(pv), tuple(pw), gamma, pts, attained, lam_star, target, min_gap,
                              budget, budget < min_gap, floor, floor_runs, fpath)
