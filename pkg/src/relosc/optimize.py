"""Projected-gradient local minimization, multi-start search and minimizer clustering.

The local solver works in (mean, slopes) coordinates: a path is its node mean
c plus slopes d constrained to {|d_i| <= L(1-eps), sum d_i = 0}.  The mean is
free.  Steps are scaled by 1/T on the mean and 1/h on the slopes, which keeps
the iteration count roughly independent of N; the slope step is followed by
the Dykstra projection of :mod:`relosc.path`.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .dsl import FieldEvaluationError
from .functional import psi, value_and_gradient
from .model import ProblemInstance, SlopeDomainError
from .path import (DEFAULT_MARGIN, PeriodicPath, ProjectionError, nodes_from_mean_slopes, project_slopes,
                   sample_path)

log = logging.getLogger(__name__)

STEP_FLOOR = 1e-14
BB_CAP = 1e6


class MultistartError(RuntimeError):
    def __init__(self, faults):
        self.faults = faults
        super().__init__(f"all {len(faults)} starts failed; first: {faults[0] if faults else None}")


@dataclass(frozen=True)
class MinimizeOptions:
    N: int = 64
    starts: Optional[int] = None  # None -> 32 * 2**(n-1)
    step0: float = 1.0
    armijo: float = 1e-4
    tol_grad: float = 1e-9
    max_iters: int = 5000
    delta_cluster: Optional[float] = None  # None -> 0.1 * L * T
    tol_global: float = 1e-6
    seed: int = 0
    eps_margin: float = DEFAULT_MARGIN
    box_radius: Optional[float] = None  # None -> coercivity radius
    threads: int = 1

    def __post_init__(self):
        if self.N < 4:
            raise ValueError("N must be at least 4")
        if self.starts is not None and self.starts < 1:
            raise ValueError("starts must be >= 1")
        for name in ("step0", "tol_grad", "tol_global"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.armijo < 1:
            raise ValueError("armijo constant must lie in (0, 1)")
        if self.delta_cluster is not None and not self.delta_cluster > 0:
            raise ValueError("delta_cluster must be positive")

    def n_starts(self, n: int) -> int:
        return self.starts if self.starts is not None else 32 * 2 ** (n - 1)

    def cluster_radius(self, instance: ProblemInstance) -> float:
        return self.delta_cluster if self.delta_cluster is not None else 0.1 * instance.L * instance.T

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LocalResult:
    path: PeriodicPath
    value: float
    iterations: int
    converged: bool
    stationarity: float
    history: list = field(default_factory=list, repr=False)

    def __iter__(self):
        # allows ``path, value = minimize_local(...)``
        return iter((self.path, self.value))


def descend(fg: Callable, start: PeriodicPath, radius: float, opts: MinimizeOptions,
            keep_history: bool = False) -> LocalResult:
    """Projected-gradient descent with Armijo backtracking on a path functional.

    ``fg(path)`` returns ``(value, node_gradient)``.  Stops when the scaled
    gradient mapping falls below ``opts.tol_grad`` or after ``opts.max_iters``.
    """
    T = start.T
    N = start.N
    h = T / N
    c = start.mean.copy()
    d = start.slopes.copy()
    path = start
    f, g = fg(path)
    history = [f] if keep_history else []
    alpha0 = opts.step0
    stationarity = np.inf
    prev = None
    for it in range(opts.max_iters):
        g_c = g.sum(axis=0)
        tail = np.cumsum(g[::-1], axis=0)[::-1]  # tail[i] = sum_{j >= i} g_j
        g_d = np.zeros_like(g)
        g_d[:-1] = h * (tail[1:] - (N - 1 - np.arange(N - 1))[:, None] * g.mean(axis=0))
        if not (np.any(g_c) or np.any(g_d)):
            return LocalResult(path, f, it, True, 0.0, history)
        if prev is not None:
            # Barzilai-Borwein trial step in the (T, h)-weighted metric
            s_c, s_d, y_c, y_d = c - prev[0], d - prev[1], g_c - prev[2], g_d - prev[3]
            sy = float(np.sum(s_c * y_c) + np.sum(s_d * y_d))
            ss = float(T * np.sum(s_c * s_c) + h * np.sum(s_d * s_d))
            alpha0 = min(max(ss / sy, STEP_FLOOR), BB_CAP) if sy > 0 else min(2.0 * alpha0, BB_CAP)
        alpha = alpha0
        while True:
            c_new = c - alpha * g_c / T
            d_new = project_slopes(d - alpha * g_d / h, radius)
            trial = PeriodicPath.from_mean_slopes(c_new, d_new, T)
            decrease = float(np.sum(g * (trial.nodes - path.nodes)))
            try:
                f_new, g_new = fg(trial)
                ok = np.isfinite(f_new) and f_new <= f + opts.armijo * decrease
            except SlopeDomainError:
                ok = False
            if ok:
                break
            alpha *= 0.5
            if alpha < STEP_FLOOR:
                return LocalResult(path, f, it, stationarity <= 10 * opts.tol_grad, stationarity, history)
        stationarity = max(float(np.max(np.abs(c_new - c))), float(np.max(np.abs(d_new - d)))) / alpha
        prev = (c, d, g_c, g_d)
        alpha0 = alpha
        c, d, path, f, g = c_new, d_new, trial, f_new, g_new
        if keep_history:
            history.append(f)
        if stationarity <= opts.tol_grad:
            return LocalResult(path, f, it + 1, True, stationarity, history)
    return LocalResult(path, f, opts.max_iters, False, stationarity, history)


def descend_batch(fg: Callable, nodes: np.ndarray, T: float, radius: float, iters: int = 300,
                  tol: float = 1e-8, armijo: float = 1e-4):
    """Many independent projected-gradient runs at once.

    ``nodes`` has shape (B, N, n) and every row must be feasible.  ``fg(nodes)``
    returns values (B,) and node gradients (B, N, n).  Each row keeps its own
    step: doubled after an accepted Armijo step, halved after a rejected one.
    Returns final nodes and values; rows only ever decrease.
    """
    B, N, n = nodes.shape
    h = T / N
    u = np.array(nodes, dtype=float)
    c = u.mean(axis=1)
    d = (np.roll(u, -1, axis=1) - u) / h
    f, g = fg(u)
    alpha = np.ones(B)
    active = np.ones(B, dtype=bool)
    ar = (N - 1 - np.arange(N - 1))[None, :, None]
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        gi = g[idx]
        g_c = gi.sum(axis=1)
        tail = np.cumsum(gi[:, ::-1], axis=1)[:, ::-1]
        g_d = np.zeros_like(gi)
        g_d[:, :-1] = h * (tail[:, 1:] - ar * gi.mean(axis=1, keepdims=True))
        a = alpha[idx][:, None]
        c_new = c[idx] - a * g_c / T
        d_new = project_slopes(d[idx] - a[:, :, None] * g_d / h, radius)
        u_new = nodes_from_mean_slopes(c_new, d_new, h)
        f_new, g_new = fg(u_new)
        dec = np.sum(gi * (u_new - u[idx]), axis=(1, 2))
        ok = np.isfinite(f_new) & (f_new <= f[idx] + armijo * dec)
        step = np.maximum(np.abs(c_new - c[idx]).max(axis=1), np.abs(d_new - d[idx]).max(axis=(1, 2)))
        acc = idx[ok]
        c[acc], d[acc], u[acc], f[acc], g[acc] = c_new[ok], d_new[ok], u_new[ok], f_new[ok], g_new[ok]
        done = ok & (step / alpha[idx] <= tol)
        alpha[acc] = np.minimum(2.0 * alpha[acc], BB_CAP)
        alpha[idx[~ok]] *= 0.5
        active[idx[done]] = False
        active[alpha < STEP_FLOOR] = False
    return u, f


def minimize_local(instance: ProblemInstance, lam: float, mu: float, start: PeriodicPath,
                   opts: MinimizeOptions = MinimizeOptions(), keep_history: bool = False) -> LocalResult:
    """Local minimizer of the perturbed action from a feasible start."""
    radius = instance.L * (1.0 - opts.eps_margin)
    bad = start.violations(instance.L, opts.eps_margin)
    if bad:
        raise ValueError("start path is infeasible: " + "; ".join(bad))

    def fg(p):
        val, grad = value_and_gradient(instance, lam, mu, p)
        return val.total, grad

    res = descend(fg, start, radius, opts, keep_history)
    if not res.converged:
        log.debug("local solve stopped at iteration cap (stationarity %.3g)", res.stationarity)
    return res


# ---------------------------------------------------------------- multistart

@dataclass
class Cluster:
    representative: PeriodicPath
    value: float
    psi: tuple
    residual: float
    basin_hits: int
    converged: bool = True

    def to_dict(self, with_nodes: bool = True) -> dict:
        d = {"value": self.value, "psi": list(self.psi), "residual": self.residual,
             "basin_hits": self.basin_hits, "converged": self.converged}
        if with_nodes:
            d["nodes"] = self.representative.nodes.tolist()
        return d


@dataclass
class MinimaReport:
    clusters: list
    global_set: list
    lam: float
    mu: float
    options: MinimizeOptions
    faults: list = field(default_factory=list)

    @property
    def best(self) -> Cluster:
        return self.clusters[0]

    @property
    def n_global(self) -> int:
        return len(self.global_set)

    @property
    def global_clusters(self) -> list:
        return [self.clusters[i] for i in self.global_set]

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam, "mu": self.mu, "seed": self.options.seed,
            "options": self.options.to_dict(),
            "clusters": [c.to_dict() for c in self.clusters],
            "global_set": list(self.global_set),
            "faults": [str(f) for f in self.faults],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def cluster_results(results, delta: float, tol_global: float):
    """Greedy sup-distance clustering of (path, value, converged) triples.

    Results are visited in ascending value (stable in start order); each joins the
    first existing cluster whose representative lies within ``delta``.
    Returns (clusters as [path, value, hits, converged], global index list).
    """
    order = sorted(range(len(results)), key=lambda k: (results[k][1], k))
    clusters = []
    for k in order:
        path, value, conv = results[k]
        for cl in clusters:
            if cl[0].distance(path) <= delta:
                cl[2] += 1
                break
        else:
            clusters.append([path, value, 1, conv])
    if not clusters:
        return [], []
    best = clusters[0][1]
    cut = best + tol_global * (1.0 + abs(best))
    return clusters, [i for i, cl in enumerate(clusters) if cl[1] <= cut]


def start_paths(instance: ProblemInstance, lam: float, mu: float, opts: MinimizeOptions) -> list:
    radius = opts.box_radius
    if radius is None:
        from .verify import growth_constants

        radius = growth_constants(instance, lam, mu).box_radius
    return [sample_path(instance, opts.N, [opts.seed, k], radius, opts.eps_margin)
            for k in range(opts.n_starts(instance.n))]


def multistart(instance: ProblemInstance, lam: float, mu: float,
               opts: MinimizeOptions = MinimizeOptions(), starts=None) -> MinimaReport:
    """Run :func:`minimize_local` from seeded random starts and cluster the minimizers."""
    from .verify import el_residual

    starts = start_paths(instance, lam, mu, opts) if starts is None else list(starts)
    if not starts:
        raise ValueError("at least one start is required")

    def run(p):
        try:
            return minimize_local(instance, lam, mu, p, opts)
        except (FieldEvaluationError, ProjectionError, SlopeDomainError, FloatingPointError) as exc:
            return exc

    if opts.threads > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            outcomes = list(pool.map(run, starts))
    else:
        outcomes = [run(p) for p in starts]
    faults = [o for o in outcomes if isinstance(o, Exception)]
    good = [(o.path, o.value, o.converged) for o in outcomes if not isinstance(o, Exception)]
    if not good:
        raise MultistartError(faults)
    raw, global_set = cluster_results(good, opts.cluster_radius(instance), opts.tol_global)
    clusters = [Cluster(p, v, psi(instance, p), el_residual(instance, lam, mu, p), hits, conv)
                for p, v, hits, conv in raw]
    return MinimaReport(clusters, global_set, lam, mu, opts, faults)


def with_options(opts: MinimizeOptions, **changes) -> MinimizeOptions:
    return replace(opts, **changes)
