"""Numerical checks: Euler-Lagrange residuals, growth constants and the a-priori sup bound,
the convex uniqueness probe and the exploratory double-well probe."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dsl import FieldEvaluationError
from .functional import objective, potential_gradient
from .model import InstanceError, ProblemInstance, SlopeDomainError
from .optimize import MinimizeOptions, multistart
from .path import PeriodicPath, sample_path

RATIO_RADII = 2.0 ** np.arange(0, 21)
SAFETY = 2.0


class GrowthError(InstanceError):
    """The coercivity hypothesis fails the sampled ratio test."""


def el_residual(instance: ProblemInstance, lam: float, mu: float, path: PeriodicPath) -> float:
    """max_i |(phi(d_i) - phi(d_{i-1}))/h - grad_x W(t_i, u_i)|, indices periodic."""
    ph = instance.phi.grad(path.slopes)
    lhs = (ph - np.roll(ph, 1, axis=0)) / path.h
    r = lhs - potential_gradient(instance, lam, mu, path)
    return float(np.max(np.linalg.norm(r, axis=1)))


# ---------------------------------------------------------------- growth constants

@dataclass(frozen=True)
class GrowthConstants:
    q: float
    c1: float
    delta: float
    c2: float
    c3: float
    delta1: float
    M_int: float
    b: float
    rho_ref: float
    box_radius: float
    T: float
    L: float
    source: str = "sampled"

    def problems(self, phi_min: float) -> list:
        out = []
        if not self.c3 > self.c2 >= 0:
            out.append(f"need c3 > c2 >= 0 (c2={self.c2}, c3={self.c3})")
        if not self.delta1 > self.delta > 0:
            out.append(f"need delta1 > delta > 0 (delta={self.delta}, delta1={self.delta1})")
        if not self.b <= self.T * phi_min + 1e-12:
            out.append("b exceeds T*Phi(0)")
        return out

    def sup_bound(self, value: float) -> float:
        """A-priori bound on sup|u| for feasible u with sup|u| >= L*T and objective ``value``."""
        base = max(value - self.b, 0.0) / ((self.c3 - self.c2) * self.T)
        return base ** (1.0 / self.q) + self.L * self.T

    def with_rho(self, rho: float) -> "GrowthConstants":
        return replace(self, rho_ref=rho, box_radius=self.sup_bound(rho))

    def to_dict(self) -> dict:
        return asdict(self)


def _directions(n: int, rng) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    eye = np.eye(n)
    d = rng.normal(size=(64, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.vstack([eye, -eye, d])


def _sphere_values(field_, instance, radii, dirs, tgrid, reduce_t):
    """reduce over t and directions of field values at x = r * dir; returns one value per radius."""
    out = []
    for r in radii:
        pts = r * dirs
        vals = []
        for t in tgrid:
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    vals.append(field_.value(t, pts))
            except FieldEvaluationError:
                vals.append(np.full(pts.shape[0], np.nan))
        out.append(reduce_t(np.array(vals)))
    return np.array(out)


def ratio_test(instance: ProblemInstance, seed: int = 0) -> dict:
    """Sampled coercivity check on spheres of radius 2^k, k = 0..20.

    inf_t F / |x|^q must grow without bound and (sup_t|G| + |H|)/|x|^q must stay bounded.
    Returns the sampled ratio sequences and a pass flag with reason.
    """
    rng = np.random.default_rng(seed)
    dirs = _directions(instance.n, rng)
    tgrid = np.linspace(0.0, instance.T, 9)
    q = instance.q
    F = _sphere_values(instance.F, instance, RATIO_RADII, dirs, tgrid, lambda a: np.nanmin(a)) / RATIO_RADII ** q
    G = _sphere_values(instance.G, instance, RATIO_RADII, dirs, tgrid, lambda a: np.max(np.abs(a), axis=0))
    H = _sphere_values(instance.H, instance, RATIO_RADII, dirs, tgrid[:1], lambda a: np.max(np.abs(a), axis=0))
    GH = np.max(G + H, axis=1) / RATIO_RADII ** q if G.ndim > 1 else (G + H) / RATIO_RADII ** q
    tail_F = F[10:]
    tail_GH = GH[10:]
    if np.any(np.isnan(tail_F)):
        return {"ok": False, "reason": "F not evaluable far out", "F_ratio": F, "GH_ratio": GH}
    if not (np.all(np.diff(tail_F) > 0) and tail_F[-1] > 1e3 * max(abs(tail_F[0]), 1e-300)
            or np.isinf(tail_F[-1])):
        return {"ok": False, "reason": "inf_t F/|x|^q does not grow without bound", "F_ratio": F, "GH_ratio": GH}
    if not np.all(np.isfinite(tail_GH)) or tail_GH[-1] > 2.0 * tail_GH[0] + 1e-12:
        return {"ok": False, "reason": "(|G|+|H|)/|x|^q appears unbounded", "F_ratio": F, "GH_ratio": GH}
    return {"ok": True, "reason": "", "F_ratio": F, "GH_ratio": GH}


def _ball_sup(instance, lam, mu, radius, tgrid, rng):
    """sup over |x| <= radius of |F| + |lam G| + |mu alpha H| for each t in tgrid."""
    n = instance.n
    if n == 1:
        pts = np.linspace(-radius, radius, 4001)[:, None]
    else:
        d = rng.normal(size=(8192, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = radius * rng.uniform(size=(8192, 1)) ** (1.0 / n)
        pts = np.vstack([d * r, radius * _directions(n, rng)])
    hv = np.abs(instance.H.value(0.0, pts))
    a = np.abs(instance.alpha_on(tgrid))
    out = []
    for t, at in zip(tgrid, a):
        s = np.abs(instance.F.value(t, pts)) + abs(lam) * np.abs(instance.G.value(t, pts)) + abs(mu) * at * hv
        out.append(s.max())
    return np.array(out)


def _closed_form(instance: ProblemInstance, lam: float, mu: float):
    """Analytic constants for the cosine-desk instance: |x| + |cos x| <= 2 x^2 for |x| >= 1."""
    if instance.name != "cosine-desk" or instance.to_mapping() != _builtin_mapping("cosine-desk"):
        return None
    c1, delta = 2.0, 1.0
    c2 = c1 * max(abs(lam), abs(mu) * 1.0)
    c3 = max(2.0 * c2, 2.0)
    delta1 = math.sqrt(c3)  # x^4 >= c3 x^2 iff |x| >= sqrt(c3)
    M = delta1 ** 4 + abs(lam) * delta1 + abs(mu)
    return c1, delta, c2, c3, delta1, M * instance.T


def _builtin_mapping(name):
    from .model import builtin_instance

    return builtin_instance(name).to_mapping()


def reference_level(instance: ProblemInstance, lam: float, mu: float, box: float = 10.0, m: int = 2001) -> float:
    """Objective of the best constant path on a coarse grid of the box, plus one."""
    N = 64
    t = instance.time_grid(N)
    a = instance.alpha_on(t)
    if instance.n == 1:
        cands = np.linspace(-box, box, m)[:, None]
    else:
        cands = np.random.default_rng(0).uniform(-box, box, size=(m, instance.n))
    pts = np.repeat(cands, N, axis=0)
    tt = np.tile(t, cands.shape[0])
    aa = np.tile(a, cands.shape[0])
    w = instance.F.value(tt, pts) + lam * instance.G.value(tt, pts) + mu * aa * instance.H.value(tt, pts)
    best = float(np.min(w.reshape(cands.shape[0], N).mean(axis=1)))
    return instance.T * instance.phi.min_value + instance.T * best + 1.0


def growth_constants(instance: ProblemInstance, lam: float, mu: float,
                     rho_ref: Optional[float] = None, closed_form: bool = True, seed: int = 0) -> GrowthConstants:
    """Constants of the coercivity estimate for the perturbed functional at (lam, mu).

    Uses the analytic values for the cosine-desk instance and otherwise sphere
    sampling with a 2x safety factor.  Raises :class:`GrowthError` when the
    ratio test rejects the instance.
    """
    T, L, q = instance.T, instance.L, instance.q
    rng = np.random.default_rng(seed)
    tgrid = np.linspace(0.0, T, 33)
    cf = _closed_form(instance, lam, mu) if closed_form else None
    if cf is not None:
        c1, delta, c2, c3, delta1, M_int = cf
        source = "closed-form"
    else:
        rt = ratio_test(instance, seed)
        if not rt["ok"]:
            raise GrowthError(f"growth hypothesis rejected for {instance.name}: {rt['reason']}")
        delta = 1.0
        radii = np.geomspace(delta, 2.0 ** 20, 400)
        dirs = _directions(instance.n, rng)
        G = _sphere_values(instance.G, instance, radii, dirs, tgrid, lambda a: np.max(np.abs(a), axis=0))
        H = _sphere_values(instance.H, instance, radii, dirs, tgrid[:1], lambda a: np.max(np.abs(a), axis=0))
        ratio = np.max(G + H, axis=1) / radii ** q
        c1 = SAFETY * float(np.max(ratio))
        if c1 == 0.0:
            c1 = 1.0
        c2 = c1 * max(abs(lam), abs(mu) * instance.alpha_norm_inf())
        c3 = max(2.0 * c2, 1.0)
        Fr = _sphere_values(instance.F, instance, radii, dirs, tgrid, lambda a: np.nanmin(a)) / radii ** q
        low = np.flatnonzero(~(Fr >= SAFETY * c3))
        start = radii[low[-1] + 1] if low.size and low[-1] + 1 < radii.size else radii[0]
        delta1 = max(SAFETY * float(start), 2.0 * delta)
        M = SAFETY * _ball_sup(instance, lam, mu, delta1, tgrid, rng)
        M_int = float(np.trapezoid(M, tgrid))
        source = "sampled"
    b = T * instance.phi.min_value - 2.0 * M_int
    rho = reference_level(instance, lam, mu) if rho_ref is None else float(rho_ref)
    gc = GrowthConstants(q, c1, delta, c2, c3, delta1, M_int, b, rho, 0.0, T, L, source)
    return gc.with_rho(rho)


# ---------------------------------------------------------------- coercivity

@dataclass
class CoercivityReport:
    constants: GrowthConstants
    tested: int
    skipped: int
    violations: list  # (kind, path, value, sup, bound)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "constants": self.constants.to_dict(), "tested": self.tested, "skipped": self.skipped,
            "violations": [{"kind": k, "value": v, "sup": s, "bound": b, "path_csv": p.to_csv()}
                           for k, p, v, s, b in self.violations],
        }


def coercivity_check(instance: ProblemInstance, lam: float, mu: float, constants: GrowthConstants,
                     n_samples: int = 1000, rho_ref: Optional[float] = None, N: int = 64,
                     seed: int = 0, box: Optional[float] = None) -> CoercivityReport:
    """Test the sup-norm estimate on random feasible paths with sup|u| >= L*T.

    Paths are drawn until ``n_samples`` qualify.  Every path with objective
    at most ``rho_ref`` must also lie inside ``constants.box_radius``.
    """
    rho = constants.rho_ref if rho_ref is None else rho_ref
    LT = instance.L * instance.T
    box = box if box is not None else max(2.0 * LT, constants.box_radius)
    violations = []
    tested = skipped = 0
    k = 0
    while tested < n_samples:
        path = sample_path(instance, N, [seed, 7, k], box, amplitude=LT / 2)
        k += 1
        sup = path.sup_norm()
        if sup < LT:
            skipped += 1
            if k > 100 * n_samples:
                break
            continue
        tested += 1
        val = objective(instance, lam, mu, path).total
        bound = constants.sup_bound(val)
        if sup > bound * (1 + 1e-12):
            violations.append(("sup-bound", path, val, sup, bound))
        if val <= rho and sup > constants.box_radius * (1 + 1e-12):
            violations.append(("sublevel", path, val, sup, constants.box_radius))
    return CoercivityReport(constants, tested, skipped, violations)


# ---------------------------------------------------------------- probes

@dataclass
class ProbeRow:
    param: float
    n_global: int
    n_clusters: int
    best_value: float
    gap_to_second: float
    flagged: bool

    def to_dict(self):
        return asdict(self)


def _gap(report) -> float:
    if len(report.clusters) < 2:
        return math.inf
    return report.clusters[1].value - report.clusters[0].value


def uniqueness_probe(instance: ProblemInstance, lambdas: Sequence[float], mu: float = 0.0,
                     opts: MinimizeOptions = MinimizeOptions()) -> list:
    """Global-cluster count at each lambda; rows with more than one global cluster are flagged."""
    rows = []
    for lam in lambdas:
        rep = multistart(instance, float(lam), mu, opts)
        rows.append(ProbeRow(float(lam), rep.n_global, len(rep.clusters), rep.best.value, _gap(rep),
                             rep.n_global > 1))
    return rows


def h_global_minima(instance: ProblemInstance, box: float = 10.0, m: int = 200_001, tol: float = 1e-9) -> list:
    """Global minimizers of H found by brute-force grid scan plus local refinement (n <= 2)."""
    from scipy.optimize import minimize

    if instance.n == 1:
        xs = np.linspace(-box, box, m)[:, None]
    elif instance.n == 2:
        g = np.linspace(-box, box, 801)
        xs = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    else:
        raise InstanceError("H minima scan supports n <= 2")
    hv = instance.H.value(0.0, xs)
    hmin = hv.min()
    spread = max(1.0, abs(hmin))
    cand = xs[hv <= hmin + 1e-3 * spread]
    found = []
    for x0 in cand:
        res = minimize(lambda x: float(instance.H.value(0.0, x[None, :])[0]), x0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15})
        x = res.x
        if all(np.linalg.norm(x - y) > 1e-4 for y in found):
            found.append(x)
    vals = [float(instance.H.value(0.0, x[None, :])[0]) for x in found]
    best = min(vals)
    return [x for x, v in zip(found, vals) if v <= best + tol * (1 + abs(best))]


@dataclass
class ConjectureReport:
    instance: str
    rows: list
    h_minima: list
    verdict: str
    status: str = "unresolved"
    note: str = ("exploratory probe: a grid of multistart counts can only rule a candidate "
                 "instance out as a witness; it cannot establish the conjecture")

    def to_dict(self):
        return {"instance": self.instance, "rows": [r.to_dict() for r in self.rows],
                "h_minima": [list(map(float, x)) for x in self.h_minima],
                "verdict": self.verdict, "conjecture_status": self.status, "note": self.note}


def conjecture_probe(instance: ProblemInstance, mus: Sequence[float],
                     opts: MinimizeOptions = MinimizeOptions()) -> ConjectureReport:
    """Count global minimizers of I + mu*psi2 for each mu in the grid.

    Requires H to have exactly two global minima and G to vanish.  The
    instance fails as a witness if some mu shows two exact global minima; it
    is "supported" only if every mu > 0 yields a single global cluster.
    """
    if not instance.G.is_zero:
        raise InstanceError("conjecture probe needs G = 0")
    rt = ratio_test(instance)
    if not rt["ok"]:
        raise GrowthError(f"growth check failed: {rt['reason']}")
    hmin = h_global_minima(instance)
    if len(hmin) != 2:
        raise InstanceError(f"H must have exactly two global minima, found {len(hmin)}")
    rows = []
    for mu in mus:
        rep = multistart(instance, 0.0, float(mu), opts)
        rows.append(ProbeRow(float(mu), rep.n_global, len(rep.clusters), rep.best.value, _gap(rep),
                             rep.n_global > 1))
    positive = [r for r in rows if r.param > 0]
    if any(r.n_global >= 2 for r in rows):
        verdict = "not a witness: two global minima appear for some mu"
    elif positive:
        verdict = "candidate witness: a single global minimum for every sampled mu > 0"
    else:
        verdict = "inconclusive: no positive mu sampled"
    return ConjectureReport(instance.name, rows, hmin, verdict)


__all__ = [
    "el_residual", "GrowthConstants", "growth_constants", "ratio_test", "GrowthError",
    "coercivity_check", "CoercivityReport", "uniqueness_probe", "conjecture_probe",
    "ConjectureReport", "ProbeRow", "h_global_minima", "reference_level",
    "FieldEvaluationError", "SlopeDomainError",
]
