"""Discrete periodic paths with bounded slopes, and their feasibility projection."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

DEFAULT_MARGIN = 1e-3
ROUND_OFF = 1e-12


class ProjectionError(RuntimeError):
    def __init__(self, message: str, gap: float = float("nan")):
        self.gap = gap
        super().__init__(message)


class PathError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PeriodicPath:
    """Node values u_0..u_{N-1} on a uniform grid of [0, T); u_N = u_0 implicitly."""

    nodes: np.ndarray
    T: float

    def __post_init__(self):
        u = np.array(self.nodes, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if u.ndim != 2 or u.shape[0] < 4:
            raise PathError(f"need at least 4 grid intervals, got shape {u.shape}")
        u.setflags(write=False)
        object.__setattr__(self, "nodes", u)

    @property
    def N(self) -> int:
        return self.nodes.shape[0]

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    @property
    def slopes(self) -> np.ndarray:
        return (np.roll(self.nodes, -1, axis=0) - self.nodes) / self.h

    @property
    def mean(self) -> np.ndarray:
        return self.nodes.mean(axis=0)

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.nodes, axis=1)))

    def inf_norm(self) -> float:
        return float(np.min(np.linalg.norm(self.nodes, axis=1)))

    def distance(self, other: "PeriodicPath") -> float:
        """Sup-norm distance between two paths on the same grid."""
        return float(np.max(np.linalg.norm(self.nodes - other.nodes, axis=1)))

    def violations(self, L: float, eps: float = DEFAULT_MARGIN) -> list:
        """Return the list of violated path invariants (empty when feasible)."""
        out = []
        d = self.slopes
        speed = np.linalg.norm(d, axis=1)
        bound = L * (1.0 - eps)
        # differencing nodes of size |u| loses about eps*|u|/h in each slope
        slack = ROUND_OFF * (1.0 + bound) + 16 * np.finfo(float).eps * np.abs(self.nodes).max() / self.h
        if np.any(speed > bound + slack):
            out.append(f"slope bound: max |d| = {speed.max():.15g} > {bound:.15g}")
        closure = np.abs(d.sum(axis=0)).max()
        if closure > 1e-9 * max(1.0, np.abs(d).max()) * self.N:
            out.append(f"closure: |sum d| = {closure:.3g}")
        if self.sup_norm() > L * self.T + self.inf_norm() + 1e-12 * (1 + self.sup_norm()):
            out.append("sup|u| > L*T + inf|u|")
        return out

    def is_feasible(self, L: float, eps: float = DEFAULT_MARGIN) -> bool:
        return not self.violations(L, eps)

    @classmethod
    def from_mean_slopes(cls, mean, slopes, T: float) -> "PeriodicPath":
        slopes = np.asarray(slopes, dtype=float)
        if slopes.ndim == 1:
            slopes = slopes[:, None]
        return cls(nodes_from_mean_slopes(np.asarray(mean, float), slopes, T / slopes.shape[0]), T)

    @classmethod
    def constant(cls, point, N: int, T: float) -> "PeriodicPath":
        point = np.atleast_1d(np.asarray(point, float))
        return cls(np.repeat(point[None, :], N, axis=0), T)

    # ------------------------------------------------------------ CSV

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["i", "t"] + [f"x{k + 1}" for k in range(self.n)])
        for i in range(self.N + 1):
            row = self.nodes[i % self.N]
            wr.writerow([i, repr(float(i * self.h))] + [repr(float(c)) for c in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, L=None, eps: float = DEFAULT_MARGIN) -> "PeriodicPath":
        """Parse a dump written by :meth:`to_csv`, re-validating closure and (if L given) slopes."""
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if header[:2] != ["i", "t"] or not all(c == f"x{k + 1}" for k, c in enumerate(header[2:])):
            raise PathError(f"bad path header {header}")
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        if data.shape[0] < 5:
            raise PathError("path dump has too few rows")
        N = data.shape[0] - 1
        if not np.array_equal(data[-1, 2:], data[0, 2:]):
            raise PathError("closure row differs from the first node")
        if not np.array_equal(data[:, 0], np.arange(N + 1)):
            raise PathError("node indices are not 0..N")
        T = float(data[-1, 1])
        if not np.allclose(data[:, 1], np.arange(N + 1) * (T / N), rtol=0, atol=1e-12 * max(1.0, T)):
            raise PathError("time column is not a uniform grid")
        path = cls(data[:-1, 2:], T)
        if L is not None:
            bad = path.violations(L, eps)
            if bad:
                raise PathError("; ".join(bad))
        return path


# ---------------------------------------------------------------- projection

def _project_balls(d, r):
    if d.shape[-1] == 1:
        return np.clip(d, -r, r)
    norm = np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
    return d * np.minimum(1.0, r / np.maximum(norm, 1e-300))


def _close(d, radius):
    # spread the zero-sum round-off over slopes with slack, so rebuilding nodes keeps every bound
    r = d.sum(axis=-2, keepdims=True)
    rn = np.linalg.norm(r, axis=-1, keepdims=True)
    slack = np.linalg.norm(d, axis=-1, keepdims=True) < radius - rn
    count = slack.sum(axis=-2, keepdims=True)
    return d - np.where(slack, r / np.maximum(count, 1), 0.0)


def _newton_polish(x, d, radius, iters=50):
    # The projection is d_i = P_ball(x_i - nu) for the multiplier nu of the zero-sum
    # constraint; solve sum_i P_ball(x_i - nu) = 0 by semismooth Newton from the iterate d.
    n = x.shape[-1]
    inside = np.linalg.norm(d, axis=-1, keepdims=True) < radius * (1 - 1e-9)
    w = np.maximum(inside.sum(axis=-2, keepdims=True), 1)
    diff = x - d
    nu = np.where(inside.any(axis=-2, keepdims=True),
                  (diff * inside).sum(axis=-2, keepdims=True) / w,
                  diff.mean(axis=-2, keepdims=True))

    def residual(nu):
        y = _project_balls(x - nu, radius)
        return y, y.sum(axis=-2, keepdims=True)

    y, res = residual(nu)
    eye = np.eye(n)
    for _ in range(iters):
        if np.abs(res).max() < 1e-15 * max(1.0, radius) * x.shape[-2]:
            break
        z = x - nu
        zn = np.linalg.norm(z, axis=-1, keepdims=True)
        out = zn > radius
        zh = z / np.maximum(zn, 1e-300)
        J = np.where(out[..., None], (radius / np.maximum(zn, 1e-300))[..., None]
                     * (eye - zh[..., :, None] * zh[..., None, :]), eye)
        Js = J.sum(axis=-3) + 1e-14 * eye
        step = np.linalg.solve(Js, res[..., 0, :, None])[..., None, :, 0]
        t = 1.0
        for _ in range(30):
            y_new, r_new = residual(nu + t * step)
            if np.linalg.norm(r_new) < np.linalg.norm(res):
                break
            t *= 0.5
        else:
            break
        nu, y, res = nu + t * step, y_new, r_new
    return y


def project_slopes(slopes, radius: float, tol: float = 1e-12, max_sweeps: int = 10_000) -> np.ndarray:
    """Euclidean projection of slopes onto {|d_i| <= radius for all i, sum_i d_i = 0}.

    Dykstra's alternating projection between the zero-sum hyperplane and the
    product of balls.  Slopes have shape (N, n), or (..., N, n) for a batch of
    independent projections.  The result lies in the balls exactly; the
    zero-sum residual is below ``tol``.
    """
    x = np.array(slopes, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N = x.shape[-2]
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    gap = np.inf
    x0 = x.copy()
    for sweep in range(max_sweeps):
        xp = x + p
        y = xp - xp.sum(axis=-2, keepdims=True) / N   # zero-sum hyperplane
        p = xp - y
        yq = y + q
        x_new = _project_balls(yq, radius)
        q = yq - x_new
        gap = float(np.abs(x_new - x).max())
        x = x_new
        if gap < tol or (sweep + 1) % 200 == 0 or sweep + 1 == max_sweeps:
            # Dykstra crawls when slopes are far outside the balls and leaves a zero-sum
            # residual of order tol; Newton on the multiplier removes both
            polished = _newton_polish(x0, x, radius)
            r_dyk = float(np.abs(x.sum(axis=-2)).max())
            r_pol = float(np.abs(polished.sum(axis=-2)).max())
            if r_pol < tol * N and r_pol <= r_dyk:
                return _close(polished, radius)
            if gap < tol and r_dyk < tol * N:
                return _close(x, radius)
    raise ProjectionError(f"Dykstra projection did not converge in {max_sweeps} sweeps "
                          f"(last step {gap:.3g})", gap)


def nodes_from_mean_slopes(mean, slopes, h: float) -> np.ndarray:
    """Node values with the given mean and slopes; batched over leading axes."""
    s = np.zeros_like(slopes)
    s[..., 1:, :] = h * np.cumsum(slopes[..., :-1, :], axis=-2)
    return mean[..., None, :] + s - s.mean(axis=-2, keepdims=True)


def project_feasible(raw_nodes, L: float, eps: float = DEFAULT_MARGIN, T: float = 1.0) -> PeriodicPath:
    """Project node values onto the discrete constraint set, keeping their mean.

    Works in slope space: the slopes of ``raw_nodes`` are projected onto
    {|d_i| <= L(1 - eps), sum d_i = 0} and the path is rebuilt around the mean.
    """
    raw = np.asarray(raw_nodes, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.shape[0] < 4:
        raise PathError(f"need N >= 4 grid intervals, got {raw.shape[0]}")
    if not 0.0 <= eps < 0.5:
        raise PathError(f"slope margin must lie in [0, 0.5), got {eps}")
    N = raw.shape[0]
    h = T / N
    d = (np.roll(raw, -1, axis=0) - raw) / h
    d = project_slopes(d, L * (1.0 - eps))
    return PeriodicPath.from_mean_slopes(raw.mean(axis=0), d, T)


# ---------------------------------------------------------------- sampling

def sample_path(instance, N: int, seed: int, box_radius: float, eps: float = DEFAULT_MARGIN,
                amplitude: float = None) -> PeriodicPath:
    """Random feasible start: a uniform point of the box plus 1-3 Fourier modes, projected.

    Deterministic in ``seed``.  ``amplitude`` caps each mode (default L*T/8).
    """
    if not box_radius > 0:
        raise PathError("box radius must be positive")
    rng = np.random.default_rng(seed)
    n, T, L = instance.n, instance.T, instance.L
    cap = L * T / 8.0 if amplitude is None else amplitude
    center = rng.uniform(-box_radius, box_radius, size=n)
    t = np.arange(N) * (T / N)
    u = np.repeat(center[None, :], N, axis=0)
    for _ in range(int(rng.integers(1, 4))):
        k = int(rng.integers(1, 5))
        amp = rng.uniform(0.0, cap, size=n)
        phase = rng.uniform(0.0, 2 * np.pi, size=n)
        u = u + amp[None, :] * np.sin(2 * np.pi * k * t[:, None] / T + phase[None, :])
    return project_feasible(u, L, eps, T)
