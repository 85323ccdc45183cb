"""Problem instances: the kinetic kernel Phi, the potentials F, G, H, the weight alpha.

The canonical kernel is the relativistic one,

    Phi(y) = -sqrt(L^2 - |y|^2),   phi(y) = y / sqrt(L^2 - |y|^2),
    phi^{-1}(z) = L z / sqrt(1 + |z|^2),

defined on the closed ball of radius L.  Other kernels can be supplied through
:meth:`PhiModel.custom`, which property-checks them before accepting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dsl import ScalarField, parse_field


class SlopeDomainError(ValueError):
    """A slope reached the boundary of the speed ball, where phi is undefined."""


class InstanceError(ValueError):
    pass


def _rows(y):
    y = np.asarray(y, dtype=float)
    return y[..., None] if y.ndim == 0 else y


@dataclass(frozen=True)
class PhiModel:
    """Convex kernel on the closed L-ball with its gradient and inverse gradient.

    All three maps act on arrays whose last axis is the spatial dimension.
    """

    L: float
    eval_fn: Callable = field(repr=False)
    grad_fn: Callable = field(repr=False)
    inverse_fn: Callable = field(repr=False)
    name: str = "relativistic"

    def eval(self, y):
        return self.eval_fn(_rows(y))

    def grad(self, y):
        return self.grad_fn(_rows(y))

    def inverse(self, z):
        return self.inverse_fn(_rows(z))

    @property
    def min_value(self) -> float:
        """Phi(0), the global minimum of the kernel."""
        return float(np.asarray(self.eval(np.zeros(1))).reshape(-1)[0])

    @classmethod
    def custom(cls, L: float, eval_fn, grad_fn, inverse_fn, name: str = "custom",
               dims: Sequence[int] = (1, 2, 3), seed: int = 0) -> "PhiModel":
        model = cls(float(L), eval_fn, grad_fn, inverse_fn, name)
        for n in dims:
            problems = check_phi(model, n, seed=seed)
            if problems:
                raise InstanceError(f"kernel {name!r} rejected: " + "; ".join(problems))
        return model


def make_relativistic_phi(L: float) -> PhiModel:
    if not (L > 0 and math.isfinite(L)):
        raise InstanceError(f"speed bound L must be positive, got {L}")
    L = float(L)
    L2 = L * L

    def ev(y):
        s = L2 - np.sum(y * y, axis=-1)
        if np.any(s < -1e-12 * L2):
            raise SlopeDomainError("|y| > L in kernel evaluation")
        return -np.sqrt(np.maximum(s, 0.0))

    def gr(y):
        s = L2 - np.sum(y * y, axis=-1)
        if np.any(s <= 0.0):
            raise SlopeDomainError("|y| >= L: phi is undefined on the boundary of the ball")
        return y / np.sqrt(s)[..., None]

    def inv(z):
        return L * z / np.sqrt(1.0 + np.sum(z * z, axis=-1))[..., None]

    return PhiModel(L, ev, gr, inv, "relativistic")


def check_phi(phi: PhiModel, n: int, samples: int = 100, seed: int = 0) -> list:
    """Randomized check of the kernel axioms in dimension ``n``; returns a list of failures."""
    rng = np.random.default_rng(seed)
    L = phi.L
    problems = []

    def ball(k, radius):
        d = rng.normal(size=(k, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = radius * rng.uniform(size=(k, 1)) ** (1.0 / n)
        return d * r

    zero = np.zeros((1, n))
    e0 = float(phi.eval(zero)[0])
    if np.any(phi.grad(zero) != 0.0):
        problems.append("grad(0) != 0")
    if np.any(phi.inverse(zero) != 0.0):
        problems.append("inverse(0) != 0")
    x = ball(samples, L)
    ex = phi.eval(x)
    if np.any(ex > 0.0):
        problems.append("eval takes positive values")
    nz = np.linalg.norm(x, axis=1) > 1e-9
    if np.any(ex[nz] <= e0):
        problems.append("0 is not the strict minimum")
    y = ball(samples, L)
    mid = phi.eval(0.5 * (x + y))
    if np.any(mid >= 0.5 * (ex + phi.eval(y))):
        problems.append("midpoint strict convexity fails")
    inner = ball(samples, 0.99 * L)
    back = phi.inverse(phi.grad(inner))
    if np.max(np.abs(back - inner)) > 1e-10:
        problems.append("inverse(grad(x)) != x")
    return problems


# ---------------------------------------------------------------- instances

GAMMA_SIDES = ("inf", "sup")


@dataclass(frozen=True)
class ProblemInstance:
    """One perturbed problem: kernel, potentials, weight, growth exponent and witness data.

    ``F``, ``G`` are fields of (t, x); ``H`` of x only; ``alpha`` of t only.
    ``gamma_side`` says whether H(v) = H(w) is meant to be inf H or sup H.
    """

    name: str
    n: int
    T: float
    phi: PhiModel
    F: ScalarField
    G: ScalarField
    H: ScalarField
    alpha: ScalarField
    q: float
    gamma_side: str = "inf"
    v: tuple = ()
    w: tuple = ()

    def __post_init__(self):
        if not self.T > 0:
            raise InstanceError("horizon T must be positive")
        if not self.q > 0:
            raise InstanceError("growth exponent q must be positive")
        if self.gamma_side not in GAMMA_SIDES:
            raise InstanceError(f"gamma_side must be one of {GAMMA_SIDES}")
        for fld, label in ((self.F, "F"), (self.G, "G"), (self.H, "H")):
            if fld.n != self.n:
                raise InstanceError(f"{label} is defined over {fld.n} variables, instance has n={self.n}")
        if self.H.uses_t:
            raise InstanceError("H must not depend on t")
        if self.alpha.n != 0:
            raise InstanceError("alpha must be a function of t only")
        for pt, label in ((self.v, "v"), (self.w, "w")):
            if pt and len(pt) != self.n:
                raise InstanceError(f"witness {label} must have {self.n} coordinates")

    @property
    def L(self) -> float:
        return self.phi.L

    @property
    def autonomous(self) -> bool:
        return not (self.F.uses_t or self.G.uses_t or self.alpha.uses_t)

    @property
    def gamma(self) -> float:
        return float(self.H.value(0.0, np.asarray(self.v, float)[None, :])[0])

    def alpha_on(self, t) -> np.ndarray:
        return self.alpha.of_t(t)

    def time_grid(self, m: int) -> np.ndarray:
        return np.arange(m) * (self.T / m)

    def integral_G(self, x, m: int = 2048) -> float:
        """Periodic-trapezoid value of int_0^T G(t, x) dt for a fixed point x."""
        t = self.time_grid(m)
        pts = np.repeat(np.asarray(x, float)[None, :], m, axis=0)
        return float(np.sum(self.G.value(t, pts)) * self.T / m)

    def alpha_norm_inf(self, m: int = 10_000) -> float:
        t = np.linspace(0.0, self.T, m)
        return float(np.max(np.abs(self.alpha_on(t))))

    def alpha_integral(self, m: int = 2048) -> float:
        return float(np.sum(self.alpha_on(self.time_grid(m))) * self.T / m)

    def check(self, box: float = 10.0, m: int = 10_000) -> dict:
        """Sampled invariant checks.  Returns a mapping check-name -> (ok, detail)."""
        out = {}
        a = self.alpha_on(np.linspace(0.0, self.T, m))
        ok = bool(np.all(a > 0) or np.all(a < 0))
        out["alpha_constant_sign"] = (ok, f"alpha range [{a.min():.6g}, {a.max():.6g}] on {m} points")
        if not (self.v and self.w):
            out["gamma_attained"] = (False, "witness points v, w missing")
            out["a2_integrals_differ"] = (False, "witness points v, w missing")
            return out
        g = self.gamma
        hw = float(self.H.value(0.0, np.asarray(self.w, float)[None, :])[0])
        extreme = self._gamma_is_extreme(g, box)
        out["gamma_attained"] = (abs(hw - g) <= 1e-12 and extreme,
                                 f"H(v)={g:.15g}, H(w)={hw:.15g}, {self.gamma_side} on sampled box: {extreme}")
        iv, iw = self.integral_G(self.v), self.integral_G(self.w)
        out["a2_integrals_differ"] = (abs(iv - iw) > 1e-9, f"int G(v)={iv:.12g}, int G(w)={iw:.12g}")
        return out

    def _gamma_is_extreme(self, g: float, box: float) -> bool:
        rng = np.random.default_rng(12345)
        if self.n == 1:
            pts = np.linspace(-box, box, 20001)[:, None]
        else:
            pts = rng.uniform(-box, box, size=(20000, self.n))
        h = self.H.value(0.0, pts)
        if self.gamma_side == "inf":
            return bool(np.all(h >= g - 1e-12))
        return bool(np.all(h <= g + 1e-12))

    def to_mapping(self) -> dict:
        """Plain key/value description, the inverse of :func:`instance_from_mapping`."""
        return {
            "name": self.name, "n": self.n, "T": self.T, "L": self.L,
            "F": self.F.source, "G": self.G.source, "H": self.H.source, "alpha": self.alpha.source,
            "q": self.q, "gamma_side": self.gamma_side,
            "v": list(self.v), "w": list(self.w),
        }


def instance_from_mapping(d: dict, phi: Optional[PhiModel] = None) -> ProblemInstance:
    n = int(d["n"])
    L = float(d.get("L", 1.0))
    return ProblemInstance(
        name=str(d.get("name", "custom")),
        n=n,
        T=float(d.get("T", 1.0)),
        phi=phi or make_relativistic_phi(L),
        F=parse_field(d["F"], n),
        G=parse_field(d.get("G", "0"), n),
        H=parse_field(d.get("H", "0"), n),
        alpha=parse_field(d.get("alpha", "1"), 0),
        q=float(d["q"]),
        gamma_side=str(d.get("gamma_side", "inf")),
        v=tuple(float(c) for c in d.get("v", ()) or ()),
        w=tuple(float(c) for c in d.get("w", ()) or ()),
    )


_BUILTINS = {
    # F = |x|^p / p with p = 2, G = <x, omega> with omega = 1, H = 0.
    "remark1-convex": dict(n=1, T=1.0, L=1.0, F="x1^2/2", G="x1", H="0", alpha="1", q=1.0,
                           gamma_side="inf", v=[0.0], w=[1.0]),
    "cosine-desk": dict(n=1, T=1.0, L=1.0, F="x1^4", G="x1", H="cos(x1)", alpha="1", q=2.0,
                        gamma_side="sup", v=[0.0], w=[2.0 * math.pi]),
    "conjecture-doublewell": dict(n=1, T=1.0, L=1.0, F="x1^6", G="0", H="(x1^2-1)^2", alpha="1",
                                  q=4.0, gamma_side="inf", v=[-1.0], w=[1.0]),
}


def builtin_names() -> list:
    return sorted(_BUILTINS)


def builtin_instance(name: str, **overrides) -> ProblemInstance:
    """Registry lookup.  Keyword overrides replace fields of the stored description (e.g. ``G="x1"``)."""
    if name not in _BUILTINS:
        raise InstanceError(f"unknown builtin instance {name!r}; known: {', '.join(builtin_names())}")
    d = dict(_BUILTINS[name], name=name)
    d.update(overrides)
    return instance_from_mapping(d)
