"""Discrete action, perturbation map and their node gradients.

For a path with nodes u_j and slopes d_j on a grid of step h,

    kinetic   = sum_j h Phi(d_j)                  (exact for piecewise-linear paths)
    potential = sum_j h F(t_j, u_j)
    psi1      = sum_j h G(t_j, u_j)
    psi2      = sum_j h alpha(t_j) H(u_j)

and the perturbed objective is kinetic + potential + lam*psi1 + mu*psi2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl import FieldEvaluationError
from .model import ProblemInstance, SlopeDomainError
from .path import PeriodicPath


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    kinetic: float
    potential: float
    psi1: float
    psi2: float

    @property
    def psi(self) -> tuple:
        return (self.psi1, self.psi2)


def _fields(instance: ProblemInstance, path: PeriodicPath, grad: bool):
    t = path.times
    u = path.nodes
    a = instance.alpha_on(t)
    if grad:
        f, gf = instance.F.value_and_grad(t, u)
        g, gg = instance.G.value_and_grad(t, u)
        hv, gh = instance.H.value_and_grad(t, u)
        return a, (f, g, hv), (gf, gg, gh)
    return a, (instance.F.value(t, u), instance.G.value(t, u), instance.H.value(t, u)), None


def objective(instance: ProblemInstance, lam: float, mu: float, path: PeriodicPath) -> ObjectiveValue:
    h = path.h
    kin = float(h * np.sum(instance.phi.eval(path.slopes)))
    a, (f, g, hv), _ = _fields(instance, path, grad=False)
    pot = float(h * np.sum(f))
    p1 = float(h * np.sum(g))
    p2 = float(h * np.sum(a * hv))
    return ObjectiveValue(kin + pot + lam * p1 + mu * p2, kin, pot, p1, p2)


def potential_gradient(instance: ProblemInstance, lam: float, mu: float, path: PeriodicPath) -> np.ndarray:
    """grad_x W(t_j, u_j) at every node, W = F + lam G + mu alpha H."""
    a, _, (gf, gg, gh) = _fields(instance, path, grad=True)
    return gf + lam * gg + mu * a[:, None] * gh


def gradient(instance: ProblemInstance, lam: float, mu: float, path: PeriodicPath) -> np.ndarray:
    """Exact node gradient of :func:`objective`, shape (N, n).

    d/du_j = h grad W(t_j, u_j) + phi(d_{j-1}) - phi(d_j), indices periodic.
    """
    gw = potential_gradient(instance, lam, mu, path)
    ph = instance.phi.grad(path.slopes)
    return path.h * gw + np.roll(ph, 1, axis=0) - ph


def value_and_gradient(instance, lam, mu, path):
    """Objective and node gradient from one field pass (used inside the optimizer)."""
    h = path.h
    d = path.slopes
    a, (f, g, hv), (gf, gg, gh) = _fields(instance, path, grad=True)
    kin = float(h * np.sum(instance.phi.eval(d)))
    pot, p1, p2 = float(h * np.sum(f)), float(h * np.sum(g)), float(h * np.sum(a * hv))
    val = ObjectiveValue(kin + pot + lam * p1 + mu * p2, kin, pot, p1, p2)
    ph = instance.phi.grad(d)
    gw = gf + lam * gg + mu * a[:, None] * gh
    return val, h * gw + np.roll(ph, 1, axis=0) - ph


def psi(instance: ProblemInstance, path: PeriodicPath) -> tuple:
    a, (_, g, hv), _ = _fields(instance, path, grad=False)
    return (float(path.h * np.sum(g)), float(path.h * np.sum(a * hv)))


def psi_jacobian(instance: ProblemInstance, path: PeriodicPath):
    """psi and its node gradients: returns ((psi1, psi2), dpsi1 (N,n), dpsi2 (N,n))."""
    a, (_, g, hv), (_, gg, gh) = _fields(instance, path, grad=True)
    h = path.h
    return (float(h * np.sum(g)), float(h * np.sum(a * hv))), h * gg, h * a[:, None] * gh


__all__ = [
    "ObjectiveValue", "objective", "gradient", "value_and_gradient", "potential_gradient",
    "psi", "psi_jacobian", "FieldEvaluationError", "SlopeDomainError",
]
