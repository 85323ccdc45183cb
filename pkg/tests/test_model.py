import math

import numpy as np
import pytest

from relosc.model import (InstanceError, PhiModel, SlopeDomainError, builtin_instance, builtin_names,
                          check_phi, instance_from_mapping, make_relativistic_phi)


def test_relativistic_values():
    phi = make_relativistic_phi(1.0)
    assert float(np.ravel(phi.eval(np.zeros((1, 1))))[0]) == -1.0
    assert np.ravel(phi.inverse(np.zeros((1, 1))))[0] == 0.0
    assert np.ravel(phi.grad(np.array([[0.6]])))[0] == pytest.approx(0.75, abs=1e-15)
    assert np.ravel(phi.inverse(np.array([[0.75]])))[0] == pytest.approx(0.6, abs=1e-15)
    assert phi.min_value == -1.0


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("L", [0.5, 1.0, 3.0])
def test_kernel_axioms(n, L):
    assert check_phi(make_relativistic_phi(L), n, samples=500, seed=n) == []


def test_grad_outside_ball():
    with pytest.raises(SlopeDomainError):
        make_relativistic_phi(1.0).grad(np.array([1.0]))


@pytest.mark.parametrize("L", [0.0, -1.0, float("inf")])
def test_bad_speed_bound(L):
    with pytest.raises(InstanceError):
        make_relativistic_phi(L)


def test_custom_kernel_rejected():
    with pytest.raises(InstanceError):
        PhiModel.custom(1.0, lambda y: np.sum(y * y, -1), lambda y: 2 * y, lambda z: z / 2)  # eval > 0


def test_custom_kernel_accepted():
    # Phi(y) = |y|^2/2 - 1 on the unit ball: convex, nonpositive, explicit inverse
    PhiModel.custom(1.0, lambda y: 0.5 * np.sum(y * y, -1) - 1.0, lambda y: y, lambda z: z)


def test_registry():
    assert builtin_names() == ["conjecture-doublewell", "cosine-desk", "remark1-convex"]
    with pytest.raises(InstanceError):
        builtin_instance("nope")


def test_cosine_desk_checks():
    inst = builtin_instance("cosine-desk")
    checks = inst.check()
    assert all(ok for ok, _ in checks.values()), checks
    assert inst.integral_G(np.array(inst.v)) == pytest.approx(0.0, abs=1e-12)
    assert inst.integral_G(np.array(inst.w)) == pytest.approx(2 * math.pi, abs=1e-12)
    assert inst.gamma == 1.0 and inst.autonomous


def test_doublewell_h_minima():
    inst = builtin_instance("conjecture-doublewell")
    assert inst.gamma == 0.0
    assert inst.H.value(np.zeros(2), np.array([[-1.0], [1.0]])).tolist() == [0.0, 0.0]
    # G = 0 cannot separate the witness integrals
    assert not inst.check()["a2_integrals_differ"][0]


def test_equal_witnesses_fail_a2():
    inst = builtin_instance("cosine-desk", w=[0.0])
    assert not inst.check()["a2_integrals_differ"][0]


def test_alpha_sign_change_detected():
    inst = builtin_instance("cosine-desk", alpha="t - 0.5")
    assert not inst.check()["alpha_constant_sign"][0]


def test_mapping_round_trip():
    inst = builtin_instance("cosine-desk")
    again = instance_from_mapping(inst.to_mapping())
    assert again.to_mapping() == inst.to_mapping()


@pytest.mark.parametrize("bad", [dict(T=0.0), dict(q=-1.0), dict(gamma_side="mid"), dict(H="t*x1")])
def test_invalid_instances(bad):
    with pytest.raises((InstanceError, ValueError)):
        builtin_instance("cosine-desk", **bad)
