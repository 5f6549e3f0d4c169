import numpy as np
import pytest

from lmdsurrogate.fields import (ConditioningInput, FieldState, ParameterError, PhysicsParams, ValidationError,
                                 clip_fields, from_tensor, initial_state, relative_l2, to_tensor)


def test_noiseless_initial_state():
    s = initial_state(8, 8, 1.0, 0.2, 2, noise_amp=0.0, seed=0)
    assert np.all(s.phi[:2] == 0) and np.all(s.cA[:2] == 0) and np.all(s.cB[:2] == 0)
    assert np.all(s.phi[2:] == 1) and np.all(s.cA[2:] == 0.2) and np.all(s.cB[2:] == 0.8)


def test_initial_state_other_reference():
    s = initial_state(8, 8, 1.0, 0.3, 4)
    assert np.all(s.cA[4:] == 0.3) and np.all(s.cB[4:] == 0.7)


def test_initial_state_deterministic():
    a = initial_state(16, 16, 1.0, 0.2, 4, noise_amp=0.1, seed=7)
    b = initial_state(16, 16, 1.0, 0.2, 4, noise_amp=0.1, seed=7)
    c = initial_state(16, 16, 1.0, 0.2, 4, noise_amp=0.1, seed=8)
    for n in ("phi", "cA", "cB"):
        assert np.array_equal(getattr(a, n), getattr(b, n))
    assert not np.array_equal(a.cA, c.cA)


def test_initial_state_noise_only_on_concentrations():
    s = initial_state(16, 16, 1.0, 0.2, 4, noise_amp=0.1, seed=3)
    assert set(np.unique(s.phi)) == {0.0, 1.0}
    assert np.all(s.cA[:4] == 0)
    assert s.cA[4:].std() > 0
    s.check()


@pytest.mark.parametrize("kw", [dict(interface_row=0), dict(interface_row=8), dict(cA_ref=1.5),
                                dict(noise_amp=-0.1), dict(cA_ref=0.95, noise_amp=0.1)])
def test_initial_state_rejects(kw):
    args = dict(H=8, W=8, dx=1.0, cA_ref=0.2, interface_row=2)
    args.update(kw)
    with pytest.raises(ParameterError):
        initial_state(**args)


def test_relative_l2_closed_forms(rng):
    a = rng.random(10)
    assert relative_l2(a, a) == 0.0
    assert relative_l2([1.0, 0.0], [0.0, 1.0]) == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_relative_l2_loop_oracle(rng):
    a, b = rng.normal(size=16), rng.normal(size=16)
    num = den = 0.0
    for x, y in zip(a, b):
        num += (x - y) ** 2
        den += y * y
    assert relative_l2(a, b) == pytest.approx((num / den) ** 0.5, rel=1e-15)


def test_tensor_round_trip(rng):
    t = np.stack([rng.random((5, 6)), 0.4 * rng.random((5, 6)), 0.5 * rng.random((5, 6))])
    s = from_tensor(t)
    assert np.array_equal(to_tensor(s), t)


def test_from_tensor_rescales_small_overshoot():
    t = np.zeros((3, 2, 2))
    t[1, 0, 0], t[2, 0, 0] = 0.5, 0.5005
    s = from_tensor(t)
    assert s.cA[0, 0] + s.cB[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert s.cA[0, 0] / s.cB[0, 0] == pytest.approx(0.5 / 0.5005)


def test_from_tensor_rejects_large_overshoot():
    t = np.zeros((3, 2, 2))
    t[1, 1, 1], t[2, 1, 1] = 0.75, 0.75
    with pytest.raises(ValidationError, match="exceeds"):
        from_tensor(t)


@pytest.mark.parametrize("bad", [np.nan, -0.1, 1.1])
def test_from_tensor_rejects_out_of_range(bad):
    t = np.zeros((3, 2, 2))
    t[0, 0, 0] = bad
    with pytest.raises(ValidationError):
        from_tensor(t)


def test_state_is_read_only(rng):
    s = FieldState(rng.random((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        s.phi[0, 0] = 2.0
    c = s.copy()
    assert c.phi is not s.phi


def test_state_shape_mismatch():
    with pytest.raises(ValidationError):
        FieldState(np.zeros((3, 3)), np.zeros((3, 4)), np.zeros((3, 3)))


def test_clip_fields_projects():
    s = FieldState(np.array([[1.5, -0.2]]), np.array([[0.8, 0.3]]), np.array([[0.6, -0.1]]))
    c = clip_fields(s)
    assert c.phi.tolist() == [[1.0, 0.0]]
    assert c.cA[0, 0] + c.cB[0, 0] <= 1.0
    assert c.cB[0, 1] == 0.0
    c.check()


def test_physics_params_validation():
    with pytest.raises(ParameterError):
        PhysicsParams(M_phi=-1.0)
    with pytest.raises(ParameterError):
        PhysicsParams(omega_solid=(1.0, 2.0))
    p = PhysicsParams.for_grid(0.5)
    assert p.eps2 == 0.25 and p.kappa_c == 0.0625


def test_conditioning_input():
    th = ConditioningInput(2.0, 0.3)
    assert th.as_array().tolist() == [2.0, 0.3]
    with pytest.raises(ParameterError):
        ConditioningInput(0.0, 0.3)
