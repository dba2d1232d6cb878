import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockkoop.kron import (
    ONE,
    Atlas,
    Monomial,
    dedup,
    kron_jacobian,
    kron_power_mat,
    kron_power_vec,
    lift,
    lifted_A,
    lifted_B,
    power_atlas,
)


def test_kron_power_vec_row_major():
    assert np.array_equal(kron_power_vec([1.0, 2.0], 2), [1, 2, 2, 4])
    assert np.array_equal(kron_power_vec([3.0], 0), [1.0])
    assert np.array_equal(kron_power_vec([1.0, 2.0, 3.0], 1), [1, 2, 3])


def test_kron_power_mat():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(kron_power_mat(M, 2), np.kron(M, M))
    assert np.array_equal(kron_power_mat(M, 0), np.eye(1))


def test_negative_degree():
    with pytest.raises(ValueError):
        kron_power_vec([1.0], -1)


def test_lifted_A_tau_one_is_A():
    A = np.array([[-1.0, 2.0], [0.5, -3.0]])
    assert np.array_equal(lifted_A(A, 1), A)


def test_lifted_A_scalar():
    # d/dt x^3 = 3a x^3 for dx = a x
    assert np.allclose(lifted_A(np.array([[-0.5]]), 3), [[-1.5]])


def test_lifted_B_shapes():
    b = np.array([1.0, -2.0])
    assert lifted_B(b, 1).shape == (2, 1)
    assert lifted_B(b, 3).shape == (8, 4)
    assert lifted_B(np.zeros(0), 1).shape == (0, 1)


def test_jacobian_finite_difference_example():
    x = np.array([0.3, -0.7, 1.1])
    J = kron_jacobian(x, 3)
    h = 1e-6
    fd = np.column_stack([
        (kron_power_vec(x + h * e, 3) - kron_power_vec(x - h * e, 3)) / (2 * h) for e in np.eye(3)
    ])
    assert np.max(np.abs(J - fd)) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_lifted_identities(n, tau, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (n, n))
    b = rng.uniform(-1, 1, n)
    x = rng.uniform(-1, 1, n)
    J = kron_jacobian(x, tau)
    assert np.allclose(J @ (A @ x), lifted_A(A, tau) @ kron_power_vec(x, tau), atol=1e-12)
    assert np.allclose(J @ b, lifted_B(b, tau) @ kron_power_vec(x, tau - 1), atol=1e-12)


def test_monomial_is_a_multiset():
    a = Monomial((("G", 1), ("G", 0)))
    b = Monomial((("G", 0),)) * Monomial((("G", 1),))
    assert a == b and hash(a) == hash(b)
    assert ONE.degree == 0 and str(ONE) == "1"
    assert (a * ONE) == a


def test_atlas_rejects_unknown_factor():
    with pytest.raises(ValueError):
        Atlas((Monomial((("G", 2),)),), {"G": 2})


def test_power_atlas_and_dedup_counts():
    base = Atlas.base("G", 2)
    pa = power_atlas(base, 2)
    assert len(pa) == 1 + 2 + 4
    rm = dedup(pa)
    assert len(rm.keep) == 1 + 2 + 3
    assert np.array_equal(rm.T @ rm.T_dagger, np.eye(6))
    # duplicate x0*x1 (index 5) maps onto x0*x1 kept at index 4
    assert rm.rep[5] == rm.rep[4]


def test_dedup_distinct_atlas_is_identity():
    rm = dedup(Atlas.base("G", 3))
    assert np.array_equal(rm.T, np.eye(3)) and np.array_equal(rm.T_dagger, np.eye(3))


def test_lift_matches_kron_powers():
    base = Atlas.base("G", 2)
    x = np.array([2.0, -3.0])
    z = lift(power_atlas(base, 3), {"G": x})
    expected = np.concatenate([kron_power_vec(x, t) for t in range(4)])
    assert np.array_equal(z, expected)


def test_lift_errors():
    with pytest.raises(KeyError):
        lift(Atlas.base("G", 1), {})
    with pytest.raises(ValueError):
        lift(Atlas.base("G", 2), {"G": [1.0]})


def test_concat_inconsistent_dims():
    with pytest.raises(ValueError):
        Atlas.base("G", 2).concat(Atlas.base("G", 3))
