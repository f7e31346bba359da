import numpy as np
import pytest
from conftest import exprs
from hypothesis import given, settings, strategies as st

from cofactor_lab.geometry import TensorField11, complex_step_jacobian
from cofactor_lab.hamiltonian import (IntegralFamily, PhasePoint, bracket_canonical_driven,
                                      bracket_J, build_family, darboux_residual, involutivity,
                                      poisson_map_J, poisson_map_P2, quasi_ham_residual,
                                      raised_cofactor_check)

CO = ["q1", "q2"]


def phase_samples(spec, count, seed=3):
    q = spec.sample(count, seed)
    p = np.random.default_rng(seed).uniform(-1, 1, q.shape)
    return np.hstack([q, p])


def test_phase_point_round_trip():
    z = np.array([1.0, 2.0, 3.0, 4.0])
    pp = PhasePoint.from_vector(z)
    assert np.array_equal(pp.vector(), z)
    assert np.array_equal(pp.q, [1.0, 2.0])


def test_canonical_bracket_sign():
    J = TensorField11(exprs([[1, 0], [0, 1]]), CO, {})
    z = np.array([0.3, 0.1, -0.2, 0.5])
    dq1 = np.array([1.0, 0, 0, 0])
    dp1 = np.array([0, 0, 1.0, 0])
    assert bracket_J(dq1, dp1, J, z) == 1.0
    assert bracket_J(dp1, dq1, J, z) == -1.0
    assert bracket_canonical_driven(np.array([0, 1.0, 0, 0]), np.array([0, 0, 0, 1.0]), 1) == 1.0
    # the driving pair is inert under the driven bracket
    assert bracket_canonical_driven(dq1, dp1, 1) == 0.0


@pytest.mark.parametrize("rows", [
    [["2 + q1", 0], [0, "1 + q2^2"]],
    [["2", "-2*q1"], ["-2*q1", "-4*q2"]],
])
def test_poisson_map_inverts_lifted_form(rows):
    """For torsion-free J, P_J(dH) is the Hamiltonian field of dH for d(p_a (J^-1)^a_b dq^b)."""
    J = TensorField11(exprs(rows), CO, {})
    rng = np.random.default_rng(1)
    for _ in range(5):
        z = rng.uniform(-0.5, 0.5, 4)
        N = 2

        def theta(w):
            Jv = J.value(w[:N])
            return np.concatenate([np.linalg.solve(Jv.T, w[N:]), np.zeros(N, dtype=w.dtype)])

        d = complex_step_jacobian(theta, z)  # [i, j] = d_i theta_j
        omega = d.T - d  # omega(X, .) = X^i (d_i theta_j - d_j theta_i) contracted on j
        grad = rng.normal(size=4)
        X = poisson_map_J(J.value(z[:N]), J.jacobian(z[:N]), z[N:], grad)
        # same sign as the canonical case: contraction gives -dH
        assert np.abs(omega @ X + grad).max() < 1e-12


def test_p2_map_is_canonical_in_driven_pair():
    grad = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(poisson_map_P2(1, grad), [0.0, 4.0, 0.0, -2.0])


def test_involutivity_example1(hh):
    fam = build_family(hh)
    for z in phase_samples(hh, 20):
        inv = involutivity(fam, z)
        assert np.abs(inv["J"]).max() <= 1e-8
        assert np.abs(inv["P2"]).max() <= 1e-8


def test_quasi_hamiltonian_example1(hh, lin2):
    for spec in (hh, lin2):
        fam = build_family(spec)
        for z in phase_samples(spec, 10):
            levels = quasi_ham_residual(spec, fam, z, per_level=True)
            assert len(levels) == spec.n + 2
            assert max(levels) <= 1e-7


def test_shifted_potential_breaks_structure(hh):
    fam = IntegralFamily(hh, shifts={1: lambda q: q[1] ** 2})
    zs = phase_samples(hh, 5)
    assert max(quasi_ham_residual(hh, fam, z) for z in zs) > 1e-3
    assert max(np.abs(involutivity(fam, z)["J"]).max() for z in zs) > 1e-3


def test_raised_cofactor(hh):
    fam = build_family(hh)
    for z in phase_samples(hh, 10):
        assert raised_cofactor_check(hh, fam, z) <= 1e-10


def test_first_member_constant_along_flow(hh):
    from cofactor_lab.dynamics import PhaseField

    fam = build_family(hh)
    field_ = PhaseField(hh).rhs
    for z in phase_samples(hh, 10):
        G = fam.gradients(z)
        assert np.abs(G @ field_(0.0, z)).max() <= 1e-10 * max(1.0, np.abs(G).max())


coef = st.floats(0.5, 2.0)


@settings(max_examples=50, deadline=None)
@given(coef, coef, st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-1, 1), st.floats(-1, 1))
def test_darboux_torsion_free(a, b, q1, q2, p1, p2):
    # each eigenvalue depends only on its own coordinate: torsion-free
    J = TensorField11(exprs([[f"{a!r} + q1^2", 0], [0, f"{b!r} + 3 + sin(q2)"]]), CO, {})
    assert darboux_residual(J, np.array([q1, q2, p1, p2])) <= 1e-12


def test_darboux_example1(hh):
    for z in phase_samples(hh, 20):
        assert darboux_residual(hh.J, z) <= 1e-12


def test_darboux_torsionful_control():
    J = TensorField11(exprs([["q2", 0], [0, "q1"]]), CO, {})
    assert darboux_residual(J, np.array([0.7, 1.3, 0.4, -0.9])) > 1e-3


def test_darboux_singular_tensor():
    J = TensorField11(exprs([["q1", 0], [0, 1]]), CO, {})
    with pytest.raises(np.linalg.LinAlgError):
        darboux_residual(J, np.array([0.0, 1.0, 1.0, 1.0]))
