import numpy as np
import pytest
from conftest import hh_F1, hh_F2, hh_params, make_spec

from cofactor_lab.dynamics import (IntegrationControl, NumericAbort, PhaseField, Trajectory,
                                   integrate, invariant_distribution_check, jacobi_endomorphism,
                                   k_eigenspaces, sode_force, verify_driven_structure)
from cofactor_lab.hamiltonian import build_family
from cofactor_lab.specfile import load_fixture


def test_field_example1(hh):
    a, c1, c2 = hh_params(hh)
    z = np.array([1.0, 2.0, 0.3, -0.4])
    qd, pd = PhaseField(hh)(z[:2], z[2:])
    assert qd == pytest.approx([0.3, -0.4])
    assert pd == pytest.approx([-c2 * 1.0, -(c1 * 2.0 + a * 1.0)])


def test_integral_values_match_closed_form(hh):
    a, c1, c2 = hh_params(hh)
    fam = build_family(hh)
    rng = np.random.default_rng(0)
    for q in hh.sample(10):
        p = rng.normal(size=2)
        H = fam.values(np.r_[q, p])
        assert H[0] == pytest.approx(hh_F1(a, c1, c2, *q, *p), abs=1e-9)
        assert H[1] == pytest.approx(hh_F2(a, c1, c2, *q, *p), abs=1e-12)


def test_short_conservation(hh_osc):
    fam = build_family(hh_osc)
    ctl = IntegrationControl(dt=1e-3, output_stride=50)
    tr = integrate(hh_osc, hh_osc.initial_state, 2.0, ctl, monitor=fam.values)
    assert tr.t[-1] == pytest.approx(2.0)
    assert len(tr.t) == 41
    assert np.all(tr.drift() <= 1e-9)
    assert tr.max_error_estimate < 1e-10


def test_time_reversibility(hh_osc):
    ctl = IntegrationControl(dt=1e-3, output_stride=1000)
    z0 = hh_osc.initial_state
    fwd = integrate(hh_osc, z0, 1.0, ctl)
    z1 = fwd.z[-1].copy()
    z1[2:] *= -1
    back = integrate(hh_osc, z1, 1.0, ctl)
    z2 = back.z[-1].copy()
    z2[2:] *= -1
    assert np.abs(z2 - z0).max() < 1e-10


def test_rk45_agrees_with_rk4(hh_osc):
    z0 = hh_osc.initial_state
    a = integrate(hh_osc, z0, 1.0, IntegrationControl(dt=1e-3, output_stride=100))
    b = integrate(hh_osc, z0, 1.0, IntegrationControl(method="rk45", dt=1e-3, rtol=1e-11,
                                                      output_stride=100))
    assert np.allclose(a.t, b.t)
    assert np.abs(a.z - b.z).max() < 1e-8


def test_zero_length_integration(hh):
    tr = integrate(hh, hh.initial_state, 0.0)
    assert len(tr.t) == 1 and tr.steps == 0


def test_curved_metric_free_motion_conserves_energy():
    spec = make_spec(["q1", "q2"], [[1, 0], [0, "q1^2"]], [["1", 0], [0, "1"]], ["0", "0"], m=1,
                     box_lo=[1, -1], box_hi=[2, 1])

    def kinetic(z):
        q, p = z[:2], z[2:]
        return 0.5 * p @ spec.metric.inverse(q) @ p

    tr = integrate(spec, np.array([1.5, 0.0, 0.2, 0.7]), 3.0,
                   IntegrationControl(dt=1e-3, output_stride=100), monitor=lambda z: [kinetic(z)])
    assert tr.drift()[0] < 1e-10
    # p_2 is conserved since q2 is cyclic
    assert np.abs(tr.p[:, 1] - 0.7).max() < 1e-12


def test_blowup_aborts_with_partial_trajectory():
    spec = make_spec(["y", "x"], [[1, 0], [0, 1]], [["1", 0], [0, "1"]], ["0", "4*x^3"], m=1)
    with pytest.raises(NumericAbort) as info:
        integrate(spec, np.array([0.0, 2.0, 0.0, 5.0]), 10.0,
                  IntegrationControl(dt=1e-3, output_stride=10))
    tr = info.value.trajectory
    assert tr.aborted and len(tr.t) >= 1
    assert info.value.t_last < 10.0


def test_drift_relative_and_absolute():
    tr = Trajectory(np.arange(3.0), np.zeros((3, 2)),
                    values=np.array([[2.0, 0.0], [2.002, 1e-9], [1.999, -3e-9]]))
    assert tr.drift() == pytest.approx([1e-3, 3e-9])


def test_jacobi_endomorphism_example1(hh):
    a, c1, c2 = hh_params(hh)
    for q in hh.sample(5):
        phi = jacobi_endomorphism(hh, q)
        y = q[0]
        assert np.abs(phi - np.array([[c2, 0.0], [2 * a * y, c1]])).max() <= 1e-12


def test_jacobi_endomorphism_example2_original(lin2):
    o = lin2.original
    rng = np.random.default_rng(5)
    phis = [jacobi_endomorphism(o, rng.uniform(-2, 2, 2)) for _ in range(10)]
    for phi in phis:
        assert np.array_equal(phi, np.array([[-5.0, 4.0], [-1.0, 0.0]]))
    assert invariant_distribution_check(phis, [[1.0, 1.0]]) <= 1e-12
    assert invariant_distribution_check(phis, [[1.0, 0.0]]) > 0.1
    eig = dict(k_eigenspaces(phis[0]))
    assert eig[-1.0] == pytest.approx([1.0, 1.0])
    assert eig[-4.0] == pytest.approx([1.0, 0.25])


def test_example2_adapted_fields(lin2):
    rng = np.random.default_rng(9)
    for q in lin2.sample(20):
        v = rng.normal(size=2)
        y, x = q
        assert np.abs(sode_force(lin2, q, v) - np.array([4 * y, x + y])).max() <= 1e-12


def test_driven_structure_examples(hh, lin2):
    for spec in (hh, lin2):
        rep = verify_driven_structure(spec)
        assert rep.passed, rep.failures()
        assert rep.witness is not None


def test_driven_structure_decoupled_fails():
    rep = verify_driven_structure(load_fixture("henon_heiles_decoupled"))
    assert rep.failures() == ["driving coupling witness |dQ_a/dy^i|"]


def test_driven_structure_driving_depends_on_x():
    spec = make_spec(["y", "x"], [[1, 0], [0, 1]], [["1", 0], [0, "x"]], ["-y + x", "-x - y^2"], m=1)
    rep = verify_driven_structure(spec)
    assert "driving equations independent of (x, xdot)" in rep.failures()


def test_driven_structure_metric_coupling():
    spec = make_spec(["y", "x"], [[1, 0], [0, "1 + y^2"]], [["1", 0], [0, "x"]], ["-y", "-x - y^2"],
                     m=1)
    rep = verify_driven_structure(spec)
    assert "metric blocks g1(y), g2(x), g12 = 0" in rep.failures()
