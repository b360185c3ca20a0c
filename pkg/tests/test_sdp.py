import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cpcomplete.driver import assemble_sdr
from cpcomplete.moments import LinearMatrixStructure, atomic_tms, random_sos_objective, support_set
from cpcomplete.partial import IndexSet
from cpcomplete.sdp import (Certificate, Infeasible, NumericalFailure, Optimal, SdpProblem, SolverSettings,
                            certificate_margin, solve, verify_certificate)


def _psd_boundary_toy():
    # z = (z0, z1): minimize z1 with z0 = 1 and [[z0, z1], [z1, z0]] PSD
    blk = LinearMatrixStructure.from_entries(2, 2, {(0, 0): [(1.0, 0)], (0, 1): [(1.0, 1)],
                                                    (1, 1): [(1.0, 0)]})
    return SdpProblem(np.array([0.0, 1.0]), sp.csr_matrix([[1.0, 0.0]]), np.array([1.0]), (blk,))


def _contradiction_toy():
    # z1 = -1 and [z1] PSD
    blk = LinearMatrixStructure.from_entries(1, 1, {(0, 0): [(1.0, 0)]})
    return SdpProblem(np.array([0.0]), sp.csr_matrix([[1.0]]), np.array([-1.0]), (blk,))


def test_psd_boundary_toy():
    out = solve(_psd_boundary_toy())
    assert isinstance(out, Optimal)
    assert out.z[1] == pytest.approx(-1.0, abs=1e-6)
    assert out.primal_residual <= 1e-8 and out.psd_residual <= 1e-8


def test_contradiction_toy_is_certified():
    prob = _contradiction_toy()
    out = solve(prob)
    assert isinstance(out, Infeasible)
    assert out.margin >= SolverSettings().tol_cert
    assert verify_certificate(prob, out.certificate)


def test_zero_certificate_is_rejected():
    prob = _contradiction_toy()
    zero = Certificate(np.zeros(1), [np.zeros((1, 1))])
    assert not verify_certificate(prob, zero)
    assert not verify_certificate(prob, Certificate(np.zeros(2), [np.zeros((1, 1))]))


def test_certificate_survives_small_noise():
    prob = _contradiction_toy()
    cert = solve(prob).certificate
    rng = np.random.default_rng(3)
    for _ in range(20):
        noisy = Certificate(cert.eq_multipliers + 1e-12 * rng.standard_normal(1),
                            [X + 1e-12 * rng.standard_normal(X.shape) for X in cert.block_multipliers])
        assert verify_certificate(prob, noisy)


def test_hand_built_certificate():
    # lam = -1, X = [[1]]: F^T lam + B^*(X) = 0 and f . lam = 1; the unbounded
    # variable only costs the rounding allowance times the radius
    prob = _contradiction_toy()
    chk = certificate_margin(prob, Certificate(np.array([-1.0]), [np.array([[1.0]])]))
    assert chk.dual_value == pytest.approx(1.0)
    assert chk.residual_norm == pytest.approx(0.0)
    assert chk.margin == pytest.approx(1.0, abs=1e-5)
    assert not chk.rigorous
    bad = certificate_margin(prob, Certificate(np.array([-1.0]), [np.array([[2.0]])]))
    assert bad.margin < 0


def test_infeasible_moment_relaxation_of_cycle():
    from instances import CYCLE
    R = random_sos_objective(5, 4, 0)
    prob = assemble_sdr(CYCLE.identifying_vector, CYCLE.index_set, 3, R)
    out = solve(prob)
    assert isinstance(out, Infeasible)
    assert verify_certificate(prob, out.certificate)


def _feasible_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    m = int(rng.integers(1, 5))
    U = rng.dirichlet(np.ones(n), size=m)
    w = rng.uniform(0.5, 5, size=m)
    pairs = [(i, j) for i in range(n) for j in range(i, n) if i == j or rng.random() < 0.7]
    E = IndexSet(n, tuple(pairs))
    z = atomic_tms(U, w, 2)
    a = np.array([z[e] for e in support_set(E).exponents])
    R = random_sos_objective(n, 4, rng)
    return assemble_sdr(a, E, 2, R)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_feasible_relaxations_never_yield_certificates(seed):
    prob = _feasible_instance(seed)
    out = solve(prob)
    assert not isinstance(out, Infeasible)
    assert isinstance(out, Optimal)


@pytest.mark.parametrize("seed", range(6))
def test_optimal_outcomes_are_self_consistent(seed):
    prob = _feasible_instance(seed)
    out = solve(prob)
    assert isinstance(out, Optimal)
    eq, psd = prob.residuals(out.z)
    assert abs(eq - out.primal_residual) <= 1e-12
    assert abs(psd - out.psd_residual) <= 1e-12
    assert eq <= 1e-8 and psd <= 1e-8
    # weak duality with the returned multipliers
    Xs = [(X + X.T) / 2 for X in out.block_multipliers]
    assert min(np.linalg.eigvalsh(X).min() for X in Xs) >= -1e-8
    dual = float(prob.eq_rhs @ out.eq_multipliers)
    scale = max(1.0, abs(out.objective))
    assert out.objective >= dual - SolverSettings().tol_gap * scale
    assert out.objective == pytest.approx(prob.objective @ out.z)


def test_determinism():
    prob = _feasible_instance(11)
    a, b = solve(prob), solve(prob)
    assert np.array_equal(a.z, b.z) and a.iterations == b.iterations


def test_iteration_cap_gives_numerical_failure():
    out = solve(_feasible_instance(2), SolverSettings(max_iter=2))
    assert isinstance(out, NumericalFailure)


def test_problem_validation():
    blk = LinearMatrixStructure.from_entries(1, 2, {(0, 0): [(1.0, 0)]})
    with pytest.raises(ValueError):
        SdpProblem(np.zeros(3), sp.csr_matrix((0, 3)), np.zeros(0), (blk,))
    with pytest.raises(ValueError):
        SdpProblem(np.zeros(2), sp.csr_matrix([[1.0, 0.0]]), np.zeros(2), (blk,))
    with pytest.raises(ValueError):
        solve(_contradiction_toy(), SolverSettings(backend="nope"))


def test_dump_is_self_describing():
    prob = _psd_boundary_toy()
    text = prob.dump()
    lines = text.splitlines()
    assert "vars 2" in lines
    assert "equalities 1 1" in lines
    block_line = next(l for l in lines if l.startswith("block 0"))
    assert block_line.split()[2:4] == ["2", "3"]


def test_clarabel_backend_agrees():
    pytest.importorskip("clarabel")
    cla = SolverSettings(backend="clarabel")
    for seed in range(3):
        prob = _feasible_instance(seed)
        ours, theirs = solve(prob), solve(prob, cla)
        assert isinstance(ours, Optimal) and isinstance(theirs, Optimal)
        assert ours.objective == pytest.approx(theirs.objective, rel=1e-5, abs=1e-6)
    out = solve(_contradiction_toy(), cla)
    assert isinstance(out, Infeasible)
    assert verify_certificate(_contradiction_toy(), out.certificate)


def test_memory_budget_gives_numerical_failure():
    out = solve(_feasible_instance(0), SolverSettings(max_memory=1e3))
    assert isinstance(out, NumericalFailure) and out.iterations == 0
    assert out.diagnostics["bytes_needed"] > 1e3
