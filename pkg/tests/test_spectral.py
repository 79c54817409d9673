import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cutiga.forms import FormulationSpec, assemble_system, assemble_terms, combine
from cutiga.spectral import (PROBE_KINDS, ConvergenceError, NonPositiveMassError,
                             analyze_pencil, critical_timestep, fit_scaling_exponent,
                             generalized_spectrum, jacobi_eigenvalues,
                             max_generalized_eigenvalue, min_generalized_eigenvalue,
                             power_iteration, probe_setup, rayleigh_quotient)
from cutiga.experiments import rod_system

from test_forms import cutout


def random_pencil(rng, n):
    A = rng.standard_normal((n, n))
    K = A @ A.T + 0.1 * np.eye(n)
    B = rng.standard_normal((n, n))
    M = B @ B.T + n * np.eye(n)
    return K, M


def test_diagonal_pencil_critical_step():
    K = sp.diags([4.0, 1.0])
    M = sp.identity(2)
    res = analyze_pencil(K, M)
    assert res.lambda_max == pytest.approx(4.0)
    assert res.dt_crit == pytest.approx(1.0)


def test_jacobi_matches_closed_form():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(jacobi_eigenvalues(A), [1.0, 3.0], atol=1e-14)


def test_eigensolver_routes_agree_on_random_pencils():
    rng = np.random.default_rng(2024)
    for k in range(30):
        K, M = random_pencil(rng, 5 + k)
        lap = generalized_spectrum(K, M, method="lapack")
        jac = generalized_spectrum(K, M)
        pw = power_iteration(K, M, seed=k)
        assert np.allclose(jac, lap, rtol=1e-6, atol=1e-6 * lap[-1])
        assert pw == pytest.approx(lap[-1], rel=1e-6)


def test_shifted_power_recovers_lambda_min():
    rng = np.random.default_rng(8)
    K, M = random_pencil(rng, 6)
    lam = generalized_spectrum(K, M, method="lapack")
    got = min_generalized_eigenvalue(K, M, "power", lambda_max=lam[-1])
    assert got == pytest.approx(lam[0], rel=1e-4, abs=1e-6 * lam[-1])


def test_cut_pencil_routes_agree():
    basis, quad, faces = cutout(n=8)
    for spec in (FormulationSpec(mass="consistent"), FormulationSpec(ghost_mass=True),
                 FormulationSpec(boundary="nitsche_ghost", ghost_mass=True)):
        sys_ = assemble_system(basis, quad, faces, spec, with_load=False)
        jac = generalized_spectrum(sys_.stiffness, sys_.mass)
        lap = generalized_spectrum(sys_.stiffness, sys_.mass, method="lapack")
        assert np.allclose(jac, lap, atol=1e-9 * lap[-1])
        assert max_generalized_eigenvalue(sys_.stiffness, sys_.mass, "power") == \
            pytest.approx(lap[-1], rel=1e-4)


def test_indefinite_mass_rejected():
    K = np.eye(2)
    with pytest.raises(NonPositiveMassError):
        generalized_spectrum(K, np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NonPositiveMassError):
        generalized_spectrum(K, sp.diags([1.0, 0.0]))


def test_power_iteration_reports_stagnation():
    K, M = random_pencil(np.random.default_rng(1), 8)
    with pytest.raises(ConvergenceError):
        power_iteration(K, M, tol=1e-16, maxiter=3)


def test_critical_step_needs_positive_eigenvalue():
    with pytest.raises(ValueError):
        critical_timestep(0.0)


def test_rod_consistent_eigenvalue_diverges_as_chi_minus_two():
    chis = [1e-2, 1e-3, 1e-4]
    top = [generalized_spectrum(s.stiffness, s.mass)[-1]
           for s in (rod_system(2, 4, c, "consistent") for c in chis)]
    slope = np.polyfit(np.log10(chis), np.log10(top), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.1)


def test_rod_uncut_lumped_below_consistent():
    cons = rod_system(2, 4, 1.0, "consistent")
    lump = rod_system(2, 4, 1.0, "lumped")
    wc = generalized_spectrum(cons.stiffness, cons.mass)
    wl = generalized_spectrum(lump.stiffness, lump.mass)
    assert wc.size == wl.size == 6
    assert wl[-1] <= wc[-1]


@pytest.mark.parametrize("kind", PROBE_KINDS)
@pytest.mark.parametrize("d", [1, 2])
def test_probe_hits_target_chi(kind, d):
    for chi in (0.1, 1e-3, 1e-5):
        st_ = probe_setup(kind, d, 2, chi)
        assert st_.probe.chi == pytest.approx(chi, rel=1e-9)


def test_sliver_probe_is_a_strip():
    st_ = probe_setup("sliver1", 2, 1, 1e-2)
    assert st_.probe.functions.size == st_.basis.shape[1]
    assert set(np.unique(st_.probe.coefficients)) == {0.0, 1.0}


def test_probe_quotient_is_one_for_equal_forms():
    st_ = probe_setup("corner1", 2, 2, 1e-3)
    sys_ = combine(assemble_terms(st_.basis, st_.quad, st_.ghost_faces), FormulationSpec(),
                   with_load=False)
    assert rayleigh_quotient(sys_.mass, sys_.mass, st_.probe) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("kind", PROBE_KINDS)
def test_probe_quotient_below_lambda_max(kind):
    st_ = probe_setup(kind, 2, 1, 1e-3)
    for spec in (FormulationSpec(), FormulationSpec(mass="consistent", boundary="penalty")):
        sys_ = combine(assemble_terms(st_.basis, st_.quad, st_.ghost_faces), spec, with_load=False)
        top = generalized_spectrum(sys_.stiffness, sys_.mass, method="lapack")[-1]
        assert rayleigh_quotient(sys_.stiffness, sys_.mass, st_.probe) <= top * (1 + 1e-10)


def test_fit_recovers_exact_power_law():
    chi = 10.0 ** -np.arange(1, 7)
    fit = fit_scaling_exponent(list(zip(chi, 7.0 * chi ** 3)))
    assert fit.exponent == pytest.approx(3.0, abs=1e-10)
    assert 10 ** fit.intercept == pytest.approx(7.0, rel=1e-9)
    assert fit.r2 == pytest.approx(1.0)


@pytest.mark.parametrize("samples", [
    [(1e-1, 1.0), (1e-2, 2.0), (1e-3, 3.0), (1e-4, 4.0)],
    [(1e-1, 1.0), (1e-2, 2.0), (1e-3, 3.0), (1e-4, 4.0), (2e-4, 5.0)],
    [(1e-1, 1.0), (1e-2, 2.0), (1e-3, 3.0), (1e-4, 4.0), (1e-5, -1.0)]])
def test_fit_rejects_thin_data(samples):
    with pytest.raises(ValueError):
        fit_scaling_exponent(samples)


@settings(max_examples=6, deadline=None)
@given(rho=st.integers(3, 6), kind=st.sampled_from(PROBE_KINDS))
def test_exponent_insensitive_to_bisection_depth(rho, kind):
    from cutiga.experiments import run_rayleigh_table
    kw = dict(order=2, formulation="neumann", mass="lumped", probe=kind, p=1, d=2)
    base = run_rayleigh_table(rho_max=3, **kw).rows[0]["fitted"]
    assert run_rayleigh_table(rho_max=rho, **kw).rows[0]["fitted"] == pytest.approx(base, abs=1e-6)
