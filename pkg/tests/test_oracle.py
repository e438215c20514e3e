import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from conftest import OHMIC, site_rho, trimer_baths
from trapflux.bath import SpectralDensity, build_eta_table
from trapflux.influence import BathCoupling
from trapflux.model import (DEFAULT_UNITS, SystemHamiltonian, build_excitonic_chain,
                            coupling_signs, excitonic_trimer)
from trapflux.oracle import (PathBudgetExceeded, bare_propagators, path_pair_count,
                             propagate_bare, propagate_pathsum)

HBAR = DEFAULT_UNITS.hbar


def test_single_lossy_site_decay():
    T = 0.3
    s = build_excitonic_chain(1, loss_lifetimes={0: T})
    tr = propagate_bare(s, site_rho(1), 0.01, 100)
    np.testing.assert_allclose(1 - tr.trace(), -np.expm1(-2 * math.pi * tr.times / T), atol=1e-10)
    U = bare_propagators(s, 0.01).U
    assert abs(U[0, 0]) ** 2 == pytest.approx(math.exp(-2 * math.pi * 0.01 / T), rel=1e-12)


def test_rabi_oscillation():
    h = -181.5
    s = build_excitonic_chain(2, coupling=h)
    tr = propagate_bare(s, site_rho(2), 0.002, 200)
    np.testing.assert_allclose(tr.populations()[:, 1], np.sin(h * tr.times / HBAR) ** 2, atol=1e-12)


def test_hermitian_trimer_trace():
    s = build_excitonic_chain(3)
    tr = propagate_bare(s, site_rho(3), 0.01, 300)
    assert np.abs(tr.trace() - 1).max() <= 1e-12


def test_bare_matches_eigendecomposition(trimer):
    # closed form through the eigenvectors of the (non-normal) Hamiltonian
    H = trimer.matrix
    w, V = np.linalg.eig(H)
    Vi = np.linalg.inv(V)
    rho0 = site_rho(3)
    tr = propagate_bare(trimer, rho0, 0.01, 150)
    for n in (1, 37, 150):
        t = tr.times[n]
        U = V @ np.diag(np.exp(-1j * w * t / HBAR)) @ Vi
        np.testing.assert_allclose(tr.rho[n], U @ rho0 @ U.conj().T, atol=1e-10)


def test_small_step_is_identity(trimer):
    U = bare_propagators(trimer, 1e-9).U
    np.testing.assert_allclose(U, np.eye(3), atol=1e-6)
    with pytest.raises(ValueError):
        bare_propagators(trimer, 0.0)


@given(st.lists(st.floats(-300, 300), min_size=2, max_size=4), st.floats(-300, 300),
       st.lists(st.floats(0, 80), min_size=4, max_size=4), st.floats(1e-4, 0.05))
def test_propagator_properties(e, h, gam, dt):
    n = len(e)
    eps = np.array(e) - 1j * np.array(gam[:n])
    hm = np.zeros((n, n))
    hm[np.arange(n - 1), np.arange(1, n)] = h
    hm = hm + hm.T
    s = SystemHamiltonian(eps, hm)
    p = bare_propagators(s, dt)
    np.testing.assert_allclose(p.Ubar, p.U.conj().T, atol=1e-12)
    assert np.linalg.svd(p.U, compute_uv=False).max() <= 1 + 1e-12
    if s.is_hermitian:
        np.testing.assert_allclose(p.U @ p.U.conj().T, np.eye(n), atol=1e-12)


# -- path sum ------------------------------------------------------------------

def test_pathsum_without_bath_equals_bare(trimer):
    eta0 = build_eta_table(SpectralDensity.ohmic(0.0, 900), 300, 0.01, memory=4)
    a = propagate_pathsum(trimer, trimer_baths(eta0), site_rho(3), 0.01, 5)
    b = propagate_bare(trimer, site_rho(3), 0.01, 5)
    assert np.abs(a.rho - b.rho).max() <= 1e-12


def test_pathsum_one_step_closed_form(trimer, eta_k3):
    rho0 = np.array([[0.6, 0.2 + 0.1j, 0.0], [0.2 - 0.1j, 0.3, 0.05], [0.0, 0.05, 0.1]])
    couplings = trimer_baths(eta_k3)
    tr = propagate_pathsum(trimer, couplings, rho0, 0.01, 1)
    U = expm(-1j * trimer.matrix * 0.01 / HBAR)
    Ub = expm(1j * trimer.matrix.conj().T * 0.01 / HBAR)
    s = coupling_signs(3, [0, 1, 2])
    expect = np.zeros((3, 3), dtype=complex)

    def phase(eta, later, earlier):
        (jp, jm), (kp, km) = later, earlier
        return sum((s[b, jp] - s[b, jm]) * (eta * s[b, kp] - np.conj(eta) * s[b, km]) for b in range(3))

    for jp in range(3):
        for jm in range(3):
            for kp in range(3):
                for km in range(3):
                    x = (phase(eta_k3.start[0], (kp, km), (kp, km))
                         + phase(eta_k3.end[0], (jp, jm), (jp, jm))
                         + phase(eta_k3.end_start[1], (jp, jm), (kp, km)))
                    expect[jp, jm] += U[jp, kp] * rho0[kp, km] * Ub[km, jm] * np.exp(-x)
    np.testing.assert_allclose(tr.rho[1], expect, atol=1e-14)


def test_pathsum_hermitian_dimer_trace():
    s = build_excitonic_chain(2)
    eta = build_eta_table(OHMIC, 300, 0.01, memory=6)
    tr = propagate_pathsum(s, trimer_baths(eta, 2), site_rho(2), 0.01, 6)
    assert np.abs(tr.trace() - 1).max() <= 1e-10
    assert tr.hermiticity_error() <= 1e-10
    assert tr.min_eigenvalue().min() >= -1e-8


def test_pathsum_lossy_invariants(trimer, eta_k3):
    tr = propagate_pathsum(trimer, trimer_baths(eta_k3), site_rho(3), 0.01, 6)
    L = 1 - tr.trace()
    assert np.all(L >= -1e-12) and np.all(L <= 1)
    assert np.all(np.diff(L) >= -1e-10)
    assert tr.min_eigenvalue().min() >= -1e-8
    assert tr.hermiticity_error() <= 1e-10


def test_pathsum_workers_bitwise(trimer, eta_k3):
    a = propagate_pathsum(trimer, trimer_baths(eta_k3), site_rho(3), 0.01, 5, workers=1)
    b = propagate_pathsum(trimer, trimer_baths(eta_k3), site_rho(3), 0.01, 5, workers=3)
    assert np.array_equal(a.rho, b.rho)


def test_pathsum_budget(trimer, eta_k3):
    assert path_pair_count(3, 8) == 9**8
    with pytest.raises(PathBudgetExceeded):
        propagate_pathsum(trimer, trimer_baths(eta_k3), site_rho(3), 0.01, 8, budget=10**6)


def test_pathsum_rejects_mismatched_step(trimer, eta_k3):
    with pytest.raises(ValueError):
        propagate_pathsum(trimer, trimer_baths(eta_k3), site_rho(3), 0.02, 2)


def test_pathsum_time_step_refinement():
    # same physical time on successively halved grids: differences shrink like dt
    s = build_excitonic_chain(2, loss_lifetimes={1: 0.3})
    t_final, finals = 0.04, []
    for n in (2, 4, 8):
        dt = t_final / n
        eta = build_eta_table(OHMIC, 300, dt, memory=n)
        finals.append(propagate_pathsum(s, trimer_baths(eta, 2), site_rho(2), dt, n).rho[-1])
    d1 = np.abs(finals[0] - finals[1]).max()
    d2 = np.abs(finals[1] - finals[2]).max()
    assert d2 < d1
    assert 1.5 < d1 / d2 < 6
