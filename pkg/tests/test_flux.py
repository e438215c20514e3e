import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import site_rho, trimer_baths
from trapflux.flux import loss_partition_check, pairwise_transfer, total_loss, transfer_rates
from trapflux.model import SystemHamiltonian, build_excitonic_chain, polaritonic_trimer
from trapflux.oracle import propagate_bare
from trapflux.tempo import propagate_tempo
from trapflux.trajectory import Trajectory

finite = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def hermitian_series(draw, n_max=4, t_max=12):
    n = draw(st.integers(2, n_max))
    nt = draw(st.integers(2, t_max))
    re = draw(arrays(float, (nt, n, n), elements=finite))
    im = draw(arrays(float, (nt, n, n), elements=finite))
    rho = re + 1j * im
    rho = 0.5 * (rho + rho.conj().transpose(0, 2, 1))
    h = draw(arrays(float, (n, n), elements=st.floats(-400, 400)))
    h = np.triu(h, 1)
    h = h + h.T
    gam = draw(arrays(float, n, elements=st.floats(0, 60)))
    eps = draw(arrays(float, n, elements=st.floats(-200, 200))) - 1j * gam
    return Trajectory(0.01 * np.arange(nt), rho), SystemHamiltonian(eps, h)


@given(hermitian_series())
def test_antisymmetry(data):
    traj, system = data
    f = pairwise_transfer(traj, system)
    n = system.n_states
    assert np.all(f.P[0] == 0)
    for j in range(n):
        for k in range(j + 1, n):
            np.testing.assert_allclose(f.transfer(j, k) + f.transfer(k, j), 0, atol=1e-10)


@given(hermitian_series())
def test_rates_shape_and_diagonal(data):
    traj, system = data
    R = transfer_rates(traj, system)
    assert R.shape == traj.rho.shape
    # diagonal rate (2/hbar) Im(eps_j) rho_jj
    from trapflux.model import DEFAULT_UNITS
    diag = np.einsum("njj->nj", R)
    expect = 2 / DEFAULT_UNITS.hbar * system.eps.imag[None, :] * traj.populations()
    np.testing.assert_allclose(diag, expect, atol=1e-9)


def test_dimension_mismatch():
    traj = Trajectory([0, 0.01], np.stack([site_rho(3)] * 2))
    with pytest.raises(ValueError):
        pairwise_transfer(traj, build_excitonic_chain(2))


def test_hermitian_trimer_no_loss():
    s = build_excitonic_chain(3)
    tr = propagate_bare(s, site_rho(3), 0.005, 200)
    f = pairwise_transfer(tr, s)
    assert np.abs(total_loss(tr)).max() <= 1e-12
    assert np.abs(f.P.sum(axis=(1, 2))).max() <= 1e-10
    assert f.lossy == ()
    assert loss_partition_check(f) <= 1e-12


def test_hermitian_population_balance():
    # sum_k P_{j<-k} reproduces the population change to trapezoid accuracy
    s = build_excitonic_chain(3)
    errs = []
    for dt in (0.002, 0.001):
        tr = propagate_bare(s, site_rho(3), dt, int(round(0.2 / dt)))
        f = pairwise_transfer(tr, s)
        dP = tr.populations() - tr.populations()[0]
        errs.append(np.abs(f.population_change() - dP).max())
    assert errs[0] < 1e-2
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)


def test_single_site_loss_and_grid_refinement():
    T = 0.3
    s = build_excitonic_chain(1, loss_lifetimes={0: T})
    devs = []
    for dt in (0.002, 0.001):
        tr = propagate_bare(s, site_rho(1), dt, int(round(1.0 / dt)))
        f = pairwise_transfer(tr, s)
        exact = -np.expm1(-2 * math.pi * tr.times / T)
        assert np.abs(f.site_loss(0) - exact).max() < 1e-3
        assert np.abs(f.transfer(0, 0) + exact).max() < 1e-3
        devs.append(loss_partition_check(f))
    assert devs[0] / devs[1] == pytest.approx(4, rel=0.05)


def test_polaritonic_partition_and_signs(eta_k3):
    polariton = polaritonic_trimer(convention="population")
    tr = propagate_tempo(polariton, trimer_baths(eta_k3, 3), site_rho(4), 0.01, 60)
    f = pairwise_transfer(tr, polariton)
    assert f.lossy == (2, 3)
    for j in f.lossy:
        L = f.site_loss(j)
        assert np.all(L >= 0) and np.all(L <= 1)
        assert np.all(np.diff(L) >= -1e-12)
    assert loss_partition_check(f) < 5e-3
    # individual transfers carry the trapezoid error of rates oscillating at
    # ~ (Omega sqrt 3)/hbar ~ 60 rad/ps, sampled every 0.01 ps
    balance = f.population_change() - (tr.populations() - tr.populations()[0])
    assert np.abs(balance).max() < 0.1


def test_partition_check_grid_mismatch(polariton):
    tr = propagate_bare(polariton, site_rho(4), 0.01, 10)
    f = pairwise_transfer(tr, polariton)
    with pytest.raises(ValueError):
        loss_partition_check(f, np.zeros(5))
    assert loss_partition_check(f, total_loss(tr)) == loss_partition_check(f)
