import warnings

import numpy as np
import pytest

from conftest import OHMIC, site_rho, trimer_baths
from trapflux.bath import BathAttachment, SpectralDensity, build_eta_table
from trapflux.model import build_excitonic_chain, excitonic_trimer
from trapflux.oracle import propagate_bare, propagate_pathsum
from trapflux.simulation import Problem, simulate
from trapflux.tempo import (CompressedPathState, TempoPropagator, TruncationPolicy,
                            TruncationWarning, convergence_scan, propagate_tempo)

EXACT = TruncationPolicy(1e-14, None)


def test_policy_validation():
    for bad in (0.0, 1.0, -1e-3):
        with pytest.raises(ValueError):
            TruncationPolicy(bad)
    with pytest.raises(ValueError):
        TruncationPolicy(1e-8, 0)


@pytest.mark.parametrize("policy", [EXACT, TruncationPolicy(1e-3, 2)])
def test_no_bath_matches_bare(trimer, policy):
    eta0 = build_eta_table(SpectralDensity.ohmic(0.0, 900), 300, 0.01, memory=3)
    a = propagate_tempo(trimer, trimer_baths(eta0), site_rho(3), 0.01, 40, policy)
    b = propagate_bare(trimer, site_rho(3), 0.01, 40)
    assert np.abs(a.rho - b.rho).max() <= 1e-10


@pytest.mark.parametrize("K,steps", [(3, 6), (2, 6), (1, 5), (6, 6)])
def test_matches_pathsum(trimer, K, steps):
    # K < steps exercises the retirement of aged legs
    eta = build_eta_table(OHMIC, 300, 0.01, memory=K)
    a = propagate_tempo(trimer, trimer_baths(eta), site_rho(3), 0.01, steps, EXACT)
    b = propagate_pathsum(trimer, trimer_baths(eta), site_rho(3), 0.01, steps)
    assert np.abs(a.rho - b.rho).max() <= 1e-12


def test_polaritonic_matches_pathsum(polariton):
    eta = build_eta_table(OHMIC, 300, 0.01, memory=2)
    rho0 = site_rho(4)
    a = propagate_tempo(polariton, trimer_baths(eta), rho0, 0.01, 5, EXACT)
    b = propagate_pathsum(polariton, trimer_baths(eta), rho0, 0.01, 5)
    assert np.abs(a.rho - b.rho).max() <= 1e-12


def test_hermitian_trace_and_validity(eta_k3):
    s = build_excitonic_chain(3)
    tr = propagate_tempo(s, trimer_baths(eta_k3), site_rho(3), 0.01, 100)
    assert np.abs(tr.trace() - 1).max() <= 1e-8
    assert tr.hermiticity_error() <= 1e-10
    assert tr.min_eigenvalue().min() >= -1e-8


def test_lossy_trace_monotone(trimer, eta_k3):
    tr = propagate_tempo(trimer, trimer_baths(eta_k3), site_rho(3), 0.01, 150)
    assert np.all(np.diff(tr.trace()) <= 1e-10)
    assert tr.trace().max() <= 1 + 1e-8


def test_bond_ceiling_respected_and_reported(trimer):
    eta = build_eta_table(OHMIC, 300, 0.01, memory=5)
    prop = TempoPropagator(trimer, trimer_baths(eta), 0.01, TruncationPolicy(1e-14, 4))
    prop.start(site_rho(3))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for _ in range(8):
            prop.step()
    # the newest bond is the uncompressed propagator (Liouville dimension 9)
    assert prop.state.bond_dimensions[0] == 9
    assert max(prop.state.bond_dimensions[1:]) <= 4
    assert any(issubclass(w.category, TruncationWarning) for w in caught)


def test_checkpoint_round_trip(tmp_path, trimer, eta_k3):
    couplings = trimer_baths(eta_k3)
    ref = propagate_tempo(trimer, couplings, site_rho(3), 0.01, 12)

    prop = TempoPropagator(trimer, couplings, 0.01)
    prop.start(site_rho(3))
    for _ in range(5):
        prop.step()
    path = tmp_path / "state.npz"
    prop.state.save(path)
    loaded = CompressedPathState.load(path)
    assert loaded.step == 5
    for a, b in zip(loaded.tensors, prop.state.tensors):
        assert np.array_equal(a, b)

    fresh = TempoPropagator(trimer, couplings, 0.01)
    fresh.resume(loaded)
    rest = np.array([fresh.step() for _ in range(7)])
    assert np.array_equal(rest, ref.rho[6:])


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.npz"
    np.savez(p, header=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        CompressedPathState.load(p)


def test_thread_count_independence(trimer, eta_k3):
    a = propagate_tempo(trimer, trimer_baths(eta_k3), site_rho(3), 0.01, 40, threads=1)
    b = propagate_tempo(trimer, trimer_baths(eta_k3), site_rho(3), 0.01, 40, threads=4)
    assert np.abs(a.rho - b.rho).max() <= 1e-12


def test_refinement_monotonicity(trimer):
    eta = build_eta_table(OHMIC, 300, 0.01, memory=4)
    per_step = []
    for cut in (1e-3, 1e-5, 1e-7):
        tr = propagate_tempo(trimer, trimer_baths(eta), site_rho(3), 0.01, 20,
                             TruncationPolicy(cut, None))
        per_step.append(np.array(tr.metadata["step_discarded"]))
    for coarse, fine in zip(per_step, per_step[1:]):
        assert np.all(fine <= coarse + 1e-18)
        assert fine.sum() < coarse.sum()


def test_tighter_cutoff_is_more_accurate(trimer):
    eta = build_eta_table(OHMIC, 300, 0.01, memory=5)
    ref = propagate_pathsum(trimer, trimer_baths(eta), site_rho(3), 0.01, 6)
    errs = [np.abs(propagate_tempo(trimer, trimer_baths(eta), site_rho(3), 0.01, 6,
                                   TruncationPolicy(c, None)).rho - ref.rho).max()
            for c in (1e-4, 1e-12)]
    assert errs[1] < errs[0]


# -- convergence scan ----------------------------------------------------------

def _problem(system, t_final, xi=0.121):
    sd = SpectralDensity.ohmic(xi, 900)
    baths = [BathAttachment(j, sd) for j in range(3)] if xi else []
    return Problem(system, baths, 300.0, site_rho(system.n_states), t_final)


def test_scan_single_tuple(trimer):
    rep = convergence_scan(_problem(trimer, 0.05), [0.01], [2], [1e-10])
    assert rep.deltas is None and rep.converged is None
    assert len(rep.rows()) == 1


def test_scan_cutoff_pair(trimer):
    rep = convergence_scan(_problem(trimer, 0.06), [0.01], [3], [1e-8, 1e-12], target=1e-4)
    assert rep.params == [(0.01, 3, 1e-8), (0.01, 3, 1e-12)]
    assert rep.deltas[0, 1] < 1e-4
    assert rep.converged == (0.01, 3, 1e-8)


def test_scan_bare_time_steps():
    # without a bath the propagator is exact on any grid: populations agree to
    # round-off and only the trapezoid losses carry an O(dt^2) difference
    s = build_excitonic_chain(3, loss_lifetimes={2: 0.3})
    rep = convergence_scan(_problem(s, 0.16, xi=0.0), [0.02, 0.01, 0.005], [1], [1e-10])
    n_pop = rep.checkpoints.size * 3
    pops = rep.observables[:, :n_pop]
    assert np.abs(pops - pops[-1]).max() < 1e-12
    ref = len(rep.params) - 1
    ratio = rep.deltas[0, ref] / rep.deltas[1, ref]
    assert 3.0 < ratio < 7.0  # (4 - 1/4) / (1 - 1/4) = 5 for a pure dt^2 error


def test_scan_orders_by_cost(trimer):
    rep = convergence_scan(_problem(trimer, 0.04), [0.01, 0.02], [2, 1], [1e-10])
    assert rep.params[0] == (0.02, 1, 1e-10) and rep.params[-1] == (0.01, 2, 1e-10)


def test_simulate_dispatch(trimer):
    p = _problem(trimer, 0.05)
    a = simulate(p, "tempo", 0.01, 3, EXACT)
    b = simulate(p, "pathsum", 0.01, 3)
    assert np.abs(a.rho - b.rho).max() <= 1e-12
    with pytest.raises(ValueError):
        simulate(p, "euler")
    with pytest.raises(ValueError):
        simulate(p, "tempo", 0.03)


def test_problem_validation(polariton):
    sd = OHMIC
    with pytest.raises(ValueError):
        Problem(polariton, [BathAttachment(3, sd)], 300.0, site_rho(4), 1.0)
    with pytest.raises(ValueError):
        Problem(polariton, [BathAttachment(0, sd), BathAttachment(0, sd)], 300.0, site_rho(4), 1.0)
    with pytest.raises(ValueError):
        Problem(polariton, [BathAttachment(0, sd)], 0.0, site_rho(4), 1.0)
    with pytest.raises(ValueError):
        Problem(polariton, [], 300.0, site_rho(3), 1.0)
