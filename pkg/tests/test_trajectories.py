import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from bohmflow.analytic import GaussianParams, SuperpositionSpec, closed_form_trajectory, evaluate_psi, sigma_t
from bohmflow.analysis import ks_distance
from bohmflow.errors import NodalRegionEncounter, ProviderRangeExceeded, UnnormalizableDensity, WindowOutOfRange
from bohmflow.grid import GridGeometry, PotentialSpec, initialize_grid, propagate
from bohmflow.trajectories import (AnalyticProvider, GridProvider, TrajectoryEnsemble, asymptotic_slope,
                                   check_noncrossing, classify_regime, integrate_ensemble,
                                   sample_initial_positions, write_ensemble_csv, write_ensemble_sidecar)


def provider(**kw):
    return AnalyticProvider(SuperpositionSpec.single(GaussianParams(**kw)))


def symmetric_pair(xc=10.0, v0=5.0):
    return SuperpositionSpec((GaussianParams(x0_center=-xc, v0=v0), GaussianParams(x0_center=xc, v0=-v0)))


def mixture_cdf(spec, t, lo=-200.0, hi=200.0, n=200001):
    x = np.linspace(lo, hi, n)
    rho = np.abs(evaluate_psi(spec, x, t)) ** 2
    c = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(x))])
    c /= c[-1]
    return lambda s: np.interp(s, x, c)


# --- sampling ----------------------------------------------------------------------

def test_quantile_examples():
    p = GaussianParams(x0_center=2.5)
    assert sample_initial_positions(p, 1)[0] == pytest.approx(2.5, abs=1e-12)
    assert np.allclose(sample_initial_positions(GaussianParams(), 2), [-0.6744898, 0.6744898], atol=1e-7)
    uni = lambda x: np.ones_like(x)
    assert np.allclose(sample_initial_positions(uni, 4, bounds=(0.0, 1.0)), [0.125, 0.375, 0.625, 0.875],
                       atol=1e-10)


@settings(max_examples=20)
@given(st.integers(1, 300), st.floats(0.3, 3), st.floats(-5, 5))
def test_quantiles_match_normal_ppf(n, s0, xc):
    x = sample_initial_positions(GaussianParams(sigma0=s0, x0_center=xc), n)
    q = (np.arange(1, n + 1) - 0.5) / n
    assert np.allclose(x, xc + s0 * norm.ppf(q), atol=1e-9 * max(1, s0))
    assert np.all(np.diff(x) > 0)


def test_quantiles_of_superposition_and_samples():
    spec = symmetric_pair(5.0, 1.0)
    x = sample_initial_positions(spec, 200)
    cdf = mixture_cdf(spec, 0.0)
    assert np.allclose(cdf(x), (np.arange(1, 201) - 0.5) / 200, atol=1e-6)
    grid = np.linspace(-20, 20, 4001)
    rho = np.abs(evaluate_psi(spec, grid, 0.0)) ** 2
    y = sample_initial_positions((grid, rho), 200)
    assert np.max(np.abs(x - y)) < 1e-3


def test_two_dimensional_sampling():
    px, py = GaussianParams(x0_center=1.0), GaussianParams(sigma0=0.5)
    r = sample_initial_positions((px, py), (4, 3))
    assert r.shape == (12, 2)
    assert sorted(set(np.round(r[:, 1], 12))) == pytest.approx(0.5 * norm.ppf([1 / 6, 0.5, 5 / 6]))
    f = lambda xy: np.exp(-0.5 * (xy[..., 0] ** 2 + xy[..., 1] ** 2))
    a = sample_initial_positions(f, 500, bounds=((-6, 6), (-6, 6)), seed=3)
    b = sample_initial_positions(f, 500, bounds=((-6, 6), (-6, 6)), seed=3)
    assert np.array_equal(a, b) and a.shape == (500, 2)
    assert abs(a.mean()) < 0.15 and abs(a.std() - 1) < 0.1


def test_random_sampling_is_seeded():
    p = GaussianParams()
    a = sample_initial_positions(p, 1000, method="random", seed=11)
    assert np.array_equal(a, sample_initial_positions(p, 1000, method="random", seed=11))
    assert abs(np.std(a) - 1.0) < 0.1


def test_unnormalizable_density():
    with pytest.raises(UnnormalizableDensity):
        sample_initial_positions(lambda x: np.zeros_like(x), 5, bounds=(0.0, 1.0))
    with pytest.raises(UnnormalizableDensity):
        sample_initial_positions(lambda x: np.full_like(x, np.inf), 5, bounds=(0.0, 1.0))


# --- integration -----------------------------------------------------------------

def test_endpoint_example():
    ens = integrate_ensemble(provider(), [1.0], (0.0, 2.0), tol=1e-8)
    assert ens.paths[0, -1] == pytest.approx(np.sqrt(2.0), abs=1e-6)
    assert ens.paths[0, 0] == 1.0


def test_center_path_is_classical():
    ens = integrate_ensemble(provider(v0=0.7), [0.0], (0.0, 10.0), tol=1e-8)
    assert np.allclose(ens.paths[0], 0.7 * ens.times, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 2), st.floats(-2, 2), st.floats(-3, 3), st.sampled_from([1e-6, 1e-8, 1e-10]))
def test_matches_closed_form_within_ten_tol(s0, v0, xc, tol):
    p = GaussianParams(sigma0=s0, v0=v0, x0_center=xc)
    x0 = sample_initial_positions(p, 9)
    ens = integrate_ensemble(AnalyticProvider(SuperpositionSpec.single(p)), x0, (0, 5 * float(p.tau)), tol=tol)
    exact = closed_form_trajectory(p, x0[:, None], ens.times[None, :])
    scale = np.max(np.abs(exact), axis=1, keepdims=True) + s0
    assert np.all(np.abs(ens.paths - exact) <= 10 * tol * scale)


def test_symmetric_pair_path_stays_on_its_side():
    spec = symmetric_pair(5.0, 0.05)
    ens = integrate_ensemble(AnalyticProvider(spec), [-0.1], (0.0, 30.0), tol=1e-8, n_times=301)
    assert np.all(ens.paths[0] < 0)


def test_average_convergence_order_in_tol():
    p = GaussianParams(v0=0.5)
    x0 = np.array([-2.0, -1.0, 1.0, 2.0])
    exact = closed_form_trajectory(p, x0, 20.0)
    tols = np.logspace(-4, -10, 13)
    errs = [np.max(np.abs(integrate_ensemble(AnalyticProvider(SuperpositionSpec.single(p)), x0, (0, 20), tol=t,
                                              n_times=2).paths[:, -1] - exact)) for t in tols]
    slope = np.polyfit(np.log(tols), np.log(errs), 1)[0]
    assert slope >= 1.0


def test_early_time_quantum_acceleration_is_fourth_order():
    p = GaussianParams()
    tau = float(p.tau)
    ts = tau * np.array([0.0, 0.0125, 0.025, 0.05])
    ens = integrate_ensemble(AnalyticProvider(SuperpositionSpec.single(p)), [1.0], (0, ts[-1]), tol=1e-13,
                             times=ts)
    dev = np.abs(ens.paths[0, 1:] - 1.0 - 0.5 * ts[1:] ** 2 / tau**2)
    assert np.polyfit(np.log(ts[1:]), np.log(dev), 1)[0] == pytest.approx(4.0, abs=0.05)


def test_nodal_encounter_halts_path():
    # antisymmetric pair: exact node on x = 0 for all t
    spec = SuperpositionSpec((GaussianParams(x0_center=-3.0), GaussianParams(x0_center=3.0, weight=-1.0)))
    ens = integrate_ensemble(AnalyticProvider(spec), [0.0, 1.0], (0.0, 1.0), tol=1e-8)
    assert [h.path_id for h in ens.halted] == [0]
    assert np.all(np.isnan(ens.paths[0, 1:])) and np.all(np.isfinite(ens.paths[1]))
    with pytest.raises(NodalRegionEncounter):
        integrate_ensemble(AnalyticProvider(spec), [0.0, 1.0], (0.0, 1.0), strict=True)


def test_range_checks():
    snaps = propagate(initialize_grid(SuperpositionSpec.single(GaussianParams()), GridGeometry.line(-20, 20, 256)),
                      PotentialSpec("free"), 0.01, 10, 5)
    with pytest.raises(ProviderRangeExceeded):
        integrate_ensemble(GridProvider(snaps), [0.0], (0.0, 1.0))


def test_grid_provider_matches_closed_form():
    p = GaussianParams(v0=0.5)
    g = GridGeometry.line(-40, 40, 1024)
    snaps = propagate(initialize_grid(SuperpositionSpec.single(p), g), PotentialSpec("free"), 1e-3, 4000, 10)
    x0 = sample_initial_positions(p, 10)
    errs = {}
    for interp in ("cubic", "bilinear"):
        ens = integrate_ensemble(GridProvider(snaps, interpolation=interp), x0, (0, 4.0), tol=1e-8)
        errs[interp] = np.max(np.abs(ens.paths - closed_form_trajectory(p, x0[:, None], ens.times[None])))
    assert errs["cubic"] < 1e-3
    assert errs["cubic"] < errs["bilinear"]


def test_grid_provider_two_dimensional():
    p = GaussianParams(sigma0=(1.0, 0.8), x0_center=(-1.0, 0.5), v0=(0.5, -0.3))
    g = GridGeometry(((-16, 16), (-16, 16)), (128, 128))
    snaps = propagate(initialize_grid(SuperpositionSpec.single(p), g), PotentialSpec("free"), 5e-3, 400, 4)
    x0 = sample_initial_positions((GaussianParams(x0_center=-1.0), GaussianParams(sigma0=0.8, x0_center=0.5)), (3, 3))
    ens = integrate_ensemble(GridProvider(snaps), x0, (0, 2.0), tol=1e-8, n_times=21)
    exact = closed_form_trajectory(p, x0[:, None, :], ens.times[None, :, None])
    assert ens.paths.shape == (9, 21, 2)
    assert np.max(np.abs(ens.paths - exact)) < 1e-3


# --- equivariance -------------------------------------------------------------------

@pytest.mark.parametrize("case", ["free", "pair"])
def test_equivariance(case):
    n = 200
    if case == "free":
        p = GaussianParams(v0=0.4)
        spec = SuperpositionSpec.single(p)
        cdf_at = lambda t: (lambda s: norm.cdf(s, 0.4 * t, sigma_t(p, t)))
    else:
        spec = symmetric_pair(5.0, 0.5)
        cdf_at = lambda t: mixture_cdf(spec, t)
    x0 = sample_initial_positions(spec, n)
    ens = integrate_ensemble(AnalyticProvider(spec), x0, (0, 10.0), tol=1e-9, n_times=11)
    for k, t in enumerate(ens.times):
        assert ks_distance(ens.paths[:, k], cdf_at(t)) < 2 / np.sqrt(n)


# --- regimes, ordering, slopes --------------------------------------------------------

def test_regime_examples():
    p = GaussianParams()
    assert classify_regime(p, 0.0) == "huygens"
    assert classify_regime(p, 100 * 2.0) == "fraunhofer"
    assert classify_regime(p, 2.0) == "fresnel"
    assert classify_regime(p, 2.0, thresholds=(2.0, 5.0)) == "huygens"


def test_regime_at_tau_is_far_from_both_asymptotes():
    from bohmflow.analytic import asymptotic_trajectory
    p = GaussianParams()
    x = closed_form_trajectory(p, 1.0, 2.0)
    assert abs(x - asymptotic_trajectory(p, 1.0, 2.0, "fraunhofer")) > 0.2
    assert abs(x - 1.0) > 0.2   # Huygens: no deviation from the start


def test_noncrossing_free_and_constructed_violation():
    ens = integrate_ensemble(provider(), sample_initial_positions(GaussianParams(), 15), (0, 10), n_times=51)
    assert check_noncrossing(ens).passed
    paths = ens.paths.copy()
    paths[[3, 4], 20] = paths[[4, 3], 20]
    bad = TrajectoryEnsemble(ens.times, paths, ens.weights, ens.initial_positions)
    rep = check_noncrossing(bad)
    assert not rep.passed and rep.first_violation[2] == 20


def test_noncrossing_collision():
    spec = symmetric_pair(10.0, 5.0)
    ens = integrate_ensemble(AnalyticProvider(spec), sample_initial_positions(spec, 20), (0, 10.0), tol=1e-8)
    assert check_noncrossing(ens).passed


def test_asymptotic_slope_examples():
    p = GaussianParams(v0=1.0)
    ens = integrate_ensemble(AnalyticProvider(SuperpositionSpec.single(p)), [2.0, 0.0], (0, 200.0), n_times=401)
    s = asymptotic_slope(ens, (100.0, 200.0))
    assert s[0] == pytest.approx(2.0, rel=1e-2)
    assert s[1] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(WindowOutOfRange):
        asymptotic_slope(ens, (100.0, 300.0))


def test_fraunhofer_line_through_origin_overlaps_tail():
    p = GaussianParams(v0=0.3)
    x0 = 1.5
    ens = integrate_ensemble(AnalyticProvider(SuperpositionSpec.single(p)), [x0], (0, 200.0), n_times=201)
    tail = ens.times > 100
    line = (0.3 + x0 / 2.0) * ens.times
    assert np.max(np.abs(ens.paths[0, tail] - line[tail]) / line[tail]) < 1e-2


# --- export ------------------------------------------------------------------------

def test_csv_and_sidecar(tmp_path):
    ens = integrate_ensemble(provider(), [-1.0, 1.0], (0, 1.0), n_times=3)
    write_ensemble_csv(tmp_path / "e.csv", ens)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,x" and len(lines) == 7
    assert float(lines[1].split(",")[2]) == -1.0
    write_ensemble_sidecar(tmp_path / "e.json", ens, {"sigma0": 1.0}, seed=4)
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["seed"] == 4 and doc["tolerances"]["tol"] == 1e-8 and doc["n_paths"] == 2
