import numpy as np
import pytest

from conftest import random_valid_covariance
from hybridsim.dynamics import IntegratorConfig, integrate
from hybridsim.oracle import (
    CSV_COLUMNS,
    Ensemble,
    MomentEstimate,
    OracleError,
    compare_with_hierarchy,
    estimate_f,
    estimate_moment,
    estimate_moments,
    evolve_ensemble,
    oracle_supported,
    sample_gaussian,
)
from hybridsim.potentials import PolynomialPotential, ScenarioParams, preset_example1, preset_example2
from hybridsim.states import CovarianceMatrix, GaussianStateSpec, MeanVector, moment_basis, wick_moment


def test_sampling_examples():
    vac = GaussianStateSpec.vacuum()
    e = sample_gaussian(vac, 1_000_000, 1)
    est = estimate_moment(e, (0, 0, 2, 0))
    assert est.agrees(0.5)
    again = sample_gaussian(vac, 1000, 7)
    np.testing.assert_array_equal(again.particles, sample_gaussian(vac, 1000, 7).particles)
    corr = sample_gaussian(GaussianStateSpec(MeanVector(), CovarianceMatrix.from_offsets(qx=0.3)), 1_000_000, 2)
    assert estimate_moment(corr, (0, 0, 1, 1)).agrees(0.3)


def test_sampling_rejects_indefinite():
    bad = GaussianStateSpec(MeanVector(), CovarianceMatrix([[0.5, 0.6, 0, 0], [0.6, 0.5, 0, 0],
                                                            [0, 0, 0.5, 0], [0, 0, 0, 0.5]]))
    with pytest.raises(OracleError):
        sample_gaussian(bad, 10, 0)


def test_moment_estimate_examples():
    e = sample_gaussian(GaussianStateSpec.vacuum(MeanVector(1, 2, 3, 4)), 1_000_000, 3)
    first = estimate_moments(e, [(1, 0, 0, 0), (0, 0, 0, 1)])
    for est in first:
        assert abs(est.value) < 1e-12
    assert estimate_moment(e, (0, 0, 4, 0)).agrees(0.75)
    norm = estimate_moment(e, (0, 0, 0, 0))
    assert norm.value == 1.0
    with pytest.raises(ValueError):
        MomentEstimate(1.0, -1.0)


def test_jackknife_matches_exact_central_moments():
    # the mean-shift expansion reproduces direct central moments
    rng = np.random.default_rng(0)
    e = Ensemble(rng.normal(size=(5000, 4)) * [1, 2, 0.5, 1] + [3, -1, 0, 2], seed=0)
    d = e.particles - e.particles.mean(axis=0)
    est = estimate_moments(e, [(2, 0, 1, 0), (1, 1, 1, 1), (0, 0, 3, 2)])
    # (k1, k2, n1, n2) -> dp^k1 dk^k2 dq^n1 dx^n2
    direct = [np.mean(d[:, 1] ** 2 * d[:, 0]), np.mean(d[:, 1] * d[:, 3] * d[:, 0] * d[:, 2]),
              np.mean(d[:, 0] ** 3 * d[:, 2] ** 2)]
    np.testing.assert_allclose([x.value for x in est], direct, rtol=1e-10)


def test_wick_moments_against_sampling():
    cov = CovarianceMatrix(random_valid_covariance(np.random.default_rng(21)))
    e = sample_gaussian(GaussianStateSpec(MeanVector(0.3, -0.2, 1, 0), cov), 400_000, 5)
    idx = [ix for ix in moment_basis(4) if sum(ix) >= 2]
    z = [(est.value - wick_moment(cov, ix)) / est.std_error for ix, est in zip(idx, estimate_moments(e, idx))]
    assert np.max(np.abs(z)) < 4.0
    assert np.sqrt(np.mean(np.square(z))) < 1.5


def test_free_translation():
    e = sample_gaussian(GaussianStateSpec.vacuum(), 100, 0)
    moved = evolve_ensemble(e, PolynomialPotential({}), 0.01, 100)
    np.testing.assert_allclose(moved.particles[:, 0], e.particles[:, 0] + e.particles[:, 1], rtol=1e-12)
    assert moved.t == pytest.approx(1.0)


def test_quadratic_ensemble_follows_second_order_system():
    pot = PolynomialPotential({(2, 0): 0.5, (0, 2): 1.0, (1, 1): 0.3})
    spec = GaussianStateSpec(MeanVector(0.5, 0, -0.5, 0.2), CovarianceMatrix(random_valid_covariance(np.random.default_rng(2))))
    e = sample_gaussian(spec, 20_000, 9)
    moved = evolve_ensemble(e, pot, 1e-2, 100)
    traj = integrate(spec, pot, IntegratorConfig(dt=1e-2, steps=100, order_cap=2))
    # a linear flow maps the sample covariance exactly like the population covariance
    s0 = np.cov(e.particles.T, bias=True)
    s1 = np.cov(moved.particles.T, bias=True)
    c0 = spec.cov.matrix
    c1 = traj.covariances()[-1]
    # linear map M with c1 = M c0 M^T; recover M from the ensemble by least squares
    M = np.linalg.lstsq(e.particles - e.particles.mean(0), moved.particles - moved.particles.mean(0), rcond=None)[0].T
    # RK4 on particles and RK4 on the covariance equation agree to O(dt^4)
    np.testing.assert_allclose(M @ c0 @ M.T, c1, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(M @ s0 @ M.T, s1, rtol=1e-8, atol=1e-10)


def test_symplectic_area_conserved_for_decoupled_quadratic():
    pot = PolynomialPotential({(2, 0): 0.8, (0, 2): 0.3})
    e = sample_gaussian(GaussianStateSpec(MeanVector(), CovarianceMatrix.from_offsets(0.3, 0.1, 0.2, 0.5, qp=0.1)), 50_000, 4)
    moved = evolve_ensemble(e, pot, 1e-2, 300)
    for blk in (slice(0, 2), slice(2, 4)):
        d0 = np.linalg.det(np.cov(e.particles[:, blk].T))
        d1 = np.linalg.det(np.cov(moved.particles[:, blk].T))
        assert d1 == pytest.approx(d0, rel=1e-8)


def test_particle_energy_conserved():
    pot = preset_example1(ScenarioParams(alpha=1, beta1=0.2, beta2=0.1, gamma1=0.3, gamma2=0.1))
    e = sample_gaussian(GaussianStateSpec.vacuum(), 200, 8)
    moved = evolve_ensemble(e, pot, 1e-3, 5000)

    def energy(y):
        return 0.5 * (y[:, 1] ** 2 + y[:, 3] ** 2) + pot(y[:, 0], y[:, 2])

    e0, e1 = energy(e.particles), energy(moved.particles)
    assert np.max(np.abs(e1 - e0) / np.maximum(np.abs(e0), 1e-3)) <= 1e-6


def test_non_finite_particle_reports_index_and_time():
    e = Ensemble(np.array([[0.0, 0.0, 0.0, 0.0], [5.0, 5.0, 0.0, 0.0]]), seed=0)
    with pytest.raises(OracleError, match="particle 1"):
        evolve_ensemble(e, PolynomialPotential({(3, 0): -10.0}), 1e-2, 10_000)


def test_partition_independence():
    pot = preset_example2(ScenarioParams(beta1=-1, beta2=2))
    e = sample_gaussian(GaussianStateSpec.vacuum(), 1001, 3)
    one = evolve_ensemble(e, pot, 1e-3, 200, threads=1)
    three = evolve_ensemble(e, pot, 1e-3, 200, threads=3)
    np.testing.assert_array_equal(one.particles, three.particles)


def test_oracle_supported():
    assert oracle_supported(preset_example2(ScenarioParams(beta1=1, beta2=1)))
    assert not oracle_supported(PolynomialPotential({(4, 0): 1.0}))
    assert not oracle_supported(PolynomialPotential({(3, 1): 1.0}))
    with pytest.raises(OracleError):
        compare_with_hierarchy(GaussianStateSpec.vacuum(), PolynomialPotential({(4, 0): 1.0}), [0.1])


def test_estimate_f_vacuum():
    e = sample_gaussian(GaussianStateSpec.vacuum(), 200_000, 6)
    assert estimate_f(e).agrees(0.0)


_DIVERGENT = pytest.mark.xfail(
    strict=True,
    reason="f from the truncated hierarchy has not converged in the order cap by t=1 "
           "(f(1) = -20, 75, 412, 912 for caps 4..10) and the ensemble is heavy-tailed")


@pytest.mark.parametrize("preset_name,times", [
    ("vacuum-decoupled", [0.1, 0.5, 1.0]),
    ("example1", [0.1, 0.5, 1.0]),
    ("example2", [0.1, 0.5]),
    pytest.param("example2", [1.0], marks=_DIVERGENT),
])
def test_oracle_tracks_hierarchy_for_presets(preset_name, times):
    from hybridsim.cli import ScenarioConfig

    cfg = ScenarioConfig.from_dict({"preset": preset_name})
    cmp = compare_with_hierarchy(cfg.initial, cfg.potential, times, count=50_000, seed=11,
                                 dt=1e-3, order_cap=8)
    if preset_name == "vacuum-decoupled":
        # f vanishes identically in both; compare absolutely
        assert np.all(np.abs(cmp.f_mc - cmp.f_hierarchy) < 5 * cmp.f_mc_stderr + 1e-12)
    else:
        assert np.all(cmp.deviations_in_se() <= 3.0), cmp.deviations_in_se()


def test_comparison_csv(tmp_path):
    pot = PolynomialPotential({(2, 0): 0.5, (0, 2): 0.5})
    cmp = compare_with_hierarchy(GaussianStateSpec.vacuum(), pot, [0.0, 0.1], count=2000, seed=1, dt=1e-2,
                                 order_cap=2)
    lines = cmp.to_csv(tmp_path / "o.csv").strip().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) == "t,f_mc,f_mc_stderr,f_hierarchy"
    assert len(lines) == 3
