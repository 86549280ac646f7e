import numpy as np
import pytest

from utils.analysis_utils import spectral
from utils.model_utils.environment import validate_kernel
from utils.model_utils.offspring import explicit, geometric, poisson
from utils.model_utils.simulate import build_environment, simulate_batch

LN2 = np.log(2.0)


def test_transfer_matrix_at_zero_is_kernel(reversible_env):
    np.testing.assert_array_equal(spectral.transfer_matrix(reversible_env, 0.0), reversible_env.kernel.rows)


def test_k_values(iid_env, supercritical_env):
    assert spectral.k(iid_env, 0.0) == pytest.approx(1.0, abs=1e-13)
    assert spectral.k(iid_env, 1.0) == pytest.approx(1.25, rel=1e-12)
    assert spectral.k(supercritical_env, 1.5) == pytest.approx(2.0**1.5, rel=1e-12)


def test_k_curve_table(iid_env):
    curve = spectral.k_curve(iid_env, [-1.0, 0.0, 1.0])
    assert list(curve.columns) == ["lambda", "k", "log_k"]
    np.testing.assert_allclose(curve["k"], [1.25, 1.0, 1.25], rtol=1e-12)


def test_k_prime0_and_classification(iid_env, reversible_env, supercritical_env):
    assert abs(spectral.k_prime0(iid_env)) < 1e-12
    assert abs(spectral.k_prime0(reversible_env)) < 1e-10
    assert spectral.k_prime0(supercritical_env) == pytest.approx(LN2, abs=1e-12)
    assert spectral.classify(spectral.k_prime0(reversible_env)) == "critical"
    assert spectral.classify(LN2) == "supercritical"
    assert spectral.classify(-LN2) == "subcritical"


def test_sigma2_closed_forms(iid_env, reversible_env, linear_fractional_env):
    assert spectral.sigma2(iid_env) == pytest.approx(LN2**2, abs=1e-10)
    assert spectral.sigma2(reversible_env) == pytest.approx(12 * LN2**2, abs=1e-9)
    assert spectral.sigma2(linear_fractional_env) == 0.0


def test_fit_geometric_envelope():
    n = np.arange(1, 31)
    C, r = spectral.fit_geometric_envelope(2.0 * 0.5**n)
    assert r == pytest.approx(0.5, rel=1e-9)
    assert C == pytest.approx(2.0, rel=1e-6)
    assert spectral.fit_geometric_envelope(np.zeros(5)) == (0.0, 0.0)


def test_spectral_radius():
    assert spectral.spectral_radius(np.array([[0.5, 0.5], [0.5, 0.5]])) == pytest.approx(1.0, rel=1e-12)
    rotation = np.array([[0.0, 1.0], [-1.0, 0.0]]) * 0.3
    assert spectral.spectral_radius(rotation) == pytest.approx(0.3, rel=1e-9)
    assert spectral.spectral_radius(np.zeros((2, 2))) == 0.0


def test_nonlattice_on_chosen_points(iid_env):
    # radius is |cos(t ln 2)| for the i.i.d. environment
    lattice = spectral.nonlattice_check(iid_env, [np.pi / LN2])
    assert not lattice.nonlattice
    smooth = spectral.nonlattice_check(iid_env, [1.0])
    assert smooth.nonlattice
    assert smooth.radii[0] == pytest.approx(abs(np.cos(LN2)), rel=1e-9)
    with pytest.raises(ValueError):
        spectral.nonlattice_check(iid_env, [0.0, 1.0])


@pytest.mark.parametrize("law", [poisson(2.0), geometric(0.25), explicit([0.1, 0.2, 0.7])])
def test_single_state_is_lattice(law):
    env = build_environment(validate_kernel([[1.0]]), [law])
    verdict = spectral.nonlattice_check(env)
    assert not verdict.nonlattice
    assert list(verdict.to_frame().columns) == ["t", "radius", "margin"]


def test_analyze_report(reversible_env):
    report = spectral.analyze(reversible_env)
    assert report.classification == "critical"
    np.testing.assert_allclose(report.nu, [0.75, 0.25], atol=1e-11)
    assert report.sigma == pytest.approx(np.sqrt(12) * LN2, rel=1e-9)
    summary = report.to_dict()
    assert summary["states"] == ["bueno", "malo"]
    assert summary["nonlattice_t_points"] == 200
    assert list(report.to_frame().columns) == ["state", "nu", "rho"]


def test_calibrate_makes_environment_critical():
    kernel = validate_kernel([[0.5, 0.5], [0.5, 0.5]], ["a", "b"])
    env = build_environment(kernel, [geometric(0.6), poisson(0.5)])
    for state in ("a", "b"):
        calibrated = spectral.calibrate(env, state)
        assert abs(calibrated.nu @ calibrated.rho_vec) < 1e-12
    assert spectral.calibrate(env, "b").laws[1].lam == pytest.approx(2 / 3)


def test_calibrate_rejects_explicit_laws():
    kernel = validate_kernel([[0.5, 0.5], [0.5, 0.5]], ["a", "b"])
    env = build_environment(kernel, [geometric(0.6), explicit([0.2, 0.3, 0.5])])
    with pytest.raises(ValueError, match="explicit"):
        spectral.calibrate(env, "b")


@pytest.mark.parametrize("env_name", ["iid_env", "reversible_env", "three_state_env"])
def test_log_k_is_convex(request, env_name):
    env = request.getfixturevalue(env_name)
    lambdas = np.linspace(-2.0, 2.0, 41)
    log_k = spectral.k_curve(env, lambdas)["log_k"].to_numpy()
    assert np.all(np.diff(log_k, 2) >= -1e-9)
    # convexity through log k(0) = 0 with slope k'(0)
    assert np.all(log_k >= lambdas * spectral.k_prime0(env) - 1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("env_name", ["reversible_env", "three_state_env"])
def test_sigma2_matches_walk_variance(request, env_name):
    env = request.getfixturevalue(env_name)
    n, replicates = 1000, 20_000
    snap = simulate_batch(
        env, 0, 1, [n], replicates, 31, module="walk", branching=False, block_size=replicates
    )[n]
    assert snap.count == replicates
    assert np.var(snap.s, ddof=1) / n == pytest.approx(spectral.sigma2(env), rel=0.05)
