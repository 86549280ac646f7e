import json

import numpy as np
import pytest

from utils.analysis_utils import theorems
from utils.analysis_utils.conditioned import HarmonicTable
from utils.errors import TooFewSurvivors

LN2 = float(np.log(2.0))
SMALL = dict(block_size=1024)


def criterion_names(report):
    return [c.name for c in report.criteria]


def test_rayleigh_cdf():
    assert theorems.RAYLEIGH_MEDIAN == pytest.approx(1.17741, abs=1e-5)
    assert theorems.rayleigh_cdf(theorems.RAYLEIGH_MEDIAN) == pytest.approx(0.5, abs=1e-12)
    assert theorems.rayleigh_cdf(-1.0) == 0.0
    values = theorems.rayleigh_cdf(np.array([0.0, 1.0, 10.0]))
    np.testing.assert_allclose(values, [0.0, 1.0 - np.exp(-0.5), 1.0])


def test_horizons_must_be_positive(iid_env):
    with pytest.raises(ValueError):
        theorems.survival_curve(iid_env, "a", 1, None, [0, 8], 100, 0)


def test_survival_curve_is_deterministic(iid_env):
    first = theorems.survival_curve(iid_env, "a", 1, None, [8, 16], 5000, 1, **SMALL)
    second = theorems.survival_curve(iid_env, "a", 1, None, [8, 16], 5000, 1, **SMALL)
    assert first.table.equals(second.table)
    assert first.theorem == "1.1"
    assert criterion_names(first) == ["flatness", "marginal_a", "marginal_b"]
    assert set(first.table["j"]) == {theorems.MARGINAL, "a", "b"}


def test_survival_curve_against_constant(iid_env):
    report = theorems.survival_curve(iid_env, "a", 1, "b", [8, 16], 5000, 1, u_hat=(1.0, 0.01), **SMALL)
    assert "matches_u" in criterion_names(report)
    reference = report.table[report.table["metric"] == "reference_u"]
    assert reference["estimate"].iloc[0] == pytest.approx(0.5)


def test_population_checks_share_survivors(iid_env):
    survival = theorems.survival_curve(iid_env, "a", 1, None, [8, 16], 5000, 2, **SMALL)
    clt = theorems.conditional_clt(iid_env, "a", 1, None, [8, 16], 5000, 2, min_survivors=100, **SMALL)

    def scaled(report):
        table = report.table
        rows = table[(table["metric"] == "sqrt_n_survival") & (table["j"] == theorems.MARGINAL)]
        return rows.sort_values("n")["estimate"].to_numpy()

    np.testing.assert_allclose(scaled(survival), scaled(clt), rtol=1e-12)
    assert {"ks_rayleigh", "rayleigh_median", "negative_mass"} <= set(criterion_names(clt))


def test_too_few_survivors(iid_env):
    with pytest.raises(TooFewSurvivors) as info:
        theorems.normalized_population_law(iid_env, "a", 1, None, [8, 16], 100, 0)
    assert info.value.context["n"] == 8


def test_normalized_population_law_cells(iid_env):
    report = theorems.normalized_population_law(
        iid_env, "a", 1, None, [4, 8], 4000, 3, min_survivors=100, **SMALL
    )
    laplace = report.table[report.table["metric"] == "laplace"]
    assert len(laplace) == 2 * len(theorems.LAPLACE_ARGS)
    assert laplace["estimate"].between(0.0, 1.0).all()
    assert "no_atom_at_zero" in criterion_names(report)
    assert report.theorem == "1.2"


def test_yaglom_reports_coupling(iid_env):
    report = theorems.yaglom_law(iid_env, "a", 1, None, [8, 16], 5000, 4, min_survivors=100, **SMALL)
    assert "coupling_shrinks" in criterion_names(report)
    assert set(report.table["metric"]) >= {"coupling", "boundary_mass", "ks_distance", "median"}


def test_walk_check_rejects_nonpositive_start(iid_env):
    with pytest.raises(ValueError):
        theorems.conditioned_clt_walk(iid_env, "a", 0.0, None, [16], 1000, 0)


@pytest.mark.slow
def test_walk_check_positive_support(iid_env):
    report = theorems.conditioned_clt_walk(iid_env, "a", 1.0, None, [64], 20_000, 5, min_survivors=100)
    assert report.theorem == "P2.3"
    support = next(c for c in report.criteria if c.name == "positive_support")
    assert support.passed
    assert support.value == 0


def test_summary_is_json_and_has_no_runtime(iid_env):
    report = theorems.survival_curve(iid_env, "a", 1, None, [8, 16], 2000, 6, **SMALL)
    summary = report.to_summary()
    assert "runtime" not in summary
    assert summary["n_list"] == [8, 16]
    assert summary["seeds"] == {"seed": 6, "modules": ["branching"]}
    json.dumps(summary)
    assert list(report.criteria_frame().columns) == ["name", "value", "threshold", "passed", "detail"]


def test_martingale_limit_laplace(iid_env):
    grid = (np.arange(41) + 0.5) * LN2
    table = HarmonicTable(
        states=("a", "b"), y_grid=grid, values=np.tile(grid + 0.5 * LN2, (2, 1)),
        stderr=np.zeros((2, grid.size)), horizon=0,
    )
    report = theorems.martingale_limit_laplace(iid_env, table, "a", 3.5 * LN2, 1, [8, 16], 2000, 7, **SMALL)
    assert report.theorem == "W"
    assert criterion_names(report) == [f"plus_laplace_stable_{a:g}" for a in theorems.LAPLACE_ARGS]
    transform = report.table[report.table["metric"] == "plus_laplace"]
    assert len(transform) == 2 * len(theorems.LAPLACE_ARGS)
    assert np.isfinite(transform["estimate"]).all()


@pytest.mark.slow
def test_walk_check_passes_at_desk_scale(iid_env):
    # from y = 1 the walk is killed at 1 - 2 ln 2; about 2.5% of paths survive n = 4096
    report = theorems.conditioned_clt_walk(iid_env, "a", 1.0, None, [4096], 400_000, 8, block_size=65_536)
    failed = [(c.name, c.value, c.threshold) for c in report.criteria if not c.passed]
    assert report.passed, failed
    assert criterion_names(report) == ["ks_rayleigh", "rayleigh_median", "positive_support", "marginal_a", "marginal_b"]
    survivors = report.table[report.table["metric"] == "sqrt_n_unkilled"]["estimate"].iloc[0]
    # sqrt(n) P(tau_y > n) -> 2 V(y) / (sqrt(2 pi) sigma) with V(1) = 2 ln 2
    assert survivors == pytest.approx(4 / np.sqrt(2 * np.pi), rel=0.05)
