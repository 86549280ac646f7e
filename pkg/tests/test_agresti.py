import numpy as np
import pytest

from utils.analysis_utils import agresti
from utils.errors import DomainError, TailNotConverged
from utils.general_utils import make_rng


def test_linear_fractional_closed_form(linear_fractional_env):
    path = [0] * 5
    assert agresti.q_direct(linear_fractional_env, path, 1, 0.0) == pytest.approx(1 / 6, abs=1e-12)
    assert agresti.q_decomposed(linear_fractional_env, path, 1, 0.0) == pytest.approx(1 / 6, abs=1e-12)
    assert agresti.q_canonical(linear_fractional_env, path, 1, 0.0) == pytest.approx(1 / 6, abs=1e-12)


def test_one_step_decomposition(iid_env):
    # 1/q = e^{-S_0} phi(0) + e^{-S_1} = 1.0 + 0.5
    assert agresti.q_decomposed(iid_env, ["a"], 1, 0.0) == pytest.approx(2 / 3, rel=1e-12)
    assert agresti.q_direct(iid_env, ["a"], 1, 0.0) == pytest.approx(2 / 3, rel=1e-12)


def test_eta_sequence_linear_fractional(linear_fractional_env):
    np.testing.assert_allclose(agresti.eta_sequence(linear_fractional_env, [0] * 4, 0.3), 1.0, atol=1e-9)


def test_q_at_one_is_zero(iid_env):
    assert agresti.q_direct(iid_env, ["a", "b"], 2, 1.0) == 0.0


@pytest.mark.parametrize("z", [1, 2, 5])
@pytest.mark.parametrize("s", [0.0, 0.4, 0.95])
def test_direct_and_decomposed_agree(three_state_env, z, s):
    rng = make_rng(0, "test-agresti", z)
    for _ in range(20):
        path = rng.integers(0, three_state_env.d, size=int(rng.integers(1, 40)))
        direct = agresti.q_direct(three_state_env, path, z, s)
        decomposed = agresti.q_decomposed(three_state_env, path, z, s)
        assert abs(direct - decomposed) <= 1e-10 * decomposed


def test_decomposition_paths_matches_single_path(reversible_env):
    paths = make_rng(1, "test-agresti").integers(0, 2, size=(8, 25))
    terms = agresti.decomposition_paths(reversible_env, paths, 3, 0.2)
    for row, path in enumerate(paths):
        expected = agresti.q_decomposed(reversible_env, path, 3, 0.2)
        value = 1.0 / ((terms["series"][row] + terms["boundary"][row]) / 3 + terms["psi"][row])
        assert value == pytest.approx(expected, rel=1e-13)


def test_q_bounded_by_expected_population(iid_env):
    path = agresti.as_path(iid_env, ["b", "b", "a", "b"])
    s_n = agresti.walk(iid_env, path)[-1]
    assert agresti.q_direct(iid_env, path, 2, 0.0) <= 2 * np.exp(s_n)


def test_argument_validation(iid_env):
    with pytest.raises(DomainError):
        agresti.q_direct(iid_env, ["a"], 0, 0.0)
    with pytest.raises(DomainError):
        agresti.q_decomposed(iid_env, ["a"], 1, 1.0)
    with pytest.raises(ValueError):
        agresti.as_path(iid_env, [])
    with pytest.raises(ValueError):
        agresti.as_path(iid_env, ["c"])


def test_q_infinity_supercritical_fixed_point(supercritical_env):
    # extinction probability q solves q = exp(2 (q - 1))
    reciprocal = agresti.q_infinity_reciprocal(supercritical_env, [0] * 80, 1, 0.0)
    assert 1.0 / reciprocal == pytest.approx(1.0 - 0.2031878699, rel=1e-8)


def test_q_infinity_reports_unconverged_tail(linear_fractional_env):
    with pytest.raises(TailNotConverged) as info:
        agresti.q_infinity_reciprocal(linear_fractional_env, [0] * 10, 1, 0.0)
    assert info.value.context["horizon"] == 10
    result = agresti.q_infinity_reciprocal_paths(linear_fractional_env, np.zeros((2, 10), dtype=int), 1)
    np.testing.assert_allclose(result["tail_ratio"], 0.1)
