import numpy as np
import pytest

from utils.errors import NegativeEntryError, NonStochasticError, NotPrimitiveError, ZeroMassError
from utils.model_utils.environment import (
    dual_kernel,
    mixing_decay,
    poisson_corrector,
    primitivity_index,
    simulate_path,
    stationary_distribution,
    step_states,
    validate_kernel,
)


# -------------------------------------------------------------------------
## validate_kernel


def test_validate_kernel_labels_and_index():
    kernel = validate_kernel([[0.9, 0.1], [0.3, 0.7]], ["bueno", "malo"])
    assert kernel.d == 2
    assert kernel.index("malo") == 1
    assert kernel.index(0) == 0
    with pytest.raises(KeyError):
        kernel.index("regular")


def test_validate_kernel_default_labels():
    assert validate_kernel([[1.0]]).states == ("0",)


def test_row_sum_above_tolerance_names_the_row():
    with pytest.raises(NonStochasticError) as info:
        validate_kernel([[0.5, 0.5], [0.6, 0.5]], ["a", "b"])
    assert info.value.context["row"] == "b"
    assert "'b'" in info.value.message


def test_small_row_residual_is_renormalized():
    kernel = validate_kernel([[0.5, 0.5 + 5e-10], [0.25, 0.75]])
    np.testing.assert_allclose(kernel.rows.sum(axis=1), 1.0, rtol=0, atol=1e-15)
    assert not kernel.rows.flags.writeable


def test_negative_entry_rejected():
    with pytest.raises(NegativeEntryError) as info:
        validate_kernel([[1.1, -0.1], [0.5, 0.5]], ["a", "b"])
    assert info.value.context["row"] == "a"


def test_non_square_rejected():
    with pytest.raises(ValueError):
        validate_kernel([[0.5, 0.5]])


# -------------------------------------------------------------------------
## Primitivity and stationary law


def test_primitivity_index():
    assert primitivity_index(validate_kernel([[0.5, 0.5], [0.5, 0.5]])) == 1
    assert primitivity_index(validate_kernel([[0.0, 1.0], [0.5, 0.5]])) == 2


def test_periodic_kernel_is_not_primitive():
    kernel = validate_kernel([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(NotPrimitiveError):
        primitivity_index(kernel)
    with pytest.raises(NotPrimitiveError):
        stationary_distribution(kernel)


@pytest.mark.parametrize(
    "rows, expected",
    [
        ([[1.0]], [1.0]),
        ([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5]),
        ([[0.9, 0.1], [0.3, 0.7]], [0.75, 0.25]),
    ],
)
def test_stationary_distribution(rows, expected):
    nu = stationary_distribution(validate_kernel(rows))
    np.testing.assert_allclose(nu, expected, rtol=0, atol=1e-11)


def test_mixing_decay_iid_vanishes_and_reversible_decays():
    iid = validate_kernel([[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(mixing_decay(iid, np.array([0.5, 0.5]), 5), 0.0, atol=1e-15)

    kernel = validate_kernel([[0.9, 0.1], [0.3, 0.7]])
    deltas = mixing_decay(kernel, np.array([0.75, 0.25]), 10)
    # second eigenvalue 0.6
    np.testing.assert_allclose(deltas[1:] / deltas[:-1], 0.6, rtol=1e-9)


# -------------------------------------------------------------------------
## Dual kernel and corrector


def test_dual_of_reversible_kernel_is_itself():
    kernel = validate_kernel([[0.9, 0.1], [0.3, 0.7]])
    dual = dual_kernel(kernel, np.array([0.75, 0.25]))
    np.testing.assert_allclose(dual.rows, kernel.rows, atol=1e-12)


def test_dual_is_an_involution(three_state_env):
    kernel = three_state_env.kernel
    nu = three_state_env.nu
    dual = dual_kernel(kernel, nu)
    np.testing.assert_allclose(dual_kernel(dual, nu).rows, kernel.rows, atol=1e-12)
    np.testing.assert_allclose(nu @ dual.rows, nu, atol=1e-12)


def test_dual_requires_positive_mass():
    with pytest.raises(ZeroMassError):
        dual_kernel(validate_kernel([[0.5, 0.5], [0.5, 0.5]]), np.array([1.0, 0.0]))


def test_poisson_corrector_solves_the_equation(three_state_env):
    kernel, nu, rho = three_state_env.kernel, three_state_env.nu, three_state_env.rho_vec
    theta = poisson_corrector(kernel, rho, nu)
    lhs = theta - kernel.rows @ theta
    rhs = kernel.rows @ rho - nu @ rho
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    assert abs(nu @ theta) < 1e-12


def test_poisson_corrector_is_zero_for_iid_centered_walk(iid_env):
    theta = poisson_corrector(iid_env.kernel, iid_env.rho_vec, iid_env.nu)
    np.testing.assert_allclose(theta, 0.0, atol=1e-14)


# -------------------------------------------------------------------------
## Paths


def test_simulate_path_shape_and_start():
    kernel = validate_kernel([[0.2, 0.8], [0.6, 0.4]])
    path = simulate_path(kernel, 1, 50, np.random.default_rng(0))
    assert path.shape == (51,)
    assert path[0] == 1
    assert set(np.unique(path)) <= {0, 1}


def test_step_states_inverse_cdf():
    cumulative = np.cumsum(np.array([[0.25, 0.75], [1.0, 0.0]]), axis=1)
    current = np.array([0, 0, 1, 1])
    uniforms = np.array([0.1, 0.5, 0.1, 0.999])
    np.testing.assert_array_equal(step_states(cumulative, current, uniforms), [0, 1, 0, 0])
