import json

import numpy as np
import pytest

from utils.model_utils.environment import validate_kernel
from utils.model_utils.offspring import explicit, geometric, poisson
from utils.model_utils.simulate import build_environment

LN2 = float(np.log(2.0))


# -------------------------------------------------------------------------
## Environments


@pytest.fixture
def iid_env():
    """Two states, kernel all 1/2, offspring means 2 and 1/2 (critical)."""
    kernel = validate_kernel([[0.5, 0.5], [0.5, 0.5]], ["a", "b"])
    return build_environment(kernel, [geometric(2 / 3), geometric(1 / 3)])


@pytest.fixture
def reversible_env():
    """nu = (0.75, 0.25), rho = (ln 2, -3 ln 2) (critical)."""
    kernel = validate_kernel([[0.9, 0.1], [0.3, 0.7]], ["bueno", "malo"])
    return build_environment(kernel, [geometric(2 / 3), geometric(1 / 9)])


@pytest.fixture
def linear_fractional_env():
    """Single state, f(s) = 1/(2 - s)."""
    return build_environment(validate_kernel([[1.0]], ["unico"]), [geometric(0.5)])


@pytest.fixture
def supercritical_env():
    return build_environment(validate_kernel([[1.0]], ["unico"]), [poisson(2.0)])


@pytest.fixture
def three_state_env():
    """Non-reversible primitive kernel with mixed families."""
    kernel = validate_kernel(
        [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.1, 0.1, 0.8]], ["x", "y", "w"]
    )
    return build_environment(kernel, [poisson(1.5), geometric(0.4), explicit([0.3, 0.3, 0.4])])


# -------------------------------------------------------------------------
## Configs


def make_config(**overrides) -> dict:
    config = {
        "schema_version": 1,
        "environment": {
            "states": ["a", "b"],
            "kernel": [[0.5, 0.5], [0.5, 0.5]],
            "offspring": {
                "a": {"family": "geometric", "p": 2 / 3},
                "b": {"family": "geometric", "p": 1 / 3},
            },
        },
        "initial_state": "a",
        "initial_population": 1,
        "n_list": [8, 16],
        "replicates": {"simulate": 3, "harmonic": 4000, "plus": 2000, "survival": 20_000,
                       "theorem": 50_000, "walk": 20_000},
        "harmonic": {"y_grid": [0.5, 1.0, 2.0], "horizon": 64},
        "u": {"y_list": [1.0, 2.0], "horizon": 64},
        "start_level": 1.0,
        "seed": 7,
        "block_size": 4096,
    }
    config.update(overrides)
    return config


@pytest.fixture
def config_factory():
    return make_config


@pytest.fixture
def config_dict():
    return make_config()


@pytest.fixture
def config_file(tmp_path, config_dict):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_dict, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "results"
