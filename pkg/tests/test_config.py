import json

import pytest

from utils.errors import ParseError, ValidationError
from utils.input_data.config_utils import (
    DEFAULT_REPLICATES,
    config_hash,
    dump_config,
    load_config,
    parse_config,
    with_overrides,
)


def parse(tree: dict):
    return parse_config(json.dumps(tree))


def field_of(tree: dict) -> str:
    with pytest.raises(ValidationError) as info:
        parse(tree)
    return info.value.context["field"]


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as info:
        parse_config('{\n  "schema_version": 1,,\n}')
    assert info.value.context["line"] == 2
    assert info.value.to_record()["error"] == "ParseError"


def test_valid_config(config_dict):
    config = parse(config_dict)
    assert config.environment.states == ("a", "b")
    assert config.initial_state == "a"
    assert config.n_list == (8, 16)
    assert config.replicates["theorem"] == 50_000
    assert config.harmonic_y_grid == (0.5, 1.0, 2.0)
    assert config.target_state is None


def test_defaults_fill_missing_fields(config_dict):
    config = parse({"schema_version": 1, "environment": config_dict["environment"]})
    assert config.n_list == (1024, 4096)
    assert config.seed == 0
    assert config.initial_population == 1
    assert dict(config.replicates) == DEFAULT_REPLICATES
    assert config.output_dir == "results"


def test_row_sum_names_the_row(config_dict):
    config_dict["environment"]["kernel"] = [[0.6, 0.5], [0.5, 0.5]]
    assert field_of(config_dict) == "environment.kernel[0]"


def test_condition_violations_name_the_state(config_dict):
    config_dict["environment"]["offspring"]["b"] = {"family": "explicit", "pmf": [0.5, 0.5]}
    with pytest.raises(ValidationError) as info:
        parse(config_dict)
    assert info.value.context["field"] == "environment.offspring.b"
    assert "Condition 4" in info.value.message


@pytest.mark.parametrize(
    "overrides, expected",
    [
        ({"schema_version": 2}, "schema_version"),
        ({"initial_state": "zz"}, "initial_state"),
        ({"n_list": [16, 8]}, "n_list"),
        ({"replicates": {"bogus": 10}}, "replicates.bogus"),
        ({"seed": -1}, "seed"),
        ({"t_grid": [0.0, 1.0]}, "t_grid"),
        ({"start_level": 0.0}, "start_level"),
        ({"target_state": 5}, "target_state"),
    ],
)
def test_invalid_fields(config_factory, overrides, expected):
    assert field_of(config_factory(**overrides)) == expected


def test_missing_schema_version(config_dict):
    del config_dict["schema_version"]
    assert field_of(config_dict) == "schema_version"


def test_unknown_family(config_dict):
    config_dict["environment"]["offspring"]["a"] = {"family": "binomial", "n": 3}
    assert field_of(config_dict) == "environment.offspring.a"


def test_hash_is_stable_and_key_order_invariant(config_dict):
    reordered = {k: config_dict[k] for k in reversed(list(config_dict))}
    assert config_hash(parse(config_dict)) == config_hash(parse(reordered))
    assert len(config_hash(parse(config_dict))) == 12


def test_hash_follows_content(config_factory):
    base = config_hash(parse(config_factory()))
    assert config_hash(parse(config_factory(seed=8))) != base
    assert config_hash(parse(config_factory(n_list=[8, 32]))) != base


def test_dump_round_trip(config_dict):
    config = parse(config_dict)
    again = parse_config(dump_config(config))
    assert config_hash(again) == config_hash(config)
    assert again.environment.states == config.environment.states


def test_load_config(config_file):
    assert load_config(config_file).seed == 7


def test_with_overrides(config_dict):
    config = parse(config_dict)
    assert with_overrides(config) is config
    reseeded = with_overrides(config, seed=9)
    assert reseeded.seed == 9
    assert reseeded.hash != config.hash
    moved = with_overrides(config, output_dir="elsewhere")
    assert moved.output_dir == "elsewhere"
    assert moved.hash != config.hash
    with pytest.raises(ValidationError):
        with_overrides(config, seed=-3)


def test_dashboard_examples_are_valid():
    from utils.ui_data import EXAMPLE_CONFIGS

    for name, tree in EXAMPLE_CONFIGS.items():
        config = parse(tree)
        assert config.seed == 42, name
