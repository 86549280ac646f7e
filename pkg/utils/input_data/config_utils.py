"""
Experiment configuration: parsing, validation and hashing.

The config is a JSON object with an explicit ``schema_version``. Parsing
stops at the first problem: ``ParseError`` (with line and column) for text
that is not JSON, ``ValidationError`` (with the offending field) for JSON
that does not describe a valid experiment.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from utils.errors import (
    BPMEError,
    Condition2Violated,
    Condition4Violated,
    NegativeEntryError,
    NonStochasticError,
    ParseError,
    ValidationError,
)
from utils.general_utils import hash_payload
from utils.model_utils.environment import validate_kernel
from utils.model_utils.offspring import law_from_dict
from utils.model_utils.simulate import DEFAULT_BLOCK_SIZE, EnvironmentModel, build_environment

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_SEED = 2**64 - 1

DEFAULT_REPLICATES = {
    "simulate": 10,
    "harmonic": 100_000,
    "plus": 20_000,
    "survival": 1_000_000,
    "theorem": 1_000_000,
    "walk": 100_000,
}

DEFAULTS = {
    "initial_population": 1,
    "n_list": [1024, 4096],
    "harmonic": {"y_grid": [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0], "horizon": 4096},
    "u": {"y_list": [5.0, 10.0, 20.0], "horizon": 2000},
    "target_state": None,
    "start_level": 5.0,
    "seed": 0,
    "output_dir": "results",
    "t_grid": None,
    "block_size": DEFAULT_BLOCK_SIZE,
}

_CONDITION_NAMES = {Condition2Violated: "Condition 2", Condition4Violated: "Condition 4"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment. ``payload`` is the normalized JSON tree that is hashed."""

    environment: EnvironmentModel
    initial_state: str
    initial_population: int
    n_list: Tuple[int, ...]
    replicates: Mapping[str, int]
    harmonic_y_grid: Tuple[float, ...]
    harmonic_horizon: int
    u_y_list: Tuple[float, ...]
    u_horizon: int
    target_state: Optional[str]
    start_level: float
    seed: int
    output_dir: str
    t_grid: Optional[Tuple[float, ...]]
    block_size: int
    payload: Dict[str, Any] = field(repr=False, compare=False)

    @property
    def hash(self) -> str:
        return config_hash(self)


# -------------------------------------------------------------------------
## Field checks


def _fail(field_name: str, message: str) -> ValidationError:
    return ValidationError(f"{field_name}: {message}", field=field_name)


def _positive_int(value, field_name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise _fail(field_name, f"expected an integer >= {minimum}, got {value!r}")
    return int(value)


def _number(value, field_name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(field_name, f"expected a number, got {value!r}")
    return float(value)


def _increasing(values, field_name: str, integer: bool = False, nonnegative: bool = True) -> List:
    if not isinstance(values, list) or not values:
        raise _fail(field_name, "expected a nonempty list")
    out = [_positive_int(v, f"{field_name}[{k}]") if integer else _number(v, f"{field_name}[{k}]")
           for k, v in enumerate(values)]
    if nonnegative and min(out) < 0:
        raise _fail(field_name, "values must be nonnegative")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise _fail(field_name, "values must be strictly increasing")
    return out


def _state_label(value, states, field_name: str) -> str:
    if isinstance(value, int) and not isinstance(value, bool) and 0 <= value < len(states):
        return states[value]
    if value in states:
        return value
    raise _fail(field_name, f"unknown state {value!r}; known states {list(states)}")


def _build_environment(tree: Dict[str, Any]) -> EnvironmentModel:
    env = tree.get("environment")
    if not isinstance(env, dict):
        raise _fail("environment", "missing or not an object")

    states = env.get("states")
    if not isinstance(states, list) or not states or not all(isinstance(s, str) for s in states):
        raise _fail("environment.states", "expected a nonempty list of labels")

    rows = env.get("kernel")
    if not isinstance(rows, list) or len(rows) != len(states):
        raise _fail("environment.kernel", f"expected {len(states)} rows")
    for k, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != len(states):
            raise _fail(f"environment.kernel[{k}]", f"expected {len(states)} entries")
        for entry in row:
            _number(entry, f"environment.kernel[{k}]")

    try:
        kernel = validate_kernel(rows, states)
    except (NonStochasticError, NegativeEntryError) as err:
        row = err.context.get("row")
        name = f"environment.kernel[{states.index(row)}]" if row in states else "environment.kernel"
        raise _fail(name, f"row '{row}': {err.message}") from err
    except ValueError as err:
        raise _fail("environment.kernel", str(err)) from err

    offspring = env.get("offspring")
    if not isinstance(offspring, dict):
        raise _fail("environment.offspring", "expected an object keyed by state label")
    laws = []
    for label in states:
        name = f"environment.offspring.{label}"
        params = offspring.get(label)
        if not isinstance(params, dict):
            raise _fail(name, "missing offspring law")
        try:
            laws.append(law_from_dict(params))
        except (KeyError, TypeError, ValueError) as err:
            raise _fail(name, str(err)) from err

    try:
        return build_environment(kernel, laws)
    except (Condition2Violated, Condition4Violated) as err:
        label = err.context.get("state")
        raise _fail(
            f"environment.offspring.{label}",
            f"state '{label}' violates {_CONDITION_NAMES[type(err)]}: {err.message}",
        ) from err
    except BPMEError as err:
        raise _fail("environment.kernel", err.message) from err


# -------------------------------------------------------------------------
## Public API


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate an experiment config.

    Parameters
    ----------
    text : str
        UTF-8 JSON text.

    Returns
    -------
    ExperimentConfig

    Raises
    ------
    ParseError
        If the text is not JSON (context: ``line``, ``column``).
    ValidationError
        On the first invalid field (context: ``field``). Condition 2/4
        violations name the state; row-sum failures name the row.
    """
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"Invalid JSON: {err.msg}", line=err.lineno, column=err.colno) from err
    if not isinstance(tree, dict):
        raise _fail("$", "config must be a JSON object")

    version = tree.get("schema_version")
    if version != SCHEMA_VERSION:
        raise _fail("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    env = _build_environment(tree)
    states = env.states
    merged = {**DEFAULTS, **{k: v for k, v in tree.items() if k != "environment"}}

    initial_state = _state_label(merged.get("initial_state", states[0]), states, "initial_state")
    initial_population = _positive_int(merged["initial_population"], "initial_population", minimum=0)
    n_list = _increasing(merged["n_list"], "n_list", integer=True)

    replicates = dict(DEFAULT_REPLICATES)
    given = merged.get("replicates", {})
    if not isinstance(given, dict):
        raise _fail("replicates", "expected an object of per-command counts")
    for key, value in given.items():
        if key not in DEFAULT_REPLICATES:
            raise _fail(f"replicates.{key}", f"unknown command; expected one of {sorted(DEFAULT_REPLICATES)}")
        replicates[key] = _positive_int(value, f"replicates.{key}")

    for section in ("harmonic", "u"):
        if not isinstance(merged[section], dict):
            raise _fail(section, "expected an object")
    harmonic = {**DEFAULTS["harmonic"], **merged["harmonic"]}
    u_section = {**DEFAULTS["u"], **merged["u"]}

    target = merged["target_state"]
    target_state = None if target is None else _state_label(target, states, "target_state")

    seed = merged["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        raise _fail("seed", f"expected an unsigned 64-bit integer, got {seed!r}")

    if not isinstance(merged["output_dir"], str) or not merged["output_dir"]:
        raise _fail("output_dir", "expected a nonempty path")

    t_grid = merged["t_grid"]
    if t_grid is not None:
        t_grid = tuple(_increasing(t_grid, "t_grid"))
        if t_grid[0] <= 0:
            raise _fail("t_grid", "values must be positive")

    start_level = _number(merged["start_level"], "start_level")
    if start_level <= 0:
        raise _fail("start_level", f"must be positive, got {start_level}")

    config = ExperimentConfig(
        environment=env,
        initial_state=initial_state,
        initial_population=initial_population,
        n_list=tuple(n_list),
        replicates=replicates,
        harmonic_y_grid=tuple(_increasing(harmonic["y_grid"], "harmonic.y_grid")),
        harmonic_horizon=_positive_int(harmonic["horizon"], "harmonic.horizon", minimum=2),
        u_y_list=tuple(_increasing(u_section["y_list"], "u.y_list")),
        u_horizon=_positive_int(u_section["horizon"], "u.horizon"),
        target_state=target_state,
        start_level=start_level,
        seed=int(seed),
        output_dir=merged["output_dir"],
        t_grid=t_grid,
        block_size=_positive_int(merged["block_size"], "block_size"),
        payload={},
    )
    return _with_payload(config)


def _with_payload(config: ExperimentConfig) -> ExperimentConfig:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "environment": config.environment.to_dict(),
        "initial_state": config.initial_state,
        "initial_population": config.initial_population,
        "n_list": list(config.n_list),
        "replicates": dict(sorted(config.replicates.items())),
        "harmonic": {"y_grid": list(config.harmonic_y_grid), "horizon": config.harmonic_horizon},
        "u": {"y_list": list(config.u_y_list), "horizon": config.u_horizon},
        "target_state": config.target_state,
        "start_level": config.start_level,
        "seed": config.seed,
        "output_dir": config.output_dir,
        "t_grid": None if config.t_grid is None else list(config.t_grid),
        "block_size": config.block_size,
    }
    return replace(config, payload=payload)


def load_config(path) -> ExperimentConfig:
    """
    Read and parse a config file.

    Raises
    ------
    ParseError
        If the bytes are not UTF-8 (context: ``line``, ``column`` of the
        first bad byte) or the text is not JSON.
    """
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as err:
        line_start = data.rfind(b"\n", 0, err.start) + 1
        raise ParseError(
            f"Invalid UTF-8: byte 0x{data[err.start]:02x} at offset {err.start}",
            line=data.count(b"\n", 0, err.start) + 1,
            column=err.start - line_start + 1,
        ) from err
    config = parse_config(text)
    log.info("✓ Config loaded from %s (hash %s)", path, config_hash(config))
    return config


def config_hash(config: ExperimentConfig) -> str:
    """First 12 hex digits of SHA-256 over the canonical normalized config."""
    return hash_payload(config.payload)


def with_overrides(config: ExperimentConfig, seed: Optional[int] = None, output_dir: Optional[str] = None,
                   environment: Optional[EnvironmentModel] = None) -> ExperimentConfig:
    """Apply CLI overrides; the hash changes with the content."""
    changes = {}
    if seed is not None:
        if not 0 <= int(seed) <= MAX_SEED:
            raise _fail("seed", f"expected an unsigned 64-bit integer, got {seed!r}")
        changes["seed"] = int(seed)
    if output_dir is not None:
        changes["output_dir"] = str(output_dir)
    if environment is not None:
        changes["environment"] = environment
    return _with_payload(replace(config, **changes)) if changes else config


def dump_config(config: ExperimentConfig) -> str:
    """Normalized config as pretty JSON (loadable by ``parse_config``)."""
    return json.dumps(config.payload, indent=2, sort_keys=True) + "\n"
