"""
Writing and reading result artifacts.

CSV files go through pandas with a fixed dialect (no index, LF endings,
round-trip float format) and carry a ``config_hash`` column; JSON
summaries are pretty-printed with sorted keys. File names embed the config
hash so outputs of different configs never mix.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from utils.analysis_utils.conditioned import HarmonicTable
from utils.general_utils import text_cleaning
from utils.input_data.config_utils import SCHEMA_VERSION
from utils.model_utils.simulate import Trajectory

log = logging.getLogger(__name__)

CSV_OPTIONS = {"index": False, "lineterminator": "\n", "float_format": "%.17g"}
HARMONIC_COLUMNS = ["state", "y", "V", "stderr", "horizon", "theta", "config_hash"]


def artifact_name(kind: str, config_hash: str, suffix: str = "csv", tag: Optional[str] = None) -> str:
    """``<kind>_<hash>[_<tag>].<suffix>``, the tag slugged."""
    name = f"{kind}_{config_hash}"
    if tag:
        name += f"_{text_cleaning(tag)}"
    return f"{name}.{suffix}"


def write_csv(df: pd.DataFrame, out_dir, kind: str, config_hash: str, tag: Optional[str] = None) -> Path:
    """Write ``df`` with a leading ``config_hash`` column."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame = df.copy()
    if "config_hash" in frame.columns:
        frame = frame.drop(columns="config_hash")
    frame.insert(0, "config_hash", config_hash)
    path = out / artifact_name(kind, config_hash, "csv", tag)
    frame.to_csv(path, **CSV_OPTIONS)
    log.info("✓ Wrote %s (%d rows)", path, len(frame))
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def write_json(payload: dict, out_dir, kind: str, config_hash: str, tag: Optional[str] = None) -> Path:
    """Pretty JSON with sorted keys, stamped with the config hash and schema version."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {**_jsonable(payload), "config_hash": config_hash, "schema_version": SCHEMA_VERSION}
    path = out / artifact_name(kind, config_hash, "json", tag)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("✓ Wrote %s", path)
    return path


def harmonic_table_path(out_dir, config_hash: str) -> Path:
    return Path(out_dir) / artifact_name("harmonic", config_hash)


def save_harmonic_table(table: HarmonicTable, out_dir, config_hash: str) -> Path:
    return write_csv(table.to_frame(), out_dir, "harmonic", config_hash)


def load_harmonic_table(path, config_hash: Optional[str] = None) -> Optional[HarmonicTable]:
    """
    Read a harmonic table written by ``save_harmonic_table``.

    Returns None when the file is missing or was produced by a different
    config (hash mismatch).
    """
    path = Path(path)
    if not path.exists():
        return None
    df = pd.read_csv(path)
    missing = set(HARMONIC_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{path} is not a harmonic table; missing columns {sorted(missing)}")
    if config_hash is not None and not (df["config_hash"].astype(str) == config_hash).all():
        log.info("Ignoring cached harmonic table %s (config hash mismatch)", path)
        return None

    states = tuple(dict.fromkeys(df["state"].astype(str)))
    grid = np.sort(df["y"].unique())
    pivot = df.assign(state=df["state"].astype(str)).pivot(index="state", columns="y")
    values = pivot["V"].loc[list(states), grid].to_numpy()
    errors = pivot["stderr"].loc[list(states), grid].to_numpy()
    theta = df.groupby(df["state"].astype(str), sort=False)["theta"].first().loc[list(states)].to_numpy()
    return HarmonicTable(
        states=states, y_grid=grid, values=values, stderr=errors, horizon=int(df["horizon"].iloc[0]),
        theta=None if np.isnan(theta).all() else theta,
    )


def write_trajectories(trajectories: Sequence[Trajectory], states: Iterable[str], out_dir, config_hash: str) -> Path:
    """One CSV per replicate (config_hash, step, x, z, s) under ``trajectories_<hash>/``."""
    folder = Path(out_dir) / f"trajectories_{config_hash}"
    folder.mkdir(parents=True, exist_ok=True)
    labels = list(states)
    width = max(len(str(len(trajectories) - 1)), 1)
    for r, traj in enumerate(trajectories):
        frame = traj.to_frame(labels)
        frame.insert(0, "config_hash", config_hash)
        frame.to_csv(folder / f"replicate_{r:0{width}d}.csv", **CSV_OPTIONS)
    log.info("✓ Wrote %d trajectories to %s", len(trajectories), folder)
    return folder
