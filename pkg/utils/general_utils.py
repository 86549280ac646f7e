import hashlib
import json
import logging
import os
import re
import unicodedata
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

LOG_ENV_VAR = "BPME_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_LOGGING_CONFIGURED = False


def configure_logging(level: Optional[str] = None) -> int:
    """
    Configure the root logger once for CLI and dashboard runs.

    Parameters
    ----------
    level : str, optional
        Level name ("DEBUG", "INFO", ...). When omitted the ``BPME_LOG``
        environment variable is used, falling back to WARNING.

    Returns
    -------
    int
        The numeric level that was applied.
    """
    global _LOGGING_CONFIGURED

    name = (level or os.environ.get(LOG_ENV_VAR) or "WARNING").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.WARNING

    root = logging.getLogger()
    if not _LOGGING_CONFIGURED:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        _LOGGING_CONFIGURED = True
    root.setLevel(numeric)
    return numeric


def text_cleaning(text):
    """
    Normalize a label into a file-name friendly slug.

    Removes accents, lowercases, and turns runs of anything that is not a
    letter or digit into single underscores.

    Args:
        text: Input label (str or any type). If NaN/None, returns as-is.

    Returns:
        str: Cleaned slug, or the original value if NaN.

    Example:
        >>> text_cleaning("Théorème P2.3")
        'theoreme_p2_3'
        >>> text_cleaning("  estado A ")
        'estado_a'
    """
    if pd.isna(text):
        return text

    text = str(text).lower()

    # Remove accents and diacritics
    text = unicodedata.normalize("NFKD", text)
    text = text.encode("ascii", errors="ignore").decode("utf-8")

    text = re.sub(r"[^a-z0-9]+", " ", text)
    text = re.sub(r"\s+", " ", text).strip()

    return text.replace(" ", "_")


# -------------------------------------------------------------------------
## Hashing and deterministic RNG streams


def canonical_json(payload: Any) -> str:
    """JSON text with sorted keys and no whitespace, used for hashing."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def hash_payload(payload: Any, length: int = 12) -> str:
    """Short SHA-256 hex digest of the canonical JSON form of ``payload``."""
    digest = hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
    return digest[:length]


def module_code(module: str) -> int:
    """Stable unsigned 64-bit code for a module id such as ``"branching"``."""
    digest = hashlib.sha256(module.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed: int, module: str, *index: int) -> np.random.SeedSequence:
    """
    Seed sequence derived injectively from (master seed, module id, index...).

    Parameters
    ----------
    seed : int
        Master seed, unsigned 64-bit.
    module : str
        Module id; different ids give unrelated streams.
    *index : int
        Replicate / block / state coordinates.

    Returns
    -------
    numpy.random.SeedSequence
    """
    return np.random.SeedSequence([int(seed), module_code(module), *[int(i) for i in index]])


def make_rng(seed: int, module: str, *index: int) -> np.random.Generator:
    """Single generator for (seed, module, index...)."""
    return np.random.default_rng(seed_sequence(seed, module, *index))


def make_streams(seed: int, module: str, *index: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """
    Independent environment and offspring generators for one replicate block.

    The two children are spawned from the same seed sequence, so the
    environment path of a block never depends on how many offspring draws
    were consumed.

    Returns
    -------
    tuple of numpy.random.Generator
        ``(env_rng, offspring_rng)``.
    """
    env_seq, off_seq = seed_sequence(seed, module, *index).spawn(2)
    return np.random.default_rng(env_seq), np.random.default_rng(off_seq)


def summarize_stats(values: np.ndarray) -> Dict[str, float]:
    """Mean and standard error of a 1-D sample (SE is NaN below two values)."""
    values = np.asarray(values, dtype=float)
    count = values.size
    if count == 0:
        return {"mean": float("nan"), "se": float("nan"), "count": 0}
    se = float(values.std(ddof=1) / np.sqrt(count)) if count > 1 else float("nan")
    return {"mean": float(values.mean()), "se": se, "count": int(count)}
