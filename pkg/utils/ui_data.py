import json
from typing import Dict

import streamlit as st

# === Configuraciones de ejemplo ===

_SMALL_REPLICATES = {
    "simulate": 10,
    "harmonic": 20_000,
    "plus": 5_000,
    "survival": 100_000,
    "theorem": 100_000,
    "walk": 20_000,
}

EXAMPLE_CONFIGS: Dict[str, dict] = {
    "Dos estados i.i.d. (crítico)": {
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
        "n_list": [256, 1024],
        "replicates": _SMALL_REPLICATES,
        "harmonic": {"y_grid": [0.5, 1.0, 2.0, 5.0, 10.0], "horizon": 1024},
        "u": {"y_list": [2.0, 4.0], "horizon": 500},
        "start_level": 2.0,
        "seed": 42,
    },
    "Dos estados reversible (crítico)": {
        "schema_version": 1,
        "environment": {
            "states": ["bueno", "malo"],
            "kernel": [[0.9, 0.1], [0.3, 0.7]],
            "offspring": {
                "bueno": {"family": "geometric", "p": 2 / 3},
                "malo": {"family": "geometric", "p": 1 / 9},
            },
        },
        "initial_state": "bueno",
        "initial_population": 1,
        "n_list": [256, 1024],
        "replicates": _SMALL_REPLICATES,
        "harmonic": {"y_grid": [0.5, 1.0, 2.0, 5.0, 10.0], "horizon": 1024},
        "u": {"y_list": [2.0, 4.0], "horizon": 500},
        "start_level": 2.0,
        "seed": 42,
    },
    "Un estado lineal fraccional (crítico)": {
        "schema_version": 1,
        "environment": {
            "states": ["unico"],
            "kernel": [[1.0]],
            "offspring": {"unico": {"family": "geometric", "p": 0.5}},
        },
        "initial_state": "unico",
        "initial_population": 1,
        "n_list": [64, 256],
        "replicates": _SMALL_REPLICATES,
        "seed": 42,
    },
}


# == Carga de configuraciones ==
@st.cache_data(show_spinner=False)
def get_example_config_text(name: str) -> str:
    """
    Texto JSON de una configuración de ejemplo.

    Parameters
    ----------
    name : str
        Clave de ``EXAMPLE_CONFIGS``.

    Returns
    -------
    str
        JSON con indentación, listo para ``parse_config``.
    """
    if name not in EXAMPLE_CONFIGS:
        raise KeyError(f"Configuración desconocida '{name}'. Opciones: {list(EXAMPLE_CONFIGS)}")
    return json.dumps(EXAMPLE_CONFIGS[name], indent=2)
