"""
Página de verificación: corre a escala reducida los chequeos de los
teoremas límite y las identidades exactas sobre la configuración activa.

Flujo:
1. Selección de configuración (barra lateral)
2. Selección del chequeo (menú horizontal)
3. Ejecución bajo demanda y tabla de criterios con veredicto
"""

import time

import pandas as pd
import streamlit as st

from utils.analysis_utils import spectral, theorems
from utils.cli_utils import identity_checks
from utils.debug_utils import show_report_debug_info
from utils.general_utils import configure_logging
from utils.input_data.config_utils import config_hash
from utils.ui_blocks import (
    config_selector,
    display_verdict,
    fixed_header,
    guarded,
    menu,
    options_navigation_horizontal,
)
from utils.ui_style import general_style_orch

configure_logging()

CHECK_TABS = ["Supervivencia", "Ley normalizada", "TCL condicional", "Yaglom", "Caminata", "Identidades"]
CHECK_ICONS = ["heart-pulse", "bar-chart", "bell", "hourglass-split", "signpost-split", "check2-all"]

# Umbral de sobrevivientes reducido para que la página responda en segundos
UI_MIN_SURVIVORS = 200


# -------------------------------------------------------------------------
## Inicialización de estilos y componentes

menu()
general_style_orch()
config = config_selector()
env = config.environment
key = config_hash(config)

summary = guarded("Análisis espectral", spectral.analyze, env, config.t_grid)
fixed_header(st.session_state.config_name, summary.classification, key)

if "current_tab_verificacion" not in st.session_state:
    st.session_state.current_tab_verificacion = CHECK_TABS[0]
if "verification_reports" not in st.session_state:
    st.session_state.verification_reports = {}

st.markdown("# ✅ Verificación")
st.markdown("___")

if summary.classification != "critical":
    st.warning(
        f"⚠️ El ambiente es **{summary.classification}**: los chequeos de supervivencia "
        "solo aplican al régimen crítico y fallarán con un error explícito."
    )

selected = options_navigation_horizontal(
    st.session_state.current_tab_verificacion, options=CHECK_TABS, icons=CHECK_ICONS
)
st.session_state.current_tab_verificacion = selected


# -------------------------------------------------------------------------
## Parámetros de ejecución

i, z, j = config.initial_state, config.initial_population, config.target_state
common = dict(block_size=config.block_size)

cols = st.columns([2, 2, 3])
with cols[0]:
    horizon = st.number_input("Horizonte n", min_value=4, value=int(min(config.n_list)), step=4)
with cols[1]:
    default_replicates = config.replicates["walk" if selected == "Caminata" else "theorem"]
    replicates = st.number_input("Réplicas", min_value=1000, value=int(default_replicates), step=1000)
with cols[2]:
    st.caption(f"Semilla {config.seed} · estado inicial `{i}` · Z₀ = {z} · estado objetivo `{j or 'marginal'}`")

run_key = (selected, key, int(horizon), int(replicates))


def _run_check(tab: str):
    n_list = [int(horizon)]
    count = int(replicates)
    if tab == "Supervivencia":
        return theorems.survival_curve(env, i, z, j, n_list, count, config.seed, **common)
    if tab == "Ley normalizada":
        return theorems.normalized_population_law(
            env, i, z, j, n_list, count, config.seed, min_survivors=UI_MIN_SURVIVORS, **common
        )
    if tab == "TCL condicional":
        return theorems.conditional_clt(
            env, i, z, j, n_list, count, config.seed, min_survivors=UI_MIN_SURVIVORS, **common
        )
    if tab == "Yaglom":
        return theorems.yaglom_law(env, i, z, j, n_list, count, config.seed, min_survivors=UI_MIN_SURVIVORS, **common)
    if tab == "Caminata":
        return theorems.conditioned_clt_walk(
            env, i, config.start_level, j, n_list, count, config.seed, min_survivors=UI_MIN_SURVIVORS, **common
        )
    raise ValueError(f"Chequeo desconocido '{tab}'")


if selected == "Identidades":
    # --------------------------
    ## Identidades exactas (sin Monte Carlo)

    st.markdown("### Identidades exactas")
    st.markdown(
        "Descomposición de Agresti en ambientes aleatorios, dualidad del núcleo, "
        "k(0) = 1, k'(0) = ν(ρ) y la recursión de un paso de la función armónica."
    )
    if st.button("Verificar identidades", key="run_identities"):
        t0 = time.perf_counter()
        rows = guarded("Verificando identidades", identity_checks, config)
        st.session_state.verification_reports[("Identidades", key)] = (pd.DataFrame(rows), time.perf_counter() - t0)

    stored = st.session_state.verification_reports.get(("Identidades", key))
    if stored is not None:
        frame, elapsed = stored
        display_verdict(bool(frame["passed"].all()), "**Resultado global**")
        st.dataframe(frame, use_container_width=True, hide_index=True)
        st.caption(f"Tiempo: {elapsed:.1f} s")
    else:
        st.info("ℹ️ Presiona el botón para correr las identidades.")

else:
    # --------------------------
    ## Chequeos Monte Carlo

    st.markdown(f"### {selected}")
    if st.button("Ejecutar chequeo", key=f"run_{selected}"):
        report = guarded(f"Ejecutando '{selected}'", _run_check, selected)
        report.config_hash = key
        st.session_state.verification_reports[run_key] = report

    report = st.session_state.verification_reports.get(run_key)
    if report is None:
        st.info("ℹ️ Ajusta los parámetros y presiona **Ejecutar chequeo**.")
        st.stop()

    display_verdict(report.passed, f"**Teorema {report.theorem}**")
    for criterion in report.criteria:
        display_verdict(
            criterion.passed,
            f"`{criterion.name}`: {criterion.value:.4g} (umbral {criterion.threshold:.4g})",
        )

    st.markdown("---")
    st.markdown("**Tabla de resultados**")
    st.dataframe(report.table, use_container_width=True, hide_index=True)

    if selected == "Supervivencia" and summary.classification == "critical":
        st.caption(
            "√n·P(Z_n>0) debe estabilizarse; la constante límite se estima con "
            "`python cli.py survival --config ...`."
        )
    if selected == "Caminata" and config.start_level <= 0:
        st.warning("⚠️ El nivel inicial debe ser positivo para la caminata condicionada.")

    show_report_debug_info(report, key)
