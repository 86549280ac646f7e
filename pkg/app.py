import numpy as np
import pandas as pd
import streamlit as st

from utils.analysis_utils.spectral import analyze, k_curve
from utils.general_utils import configure_logging, make_streams
from utils.input_data.config_utils import config_hash, dump_config, parse_config
from utils.model_utils.environment import mixing_decay
from utils.model_utils.simulate import simulate, simulate_batch
from utils.ui_blocks import (
    config_selector,
    environment_tables,
    fixed_header,
    guarded,
    menu,
    options_navigation_horizontal,
)
from utils.ui_style import general_style_orch

configure_logging()


# -------------------------------------------------------------------------
## Cálculos cacheados (la llave es el JSON normalizado de la configuración)


@st.cache_data(show_spinner=False)
def cached_spectral(config_json: str) -> dict:
    config = parse_config(config_json)
    env = config.environment
    report = analyze(env, config.t_grid)
    deltas = mixing_decay(env.kernel, env.nu, 30)
    return {
        "summary": report.to_dict(),
        "states": report.to_frame(),
        "k_curve": k_curve(env, np.linspace(-2.0, 2.0, 41)),
        "nonlattice": report.nonlattice.to_frame(),
        "mixing": pd.DataFrame({"n": np.arange(1, deltas.size + 1), "delta": deltas}),
    }


@st.cache_data(show_spinner=False)
def cached_survival(config_json: str, replicates: int) -> pd.DataFrame:
    config = parse_config(config_json)
    checkpoints = np.unique(np.geomspace(1, max(config.n_list), 25).astype(int)).tolist()
    snaps = simulate_batch(
        config.environment, config.initial_state, config.initial_population, checkpoints,
        replicates, config.seed, block_size=config.block_size,
    )
    rows = []
    for n, snap in snaps.items():
        p = snap.count / replicates
        rows.append({"n": n, "P(Z_n>0)": p, "sqrt(n) P(Z_n>0)": np.sqrt(n) * p})
    return pd.DataFrame(rows)


# -------------------------------------------------------------------------
## Inicialización de variables de estado

if "current_tab_modelo" not in st.session_state:
    st.session_state.current_tab_modelo = "Modelo"

for key in ["config_name", "config_text"]:
    if key not in st.session_state:
        st.session_state[key] = None


# -------------------------------------------------------------------------
## Inicialización de estilos y componentes

menu()
general_style_orch()
config = config_selector()
config_json = dump_config(config)
key = config_hash(config)

spectral = guarded("Análisis espectral", cached_spectral, config_json)
fixed_header(st.session_state.config_name, spectral["summary"]["classification"], key)


# -------------------------------------------------------------------------
## Navegación de pestañas horizontal

st.markdown(" ___ ")
selected = options_navigation_horizontal(st.session_state.current_tab_modelo)
st.session_state.current_tab_modelo = selected


if selected == "Modelo":
    # --------------------------
    ## Ambiente y leyes de reproducción

    st.markdown("### Ambiente markoviano")
    st.markdown(
        "El ambiente cambia primero y la generación se reproduce con la ley del **nuevo** estado. "
        "La caminata asociada es $S_n = \\sum_k \\rho(X_k)$ con $\\rho(i) = \\ln f_i'(1)$."
    )
    environment_tables(config)

    st.markdown("---")
    st.markdown("**Configuración normalizada**")
    st.code(config_json, language="json")

elif selected == "Espectro":
    # --------------------------
    ## Clasificación, varianza y condición no reticular

    summary = spectral["summary"]
    st.markdown("### Análisis espectral")
    cols = st.columns(4)
    cols[0].metric("Régimen", summary["classification"])
    cols[1].metric("k'(0) = ν(ρ)", f"{summary['k_prime0']:.3e}")
    cols[2].metric("σ²", f"{summary['sigma2']:.6g}")
    cols[3].metric("No reticular", "sí" if summary["nonlattice"] else "no")

    col1, col2 = st.columns(2)
    with col1:
        st.markdown("**ln k(λ)**")
        st.line_chart(spectral["k_curve"], x="lambda", y="log_k")
    with col2:
        st.markdown("**Radio espectral de P·e^{itρ}**")
        st.line_chart(spectral["nonlattice"], x="t", y="radius")

    st.markdown("**Distribución estacionaria y ρ**")
    st.dataframe(spectral["states"], use_container_width=True, hide_index=True)
    st.markdown("**Mezcla: max |Pⁿ(i,j) − ν(j)|**")
    st.line_chart(spectral["mixing"], x="n", y="delta")

elif selected == "Simulación":
    # --------------------------
    ## Trayectorias y curva de supervivencia

    st.markdown("### Simulación")
    cols = st.columns([2, 2, 2])
    with cols[0]:
        horizon = st.number_input("Horizonte n", min_value=1, value=int(max(config.n_list)), step=1)
    with cols[1]:
        replica = st.number_input("Réplica", min_value=0, value=0, step=1)
    with cols[2]:
        replicates = st.number_input("Réplicas (supervivencia)", min_value=100, value=20_000, step=1000)

    traj = guarded(
        "Simulando trayectoria",
        simulate,
        config.environment,
        config.initial_state,
        config.initial_population,
        int(horizon),
        make_streams(config.seed, "simulate", int(replica)),
    )
    frame = traj.to_frame(config.environment.states)
    frame["log_z"] = np.log(frame["z"].where(frame["z"] > 0))
    if traj.censored_at is not None:
        st.warning(f"⚠️ Población censurada en el paso {traj.censored_at}")

    col1, col2 = st.columns(2)
    with col1:
        st.markdown("**Caminata S_n y log Z_n**")
        st.line_chart(frame, x="step", y=["s", "log_z"])
    with col2:
        st.markdown("**Estados visitados**")
        st.bar_chart(frame["x"].value_counts())

    st.markdown("---")
    st.markdown("### Curva de supervivencia")
    curve = guarded("Simulando réplicas", cached_survival, config_json, int(replicates))
    st.line_chart(curve, x="n", y="sqrt(n) P(Z_n>0)")
    st.dataframe(curve, use_container_width=True, hide_index=True)
    st.success(f"✓ {int(replicates)} réplicas simuladas con semilla {config.seed}")
