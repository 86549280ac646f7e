import numpy as np
import pandas as pd
import streamlit as st
from streamlit_option_menu import option_menu

from utils.errors import BPMEError, ParseError, ValidationError
from utils.input_data.config_utils import ExperimentConfig, config_hash, parse_config, with_overrides
from utils.ui_data import EXAMPLE_CONFIGS, get_example_config_text
from utils.ui_style import *

PAGE_TITLE = "BPME"
PAGE_ICON = "🌿"

MAIN_TABS = ["Modelo", "Espectro", "Simulación"]
MAIN_ICONS = ["diagram-3", "graph-up", "shuffle"]


def menu() -> None:
    """
    Configure and display the sidebar menu for the Streamlit application.

    Returns
    -------
    None
    """
    if "set_page_config" not in st.session_state:
        st.session_state.set_page_config = st.set_page_config(
            page_title=PAGE_TITLE,
            page_icon=PAGE_ICON,
            layout="wide",
            initial_sidebar_state="expanded",
            menu_items={
                "About": "Procesos de ramificación en ambiente markoviano",
            },
        )
    st.sidebar.markdown(f"## {PAGE_ICON} {PAGE_TITLE}")
    st.sidebar.markdown("---")
    st.sidebar.page_link("app.py", label="Modelo y simulación")
    st.sidebar.page_link("pages/2_verificacion.py", label="Verificación de teoremas")

    hide_menu_style = """
    <style>
    [data-testid="stSidebarNav"] {display: none;}
    </style>
    """
    st.markdown(hide_menu_style, unsafe_allow_html=True)
    st.sidebar.markdown("---")


def fixed_header(config_name: str, classification: str, key: str):
    """Header band with the active configuration."""
    st.markdown(
        f"""
        <style>
        .header {{
            background-color: {SECONDARY_BLUE};
            color: white;
            padding: 10px 20px;
            border-radius: 10px;
            display: flex;
            justify-content: space-between;
            align-items: center;
        }}
        .info {{
            font-size: 14px;
        }}
        .title {{
            font-size: 22px;
            font-weight: bold;
        }}
        </style>

        <div class="header">
            <div class="title">{PAGE_ICON} Ramificación en ambiente markoviano</div>
            <div class="info">
                Configuración: <b>{config_name}</b> &nbsp;|&nbsp;
                Régimen: <b>{classification}</b> &nbsp;|&nbsp;
                Hash: <b>{key}</b>
            </div>
        </div>
        """,
        unsafe_allow_html=True,
    )


def options_navigation_horizontal(
    current_tab: str,
    options=MAIN_TABS,
    icons=MAIN_ICONS,
    PRIMARY_BLUE: str = PRIMARY_BLUE,
    LIGHT_BLUE: str = LIGHT_BLUE,
    DARK_GRAY: str = DARK_GRAY,
    WHITE: str = WHITE,
) -> str:
    """
    Horizontal navigation bar built with `streamlit-option-menu`.

    Parameters
    ----------
    current_tab : str
        Currently active tab (kept across reruns).
    options, icons : list of str, optional
        Tab names and Bootstrap icon names.

    Returns
    -------
    str
        The selected option.
    """
    return option_menu(
        menu_title=None,
        options=list(options),
        icons=list(icons),
        orientation="horizontal",
        default_index=list(options).index(current_tab) if current_tab in options else 0,
        styles={
            "container": {
                "padding": "0!important",
                "background-color": WHITE,
                "border-bottom": f"2px solid {PRIMARY_BLUE}",
            },
            "icon": {"color": PRIMARY_BLUE, "font-size": "18px"},
            "nav-link": {
                "font-size": "16px",
                "font-weight": "500",
                "text-align": "center",
                "margin": "0px",
                "color": DARK_GRAY,
                "--hover-color": LIGHT_BLUE,
                "border-radius": "4px",
            },
            "nav-link-selected": {
                "background-color": LIGHT_BLUE,
                "color": DARK_GRAY,
                "border-radius": "4px",
            },
        },
    )


def config_selector() -> ExperimentConfig:
    """
    Sidebar block to choose a bundled configuration or paste a JSON one.

    Stops the page with an error message when the config does not validate.
    """
    st.sidebar.markdown("### Configuración")
    source = st.sidebar.radio("Origen", ["Ejemplo", "JSON propio"], key="config_source", horizontal=True)

    if source == "Ejemplo":
        name = st.sidebar.selectbox("Ejemplo", list(EXAMPLE_CONFIGS), key="config_example")
        text = get_example_config_text(name)
    else:
        name = "JSON propio"
        text = st.sidebar.text_area(
            "Configuración (JSON)",
            value=st.session_state.get("config_text") or get_example_config_text(list(EXAMPLE_CONFIGS)[0]),
            height=320,
        )
        st.session_state.config_text = text

    try:
        config = parse_config(text)
        seed = st.sidebar.number_input("Semilla", min_value=0, value=config.seed, step=1)
        if int(seed) != config.seed:
            config = with_overrides(config, seed=int(seed))
    except ParseError as err:
        st.error(f"❌ JSON inválido (línea {err.context.get('line')}, columna {err.context.get('column')}): {err.message}")
        st.stop()
    except ValidationError as err:
        st.error(f"❌ Configuración inválida en `{err.context.get('field')}`: {err.message}")
        st.stop()

    st.session_state.config_name = name
    st.sidebar.caption(f"Hash: `{config_hash(config)}`")
    return config


def guarded(label: str, func, *args, **kwargs):
    """Run a computation under a spinner; on failure show the error and stop."""
    with st.spinner(f"🔄 {label}"):
        try:
            return func(*args, **kwargs)
        except BPMEError as err:
            st.error(f"❌ {type(err).__name__}: {err.message}")
            st.exception(err)
            st.stop()
        except (ValueError, RuntimeError, ArithmeticError) as err:
            st.error(f"❌ {type(err).__name__}: {err}")
            st.exception(err)
            st.stop()


def environment_tables(config: ExperimentConfig):
    """Kernel and offspring laws of the active configuration."""
    env = config.environment
    col1, col2 = st.columns(2)
    with col1:
        st.markdown("**Núcleo de transición P**")
        st.dataframe(pd.DataFrame(env.kernel.rows, index=env.states, columns=env.states), use_container_width=True)
    with col2:
        st.markdown("**Leyes de reproducción**")
        st.dataframe(
            pd.DataFrame(
                {
                    "estado": list(env.states),
                    "ley": [law.describe() for law in env.laws],
                    "media": np.exp(env.rho_vec),
                    "rho": env.rho_vec,
                }
            ),
            use_container_width=True,
            hide_index=True,
        )


def display_verdict(passed: bool, label: str):
    st.markdown(f"{label} &nbsp; {verdict_badge(passed)}", unsafe_allow_html=True)
