import streamlit as st

# === Color Palette ===
PRIMARY_BLUE = "#0056D6"  # Titles, selected tab, primary buttons
SECONDARY_BLUE = "#0078FF"  # Header band
LIGHT_BLUE = "#E8F0FE"  # Metric cards, hover
PASS_GREEN = "#1B8A3A"  # Passed criteria
FAIL_RED = "#C62828"  # Failed criteria
LIGHT_GRAY = "#F7F9FB"  # App background
DARK_GRAY = "#333333"  # Text color
MID_GRAY = "#7A7A7A"  # Captions
WHITE = "#FFFFFF"


# -------------------------------------------------------------------------
def style_layout():
    """Background, font and a wider block container for tables."""
    st.markdown(
        f"""
        <style>
        body {{
            background-color: {LIGHT_GRAY};
            color: {DARK_GRAY};
            font-family: 'Segoe UI', Roboto, sans-serif;
        }}
        .block-container {{
            max-width: 1200px;
            padding-top: 2rem;
            padding-bottom: 2rem;
        }}
        </style>
        """,
        unsafe_allow_html=True,
    )


# -------------------------------------------------------------------------
def style_header_footer():
    """Hide Streamlit menu and footer."""
    st.markdown(
        """
        <style>
        #MainMenu {visibility: hidden;}
        footer {visibility: hidden;}
        </style>
        """,
        unsafe_allow_html=True,
    )


# -------------------------------------------------------------------------
def style_buttons():
    st.markdown(
        f"""
        <style>
        div.stButton > button:first-child {{
            background-color: {PRIMARY_BLUE};
            color: {WHITE};
            border: none;
            border-radius: 8px;
            font-weight: 600;
            transition: all 0.2s ease-in-out;
        }}
        div.stButton > button:first-child:hover {{
            background-color: {SECONDARY_BLUE};
            color: {WHITE};
        }}
        </style>
        """,
        unsafe_allow_html=True,
    )


# -------------------------------------------------------------------------
def style_metrics():
    """Metric tiles as soft cards."""
    st.markdown(
        f"""
        <style>
        div[data-testid="stMetric"] {{
            background-color: {LIGHT_BLUE};
            border-radius: 10px;
            padding: 10px 14px;
        }}
        div[data-testid="stMetricLabel"] {{
            color: {MID_GRAY};
        }}
        h1, h2, h3 {{
            color: {PRIMARY_BLUE};
        }}
        </style>
        """,
        unsafe_allow_html=True,
    )


# -------------------------------------------------------------------------
def verdict_badge(passed: bool) -> str:
    """HTML badge for a pass/fail verdict."""
    color, text = (PASS_GREEN, "APROBADO") if passed else (FAIL_RED, "FALLIDO")
    return (
        f"<span style='background-color:{color};color:{WHITE};padding:2px 10px;"
        f"border-radius:10px;font-weight:600;'>{text}</span>"
    )


# -------------------------------------------------------------------------
def general_style_orch():
    """Apply the full visual theme."""
    style_layout()
    style_header_footer()
    style_buttons()
    style_metrics()
