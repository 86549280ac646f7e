"""
Utilidades de depuración para los reportes de verificación.

Muestran en un expander la información técnica detrás de un
``ExperimentReport``: semillas, criterios y la tabla completa.
"""

import streamlit as st

from utils.analysis_utils.theorems import ExperimentReport


def show_report_debug_info(report: ExperimentReport, config_hash: str, expanded: bool = False):
    """
    Panel con los datos técnicos de un reporte.

    Parameters
    ----------
    report : ExperimentReport
        Reporte generado por el módulo de teoremas.
    config_hash : str
        Hash de la configuración usada.
    expanded : bool, optional
        Si el expander aparece abierto (default: False).
    """
    with st.expander("🔍 DEBUG: Información técnica del reporte", expanded=expanded):
        # Sección 1: Origen
        st.markdown("### 1️⃣ Origen")
        col1, col2 = st.columns(2)
        with col1:
            st.write("**Teorema:**", report.theorem)
            st.write("**Horizontes:**", report.n_list)
        with col2:
            st.write("**Semillas:**", report.seeds)
            st.write("**Hash de configuración:**", config_hash)
            st.write("**Tiempo de ejecución:**", f"{report.runtime:.1f} s")

        # Sección 2: Criterios
        st.markdown("---")
        st.markdown("### 2️⃣ Criterios")
        st.dataframe(report.criteria_frame(), use_container_width=True)

        # Sección 3: Tabla completa
        st.markdown("---")
        st.markdown("### 3️⃣ Tabla del reporte")
        st.write(f"**Total de filas:** {len(report.table)}")
        st.write("**Métricas:**", sorted(report.table["metric"].unique()))
        st.dataframe(report.table, use_container_width=True)

        failed = [c.name for c in report.criteria if not c.passed]
        if failed:
            st.warning(f"Criterios fallidos: {', '.join(failed)}")
