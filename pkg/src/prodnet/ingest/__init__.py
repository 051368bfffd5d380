"""Data ingestion: supply/use tables to snapshots, panels, and covariances."""

from .tables import (SupplyUseTables, TFPPanel, read_fixture_tables,
                     read_tfp_panel)
from .shares import (compute_expenditure_shares, compute_import_ratios,
                     classify_tradeable, gross_output, make_economy,
                     make_snapshot, phi_panel)
from .panel import (FilterReport, PanelObservation, TFPCovariance,
                    build_consumption_panel, build_panel, export_panel_csv,
                    tfp_covariance)
from .bea import BEARequest, fetch_bea_tables

__all__ = [
    "SupplyUseTables", "TFPPanel", "read_fixture_tables", "read_tfp_panel",
    "compute_expenditure_shares", "compute_import_ratios",
    "classify_tradeable", "gross_output", "make_economy", "make_snapshot",
    "phi_panel",
    "FilterReport", "PanelObservation", "TFPCovariance",
    "build_consumption_panel", "build_panel", "export_panel_csv",
    "tfp_covariance", "BEARequest", "fetch_bea_tables",
]
