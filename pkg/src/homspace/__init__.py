"""Constructive harmonic analysis on finite quasimetric measure spaces."""
__version__ = "0.1.0"

from .space_core import QuasimetricMeasureSpace, compute_A0, compute_A1
from .metrization import chain_metric, power_quasimetric
from .dyadic import DyadicSystem, build_adjacent_systems, build_system, verify_system
from .weights import ap_constant, bmo_norm, log_bmo_pipeline, rh_constant
from .czd import basic_cover, cz_global, cz_local, cz_weighted, vitali_cover
from .quasisym import Eta, PointBijection, eta_profile, reimann_pipeline

__all__ = [
    "QuasimetricMeasureSpace", "compute_A0", "compute_A1", "chain_metric", "power_quasimetric",
    "DyadicSystem", "build_system", "build_adjacent_systems", "verify_system",
    "ap_constant", "rh_constant", "bmo_norm", "log_bmo_pipeline",
    "cz_local", "cz_global", "cz_weighted", "basic_cover", "vitali_cover",
    "Eta", "PointBijection", "eta_profile", "reimann_pipeline",
]
