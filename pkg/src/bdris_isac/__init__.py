"""Outage analysis and parameter search for BD-RIS assisted ISAC networks."""

__version__ = "0.1.0"

from .config import Geometry, SystemConfig, derive_gains, load_config, section5_config, section5_geometry
from .channels import ChannelSet, effective_channels, sample_channels
from .beamforming import design_radar, design_zf, optimal_configuration
from .statistics import (ParameterMapping, calibrate_hop_gain_db, comm_sinr_cdf, outage_probabilities,
                         radar_snr_cdf)
from .montecarlo import simulate_metrics, validate
from .snis import SamplerSettings, SnisProblem, snis_solve

__all__ = [
    "Geometry", "SystemConfig", "derive_gains", "load_config", "section5_config", "section5_geometry",
    "ChannelSet", "effective_channels", "sample_channels",
    "design_radar", "design_zf", "optimal_configuration",
    "ParameterMapping", "calibrate_hop_gain_db", "comm_sinr_cdf", "outage_probabilities", "radar_snr_cdf",
    "simulate_metrics", "validate",
    "SamplerSettings", "SnisProblem", "snis_solve",
]
