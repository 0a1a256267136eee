"""Reverse channel training, power control and outage simulation for TDD-SIMO links."""

__version__ = "0.1.0"

from .channel import ChannelRealization, RngStream, chi_square_cdf, chi_square_tail_bound, sample_channel
from .config import Scheme, SystemConfig, load_config, parse_config
from .power_control import PowerPolicy, calibrate, data_power, phi

__all__ = [
    "ChannelRealization",
    "PowerPolicy",
    "RngStream",
    "Scheme",
    "SystemConfig",
    "calibrate",
    "chi_square_cdf",
    "chi_square_tail_bound",
    "data_power",
    "load_config",
    "parse_config",
    "phi",
    "sample_channel",
]
