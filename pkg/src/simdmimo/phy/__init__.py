from .channel import (
    BUILTIN_PROFILES,
    ChannelProfile,
    ChannelResponse,
    DopplerModel,
    add_awgn,
    awgn_array,
    derive_rng,
    load_channel_profile,
    noise_var_from_snr_db,
    realize_channel,
)
from .grid import SlotGrid
from .mcs import (
    McsEntry,
    McsTableError,
    NrNumerology,
    compute_tbs,
    default_mcs_table_path,
    load_mcs_table,
    lookup_mcs,
    peak_rate,
)
from .qam import constellation, demodulate_array, modulate_array, qam_demodulate_hard, qam_modulate

__all__ = [
    "BUILTIN_PROFILES",
    "ChannelProfile",
    "ChannelResponse",
    "DopplerModel",
    "McsEntry",
    "McsTableError",
    "NrNumerology",
    "SlotGrid",
    "add_awgn",
    "awgn_array",
    "compute_tbs",
    "constellation",
    "default_mcs_table_path",
    "demodulate_array",
    "derive_rng",
    "load_channel_profile",
    "load_mcs_table",
    "lookup_mcs",
    "modulate_array",
    "noise_var_from_snr_db",
    "peak_rate",
    "qam_demodulate_hard",
    "qam_modulate",
    "realize_channel",
]
