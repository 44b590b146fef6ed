"""MetaDrive bridge: parameter-map config emission and optional live runs."""

from .config import (
    BLOCK_OF_ROAD,
    BridgeError,
    CONFIG_FORMAT,
    FORWARD_MARKERS,
    REVERSE_MARKERS,
    emit_config,
    load_config,
    marker_family,
    write_config,
)
from .runner import STATUS_SKIPPED, run_live, simulator_available

__version__ = "0.1.0"
