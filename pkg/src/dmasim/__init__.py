"""Cycle-approximate simulator and cost models for a modular DMA engine.

The package models an engine split into a control-plane front-end, a chain
of transfer-transforming mid-ends, and a multi-protocol back-end that
moves bytes between parametric memory endpoints.  An analytical area,
timing and latency toolkit accompanies the simulator.
"""

__version__ = "0.1.0"

from .core import (
    BackendOptions,
    Dim,
    EngineConfig,
    ErrorAction,
    LegalBurst,
    NdTransferDescriptor,
    PortConfig,
    PortDir,
    TransferDescriptor1D,
    validate_config,
)
from .protocol import ProtocolId, capabilities, max_legal_burst

__all__ = [
    "BackendOptions",
    "Dim",
    "EngineConfig",
    "ErrorAction",
    "LegalBurst",
    "NdTransferDescriptor",
    "PortConfig",
    "PortDir",
    "ProtocolId",
    "TransferDescriptor1D",
    "capabilities",
    "max_legal_burst",
    "validate_config",
    "__version__",
]
