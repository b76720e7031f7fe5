"""Data-plane performance monitoring and measurement-driven egress traffic shifting."""
from .core import ACK, FIN, RST, SYN, FiveTuple, PacketRecord, TraceError, UsageError

__version__ = "0.1.0"

__all__ = ["ACK", "FIN", "RST", "SYN", "FiveTuple", "PacketRecord", "TraceError", "UsageError", "__version__"]
