from .faults import FaultProxy
from .protocol import DEFAULT_PORT, ProtocolError
from .server import IngestServer
from .service import DEDUP_WINDOW, Ingestor, LogCorruptError, SeqTracker, replay, replay_into

__all__ = [
    "DEDUP_WINDOW",
    "DEFAULT_PORT",
    "FaultProxy",
    "IngestServer",
    "Ingestor",
    "LogCorruptError",
    "ProtocolError",
    "SeqTracker",
    "replay",
    "replay_into",
]
