"""Master/worker runtime: wire codec, worker, transports and master session."""

from .master import (
    MasterSession,
    RoundRecord,
    Transcript,
    in_process_session,
    master_aggregate,
    run_one_step_protocol,
    tcp_session,
)
from .transport import InProcessTransport, TcpTransport, WorkerServer
from .wire import decode_frame, encode_frame
from .worker import Worker

__all__ = [
    "InProcessTransport", "MasterSession", "RoundRecord", "TcpTransport", "Transcript",
    "Worker", "WorkerServer", "decode_frame", "encode_frame", "in_process_session",
    "master_aggregate", "run_one_step_protocol", "tcp_session",
]
