from .records import Stage
from .service import (
    CHAIN_MISMATCH,
    LATE_SUBMISSION,
    TRUNCATION,
    Ack,
    AuditReport,
    FinalizeSummary,
    InconsistencyRecord,
    Notary,
    parse_retention,
)
from .wire import HttpTransport, LocalTransport, NotaryAPI, NotaryClient, local_client

__all__ = [
    "Ack",
    "AuditReport",
    "CHAIN_MISMATCH",
    "FinalizeSummary",
    "HttpTransport",
    "InconsistencyRecord",
    "LATE_SUBMISSION",
    "LocalTransport",
    "Notary",
    "NotaryAPI",
    "NotaryClient",
    "Stage",
    "TRUNCATION",
    "local_client",
    "parse_retention",
]
