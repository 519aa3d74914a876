"""Tamper-evident device logging with a time-sparse hash tree notary."""

from .agent import LogEntry, LogStore, NodeAgent, ReceiptStore, log_digest
from .auditor import AuditResult, audit_device
from .chain import Boundary, ChainState, LogBatch, chain_extend, close_epoch_check, verify_batch_chain
from .notary import Notary, NotaryClient, Stage, local_client
from .params import HARNESS_DEFAULT, RUNNING_EXAMPLE, TreeParams
from .parity import ParityRecord, ParitySecret, compare_parity, extract_parity, finalize_tree, gen_secret
from .tree import (
    PitsTree,
    Receipt,
    ReceiptUpdate,
    build_empty_hash_table,
    finalize_receipt,
    verify_receipt,
    verify_update,
)

__version__ = "0.1.0"

__all__ = [
    "AuditResult",
    "Boundary",
    "ChainState",
    "HARNESS_DEFAULT",
    "LogBatch",
    "LogEntry",
    "LogStore",
    "NodeAgent",
    "Notary",
    "NotaryClient",
    "ParityRecord",
    "ParitySecret",
    "PitsTree",
    "RUNNING_EXAMPLE",
    "Receipt",
    "ReceiptStore",
    "ReceiptUpdate",
    "Stage",
    "TreeParams",
    "audit_device",
    "build_empty_hash_table",
    "chain_extend",
    "close_epoch_check",
    "compare_parity",
    "extract_parity",
    "finalize_receipt",
    "finalize_tree",
    "gen_secret",
    "local_client",
    "log_digest",
    "verify_batch_chain",
    "verify_receipt",
    "verify_update",
]
