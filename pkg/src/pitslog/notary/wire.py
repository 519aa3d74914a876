"""JSON wire format of the notary API and the matching client.

Requests and responses are JSON objects.  Digests are lowercase hex,
timestamps, epochs and bitmaps are decimal integers.  A response is either
``{"ok": true, "result": ...}`` or ``{"ok": false, "error": <error class>,
"message": ...}``; the client re-raises the named error.

Operations: ``submit_batch``, ``start_epoch``, ``get_receipt``,
``get_update``, ``get_root``, ``audit``, ``get_inconsistencies``.
"""

from __future__ import annotations

import json
import logging
from typing import Protocol

from ..chain import Boundary, LogBatch
from ..errors import MalformedBatch, PitsError, TransportError, error_types
from ..params import TreeParams
from ..tree import Receipt, ReceiptUpdate
from .service import Ack, AuditReport, InconsistencyRecord, Notary

log = logging.getLogger(__name__)

OPS = (
    "submit_batch",
    "start_epoch",
    "get_receipt",
    "get_update",
    "get_root",
    "audit",
    "get_inconsistencies",
)


def _hex(b: bytes | None) -> str | None:
    return None if b is None else b.hex()


def _unhex(s: str | None) -> bytes | None:
    return None if s is None else bytes.fromhex(s)


def receipt_to_json(r: Receipt) -> dict:
    return {
        "epoch": r.epoch,
        "ts": r.ts,
        "log_digest": r.log_digest.hex(),
        "poi": [d.hex() for d in r.poi],
        "bitmap": r.bitmap,
        "co_leaf": [d.hex() for d in r.co_leaf],
        "co_position": r.co_position,
        "partial_depth": r.partial_depth,
    }


def receipt_from_json(d: dict) -> Receipt:
    return Receipt(
        epoch=int(d["epoch"]),
        ts=int(d["ts"]),
        log_digest=bytes.fromhex(d["log_digest"]),
        poi=tuple(bytes.fromhex(x) for x in d["poi"]),
        bitmap=int(d["bitmap"]),
        co_leaf=tuple(bytes.fromhex(x) for x in d.get("co_leaf", ())),
        co_position=int(d.get("co_position", 0)),
        partial_depth=int(d.get("partial_depth", 0)),
    )


def update_to_json(u: ReceiptUpdate) -> dict:
    return {"epoch": u.epoch, "level": [d.hex() for d in u.level]}


def update_from_json(d: dict) -> ReceiptUpdate:
    return ReceiptUpdate(int(d["epoch"]), tuple(bytes.fromhex(x) for x in d["level"]))


def batch_to_json(b: LogBatch) -> dict:
    out = {
        "device": b.device,
        "epoch": b.epoch,
        "seq": b.seq,
        "entries": [[ts, d.hex()] for ts, d in b.entries],
        "chain_value": b.chain_value.hex(),
    }
    if b.boundary is not None:
        out["boundary"] = {"h_ep": _hex(b.boundary.h_ep), "h0": b.boundary.h0.hex()}
    return out


def batch_from_json(d: dict) -> LogBatch:
    boundary = None
    if d.get("boundary") is not None:
        boundary = Boundary(_unhex(d["boundary"].get("h_ep")), bytes.fromhex(d["boundary"]["h0"]))
    return LogBatch(
        device=str(d["device"]),
        epoch=int(d["epoch"]),
        seq=int(d["seq"]),
        entries=tuple((int(ts), bytes.fromhex(h)) for ts, h in d["entries"]),
        chain_value=bytes.fromhex(d["chain_value"]),
        boundary=boundary,
    )


def ack_to_json(a: Ack) -> dict:
    return {
        "device": a.device,
        "epoch": a.epoch,
        "seq": a.seq,
        "chain_value": a.chain_value.hex(),
        "flagged": a.flagged,
        "status": a.status,
    }


def ack_from_json(d: dict) -> Ack:
    return Ack(d["device"], int(d["epoch"]), int(d["seq"]), bytes.fromhex(d["chain_value"]), bool(d["flagged"]), d["status"])


def inconsistency_to_json(r: InconsistencyRecord) -> dict:
    return {
        "device": r.device,
        "epoch": r.epoch,
        "seq": r.seq,
        "kind": r.kind,
        "entries": [[ts, d.hex()] for ts, d in r.entries],
        "chain_value": _hex(r.chain_value),
        "detected_at": r.detected_at,
        "detail": r.detail,
    }


def inconsistency_from_json(d: dict) -> InconsistencyRecord:
    return InconsistencyRecord(
        device=d["device"],
        epoch=int(d["epoch"]),
        seq=None if d.get("seq") is None else int(d["seq"]),
        kind=d["kind"],
        entries=tuple((int(ts), bytes.fromhex(h)) for ts, h in d.get("entries", ())),
        chain_value=_unhex(d.get("chain_value")),
        detected_at=int(d["detected_at"]),
        detail=d.get("detail", ""),
    )


def report_to_json(r: AuditReport) -> dict:
    return {
        "device": r.device,
        "epoch": r.epoch,
        "root_match": r.root_match,
        "mismatched_subepochs": list(r.mismatched_subepochs),
        "inconsistencies": [inconsistency_to_json(x) for x in r.inconsistencies],
        "params": r.params.to_dict(),
    }


def report_from_json(d: dict) -> AuditReport:
    return AuditReport(
        device=d["device"],
        epoch=int(d["epoch"]),
        root_match=bool(d["root_match"]),
        mismatched_subepochs=tuple(int(i) for i in d["mismatched_subepochs"]),
        inconsistencies=tuple(inconsistency_from_json(x) for x in d["inconsistencies"]),
        params=TreeParams.from_dict(d["params"]),
    )


class NotaryAPI:
    """Transport-independent request dispatcher in front of a :class:`Notary`."""

    def __init__(self, notary: Notary):
        self.notary = notary

    def handle(self, op: str, request: dict) -> dict:
        if op not in OPS:
            return {"ok": False, "error": "UnknownOperation", "message": f"no operation {op!r}"}
        try:
            result = getattr(self, "_" + op)(request)
        except PitsError as exc:
            return {"ok": False, "error": type(exc).__name__, "message": str(exc)}
        except (KeyError, ValueError, TypeError) as exc:
            return {"ok": False, "error": MalformedBatch.__name__, "message": f"bad request: {exc!r}"}
        return {"ok": True, "result": result}

    def handle_bytes(self, op: str, body: bytes) -> bytes:
        try:
            request = json.loads(body or b"{}")
        except json.JSONDecodeError as exc:
            return json.dumps({"ok": False, "error": MalformedBatch.__name__, "message": str(exc)}).encode()
        return json.dumps(self.handle(op, request)).encode()

    def _submit_batch(self, req):
        return ack_to_json(self.notary.submit_batch(batch_from_json(req)))

    def _start_epoch(self, req):
        self.notary.start_epoch(req["device"], int(req["epoch"]), _unhex(req.get("h_ep")), bytes.fromhex(req["h0"]))
        return {}

    def _get_receipt(self, req):
        r = self.notary.get_receipt(req["device"], int(req["epoch"]), bytes.fromhex(req["log_digest"]), int(req["ts"]))
        return receipt_to_json(r)

    def _get_update(self, req):
        return update_to_json(self.notary.get_update(req["device"], int(req["epoch"])))

    def _get_root(self, req):
        device, epoch = req["device"], int(req["epoch"])
        return {
            "epoch": epoch,
            "root": self.notary.get_root(device, epoch).hex(),
            "params": self.notary.params_for(device).to_dict(),
        }

    def _audit(self, req):
        level = [bytes.fromhex(x) for x in req["level"]]
        return report_to_json(self.notary.audit(req["device"], int(req["epoch"]), level))

    def _get_inconsistencies(self, req):
        epoch = req.get("epoch")
        recs = self.notary.get_inconsistencies(req["device"], None if epoch is None else int(epoch))
        return [inconsistency_to_json(r) for r in recs]


class Transport(Protocol):
    def call(self, op: str, body: bytes) -> bytes: ...


class LocalTransport:
    """In-process transport; still goes through the JSON encoding."""

    def __init__(self, api: NotaryAPI):
        self.api = api

    def call(self, op: str, body: bytes) -> bytes:
        return self.api.handle_bytes(op, body)


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 10.0):
        if "://" not in base_url:
            base_url = "http://" + base_url
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def call(self, op: str, body: bytes) -> bytes:
        import urllib.error
        import urllib.request

        req = urllib.request.Request(
            f"{self.base_url}/{op}", data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            return exc.read()
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"notary unreachable at {self.base_url}: {exc}") from exc


class NotaryClient:
    def __init__(self, transport: Transport):
        self.transport = transport
        self._errors = error_types()

    def _call(self, op: str, request: dict):
        raw = self.transport.call(op, json.dumps(request).encode())
        try:
            response = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TransportError(f"garbled response to {op}") from exc
        if response.get("ok"):
            return response["result"]
        cls = self._errors.get(response.get("error"), PitsError)
        raise cls(response.get("message", ""))

    def submit_batch(self, batch: LogBatch) -> Ack:
        return ack_from_json(self._call("submit_batch", batch_to_json(batch)))

    def start_epoch(self, device: str, epoch: int, h_ep: bytes | None, h0: bytes) -> None:
        self._call("start_epoch", {"device": device, "epoch": epoch, "h_ep": _hex(h_ep), "h0": h0.hex()})

    def get_receipt(self, device: str, epoch: int, log_digest: bytes, ts: int) -> Receipt:
        req = {"device": device, "epoch": epoch, "log_digest": log_digest.hex(), "ts": ts}
        return receipt_from_json(self._call("get_receipt", req))

    def get_update(self, device: str, epoch: int) -> ReceiptUpdate:
        return update_from_json(self._call("get_update", {"device": device, "epoch": epoch}))

    def get_root(self, device: str, epoch: int) -> bytes:
        return bytes.fromhex(self._call("get_root", {"device": device, "epoch": epoch})["root"])

    def get_root_and_params(self, device: str, epoch: int) -> tuple[bytes, TreeParams]:
        res = self._call("get_root", {"device": device, "epoch": epoch})
        return bytes.fromhex(res["root"]), TreeParams.from_dict(res["params"])

    def audit(self, device: str, epoch: int, level) -> AuditReport:
        req = {"device": device, "epoch": epoch, "level": [d.hex() for d in level]}
        return report_from_json(self._call("audit", req))

    def get_inconsistencies(self, device: str, epoch: int | None = None) -> list[InconsistencyRecord]:
        res = self._call("get_inconsistencies", {"device": device, "epoch": epoch})
        return [inconsistency_from_json(x) for x in res]


def local_client(notary: Notary) -> NotaryClient:
    return NotaryClient(LocalTransport(NotaryAPI(notary)))
