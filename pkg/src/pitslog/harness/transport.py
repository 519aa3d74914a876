"""Unreliable link between a device and the notary, for simulations.

Faults act on whole batches: a batch can be dropped (the sender sees a
transport error and retries), duplicated, or held back and delivered after
later traffic.  Partitions make every operation fail during a tick interval.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable

from ..errors import TransportError


@dataclass
class FaultModel:
    drop: float = 0.0
    duplicate: float = 0.0
    reorder: float = 0.0
    partitions: list[tuple[int, int]] = field(default_factory=list)  # [start, end) in ticks

    @property
    def faulty(self) -> bool:
        return bool(self.drop or self.duplicate or self.reorder or self.partitions)


class SimTransport:
    def __init__(self, inner, rng: random.Random, faults: FaultModel, now: Callable[[], int]):
        self.inner = inner
        self.rng = rng
        self.faults = faults
        self.now = now
        self.held: list[bytes] = []
        self.stats = {"sent": 0, "dropped": 0, "duplicated": 0, "reordered": 0, "partitioned": 0}

    def partitioned(self) -> bool:
        t = self.now()
        return any(a <= t < b for a, b in self.faults.partitions)

    def release(self) -> None:
        """Deliver every held batch (they were only late, not lost)."""
        held, self.held = self.held, []
        for body in held:
            self.inner.call("submit_batch", body)

    def call(self, op: str, body: bytes) -> bytes:
        if self.partitioned():
            self.stats["partitioned"] += 1
            raise TransportError("link partitioned")
        if op != "submit_batch":
            return self.inner.call(op, body)
        f = self.faults
        if f.drop and self.rng.random() < f.drop:
            self.stats["dropped"] += 1
            raise TransportError("batch lost in transit")
        if f.reorder and self.rng.random() < f.reorder:
            # in flight: the sender gets an ack now, the notary sees it after the next batch
            self.stats["reordered"] += 1
            self.held.append(body)
            req = json.loads(body)
            ack = {
                "device": req["device"],
                "epoch": req["epoch"],
                "seq": req["seq"],
                "chain_value": req["chain_value"],
                "flagged": False,
                "status": "buffered",
            }
            return json.dumps({"ok": True, "result": ack}).encode()
        self.stats["sent"] += 1
        out = self.inner.call(op, body)
        if f.duplicate and self.rng.random() < f.duplicate:
            self.stats["duplicated"] += 1
            self.inner.call(op, body)
        self.release()
        return out
