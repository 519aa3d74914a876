"""Throughput and memory micro-benchmark.

Two insert rates are measured on the same time-ordered workload: one log at
a time through :meth:`PitsTree.add_log`, and the notary's batch ingest path
(chain check plus :meth:`PitsTree.add_logs`), which is what a deployment
runs.  With ``threads > 1`` independent devices are ingested in separate
processes; CPython threads would serialize on the interpreter lock.
"""

from __future__ import annotations

import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

from ..chain import LogBatch, chain_extend
from ..notary import Notary
from ..params import RUNNING_EXAMPLE, TreeParams
from ..parity import body_size, finalize_tree
from ..tree import PitsTree


@dataclass
class BenchResult:
    size_ts: int
    depth_p: int
    size_p: int
    depth_u: int
    logs: int
    threads: int
    batch: int
    per_log_rate: float  # logs/s, one add_log call per log
    batched_rate: float  # logs/s through the notary ingest path
    receipts_rate: float  # receipts/s
    finalize_ms: float
    full_nodes: int
    full_bytes: int
    leaves_nodes: int
    leaves_bytes: int
    parity_record_bytes: int

    def to_json(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple[str, float, str]]:
        return [
            ("insert, one log per call", self.per_log_rate, "logs/s"),
            (f"insert, notary batches of {self.batch}", self.batched_rate, "logs/s"),
            ("receipt generation", self.receipts_rate, "receipts/s"),
            ("finalize (parity extraction)", self.finalize_ms, "ms"),
            ("nodes, full tree", self.full_nodes, "nodes"),
            ("bytes, full tree", self.full_bytes, "B"),
            ("nodes, leaves only", self.leaves_nodes, "nodes"),
            ("bytes, leaves only", self.leaves_bytes, "B"),
            ("parity record body", self.parity_record_bytes, "B"),
        ]

    def table(self) -> str:
        head = (
            f"size_ts={self.size_ts} depth_p={self.depth_p} size_p={self.size_p} "
            f"depth_u={self.depth_u} logs={self.logs} threads={self.threads}"
        )
        lines = [head, "-" * len(head)]
        for name, value, unit in self.rows():
            text = f"{value:,.1f}" if isinstance(value, float) else f"{value:,}"
            lines.append(f"{name:<36}{text:>18} {unit}")
        return "\n".join(lines)


def workload(params: TreeParams, n: int, seed: int = 0) -> list[tuple[int, bytes]]:
    """``n`` time-ordered (offset, digest) pairs spread uniformly over one epoch."""
    rng = random.Random(seed)
    ticks = sorted(rng.randrange(params.epoch_ticks) for _ in range(n))
    dsize = params.digest_size
    return [(params.address(t)[1], rng.randbytes(dsize)) for t in ticks]


def make_batches(params: TreeParams, device: str, entries, batch: int, h0: bytes) -> list[LogBatch]:
    out, cur = [], h0
    for seq, i in enumerate(range(0, len(entries), batch)):
        chunk = tuple(entries[i : i + batch])
        for _, d in chunk:
            cur = chain_extend(cur, d, params.hash)
        out.append(LogBatch(device, 0, seq, chunk, cur))
    return out


def ingest(params: TreeParams, entries, batch: int, device: str = "bench") -> tuple[float, Notary]:
    """Seconds spent in ``submit_batch`` for the whole workload."""
    notary = Notary(params, clock=lambda: 0)
    notary.register_device(device)
    h0 = bytes(params.digest_size)
    notary.start_epoch(device, 0, None, h0)
    batches = make_batches(params, device, entries, batch, h0)
    t = time.perf_counter()
    for b in batches:
        notary.submit_batch(b)
    return time.perf_counter() - t, notary


def _worker(args) -> float:
    params, n, seed, batch = args
    elapsed, _ = ingest(params, workload(params, n, seed), batch, device=f"bench{seed}")
    return elapsed


def bench(params: TreeParams = RUNNING_EXAMPLE, n_logs: int = 100_000, threads: int = 1, batch: int = 100, seed: int = 0) -> BenchResult:
    entries = workload(params, n_logs, seed)

    tree = PitsTree(params)
    t = time.perf_counter()
    for ts, d in entries:
        tree.add_log(ts, d)
    per_log = n_logs / (time.perf_counter() - t)

    if threads <= 1:
        elapsed, notary = ingest(params, entries, batch)
        batched = n_logs / elapsed
        ingested = notary.tree_of("bench", 0)
        assert ingested.root == tree.root
    else:
        share = n_logs // threads
        with ProcessPoolExecutor(threads) as pool:
            times = list(pool.map(_worker, [(params, share, seed + k, batch) for k in range(threads)]))
        batched = share * threads / max(times)

    sample = entries[:: max(1, n_logs // 10_000)]
    t = time.perf_counter()
    for ts, d in sample:
        tree.calc_receipt(d, ts)
    receipts = len(sample) / (time.perf_counter() - t)

    t = time.perf_counter()
    finalize_tree(tree, random.Random(seed))
    finalize_ms = (time.perf_counter() - t) * 1000

    full = tree.stats()
    tree.drop_branches()
    reduced = tree.stats()
    return BenchResult(
        size_ts=params.size_ts,
        depth_p=params.depth_p,
        size_p=params.size_p,
        depth_u=params.depth_u,
        logs=n_logs,
        threads=threads,
        batch=batch,
        per_log_rate=per_log,
        batched_rate=batched,
        receipts_rate=receipts,
        finalize_ms=finalize_ms,
        full_nodes=full.leaves + full.branch_nodes,
        full_bytes=full.full_bytes,
        leaves_nodes=reduced.leaves,
        leaves_bytes=reduced.leaves_only_bytes,
        parity_record_bytes=body_size(params),
    )
