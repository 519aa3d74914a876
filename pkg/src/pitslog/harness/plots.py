"""CSV tables and matplotlib figures for the report commands."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_csv(rows: list[dict], path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path


def bench_rows(result) -> list[dict]:
    return [{"metric": name, "value": value, "unit": unit} for name, value, unit in result.rows()]


def plot_bench(result, path: str | os.PathLike) -> Path:
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    names = ["add_log", f"batch {result.batch}", "receipts"]
    rates = [result.per_log_rate, result.batched_rate, result.receipts_rate]
    left.bar(names, rates, color=["#888888", "#3465a4", "#73a946"])
    left.axhline(50_000, color="#cc0000", lw=1, ls="--", label="50k/s floor")
    left.set_ylabel("operations per second")
    left.set_title(f"{result.logs:,} logs, size_ts={result.size_ts}")
    left.legend()
    mib = 1 << 20
    right.bar(["full tree", "leaves only"], [result.full_bytes / mib, result.leaves_bytes / mib], color="#3465a4")
    right.set_ylabel("MiB per tree")
    right.set_title(f"{result.full_nodes:,} vs {result.leaves_nodes:,} stored nodes")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def detection_rows(stats) -> list[dict]:
    return [
        {
            "size_p": s.size_p,
            "trials": s.trials,
            "misses": s.misses,
            "miss_rate": s.miss_rate,
            "expected_rate": s.expected_rate,
            "sigma": s.sigma,
            "false_windows": s.false_windows,
        }
        for s in stats
    ]


def plot_detection(stats, path: str | os.PathLike) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [s.size_p for s in stats]
    ax.errorbar(
        xs,
        [max(s.miss_rate, 1e-6) for s in stats],
        yerr=[3 * s.sigma for s in stats],
        fmt="o",
        label="measured (3 sigma bars)",
    )
    ax.plot(xs, [s.expected_rate for s in stats], "--", label="2^-size_p")
    ax.set_yscale("log")
    ax.set_xlabel("parity bits per sub-epoch")
    ax.set_ylabel("unlocalized fraction")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
