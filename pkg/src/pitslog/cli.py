"""Command line entry point: ``pitslog notary|agent|audit|harness``."""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from .agent import LogEntry, LogStore, NodeAgent, ReceiptStore
from .errors import PitsError
from .params import HARNESS_DEFAULT, RUNNING_EXAMPLE, TreeParams


def _params_options(f):
    for opt in reversed(
        [
            click.option("--epoch-seconds", type=int, default=RUNNING_EXAMPLE.epoch_duration, show_default=True),
            click.option("--ticks-per-second", type=int, default=RUNNING_EXAMPLE.ticks_per_second, show_default=True),
            click.option("--size-ts", type=int, default=RUNNING_EXAMPLE.size_ts, show_default=True),
            click.option("--depth-p", type=int, default=RUNNING_EXAMPLE.depth_p, show_default=True),
            click.option("--size-p", type=int, default=RUNNING_EXAMPLE.size_p, show_default=True),
            click.option("--depth-u", type=int, default=RUNNING_EXAMPLE.depth_u, show_default=True),
        ]
    ):
        f = opt(f)
    return f


def _params(epoch_seconds, ticks_per_second, size_ts, depth_p, size_p, depth_u) -> TreeParams:
    return TreeParams(
        size_ts=size_ts,
        depth_p=depth_p,
        size_p=size_p,
        depth_u=depth_u,
        epoch_duration=epoch_seconds,
        ticks_per_second=ticks_per_second,
    )


def _client(address: str):
    from .notary.wire import HttpTransport, NotaryClient

    return NotaryClient(HttpTransport(address))


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Tamper-evident logging with a time-sparse hash tree notary."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")


# notary


@main.command()
@click.option("--listen", default="127.0.0.1:8700", show_default=True, help="host:port")
@click.option("--data-dir", type=click.Path(file_okay=False), default=None)
@click.option("--retention", default="", help="e.g. leaves-only=3600,parity-only=86400 (seconds after epoch end)")
@click.option("--grace-seconds", type=float, default=60, show_default=True)
@click.option("--omit-empty-parities", is_flag=True)
@_params_options
def notary(listen, data_dir, retention, grace_seconds, omit_empty_parities, **kw):
    """Run the notary over HTTP; devices register on first contact."""
    from .notary import Notary, parse_retention
    from .notary.http import serve

    host, _, port = listen.rpartition(":")
    n = Notary(
        _params(**kw),
        grace_seconds=grace_seconds,
        data_dir=data_dir,
        retention=parse_retention(retention),
        omit_empty_parities=omit_empty_parities,
        auto_register=True,
    )
    serve(n, host or "127.0.0.1", int(port))


# agent


def _load_agent(config: str) -> tuple[NodeAgent, dict]:
    cfg = json.loads(Path(config).read_text())
    data = Path(cfg["data_dir"])
    data.mkdir(parents=True, exist_ok=True)
    params = TreeParams.from_dict({**RUNNING_EXAMPLE.to_dict(), **cfg.get("params", {})})
    agent = NodeAgent(
        cfg["device"],
        params,
        _client(cfg["notary"]),
        store=LogStore(data / "logs.jsonl"),
        receipts=ReceiptStore(data / "receipts"),
        state_path=data / "state.json",
        skew_budget=float(cfg.get("skew_budget", 2.0)),
    )
    return agent, cfg


def _now(params: TreeParams) -> int:
    return int(time.time() * params.ticks_per_second)


@main.group()
@click.option("--config", type=click.Path(dir_okay=False), default="pitslog-agent.json", show_default=True)
@click.pass_context
def agent(ctx, config):
    """Device agent: log, flush, share and collect receipts."""
    ctx.obj = config


@agent.command("init")
@click.option("--device", required=True)
@click.option("--notary", "notary_addr", default="127.0.0.1:8700", show_default=True)
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@_params_options
@click.pass_obj
def agent_init(config, device, notary_addr, data_dir, **kw):
    """Write an agent config file."""
    cfg = {"device": device, "notary": notary_addr, "data_dir": data_dir, "params": _params(**kw).to_dict()}
    Path(config).write_text(json.dumps(cfg, indent=2) + "\n")
    click.echo(f"wrote {config}")


@agent.command("log")
@click.option("--content", required=True)
@click.option("--now", type=int, default=None, help="absolute tick; defaults to the system clock")
@click.option("--flush/--no-flush", default=False)
@click.pass_obj
def agent_log(config, content, now, flush):
    a, _ = _load_agent(config)
    entry = a.log_event(content.encode(), _now(a.params) if now is None else now)
    epoch, offset = entry.address(a.params)
    click.echo(json.dumps({"ts": entry.ts, "epoch": epoch, "offset": offset, "digest": entry.digest.hex()}))
    if flush:
        _report_flush(a)


def _report_flush(a: NodeAgent, acks: list | None = None) -> None:
    acks = a.flush() if acks is None else acks
    for ack in acks:
        click.echo(f"batch {ack.epoch}/{ack.seq} {ack.status}{' FLAGGED' if ack.flagged else ''}")
    if a.segments:
        click.echo(f"deferred: {a.queue_len()} logs in {len(a.segments)} queued batches")


@agent.command("flush")
@click.pass_obj
def agent_flush(config):
    a, _ = _load_agent(config)
    # tick rolls the chain over first if the epoch has ended
    _report_flush(a, a.tick(_now(a.params)) if a.chain is not None else None)


@agent.command("share")
@click.option("--peer", required=True, type=click.Path(file_okay=False), help="the peer's data directory")
@click.option("--digest", required=True)
@click.pass_obj
def agent_share(config, peer, digest):
    """Copy a full log into a peer's inbox."""
    a, _ = _load_agent(config)
    matches = [e for e in a.store.entries(a.params) if e.digest.hex() == digest.lower()]
    if not matches:
        raise click.ClickException(f"no local log with digest {digest}")
    from .agent import encode_record

    inbox = Path(peer) / "inbox"
    inbox.mkdir(parents=True, exist_ok=True)
    rec = {"device": a.device, **encode_record(matches[0].ts, matches[0].content)}
    (inbox / f"{a.device}-{digest.lower()}.json").write_text(json.dumps(rec))
    click.echo(f"shared {digest} with {peer}")


@agent.command("receipt")
@click.option("--peer-device", required=True)
@click.option("--epoch", type=int, required=True)
@click.option("--digest", required=True)
@click.pass_obj
def agent_receipt(config, peer_device, epoch, digest):
    """Fetch, verify and store the receipt of a log shared by a peer."""
    from .agent import decode_record
    from .notary.wire import receipt_to_json

    a, cfg = _load_agent(config)
    path = Path(cfg["data_dir"]) / "inbox" / f"{peer_device}-{digest.lower()}.json"
    if not path.exists():
        raise click.ClickException(f"nothing from {peer_device} with digest {digest} in the inbox")
    ts, content = decode_record(json.loads(path.read_text()))
    entry = LogEntry.create(content, ts, a.params)
    if entry.digest.hex() != digest.lower() or a.params.epoch_of(ts) != epoch:
        raise click.ClickException("inbox entry does not match the requested digest and epoch")
    try:
        r = a.obtain_receipt(peer_device, entry)
    except PitsError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}")
    if r is None:
        click.echo("partial receipt only; the epoch is not finalized yet, retry later")
        sys.exit(2)
    click.echo(json.dumps(receipt_to_json(r)))


# auditor


@main.command()
@click.option("--snapshot", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--device", required=True)
@click.option("--epoch", type=int, multiple=True, help="repeatable; defaults to every epoch in the snapshot")
@click.option("--notary", "notary_addr", required=True)
@click.option("--receipts", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--report", type=click.Path(dir_okay=False), default=None)
def audit(snapshot, device, epoch, notary_addr, receipts, report):
    """Audit a device's log snapshot against the notary."""
    from .auditor import audit_device, load_snapshot, snapshot_epochs

    client = _client(notary_addr)
    try:
        epochs = list(epoch)
        first = epochs[0] if epochs else None
        if first is None:
            # parameters are needed to hash the snapshot; any finalized epoch will do
            probe = load_snapshot(snapshot, RUNNING_EXAMPLE)
            first = RUNNING_EXAMPLE.epoch_of(probe[0].ts) if probe else 0
        _, params = client.get_root_and_params(device, first)
        entries = load_snapshot(snapshot, params)
        epochs = epochs or snapshot_epochs(entries, params)
        held = list(ReceiptStore(receipts).items()) if receipts else []
        results = [audit_device(client, device, e, entries, held) for e in epochs]
    except PitsError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}")
    doc = {"device": device, "epochs": [r.to_json() for r in results]}
    for r in results:
        state = "clean" if r.clean else "TAMPERED"
        click.echo(f"epoch {r.epoch}: {state} root_match={r.root_match} windows={len(r.windows)} "
                   f"inconsistencies={len(r.inconsistencies)}")
        for w in r.windows:
            click.echo(f"  sub-epoch {w.index}: [{float(w.start):.3f}, {float(w.end):.3f})")
    if report:
        Path(report).write_text(json.dumps(doc, indent=2) + "\n")
    sys.exit(0 if all(r.clean for r in results) else 1)


# harness


@main.group()
def harness():
    """Simulated scenarios, detection sweeps and the benchmark."""


@harness.command("run")
@click.option("--scenario", "name", required=True, help="preset name or JSON file")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def harness_run(name, seed, as_json):
    from .harness import load_scenario, run_scenario

    out = run_scenario(load_scenario(name, seed))
    if as_json:
        click.echo(json.dumps(out.to_json(), indent=2))
        return
    click.echo(
        f"{out.name} seed={out.seed}: detected={out.detected} correct={out.correct} "
        f"windows={len(out.localized_windows)}/{len(out.expected_windows)} kinds={','.join(out.inconsistency_kinds) or '-'}"
    )


@harness.command("sweep")
@click.option("--scenario", "name", required=True)
@click.option("--seeds", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="write sweep.csv here")
def harness_sweep(name, seeds, out):
    from .harness import load_scenario, sweep
    from .harness.plots import write_csv

    outcomes = sweep(load_scenario(name), range(seeds))
    detected = sum(o.detected for o in outcomes)
    correct = sum(o.correct for o in outcomes)
    click.echo(f"{name}: detected {detected}/{seeds}, expected outcome {correct}/{seeds}")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        rows = [
            {
                "seed": o.seed,
                "detected": o.detected,
                "correct": o.correct,
                "localized": len(o.localized_windows),
                "expected": len(o.expected_windows),
                "false_windows": len(o.false_windows),
                "kinds": ";".join(o.inconsistency_kinds),
            }
            for o in outcomes
        ]
        click.echo(f"wrote {write_csv(rows, Path(out) / f'sweep-{Path(name).stem}.csv')}")


@harness.command("bench")
@click.option("--logs", type=int, default=100_000, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--batch", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="write bench.csv and bench.png here")
@_params_options
def harness_bench(logs, threads, batch, seed, out, **kw):
    from .harness import bench
    from .harness.plots import bench_rows, plot_bench, write_csv

    result = bench(_params(**kw), logs, threads, batch, seed)
    click.echo(result.table())
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        click.echo(f"wrote {write_csv(bench_rows(result), d / 'bench.csv')}")
        click.echo(f"wrote {plot_bench(result, d / 'bench.png')}")


@harness.command("detect")
@click.option("--size-p", "size_ps", default="1,2,3,4,5,6,8", show_default=True)
@click.option("--trials", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--mode", type=click.Choice(["modify", "delete"]), default="modify")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="write detect.csv and detect.png here")
def harness_detect(size_ps, trials, seed, mode, out):
    """Monte-Carlo of single-log tampering versus parity size."""
    from .harness import detection_trials
    from .harness.plots import detection_rows, plot_detection, write_csv

    stats = [
        detection_trials(int(x), trials, seed, params=HARNESS_DEFAULT, mode=mode) for x in size_ps.split(",")
    ]
    for s in stats:
        click.echo(
            f"size_p={s.size_p:>2} misses={s.misses:>5}/{s.trials} rate={s.miss_rate:.5f} "
            f"expected={s.expected_rate:.5f} +-{3 * s.sigma:.5f} false_windows={s.false_windows}"
        )
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        click.echo(f"wrote {write_csv(detection_rows(stats), d / 'detect.csv')}")
        click.echo(f"wrote {plot_detection(stats, d / 'detect.png')}")


if __name__ == "__main__":
    main()
