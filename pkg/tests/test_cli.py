import csv
import json
import threading
import time

import pytest
from click.testing import CliRunner

from pitslog.cli import main
from pitslog.notary import Notary
from pitslog.notary.http import make_server
from pitslog.params import TreeParams

P = TreeParams(size_ts=10, depth_p=3, size_p=32, depth_u=2, epoch_duration=60, ticks_per_second=10)
PARAM_ARGS = ["--epoch-seconds", "60", "--ticks-per-second", "10", "--size-ts", "10",
              "--depth-p", "3", "--size-p", "32", "--depth-u", "2"]


@pytest.fixture
def served():
    notary = Notary(P, auto_register=True)
    server = make_server(notary, "127.0.0.1", 0)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield notary, f"127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def run(args, **kw):
    res = CliRunner().invoke(main, args, catch_exceptions=False, **kw)
    return res


def test_end_to_end(served, tmp_path):
    notary, addr = served
    mcfg, icfg = str(tmp_path / "m.json"), str(tmp_path / "i.json")
    mdir, idir = tmp_path / "m", tmp_path / "i"
    assert run(["agent", "--config", mcfg, "init", "--device", "m", "--notary", addr, "--data-dir", str(mdir), *PARAM_ARGS]).exit_code == 0
    assert run(["agent", "--config", icfg, "init", "--device", "i", "--notary", addr, "--data-dir", str(idir), *PARAM_ARGS]).exit_code == 0

    now = int(time.time() * 10)
    epoch = P.epoch_of(now)
    start = P.epoch_start(epoch)
    logged = []
    for k, content in enumerate(["door opened", "door closed", "badge 42"]):
        res = run(["agent", "--config", mcfg, "log", "--content", content, "--now", str(start + 50 * k + 5)])
        assert res.exit_code == 0
        logged.append(json.loads(res.output.splitlines()[0]))
    res = run(["agent", "--config", mcfg, "flush"])
    assert res.exit_code == 0 and "accepted" in res.output

    digest = logged[1]["digest"]
    assert run(["agent", "--config", mcfg, "share", "--peer", str(idir), "--digest", digest]).exit_code == 0
    # the first log of the next epoch reveals the closing chain value
    res = run(["agent", "--config", mcfg, "log", "--content", "next", "--now", str(start + 605), "--flush"])
    assert res.exit_code == 0
    notary.finalize_epoch("m", epoch)
    res = run(["agent", "--config", icfg, "receipt", "--peer-device", "m", "--epoch", str(epoch), "--digest", digest])
    assert res.exit_code == 0 and json.loads(res.output)["log_digest"] == digest

    snap = mdir / "logs.jsonl"
    report = tmp_path / "report.json"
    args = ["audit", "--snapshot", str(snap), "--device", "m", "--epoch", str(epoch), "--notary", addr,
            "--receipts", str(idir / "receipts"), "--report", str(report)]
    res = run(args)
    assert res.exit_code == 0, res.output
    assert "clean" in res.output and json.loads(report.read_text())["epochs"][0]["clean"]

    # delete the shared log from the snapshot
    lines = [l for l in snap.read_text().splitlines() if "door closed" not in l]
    snap.write_text("\n".join(lines) + "\n")
    res = run(args)
    assert res.exit_code == 1 and "TAMPERED" in res.output
    [ep] = json.loads(report.read_text())["epochs"]
    [w] = ep["windows"]
    assert w["receipt_ticks"] == [logged[1]["ts"]]


def test_receipt_unknown_inbox_entry(served, tmp_path):
    _, addr = served
    cfg = str(tmp_path / "i.json")
    run(["agent", "--config", cfg, "init", "--device", "i", "--notary", addr, "--data-dir", str(tmp_path / "i"), *PARAM_ARGS])
    res = CliRunner().invoke(main, ["agent", "--config", cfg, "receipt", "--peer-device", "m", "--epoch", "0", "--digest", "ab"])
    assert res.exit_code == 1 and "nothing from m" in res.output


def test_flush_while_notary_down_defers(tmp_path):
    cfg = str(tmp_path / "m.json")
    run(["agent", "--config", cfg, "init", "--device", "m", "--notary", "127.0.0.1:9", "--data-dir", str(tmp_path / "m"), *PARAM_ARGS])
    res = run(["agent", "--config", cfg, "log", "--content", "x", "--now", str(int(time.time() * 10))])
    assert res.exit_code == 0
    res = run(["agent", "--config", cfg, "flush"])
    assert "deferred: 2 logs" in res.output


def test_harness_commands(tmp_path):
    res = run(["harness", "run", "--scenario", "delete", "--seed", "2", "--json"])
    out = json.loads(res.output)
    assert out["detected"] and out["correct"]
    res = run(["harness", "sweep", "--scenario", "honest", "--seeds", "2", "--out", str(tmp_path)])
    assert "expected outcome 2/2" in res.output
    assert len(list(csv.DictReader((tmp_path / "sweep-honest.csv").open()))) == 2
    res = run(["harness", "bench", "--logs", "500", "--out", str(tmp_path), *PARAM_ARGS])
    assert res.exit_code == 0 and (tmp_path / "bench.csv").exists() and (tmp_path / "bench.png").exists()
    res = run(["harness", "detect", "--size-p", "1,2", "--trials", "50", "--out", str(tmp_path)])
    assert res.exit_code == 0 and (tmp_path / "detect.csv").exists() and (tmp_path / "detect.png").exists()


def test_notary_help_and_bad_retention():
    assert "--retention" in run(["notary", "--help"]).output
    res = CliRunner().invoke(main, ["notary", "--retention", "forever=1", "--listen", "127.0.0.1:0"])
    assert res.exit_code != 0
