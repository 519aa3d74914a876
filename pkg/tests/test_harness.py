import csv
import json
import random
from dataclasses import replace

import pytest

from oracles import storage_bytes
from pitslog.errors import TransportError
from pitslog.harness import (
    PRESETS,
    FaultModel,
    Scenario,
    SimTransport,
    bench,
    detection_trials,
    load_scenario,
    run_scenario,
    sweep,
)
from pitslog.harness.plots import bench_rows, detection_rows, plot_bench, plot_detection, write_csv
from pitslog.notary import LocalTransport, Notary, NotaryAPI
from pitslog.params import TreeParams

SMALL = TreeParams(size_ts=8, depth_p=3, size_p=4, depth_u=2, epoch_duration=20, ticks_per_second=10)


def test_same_seed_same_outcome():
    s = replace(PRESETS["offline"], seed=7)
    assert run_scenario(s).to_json() == run_scenario(s).to_json()


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_judged_correct(name):
    for out in sweep(PRESETS[name], range(3)):
        assert out.correct, out.to_json()
        assert out.detected == (name not in ("honest", "offline"))
        assert out.false_windows == []


def test_forward_attacks_reported_by_kind():
    trunc = run_scenario(replace(PRESETS["truncate"], seed=1))
    assert "truncation" in trunc.inconsistency_kinds
    tamper = run_scenario(replace(PRESETS["pre-submission-tamper"], seed=1))
    assert "chain-mismatch" in tamper.inconsistency_kinds


def test_delete_with_receipts_and_several_devices():
    s = Scenario("d3", action="delete", devices=3, share_fraction=1.0, count=3, seed=4)
    out = run_scenario(s)
    assert out.correct and out.receipts_stored > 0
    assert out.localized_windows == out.expected_windows


def test_scenario_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        Scenario("x", action="explode")
    with pytest.raises(ValueError):
        Scenario("x", epochs=2, target_epoch=2)
    s = replace(PRESETS["offline"], params=SMALL)
    assert Scenario.from_dict(json.loads(json.dumps(s.to_dict()))) == s
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"name": "mine", "action": "wipe", "params": {"size_p": 8}}))
    loaded = load_scenario(str(path), seed=3)
    assert loaded.action == "wipe" and loaded.seed == 3 and loaded.params.size_p == 8
    assert load_scenario("honest").action == "honest"


def test_sim_transport_faults():
    notary = Notary(SMALL, clock=lambda: 0, auto_register=True)
    inner = LocalTransport(NotaryAPI(notary))
    t = SimTransport(inner, random.Random(0), FaultModel(partitions=[(0, 10)]), now=lambda: 5)
    with pytest.raises(TransportError):
        t.call("get_root", b"{}")
    assert t.stats["partitioned"] == 1
    t = SimTransport(inner, random.Random(0), FaultModel(drop=1.0), now=lambda: 50)
    with pytest.raises(TransportError):
        t.call("submit_batch", b"{}")
    assert not FaultModel().faulty and FaultModel(drop=0.1).faulty


def test_detection_trials_small():
    weak = detection_trials(1, 400, seed=1, params=SMALL)
    assert 0.4 < weak.miss_rate < 0.6
    strong = detection_trials(24, 200, seed=1, params=SMALL, mode="delete")
    assert strong.misses == 0 and strong.false_windows == 0
    with pytest.raises(ValueError):
        detection_trials(4, 1, mode="swap")


def test_bench_smoke_and_report_files(tmp_path):
    res = bench(SMALL, n_logs=2000, batch=50)
    assert res.logs == 2000 and res.batched_rate > 0 and res.per_log_rate > 0
    assert res.parity_record_bytes == storage_bytes(256, 4, 3)
    assert "receipt generation" in res.table()
    csv_path = write_csv(bench_rows(res), tmp_path / "bench.csv")
    png = plot_bench(res, tmp_path / "bench.png")
    assert png.stat().st_size > 0
    assert len(list(csv.DictReader(csv_path.open()))) == len(res.rows())
    stats = [detection_trials(k, 50, seed=k, params=SMALL) for k in (1, 2)]
    write_csv(detection_rows(stats), tmp_path / "det.csv")
    assert plot_detection(stats, tmp_path / "det.png").stat().st_size > 0
