import json
from pathlib import Path

import pytest

from etmpc.cli import main

BENCH = Path(__file__).resolve().parent.parent / "benchmarks" / "cart.cfg"


def write_cfg(tmp_path, name="case.cfg", **edits):
    """Copy the benchmark config and apply section: value overrides."""
    raw = json.loads(BENCH.read_text())
    for dotted, value in edits.items():
        sect, key = dotted.split("__")
        if value is None:
            raw.setdefault(sect, {}).pop(key, None)
        else:
            raw.setdefault(sect, {})[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


@pytest.fixture()
def short_cfg(tmp_path):
    return write_cfg(tmp_path, sim__duration=4.0)


class TestCertify:
    def test_benchmark_passes(self, capsys):
        rc = main(["certify", "--config", str(BENCH)])
        out, err = capsys.readouterr()
        assert rc == 0
        payload = json.loads(out)
        assert payload["schema_version"] == 1
        assert payload["certificate"]["passed"] is True
        assert "PASS" in err

    def test_out_file(self, tmp_path, capsys):
        dest = tmp_path / "cert.json"
        rc = main(["certify", "--config", str(BENCH), "--out", str(dest)])
        capsys.readouterr()
        assert rc == 0
        assert json.loads(dest.read_text())["certificate"]["passed"] is True

    def test_failing_design_exits_one(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, design__horizon=1.5)
        rc = main(["certify", "--config", str(cfg)])
        _, err = capsys.readouterr()
        assert rc == 1
        assert "FAIL" in err


class TestConfigErrors:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, design__typo_key=1.0)
        rc = main(["certify", "--config", str(cfg)])
        _, err = capsys.readouterr()
        assert rc == 2
        assert "typo_key" in err

    def test_invalid_json_reported_with_position(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("{ not json }")
        rc = main(["certify", "--config", str(bad)])
        _, err = capsys.readouterr()
        assert rc == 2
        assert "line" in err

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["certify", "--config", str(tmp_path / "nope.cfg")])
        _, err = capsys.readouterr()
        assert rc == 2

    def test_gain_without_weight_rejected(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, design__P=None)
        rc = main(["certify", "--config", str(cfg)])
        _, err = capsys.readouterr()
        assert rc == 2
        assert "K" in err and "P" in err


class TestSimulate:
    def test_writes_trace_and_events(self, tmp_path, short_cfg, capsys):
        trace = tmp_path / "trace.csv"
        events = tmp_path / "events.json"
        rc = main(["simulate", "--config", str(short_cfg),
                   "--trace", str(trace), "--events", str(events)])
        out, _ = capsys.readouterr()
        assert rc == 0
        header = trace.read_text().splitlines()[0]
        assert header == "t,x1,x2,u1,w1,w2,err_P,accum,event"
        ev = json.loads(events.read_text())
        assert ev["schema_version"] == 1
        payload = json.loads(out)
        assert payload["status"] == "ok"
        assert payload["metrics"]["violation_count"] == 0

    def test_byte_determinism(self, tmp_path, short_cfg, capsys):
        outs = []
        for tag in ("a", "b"):
            trace = tmp_path / f"{tag}.csv"
            rc = main(["simulate", "--config", str(short_cfg),
                       "--trace", str(trace)])
            out, _ = capsys.readouterr()
            assert rc == 0
            outs.append((out, trace.read_bytes()))
        assert outs[0] == outs[1]

    def test_seed_flag_changes_disturbance(self, tmp_path, short_cfg,
                                           capsys):
        traces = []
        for seed in ("7", "8"):
            trace = tmp_path / f"s{seed}.csv"
            rc = main(["simulate", "--config", str(short_cfg),
                       "--seed", seed, "--trace", str(trace)])
            capsys.readouterr()
            assert rc == 0
            traces.append(trace.read_bytes())
        assert traces[0] != traces[1]

    def test_gate_blocks_uncertified_design(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, design__horizon=1.5, sim__duration=4.0)
        rc = main(["simulate", "--config", str(cfg)])
        _, err = capsys.readouterr()
        assert rc == 1
        assert "--exploratory" in err

    def test_infeasible_start_exits_three(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, sim__x0=[1.5, -0.4], sim__duration=4.0)
        rc = main(["simulate", "--config", str(cfg)])
        _, err = capsys.readouterr()
        assert rc == 3
        assert "infeasible" in err

    def test_plot_data_files(self, tmp_path, short_cfg, capsys):
        plot_dir = tmp_path / "plots"
        rc = main(["simulate", "--config", str(short_cfg),
                   "--plot-dir", str(plot_dir)])
        capsys.readouterr()
        assert rc == 0
        names = {p.name for p in plot_dir.iterdir()}
        assert {"norm.dat", "error.dat", "accum.dat", "input.dat"} <= names


class TestCompare:
    def test_paired_outputs(self, tmp_path, short_cfg, capsys):
        rc = main(["compare", "--config", str(short_cfg)])
        out, _ = capsys.readouterr()
        assert rc == 0
        payload = json.loads(out)
        assert payload["integral"]["status"] == "ok"
        assert payload["pointwise"]["status"] == "ok"
        assert payload["paired"]["event_count_diff"] <= 0


class TestMonteCarlo:
    def test_small_batch(self, tmp_path, short_cfg, capsys):
        rc = main(["montecarlo", "--config", str(short_cfg),
                   "--trials", "2"])
        out, _ = capsys.readouterr()
        assert rc == 0
        payload = json.loads(out)
        mc = payload["montecarlo"]
        assert mc["trial_count"] == 2
        assert mc["summary"]["paired_event_count_diff_mean"] <= 0.0
