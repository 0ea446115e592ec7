import json
import subprocess
import sys

import numpy as np
import pytest

from relclt import cli
from relclt.errors import SingularCovarianceError
from relclt.io import (AnomalyRecord, ParseError, emit_long_triplet, ingest_csv, parse_long_triplet,
                       read_records, records_from_series)

MONTHS = "Jan,Feb,Mar,Apr,May,Jun,Jul,Aug,Sep,Oct,Nov,Dec"


def _wide(rows):
    head = "Northern Hemisphere-mean monthly anomalies\n" + f"Year,{MONTHS},J-D,D-N\n"
    return head + "".join(f"{y}," + ",".join(vals) + ",.10,.11\n" for y, vals in rows)


# -- ingestion -----------------------------------------------------------------


def test_long_triplet_three_rows(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("year,month,value\n2000,1,0.5\n2000,2,-0.1\n2000,3,0.0\n")
    s = ingest_csv(p, "long-triplet")
    assert s.values.tolist() == [0.5, -0.1, 0.0]


def test_gistemp_missing_marker(tmp_path):
    vals = [f"{0.01 * k:.2f}" for k in range(12)]
    vals2 = list(vals)
    vals2[7] = "***"
    p = tmp_path / "w.csv"
    p.write_text(_wide([(2001, vals), (2002, vals2)]))
    with pytest.warns(UserWarning, match="1 missing values dropped") as rec:
        s = ingest_csv(p)
    assert len(rec) == 1
    assert s.n == 23
    recs = read_records(p, "gistemp-wide")
    assert sum(r.value is not None for r in recs if r.year == 2002) == 11
    with pytest.warns(UserWarning, match="imputed"):
        filled = ingest_csv(p, impute="linear")
    assert filled.n == 24 and filled.values[12 + 7] == pytest.approx(0.07)


def test_long_triplet_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal(30) / 3
    recs = records_from_series(x, 1880, 11)
    assert recs[2] == AnomalyRecord(1881, 1, float(x[2]))
    p = tmp_path / "rt.csv"
    emit_long_triplet(recs + [AnomalyRecord(1883, 5, None)], p)
    assert parse_long_triplet(p.read_text())[-1].value is None
    with pytest.warns(UserWarning):
        again = ingest_csv(p, "long-triplet")
    assert again.values.tobytes() == x.tobytes()


def test_parse_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("year,month,value\n2000,1,0.5\n2000,2,abc\n")
    with pytest.raises(ParseError, match="line 3"):
        ingest_csv(p, "long-triplet")
    p.write_text("2000,1,0.5\n2000,13,0.1\n")
    with pytest.raises(ParseError, match="line 2"):
        ingest_csv(p, "long-triplet")
    p.write_text("2000,2,0.5\n2000,1,0.1\n")
    with pytest.raises(ParseError, match="not increasing"):
        ingest_csv(p, "long-triplet")
    p.write_text(_wide([(2000, ["0.1"] * 12)]).replace("2000,0.1,0.1,0.1,0.1,0.1,0.1,0.1", "2000,0.1", 1))
    with pytest.raises(ParseError, match="line 3"):
        ingest_csv(p)
    p.write_text("no header here\n1,2,3\n")
    with pytest.raises(ParseError):
        ingest_csv(p)


# -- CLI -------------------------------------------------------------------------


SMALL = {
    "simulate": {"n": 40, "replicates": 2},
    "clt-check": {"n_schedule": [64, 128], "M": 300},
    "bootstrap-check": {"n_schedule": [128], "M": 300},
    "trend-band": {"n": 200, "B": 50},
    "test": {"n": 200, "B": 49},
    "ks-test": {"n": 300, "lag": 12, "thresholds": [-1.0, 0.0, 1.0], "B": 99},
    "coverage": {"n": 200, "B": 50, "runs": 6},
    "level-power": {"n": 150, "B": 49, "runs": 6, "runs_h1": 4, "alphas": [0.05, 0.1]},
}


def _write_config(tmp_path, name, doc):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(doc))
    return str(p)


def _hashes(out_dir):
    man = json.loads((out_dir / "manifest.json").read_text())
    return {k: v["sha256"] for k, v in man["artifacts"].items()}


@pytest.mark.parametrize("command", list(SMALL))
def test_subcommands_are_thread_invariant(tmp_path, command):
    cfg = _write_config(tmp_path, command, {command: SMALL[command]})
    runs = {}
    for threads in (1, 4):
        out = tmp_path / f"out{threads}"
        assert cli.main([command, "--config", cfg, "--seed", "7", "--out-dir", str(out),
                         "--threads", str(threads)]) == 0
        runs[threads] = _hashes(out)
    assert runs[1] == runs[4] and runs[1]


def test_simulate_twice_is_hash_equal(tmp_path):
    for k in (1, 2):
        assert cli.main(["simulate", "--seed", "3", "--out-dir", str(tmp_path / str(k))]) == 0
    a, b = (tmp_path / "1" / "series.csv").read_bytes(), (tmp_path / "2" / "series.csv").read_bytes()
    assert a == b and a.startswith(b"# relclt-series v1")


def test_manifest_rerun_reproduces_outputs(tmp_path):
    cfg = _write_config(tmp_path, "band", {"trend-band": SMALL["trend-band"]})
    assert cli.main(["trend-band", "--config", cfg, "--seed", "11", "--out-dir", str(tmp_path / "a")]) == 0
    man = tmp_path / "a" / "manifest.json"
    doc = json.loads(man.read_text())
    assert doc["config"]["kernel"] == "triweight" and doc["config"]["multiplier"]["m_rule"] == "cube-root"
    assert set(doc) >= {"subcommand", "tool_version", "seed", "config", "artifacts", "wall_clock_seconds"}
    assert cli.main(["trend-band", "--config", str(man), "--out-dir", str(tmp_path / "b")]) == 0
    assert _hashes(tmp_path / "a") == _hashes(tmp_path / "b")
    header = (tmp_path / "a" / "band.csv").read_text().splitlines()[1]
    assert header == "s,estimate,lower,upper"


def test_config_errors_name_the_key(tmp_path, capsys):
    cases = [({"clt-check": {"Mm": 3}}, "Mm"),
             ({"clt-check": {"grid": {"svalues": [1.0]}}}, "grid.svalues"),
             ({"clt-check": {"M": 50}}, "M"),
             ({"test": {"alpha": 1.5}}, "alpha"),
             ({"coverage": {"process": {"kind": "no-such-process"}}}, "process"),
             ({"seed": -1}, "seed")]
    for doc, key in cases:
        cmd = next((k for k in doc if k in cli.SUBCOMMANDS), "clt-check")
        path = _write_config(tmp_path, "bad", doc)
        assert cli.main([cmd, "--config", path, "--out-dir", str(tmp_path)]) == 1
        assert key in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["simulate", "--threads", "0", "--out-dir", str(tmp_path)]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 1
    bad = tmp_path / "broken.toml"
    bad.write_text("n = [")
    assert cli.main(["simulate", "--config", str(bad)]) == 1
    capsys.readouterr()


def test_toml_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 5\n[simulate]\nn = 10\n[simulate.process]\nkind = "tvar1"\nphi = 0.3\n')
    man = cli.execute("simulate", cli.load_document(p), None, tmp_path)
    assert man["seed"] == 5 and man["config"]["process"]["kind"] == "tvar1"


def test_capability_error_lists_supported_cells(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("year,month,value\n" + "".join(f"2000,{m},{0.1 * m}\n" for m in range(1, 13)))
    cfg = _write_config(tmp_path, "cap", {"test": {"data": {"path": str(data), "format": "long-triplet"},
                                                   "centering": {"kind": "known"}, "B": 19}})
    assert cli.main(["test", "--config", cfg, "--out-dir", str(tmp_path)]) == 2
    assert "supported cells" in capsys.readouterr().err


def test_numeric_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(cfg, seed, threads):
        raise SingularCovarianceError("not positive semidefinite")
    monkeypatch.setitem(cli.COMMANDS, "simulate", boom)
    assert cli.main(["simulate", "--out-dir", str(tmp_path)]) == 3
    assert "numeric failure" in capsys.readouterr().err


def test_data_file_drives_trend_band(tmp_path, capsys):
    x = 0.002 * np.arange(240) + np.random.default_rng(1).standard_normal(240) * 0.1
    data = tmp_path / "series.csv"
    emit_long_triplet(records_from_series(x, 2000), data)
    cfg = _write_config(tmp_path, "b", {"trend-band": {"data": {"path": str(data), "format": "long-triplet"},
                                                       "B": 50, "b": 0.2}})
    assert cli.main(["trend-band", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "band.csv").read_text().splitlines()[2:]
    assert len(rows) == 240
    capsys.readouterr()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "relclt.cli", "simulate", "--seed", "1",
                          "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["seed"] == 1


@pytest.mark.slow
def test_null_config_rarely_rejects(tmp_path):
    null = tmp_path / "null.toml"
    null.write_text('[test]\nn = 1000\nalpha = 0.05\n[test.process]\nkind = "indep-hetero"\nsigma = 1.0\n')
    doc = cli.load_document(null)
    kept = 0
    for seed in range(500):
        out = tmp_path / "run"
        cli.execute("test", doc, seed, out)
        kept += not json.loads((out / "report.json").read_text())["reject"]
    assert kept / 500 >= 0.92
