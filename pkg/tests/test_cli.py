import json
import math
from pathlib import Path

import numpy as np
import pytest

from catmon.cli import ConfigError, load_config, load_observations, main


def write_config(path, streams, lam=0.2, n=5, statistic="zhang", limit=8.0,
                 seed=1, extra=None):
    obj = {
        "schema_version": 1,
        "lambda": lam,
        "sample_size": n,
        "statistic": statistic,
        "limit": limit,
        "seed": seed,
        "streams": streams,
    }
    if extra:
        obj.update(extra)
    path.write_text(json.dumps(obj))
    return path


BINARY = {"kind": "nominal", "probs": [0.5, 0.5]}
ORDINAL = {"kind": "ordinal", "cutpoints": [-1.0, 0.2, 0.8]}


def test_load_config_round_trip(tmp_path):
    cfg = write_config(tmp_path / "c.json", [BINARY, ORDINAL])
    specs, config, seed = load_config(cfg)
    assert len(specs) == 2 and specs[0].h == 2 and specs[1].h == 4
    assert config.lam == 0.2 and config.limit == 8.0 and seed == 1


def test_load_config_rejects_unknown_keys(tmp_path):
    cfg = write_config(tmp_path / "c.json", [BINARY], extra={"lamda": 0.3})
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(cfg)
    cfg = write_config(tmp_path / "c.json", [{**BINARY, "color": "red"}])
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(cfg)
    cfg = write_config(tmp_path / "c.json", [BINARY])
    obj = json.loads(cfg.read_text())
    obj["schema_version"] = 3
    cfg.write_text(json.dumps(obj))
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(cfg)


def test_load_config_stream_ids_must_be_ordered(tmp_path):
    cfg = write_config(tmp_path / "c.json", [{**BINARY, "id": 2}])
    with pytest.raises(ConfigError, match="ids must be"):
        load_config(cfg)


def test_load_observations_range_check(tmp_path):
    cfg = write_config(tmp_path / "c.json", [BINARY, ORDINAL])
    specs, _, _ = load_config(cfg)
    data = tmp_path / "d.csv"
    data.write_text("1,4\n2,1\n")
    obs = load_observations(data, specs)
    assert obs.shape == (2, 2)
    data.write_text("1,5\n")
    with pytest.raises(ConfigError, match="levels outside"):
        load_observations(data, specs)
    data.write_text("1\n")
    with pytest.raises(ConfigError, match="expected 2 columns"):
        load_observations(data, specs)


def test_monitor_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", [BINARY], lam=1.0, n=4,
                       statistic="max", limit=0.98)
    rng = np.random.default_rng(5)
    rows = ["1" if v else "2" for v in rng.integers(0, 2, size=4 * 10 + 2)]
    (tmp_path / "d.txt").write_text("\n".join(rows) + "\n")
    out = tmp_path / "chart.csv"
    rc = main(["monitor", "--config", str(cfg), "--data", str(tmp_path / "d.txt"),
               "--out", str(out)])
    assert rc == 0
    err = capsys.readouterr().err
    assert "partial sample" in err  # 42 rows -> 10 samples + 2 dropped
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "k,value,log_value,limit,alarm"
    assert len(lines) == 11  # floor(42/4) samples
    assert lines[1].split(",")[0] == "1"

    # byte-identical rerun
    first = out.read_text()
    main(["monitor", "--config", str(cfg), "--data", str(tmp_path / "d.txt"),
          "--out", str(out)])
    assert out.read_text() == first


def test_monitor_emit_local_scores_and_alarm(tmp_path):
    cfg = write_config(tmp_path / "c.json", [BINARY], lam=1.0, n=4,
                       statistic="max", limit=0.5)
    # all observations at level 1: extreme counts alarm instantly
    (tmp_path / "d.txt").write_text("\n".join(["1"] * 8) + "\n")
    out = tmp_path / "chart.csv"
    main(["monitor", "--config", str(cfg), "--data", str(tmp_path / "d.txt"),
          "--out", str(out), "--emit-local-scores"])
    lines = out.read_text().strip().splitlines()
    assert lines[0].endswith(",u_1")
    assert lines[1].split(",")[4] == "1"  # alarm flag


def test_monitor_insufficient_rows(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", [BINARY], n=50)
    (tmp_path / "d.txt").write_text("1\n2\n")
    rc = main(["monitor", "--config", str(cfg), "--data", str(tmp_path / "d.txt"),
               "--out", str(tmp_path / "o.csv")])
    assert rc == 2
    assert "cannot fill one sample" in capsys.readouterr().err


def test_monitor_zero_statistic_logs_sentinel(tmp_path):
    # every sample exactly at expectation: zhang of clamped scores is 0
    cfg = write_config(tmp_path / "c.json", [BINARY], lam=0.5, n=4,
                       statistic="zhang", limit=5.0)
    (tmp_path / "d.txt").write_text("\n".join(["1", "1", "2", "2"] * 3) + "\n")
    out = tmp_path / "chart.csv"
    main(["monitor", "--config", str(cfg), "--data", str(tmp_path / "d.txt"),
          "--out", str(out)])
    rec = out.read_text().strip().splitlines()[1].split(",")
    assert rec[1] == "0" and rec[2] == "-inf"
    assert float(rec[2]) == -math.inf


def test_scores_command(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", [BINARY, ORDINAL])
    rc = main(["scores", "--config", str(cfg)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "stream 2" in text
    assert "-1.525135" in text and "1.367402" in text
    assert "0.867173" in text


def test_calibrate_command_writes_record(tmp_path, capsys):
    streams = [BINARY] * 6
    cfg = write_config(tmp_path / "c.json", streams, lam=0.2, n=20,
                       statistic="zhang", limit=None, seed=9)
    out = tmp_path / "calib.json"
    rc = main(["calibrate", "--config", str(cfg), "--arl0", "20", "--reps",
               "200", "--out", str(out)])
    assert rc == 0
    rec = json.loads(out.read_text())
    assert rec["schema_version"] == 1
    assert rec["limit"] > 0.0
    assert abs(rec["achieved_arl"] - 20.0) < 10.0
    first = out.read_text()
    main(["calibrate", "--config", str(cfg), "--arl0", "20", "--reps", "200",
          "--out", str(out)])
    assert out.read_text() == first  # deterministic given config seed


def test_discretize_examples(tmp_path):
    # columns: simple ramp / constant / with missing value
    data = tmp_path / "x.csv"
    data.write_text("1,7,1\n2,7,\n3,7,3\n4,7,2\n")
    labels = tmp_path / "labels.txt"
    labels.write_text("ok\nok\nok\nbad\n")
    out_dir = tmp_path / "out"
    rc = main(["discretize", "--data", str(data), "--labels", str(labels),
               "--conforming", "ok", "--out-dir", str(out_dir)])
    assert rc == 0

    thresholds = (out_dir / "thresholds.csv").read_text().strip().splitlines()
    header, *rows = thresholds
    assert header.startswith("stream,source_column,status")
    kept = [r for r in rows if ",kept," in r]
    dropped = [r for r in rows if "dropped-constant" in r]
    assert len(kept) == 2 and len(dropped) == 1
    # column 1 conforming [1,2,3] -> threshold 2; column 3 [1,2(imputed),3] -> 2
    rec1 = kept[0].split(",")
    assert float(rec1[3]) == pytest.approx(2.0)
    rec3 = kept[1].split(",")
    assert rec3[1] == "3"
    assert float(rec3[3]) == pytest.approx(2.0)
    # p(level 1) = P(x <= 2) = 2/3 in both kept columns
    assert float(rec1[4]) == pytest.approx(2 / 3)

    config = json.loads((out_dir / "config.json").read_text())
    assert len(config["streams"]) == 2
    assert config["sample_size"] == 4

    obs = (out_dir / "observations.csv").read_text().strip().splitlines()
    assert len(obs) == 4
    assert obs[0].split() == ["1", "1"]
    assert obs[3].split() == ["2", "1"]  # nonconforming row, imputed col3=2


def test_discretize_symmetric_column(tmp_path):
    data = tmp_path / "x.csv"
    data.write_text("1\n2\n3\n4\n")
    labels = tmp_path / "l.txt"
    labels.write_text("ok\nok\nok\nok\n")
    out_dir = tmp_path / "out"
    main(["discretize", "--data", str(data), "--labels", str(labels),
          "--conforming", "ok", "--out-dir", str(out_dir)])
    rec = (out_dir / "thresholds.csv").read_text().strip().splitlines()[1].split(",")
    assert float(rec[3]) == pytest.approx(2.5)
    assert float(rec[4]) == pytest.approx(0.5)  # IC probabilities [0.5, 0.5]


def test_discretize_errors(tmp_path, capsys):
    data = tmp_path / "x.csv"
    labels = tmp_path / "l.txt"
    out_dir = tmp_path / "out"
    data.write_text("1\n2\n")
    labels.write_text("a\nb\n")
    rc = main(["discretize", "--data", str(data), "--labels", str(labels),
               "--conforming", "zz", "--out-dir", str(out_dir)])
    assert rc == 2 and "conforming" in capsys.readouterr().err
    data.write_text(",1\n,2\n")
    labels.write_text("a\na\n")
    rc = main(["discretize", "--data", str(data), "--labels", str(labels),
               "--conforming", "a", "--out-dir", str(out_dir)])
    assert rc == 2 and "no observed values" in capsys.readouterr().err


def test_simulate_command_tiny(tmp_path):
    scenario = {
        "schema_version": 1, "name": "mini", "lambda": 0.2, "sample_size": 20,
        "statistics": ["zhang"], "target_arl0": 15.0, "reps": 2000, "seed": 5,
        "cap": 300, "warmup": 20,
        "population": [{"kind": "nominal", "probs": [0.5, 0.5], "count": 4}],
        "rows": [{"label": "shift", "shifts": [{"case": 0, "count": 4,
                                                "xi": [0.3, -0.3]}]}],
    }
    sc_path = tmp_path / "mini.json"
    sc_path.write_text(json.dumps(scenario))
    out_dir = tmp_path / "results"
    # note: the desk preset caps replications at 2000; this tiny case needs
    # far fewer for a smoke test, so rely on the scenario being small
    rc = main(["simulate", "--scenario", str(sc_path), "--preset", "desk",
               "--out-dir", str(out_dir)])
    assert rc == 0
    from catmon.simulate import parse_table_csv
    cells = parse_table_csv((out_dir / "mini.csv").read_text())
    assert cells[("shift", "zhang")]["arl"] < cells[("IC", "zhang")]["arl"]
    assert (out_dir / "mini.txt").exists()
    assert (out_dir / "mini_calibration.json").exists()


def test_unknown_scenario_name(tmp_path, capsys):
    rc = main(["simulate", "--scenario", "nope", "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "no scenario file" in capsys.readouterr().err
