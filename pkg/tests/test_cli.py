import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cdrjourneys import odflow
from cdrjourneys.cli import main
from cdrjourneys.config import ConfigError, PipelineConfig, load_config, parse_config_text
from oracles import spearman_reference


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_defaults_match_published_thresholds():
    c = PipelineConfig()
    assert (c.unknown_km, c.non_trip_min, c.trip_min_duration, c.sandwich_min, c.quantile) == (100, 180, 15, 15, 0.8)
    assert c.entropy_cuts == (0.4, 0.9)


def test_precedence(tmp_path):
    conf = tmp_path / "p.conf"
    conf.write_text("# comment\nepsilon_m = 250  # inline\nquantile = 0.7\n")
    assert load_config().epsilon_m == 500
    assert load_config(conf).epsilon_m == 250
    c = load_config(conf, epsilon_m=300)
    assert (c.epsilon_m, c.quantile) == (300, 0.7)


@pytest.mark.parametrize("text", ["bogus = 1\n", "epsilon_m\n", "epsilon_m = abc\n", "days = 2015-13-01\n"])
def test_bad_config(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_non_positive_threshold_rejected():
    with pytest.raises(ValueError):
        load_config(epsilon_m=-1)


def test_missing_registry(tmp_path, capsys):
    cdr = tmp_path / "c.csv"
    cdr.write_text("")
    code, _, err = _run(["run", "--cdr", str(cdr), "--antennas", str(tmp_path / "none.csv"),
                         "--out", str(tmp_path / "o")], capsys)
    assert code != 0
    assert "registry not found" in json.loads(err)["error"]


def test_empty_cdr(tmp_path, capsys, caplog, small_city_files):
    cdr = tmp_path / "empty.csv"
    cdr.write_text("")
    out = tmp_path / "o"
    with caplog.at_level("WARNING"):
        code, _, _ = _run(["run", "--cdr", str(cdr), "--antennas", small_city_files["antennas"],
                           "--out", str(out)], capsys)
    assert code == 0
    assert any("no CDR events" in r.message for r in caplog.records)
    assert (out / "journeys.jsonl").read_text() == ""
    assert (out / "trips.csv").read_text().count("\n") == 1


def test_ingest_check(small_city_files, capsys):
    code, out, _ = _run(["ingest-check", "--cdr", small_city_files["cdr"], "--antennas",
                         small_city_files["antennas"], "--json"], capsys)
    assert code == 0 and json.loads(out)["rejected"] == 0


def test_stage_commands(small_city_files, tmp_path, capsys):
    f = small_city_files
    run_dir = tmp_path / "run"
    assert _run(["run", "--config", f["config"], "--cdr", f["cdr"], "--antennas", f["antennas"],
                 "--out", str(run_dir)], capsys)[0] == 0
    journeys = str(run_dir / "journeys.jsonl")
    assert _run(["od", "--antennas", f["antennas"], "--journeys", journeys, "--out", str(tmp_path / "od")], capsys)[0] == 0
    assert (tmp_path / "od" / "od_mean.csv").read_text() == (run_dir / "od" / "od_mean.csv").read_text()
    assert _run(["stats", "--antennas", f["antennas"], "--journeys", journeys, "--cdr", f["cdr"],
                 "--out", str(tmp_path / "st")], capsys)[0] == 0
    assert (tmp_path / "st" / "summary.csv").exists()
    code, out, _ = _run(["score", "--truth", f["truth"], "--journeys", journeys, "--antennas", f["antennas"],
                         "--json"], capsys)
    assert code == 0 and json.loads(out)["recall"] > 0.8


def _write(tmp_path, name, labels, counts, label_column=False):
    p = tmp_path / name
    lines = [("," if label_column else "") + ",".join(labels)]
    for lab, row in zip(labels, counts):
        lines.append((lab + "," if label_column else "") + ",".join(str(v) for v in row))
    p.write_text("\n".join(lines) + "\n")
    return str(p)


def test_compare_self_and_library(tmp_path, capsys):
    rng = np.random.default_rng(0)
    labels = ["A", "B", "C"]
    a, b = rng.integers(0, 9, (3, 3)), rng.integers(0, 9, (3, 3))
    pa, pb = _write(tmp_path, "a.csv", labels, a), _write(tmp_path, "b.csv", labels, b)
    code, out, _ = _run(["compare", pa, pa, "--json"], capsys)
    assert code == 0 and json.loads(out)["with_diagonal"]["rho"] == 1
    code, out, _ = _run(["compare", pa, pb, "--json"], capsys)
    res = json.loads(out)
    lib = odflow.spearman(odflow.ODMatrix(labels, a), odflow.ODMatrix(labels, b))
    assert res["with_diagonal"]["rho"] == lib.rho and res["with_diagonal"]["p_value"] == lib.p_value
    assert res["without_diagonal"]["n"] == 6


def test_compare_survey_format_against_run(default_run, tmp_path, capsys):
    paths, out, _, truth = default_run
    mean = odflow.ODMatrix.from_csv(os.path.join(out, "od", "od_mean.csv"))
    rng = np.random.default_rng(1)
    survey = mean.counts * 10 + rng.integers(0, 20, mean.counts.shape)
    ps = _write(tmp_path, "survey.csv", mean.labels, survey.astype(int), label_column=True)
    code, stdout, _ = _run(["compare", ps, os.path.join(out, "od", "od_mean.csv"), "--json"], capsys)
    assert code == 0
    expected = spearman_reference(survey.astype(int).ravel().tolist(), mean.counts.ravel().tolist())
    assert abs(json.loads(stdout)["with_diagonal"]["rho"] - expected) <= 1e-12


def test_compare_label_mismatch(tmp_path, capsys):
    pa = _write(tmp_path, "a.csv", ["A", "B"], [[1, 2], [3, 4]])
    pb = _write(tmp_path, "b.csv", ["A", "C"], [[1, 2], [3, 4]])
    code, _, err = _run(["compare", pa, pb], capsys)
    assert code != 0 and "mismatch" in json.loads(err)["error"]


def test_synth_command_and_module_entry(tmp_path):
    out = tmp_path / "s"
    r = subprocess.run([sys.executable, "-m", "cdrjourneys", "synth", "--out", str(out), "--users", "5", "--seed", "9"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert {p.name for p in out.iterdir()} == {"antennas.csv", "cdr.csv", "truth.jsonl", "pipeline.conf"}


def test_corrupt_input_names_stage(tmp_path, capsys, small_city_files):
    cdr = tmp_path / "bad.csv"
    cdr.write_text("x,y\nq\n")
    code, _, err = _run(["run", "--cdr", str(cdr), "--antennas", small_city_files["antennas"],
                         "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and json.loads(err)["stage"] == "ingest"


def test_day_selection(tmp_path, capsys):
    from cdrjourneys import synthcity
    cfg = synthcity.SynthConfig(seed=4, users=20, days=("2015-06-01", "2015-06-02"))
    f = synthcity.write_outputs(str(tmp_path / "in"), *synthcity.generate(cfg))
    out = tmp_path / "o"
    assert _run(["run", "--config", f["config"], "--cdr", f["cdr"], "--antennas", f["antennas"],
                 "--days", "2015-06-02", "--out", str(out)], capsys)[0] == 0
    assert sorted(p.name for p in (out / "od").iterdir()) == ["od_2015-06-02.csv", "od_mean.csv", "od_mean_l2rows.csv"]
    days = {json.loads(line)["day"] for line in (out / "journeys.jsonl").read_text().splitlines()}
    assert days == {"2015-06-02"}
