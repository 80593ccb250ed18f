import csv
import json

import pytest

from crowdcal import cli
from crowdcal.pipeline import ESTIMATE_COLUMNS, rows_to_csv


@pytest.fixture(scope="module")
def small_sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["simulate", "--preset", "railway_station", "--days", "1", "--seed", "3",
                     "--out", str(root / "sim")]) == 0
    assert cli.main(["replay", "--sim-dir", str(root / "sim"), "--out", str(root / "rep"),
                     "--salt", "00" * 32]) == 0
    return root


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_writes_logs(small_sim):
    names = {p.name for p in (small_sim / "sim").iterdir()}
    assert names == {"probes.jsonl", "camera.jsonl", "truth.jsonl", "meta.json", "topology.json"}
    meta = json.loads((small_sim / "sim" / "meta.json").read_text())
    assert meta["n_windows"] == 96


def test_replay_writes_histories(small_sim):
    with open(small_sim / "rep" / "estimates.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == ESTIMATE_COLUMNS
    assert {r["algorithm"] for r in rows} == {"proportional", "adaptive_linear_q10",
                                              "adaptive_linear_q100"}
    assert len(rows) == 96 * 2 * 3


def test_evaluate_against_itself_gives_zero(small_sim, tmp_path, capsys):
    est = small_sim / "rep" / "estimates.csv"
    code, out, _ = run(["evaluate", "--estimates", str(est), "--truth", str(est),
                        "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = json.loads((tmp_path / "report.json").read_text())["rows"]
    assert next(r for r in rows if r["algorithm"] == "proportional")["rmse"] == 0


def test_evaluate_missing_truth_window(small_sim, tmp_path, capsys):
    truth = [json.loads(line) for line in open(small_sim / "sim" / "truth.jsonl")]
    (tmp_path / "t.jsonl").write_text("".join(json.dumps(t) + "\n" for t in truth
                                              if t["window_index"] != 42))
    code, _, err = run(["evaluate", "--estimates", str(small_sim / "rep" / "estimates.csv"),
                        "--truth", str(tmp_path / "t.jsonl"), "--out", str(tmp_path / "r")],
                       capsys)
    assert code == 2
    assert "window 42" in err


def test_evaluate_truth_csv_and_figures(small_sim, tmp_path, capsys):
    truth = [json.loads(line) for line in open(small_sim / "sim" / "truth.jsonl")]
    with open(tmp_path / "t.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["window_index", "zone_id", "true_passages"], extrasaction="ignore")
        w.writeheader()
        w.writerows(truth)
    code, out, _ = run(["evaluate", "--estimates", str(small_sim / "rep" / "estimates.csv"),
                        "--truth", str(tmp_path / "t.csv"), "--out", str(tmp_path / "r"),
                        "--figures", "--errors"], capsys)
    assert code == 0
    assert out.splitlines()[0].split()[:4] == ["algorithm", "zone", "RMSE", "NRMSE"]
    produced = {p.name for p in (tmp_path / "r").iterdir()}
    assert {"report.json", "report.csv", "report.txt", "report.png", "series_M2.png",
            "errors_M2.csv"} <= produced
    assert (tmp_path / "r" / "report.png").read_bytes()[:4] == b"\x89PNG"


def test_export_csv_one_row_per_window(small_sim, capsys):
    code, out, _ = run(["export", "--history", str(small_sim / "rep" / "estimates.csv"),
                        "--zone", "M2", "--format", "csv"], capsys)
    lines = out.splitlines()
    assert code == 0
    assert lines[0] == "zone_id,window_index,window_start,raw,calibrated,coefficient,fallback"
    assert len(lines) == 1 + 96


def test_export_json_keyed_by_zone(small_sim, tmp_path, capsys):
    target = tmp_path / "series.json"
    code, _, _ = run(["export", "--history", str(small_sim / "rep" / "estimates.csv"),
                      "--format", "json", "--out", str(target), "--algorithm",
                      "adaptive_linear_q10", "--figure", str(tmp_path / "s.png")], capsys)
    doc = json.loads(target.read_text())
    assert code == 0 and set(doc) == {"M1", "M2"}
    assert set(doc["M2"][0]) == {"window_index", "window_start", "raw", "calibrated",
                                 "coefficient", "fallback"}
    assert doc["M2"][0]["fallback"] is True
    assert (tmp_path / "s_M1.png").exists() and (tmp_path / "s_M2.png").exists()


def test_export_empty_history(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    rows_to_csv([], ESTIMATE_COLUMNS, empty)
    code, out, _ = run(["export", "--history", str(empty), "--format", "csv"], capsys)
    assert code == 0
    assert out == "zone_id,window_index,window_start,raw,calibrated,coefficient,fallback\n"


def test_export_unknown_zone(small_sim, capsys):
    code, _, err = run(["export", "--history", str(small_sim / "rep" / "estimates.csv"),
                        "--zone", "Q7"], capsys)
    assert code == 2 and "Q7" in err


def test_config_file_supplies_defaults(small_sim, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"algorithm": "adaptive_linear", "q": 4,
                               "replay": {"compare": ["none"]}}))
    code, out, _ = run(["replay", "--config", str(cfg), "--sim-dir", str(small_sim / "sim"),
                        "--out", str(tmp_path / "rep"), "--n-windows", "8"], capsys)
    assert code == 0
    assert json.loads(out)["algorithms"] == ["adaptive_linear_q4"]
    code, out, _ = run(["replay", "--config", str(cfg), "--sim-dir", str(small_sim / "sim"),
                        "--out", str(tmp_path / "rep2"), "--n-windows", "8", "--q", "6",
                        "--compare", "proportional"], capsys)
    assert json.loads(out)["algorithms"] == ["adaptive_linear_q6", "proportional"]


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "blue"}))
    code, _, err = run(["simulate", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and "colour" in err


def test_replay_needs_input(tmp_path, capsys):
    code, _, err = run(["replay", "--out", str(tmp_path)], capsys)
    assert code == 2 and "nothing to replay" in err


def test_replay_lenient_skips_corrupt_lines(small_sim, tmp_path, capsys):
    probes = tmp_path / "p.jsonl"
    probes.write_text((small_sim / "sim" / "probes.jsonl").read_text() + "garbage\n")
    args = ["replay", "--probes", str(probes), "--camera", str(small_sim / "sim" / "camera.jsonl"),
            "--topology", str(small_sim / "sim" / "topology.json"), "--out", str(tmp_path / "o")]
    code, _, err = run(args, capsys)
    assert code == 2 and "p.jsonl" in err
    code, out, _ = run(args + ["--lenient"], capsys)
    assert code == 0 and json.loads(out)["skipped_lines"] == 1


def test_exactly_one_subcommand(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2
