import csv
import filecmp
import json

import pytest

from ibalign.alignment import ANOMALY, AUTHORISED, OVERT, UNCERTAIN, VERDICTS
from ibalign.cli import main
from ibalign.config import load_config
from ibalign.fixtures import CRASH_STEPS, generate
from ibalign.pipeline import (
    CSV_COLUMNS, UNLABELLED, aggregate_by_class, class_table_rows, run_session, write_reports,
)
from ibalign.telemetry import load_session


class Rec:
    def __init__(self, ui_class, verdict):
        self.ui_class = ui_class
        self.verdict = verdict


def test_aggregate_by_class():
    recs = [Rec("Settings", AUTHORISED), Rec("Settings", AUTHORISED), Rec("Settings", ANOMALY), Rec(None, UNCERTAIN)]
    table = aggregate_by_class(recs)
    assert table["Settings"] == {AUTHORISED: 2, ANOMALY: 1, UNCERTAIN: 0}
    assert table[UNLABELLED][UNCERTAIN] == 1
    assert class_table_rows(table)[-1] == ("Total", 2, 1, 1)


@pytest.fixture(scope="module")
def reports(bundles):
    cfg = load_config(env={})
    return {k: run_session(load_session(p), cfg) for k, p in bundles.items()}


def test_benign_sessions_have_no_anomalies(reports):
    for kind in ("benign-idle", "benign-heavy"):
        r = reports[kind]
        assert r.anomalies == 0
        assert r.totals[AUTHORISED] >= 0.8 * r.totals["steps"]


def test_exfil_flagged_overt(reports):
    steps = reports["exfil"].steps
    overt = [s for s in steps if s.result.quadrant == OVERT]
    assert overt and all(s.result.M >= 0.5 for s in overt)
    assert all(s.step >= 6 for s in overt)


def test_crash_anomalies_on_crash_steps(reports):
    bad = {s.step for s in reports["crash-burst"].steps if s.verdict == ANOMALY}
    assert bad and bad <= CRASH_STEPS


def test_unscored_steps_marked(bundles, tmp_path):
    import shutil
    root = shutil.copytree(bundles["benign-idle"], tmp_path / "s")
    for d in (root / "steps").iterdir():
        for name in ("meminfo.txt", "top.txt", "flows.csv", "http.jsonl"):
            (d / name).unlink(missing_ok=True)
    r = run_session(load_session(root), load_config(env={}))
    assert all(not s.behaviour.scored and s.verdict == UNCERTAIN for s in r.steps)
    assert all(any("memory channel skipped" in d for d in s.diagnostics) for s in r.steps)


def test_reports_written(reports, tmp_path):
    paths = write_reports(reports["exfil"], tmp_path)
    assert sorted(p.name for p in paths) == ["report.json", "series.dat", "steps.csv"]
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["totals"]["steps"] == 60
    assert doc["config"]["provider"]["token"] == ""
    rows = list(csv.DictReader((tmp_path / "steps.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 60
    assert len((tmp_path / "series.dat").read_text().splitlines()) == 61


def test_class_counts_conserved(reports):
    for r in reports.values():
        rows = class_table_rows(r.classes)
        assert sum(sum(row[1:]) for row in rows[:-1]) == len(r.steps) == sum(rows[-1][1:])
        assert all(r.totals[v] == sum(c[v] for c in r.classes.values()) for v in VERDICTS)


def test_fixture_generation_is_deterministic(tmp_path):
    a = generate("exfil", tmp_path / "a", seed=7, steps=10)
    b = generate("exfil", tmp_path / "b", seed=7, steps=10)
    c = generate("exfil", tmp_path / "c", seed=8, steps=10)
    cmp = filecmp.dircmp(a / "steps" / "0007", b / "steps" / "0007")
    assert not cmp.diff_files and not cmp.left_only
    assert (a / "steps/0007/http.jsonl").read_text() != (c / "steps/0007/http.jsonl").read_text()


def test_cli_exit_codes(bundles, tmp_path, capsys):
    assert main(["analyze", "--session", str(bundles["benign-heavy"]), "--out", str(tmp_path / "b")]) == 0
    assert sorted(p.name for p in (tmp_path / "b").iterdir()) == ["report.json", "series.dat", "steps.csv"]
    assert main(["analyze", "--session", str(bundles["exfil"]), "--out", str(tmp_path / "e")]) == 2
    assert main(["analyze", "--session", str(tmp_path / "nope"), "--out", str(tmp_path / "n")]) == 1
    assert main(["analyze", "--session", str(bundles["exfil"]), "--out", str(tmp_path / "t"), "--theta", "3"]) == 1
    assert "fusion" in capsys.readouterr().err


def test_cli_multiple_sessions(bundles, tmp_path):
    args = ["analyze", "--jobs", "2", "--out", str(tmp_path)]
    for k in ("benign-idle", "exfil"):
        args += ["--session", str(bundles[k])]
    assert main(args) == 2
    assert (tmp_path / "benign-idle" / "report.json").exists()
    assert (tmp_path / "exfil" / "report.json").exists()


def test_cli_validate(bundles, tmp_path, capsys):
    assert main(["validate", str(bundles["exfil"] / "steps" / "0000" / "evidence.json")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text('{"components": [{"kind": "Button", "bbox": [0, 0, 5, 5], "confidence": 1}]}')
    assert main(["validate", str(bad)]) == 1
    assert "Button" in capsys.readouterr().out
    bad.write_text("{")
    assert main(["validate", str(bad)]) == 1


def test_cli_gen_fixture_and_constants(tmp_path, caplog):
    assert main(["gen-fixture", "benign-idle", "--out", str(tmp_path / "f"), "--steps", "5"]) == 0
    assert "using seed" in caplog.text
    assert len(list((tmp_path / "f" / "providers").iterdir())) == 5
    assert main(["gen-fixture", "bogus", "--out", str(tmp_path / "g")]) == 1
    out = tmp_path / "c.toml"
    assert main(["constants", "--corpus", str(tmp_path / "f"), "--out", str(out)]) == 0
    assert "[constants.net]" in out.read_text()


def test_cli_calibrate(tmp_path):
    import numpy as np
    rng = np.random.default_rng(1)
    t = rng.normal(size=40)
    cols = {"thr": t, "mem": rng.normal(size=40), "req": t + rng.normal(size=40) * 0.3}
    (tmp_path / "t.csv").write_text("thr,mem,req\n" + "".join(f"{a},{b},{c}\n" for a, b, c in zip(*cols.values())))
    (tmp_path / "r.json").write_text(json.dumps({"physical": {"throughput": ["thr"], "memory": ["mem"]},
                                                 "surrogate": {"requests": "req"}}))
    out = tmp_path / "frag.toml"
    assert main(["calibrate", "--table", str(tmp_path / "t.csv"), "--roles", str(tmp_path / "r.json"),
                 "--out", str(out)]) == 0
    from ibalign.config import load_config as lc
    assert lc(out, env={}).h.w_r == pytest.approx(0.75)
