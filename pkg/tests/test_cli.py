import json
import os
import subprocess
import sys

import pytest

from logtensor import cli
from logtensor.errors import NoRun, ParseError
from logtensor.reports import CheckReport

SCENARIO = """\
seed: 1
tolerance: 1e-9
modules:
  A: {momentum: "1/2", jordan_rank: 2, trunc: 3}
intertwiners:
  Y: {momenta: ["1/2", "1/3"], ranks: [2, 1], trunc: 3}
maps:
  I: {intertwiner: Y, z: 2, p: 0}
suites:
  - {suite: module, object: A}
  - {suite: intertwiner, object: Y, count: 3}
  - {suite: pz, object: I}
  - {suite: comb, kmax: 4}
"""


def run_cli(*argv, capsys):
    code = cli.main(list(argv))
    return code, capsys.readouterr()


def test_comb_reports_91_rows(capsys):
    code, out = run_cli("verify", "comb", "--kmax", "12", "--format", "json", capsys=capsys)
    assert code == 0
    doc = json.loads(out.out)
    (suite,) = doc["suites"]
    rows = {c["tag"]: c for c in suite["checks"]}["ordered-sum-identity"]
    assert rows["notes"]["rows"] == 91 and rows["passed"]
    assert doc["summary"]["passed"] is True


def test_json_is_byte_stable(capsys):
    _, a = run_cli("verify", "series", "--order", "5", "--trials", "4", "--format", "json", capsys=capsys)
    _, b = run_cli("verify", "series", "--order", "5", "--trials", "4", "--format", "json", capsys=capsys)
    assert a.out == b.out
    assert "seconds" not in a.out


def test_timing_is_opt_in(capsys):
    _, out = run_cli("verify", "comb", "--kmax", "3", "--format", "json", "--timing", capsys=capsys)
    assert "seconds" in json.loads(out.out)["suites"][0]


def test_tsv_format(capsys):
    code, out = run_cli("verify", "comb", "--kmax", "3", "--format", "tsv", capsys=capsys)
    lines = out.out.splitlines()
    assert code == 0 and lines[0].split("\t") == ["suite", "check", "passed", "checked", "failed"]
    assert all(line.split("\t")[2] == "true" for line in lines[1:])


def test_nonpositive_tolerance_rejected(capsys):
    code, out = run_cli("verify", "series", "--tol", "0", capsys=capsys)
    assert code == 2 and "tol" in out.err


def test_scenario_run_and_outputs(tmp_path, capsys):
    path = tmp_path / "s.yaml"
    path.write_text(SCENARIO + f"output: {{json: {tmp_path / 'r.json'}, text: {tmp_path / 'r.txt'}}}\n")
    code, out = run_cli("run", str(path), capsys=capsys)
    assert code == 0 and out.out == ""
    doc = json.loads((tmp_path / "r.json").read_text())
    assert [s["suite"] for s in doc["suites"]] == ["module:A", "intertwiner:Y", "pz:I", "comb"]
    assert "checks passed" in (tmp_path / "r.txt").read_text()
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".logtensor-")]


def test_threads_keep_order(tmp_path, capsys, monkeypatch):
    path = tmp_path / "s.yaml"
    path.write_text(SCENARIO)
    _, serial = run_cli("run", str(path), "--format", "json", capsys=capsys)
    monkeypatch.setenv("LOGTENSOR_THREADS", "3")
    _, threaded = run_cli("run", str(path), "--format", "json", capsys=capsys)
    assert serial.out == threaded.out


@pytest.mark.parametrize("text,line,fragment", [
    ("maps:\n  I: {intertwiner: Nope, z: 2}\n", 2, "undeclared intertwiner"),
    ("suites:\n  - {suite: pz, object: J}\n", 2, "undeclared map"),
    ("tolerance: -1\n", 1, "positive"),
    ("suites:\n  - {suite: bogus}\n", 2, "suite"),
    ("colour: red\n", 1, "unknown key"),
    ("modules: [1, 2\n", 2, "malformed"),
])
def test_scenario_errors_are_located(text, line, fragment):
    with pytest.raises(ParseError) as err:
        cli.Scenario(text)
    assert err.value.line == line and fragment in str(err.value)


def test_bad_scenario_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("maps:\n  I: {intertwiner: Nope}\n")
    code, out = run_cli("run", str(path), capsys=capsys)
    assert code == 2 and "line 2" in out.err


def test_empty_run_is_empty_report(tmp_path, capsys):
    path = tmp_path / "e.yaml"
    path.write_text("suites: []\n")
    code, out = run_cli("run", str(path), "--format", "json", capsys=capsys)
    doc = json.loads(out.out)
    assert code == 0 and doc["suites"] == [] and doc["summary"]["checks"] == 0


def test_render_without_run():
    with pytest.raises(NoRun):
        cli.render(None)


def test_failures_set_exit_status_and_are_named():
    bad = CheckReport("made-up-identity")
    bad.record(False, k=3)
    run = cli.execute([("demo", lambda: [bad])])
    assert not run.passed
    text = cli.render(run, "text")
    assert "FAIL made-up-identity" in text and "k=3" in text


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "logtensor", "verify", "comb", "--kmax", "2"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "ordered-sum-identity" in out.stdout
