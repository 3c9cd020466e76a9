import json
import subprocess
import sys

import pytest

from egmarket.cli import main
from egmarket.scenario_io import bundled_path

TABLE1 = str(bundled_path("table1.scenario"))


def test_solve_and_certify(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["solve", TABLE1, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "certificate: PASS" in text and "energy dual total" in text
    doc = json.loads(out.read_text())
    assert doc["format"] == "egmarket-result/1" and len(doc["allocation"]) == 2
    assert main(["certify", TABLE1, str(out), "--samples", "50", "--seed", "3"]) == 0
    assert "proportional fairness: PASS" in capsys.readouterr().out


def test_certify_rejects_tampered_result(tmp_path, capsys):
    out = tmp_path / "r.json"
    main(["solve", TABLE1, "--out", str(out)])
    doc = json.loads(out.read_text())
    doc["prices"][0] *= 1.1
    out.write_text(json.dumps(doc))
    assert main(["certify", TABLE1, str(out)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_bundled_name_resolution(capsys):
    assert main(["solve", "energy_only.scenario"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_so_with_weights(capsys):
    assert main(["so", TABLE1, "--weights", "1,0"]) == 0
    text = capsys.readouterr().out
    assert "weights: 1, 0" in text
    with pytest.raises(SystemExit):
        main(["so", TABLE1, "--weights", "1,2,3"])


def test_sweep(tmp_path, capsys):
    assert main(["sweep", TABLE1, "--out", str(tmp_path), "--only", "budget"]) == 0
    assert (tmp_path / "budget.csv").exists() and (tmp_path / "budget.plot.csv").exists()
    assert "9 points, 9 certified, 0 failed" in capsys.readouterr().out


def test_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text("resources: [\n")
    assert main(["solve", str(bad)]) == 2
    assert "parse error" in capsys.readouterr().err
    assert main(["solve", str(tmp_path / "missing.scenario")]) == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "egmarket.cli", "solve", "linear_2x2.scenario"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "PASS" in res.stdout
