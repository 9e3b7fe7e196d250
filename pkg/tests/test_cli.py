import csv
import io
import json
import shutil
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from mechlab import __version__
from mechlab.cli import EXIT_NEGATIVE, EXIT_OK, EXIT_USAGE, main, parse_params


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def schema(name):
    text = resources.files("mechlab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


class TestParams:
    def test_plain_and_dotted(self):
        out = parse_params(["g=beta", "g.alpha=2", "g.beta=0.5", "orientation=imv"])
        assert out == {"g": {"family": "beta", "alpha": 2.0, "beta": 0.5}, "orientation": "imv"}

    def test_dotted_before_family(self):
        assert parse_params(["g.lam=1.5", "g=exponential"]) == {"g": {"lam": 1.5, "family": "exponential"}}

    def test_malformed(self, capsys):
        code, _, err = run(capsys, "sc-check", "--family", "uniform", "--params", "oops")
        assert code == EXIT_USAGE
        assert "k=v" in err


class TestScCheck:
    def test_uniform_holds(self, capsys):
        code, out, _ = run(capsys, "sc-check", "--family", "uniform", "--n", "51")
        doc = json.loads(out)
        jsonschema.validate(doc, schema("sc_check"))
        assert code == EXIT_OK
        assert doc["result"]["verdicts"] == {"sch": "Holds", "scv": "Holds", "scd": "Holds"}
        assert doc["config"]["n"] == 51
        assert doc["version"] == __version__

    def test_failing_family_exit(self, capsys):
        code, out, _ = run(
            capsys, "sc-check", "--family", "ordered_decreasing", "--params", "g=exponential", "g.lam=-5", "--n", "51"
        )
        assert code == EXIT_NEGATIVE
        assert json.loads(out)["result"]["holds"] is False

    def test_imv_sch_only(self, capsys):
        code, out, _ = run(capsys, "sc-check", "--family", "example3", "--n", "31")
        assert code == EXIT_OK
        assert set(json.loads(out)["result"]["verdicts"]) == {"sch"}

    def test_imv_scv_is_usage_error(self, capsys):
        code, _, _ = run(capsys, "sc-check", "--family", "example3", "--conditions", "scv")
        assert code == EXIT_USAGE

    def test_density_file(self, capsys, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(json.dumps({"kind": "uniform", "a": 0.5, "orientation": "dmv"}))
        code, out, _ = run(capsys, "sc-check", "--density-file", str(path), "--n", "31")
        assert code == EXIT_OK
        assert json.loads(out)["config"]["density"]["a"] == 0.5

    def test_malformed_density_file(self, capsys, tmp_path):
        path = tmp_path / "d.json"
        path.write_text("{not json")
        code, _, _ = run(capsys, "sc-check", "--density-file", str(path))
        assert code == EXIT_USAGE

    def test_bad_flags(self, capsys):
        assert run(capsys, "sc-check", "--family", "nope")[0] == EXIT_USAGE
        assert run(capsys, "sc-check", "--family", "uniform", "--tol", "-1")[0] == EXIT_USAGE
        assert run(capsys, "sc-check", "--family", "uniform", "--conditions", "xyz")[0] == EXIT_USAGE
        assert run(capsys, "sc-check")[0] == EXIT_USAGE

    def test_out_file(self, capsys, tmp_path):
        path = tmp_path / "r.json"
        code, out, _ = run(capsys, "sc-check", "--family", "uniform", "--n", "21", "--out", str(path))
        assert code == EXIT_OK and out == ""
        assert json.loads(path.read_text())["command"] == "sc-check"

    def test_byte_identical_reruns(self, capsys):
        argv = ("sc-check", "--family", "ordered_decreasing", "--params", "g=power", "g.alpha=2", "--n", "41")
        first = run(capsys, *argv)[1]
        second = run(capsys, *argv)[1]
        assert first == second


class TestOtherCommands:
    def test_lp_verify(self, capsys):
        code, out, _ = run(capsys, "lp-verify", "--family", "uniform", "--n", "6")
        doc = json.loads(out)
        jsonschema.validate(doc, schema("lp_verify"))
        assert code == EXIT_OK
        assert doc["result"]["within_bound"] is True
        assert doc["config"]["tol"] == 1e-6

    def test_lp_verify_csv(self, capsys):
        code, out, _ = run(capsys, "lp-verify", "--family", "uniform", "--n", "3", "--format", "csv")
        rows = list(csv.reader(io.StringIO(out)))
        assert code == EXIT_OK
        assert rows[0] == ["v1", "v2", "q1", "q2", "t"]
        assert len(rows) == 7
        float(rows[1][0])

    def test_lp_verify_grid_cap(self, capsys):
        assert run(capsys, "lp-verify", "--family", "uniform", "--n", "40")[0] == EXIT_USAGE

    def test_imv_bundle(self, capsys):
        code, out, _ = run(capsys, "imv-bundle", "--family", "ordered_increasing", "--params", "g=uniform")
        doc = json.loads(out)
        jsonschema.validate(doc, schema("imv_bundle"))
        assert code == EXIT_OK
        assert doc["result"]["price"] == pytest.approx(0.816496580927726, abs=1e-9)

    def test_imv_bundle_rejects_dmv(self, capsys):
        assert run(capsys, "imv-bundle", "--family", "uniform")[0] == EXIT_USAGE

    def test_phi_dump_csv(self, capsys):
        code, out, _ = run(capsys, "phi-dump", "--family", "uniform", "--n", "5")
        rows = list(csv.reader(io.StringIO(out)))
        assert code == EXIT_OK
        assert rows[0] == ["v1", "v2", "phi"]
        # (n + 1) n / 2 support points; phi = 6 v1 - 4
        assert len(rows) == 1 + 15
        for v1, _, value in rows[1:]:
            assert float(value) == pytest.approx(6 * float(v1) - 4, abs=1e-12)

    def test_phi_dump_json(self, capsys):
        code, out, _ = run(capsys, "phi-dump", "--family", "uniform", "--n", "3", "--format", "json")
        jsonschema.validate(json.loads(out), schema("phi_dump"))

    def test_optimize(self, capsys):
        code, out, _ = run(capsys, "optimize", "--family", "uniform", "--sc-n", "41")
        doc = json.loads(out)
        jsonschema.validate(doc, schema("optimize"))
        assert code == EXIT_OK
        assert doc["result"]["regime"] == "Interior"
        assert doc["result"]["sc"] == {"sch": "Holds", "scv": "Holds", "scd": "Holds"}

    def test_sweep_csv(self, capsys):
        code, out, _ = run(capsys, "sweep", "--family", "uniform", "--param", "a", "--from", "0.2", "--to", "0.25", "--n", "2")
        rows = list(csv.reader(io.StringIO(out)))
        assert code == EXIT_OK
        assert rows[0] == ["param", "p1", "p2", "regime", "revenue"]
        assert [r[3] for r in rows[1:]] == ["Bundle", "Bundle"]

    def test_sweep_json(self, capsys, monkeypatch):
        monkeypatch.setenv("MECHLAB_THREADS", "2")
        code, out, _ = run(
            capsys, "sweep", "--family", "uniform", "--param", "a", "--from", "0.2", "--to", "0.25", "--n", "2", "--format", "json"
        )
        doc = json.loads(out)
        jsonschema.validate(doc, schema("sweep"))
        assert [r["param"] for r in doc["result"]["rows"]] == [0.2, 0.25]

    def test_density_error_exit(self, capsys):
        code, _, err = run(capsys, "sc-check", "--family", "ordered_decreasing", "--params", "g=beta", "g.alpha=0.5")
        assert code in (EXIT_NEGATIVE, EXIT_USAGE)
        assert err


def test_console_script():
    exe = shutil.which("mechlab")
    cmd = [exe] if exe else [sys.executable, "-m", "mechlab.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True, check=True)
    assert __version__ in out.stdout
