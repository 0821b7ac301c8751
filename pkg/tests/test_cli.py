from __future__ import annotations

import pytest

from condsym import cli
from condsym.report import ReportError, loads


def _json(capsys) -> dict:
    return loads(capsys.readouterr().out)


def test_verify_entry_json(capsys):
    code = cli.main(["verify", "--entry", "thm1.i", "--params", "m=1,lam=1,lam1=1,lam2=1,lam3=0", "--json"])
    report = _json(capsys)
    assert code == 0
    assert report["status"] == "ConditionalSymmetry"
    assert report["payload"]["verdict"] == "ConditionalSymmetry"
    assert report["command"]["arguments"]["entry"] == "thm1.i"


def test_json_flag_before_subcommand(capsys):
    code = cli.main(["--json", "catalog", "list"])
    report = _json(capsys)
    assert code == 0
    assert report["payload"]["count"] == "20"


def test_negative_verdict_exit_code(capsys):
    code = cli.main(["verify", "--equation", "Vxx = Vt", "--operator", "Q = Dt + V^2*DV"])
    out = capsys.readouterr().out
    assert code == 1
    assert out.startswith("verify: NotASymmetry")
    assert "witness: 2" in out


def test_detsys_text(capsys):
    code = cli.main(["detsys", "--family", "exp-plain"])
    out = capsys.readouterr().out
    assert code == 0
    assert "xi_VV = 0" in out


def test_detsys_full_derivatives(capsys):
    cli.main(["detsys", "--family", "exp-plain", "--full", "--json"])
    report = _json(capsys)
    assert report["payload"]["equations"][0]["equation"] == "xi_VV = 0"
    assert report["command"]["arguments"]["compact"] is False


@pytest.mark.parametrize(
    "argv,code",
    [
        (["catalog", "show", "thm7"], 2),
        (["verify", "--equation", "Vxx = Vt", "--operator", "Q = Dx"], 3),
        (["verify", "--equation", "Vxx = Vt^2", "--operator", "Q = Dt"], 3),
        (["verify", "--equation", "Vxx = Vt +", "--operator", "Q = Dt"], 2),
        (["verify", "--entry", "thm1.i", "--params", "m=1"], 2),
        (["verify", "--entry", "thm2.v.quadratic", "--params", "lam=1,lam0=1,lam1=1,lam3=1"], 2),
        (["detsys", "--family", "quadratic-plain"], 2),
        (["equiv", "--op1", "Q = Dt + DV", "--op2", "Q = Dt + V*DV"], 1),
    ],
)
def test_exit_codes(capsys, argv, code):
    assert cli.main([*argv, "--json"]) == code
    assert _json(capsys)["exit_code"] == code


def test_numcheck_system(capsys):
    code = cli.main(
        ["numcheck", "--system", "ode10", "--candidate", "h=6*x^(-2)", "--params", "lam=0,lam2=0", "--json"]
    )
    report = _json(capsys)
    assert code == 0
    assert report["status"] == "pass"
    assert report["payload"]["exact"] is True


def test_mutually_exclusive_sources():
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "--entry", "thm1.i", "--equation", "Vxx = Vt"])
    assert exc.value.code == 2


def test_loads_rejects_foreign_json():
    with pytest.raises(ReportError):
        loads('{"schema": "report-v0"}')
