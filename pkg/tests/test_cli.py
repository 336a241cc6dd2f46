import csv
import io

import pytest

from fmrlnc.cli import main
from fmrlnc.config import parse_config, parse_config_text
from fmrlnc.errors import ConfigParseError


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# -- config files -------------------------------------------------------------------


def test_config_values_and_types():
    spec = parse_config_text("[experiment]\nkind = lemma2\ntrials = 50\n[field]\nq = 2^8\n[policy]\ninnovative_only = no\n")
    assert spec.kind == "lemma2"
    assert spec.get("experiment.trials") == 50
    assert spec.get("policy.innovative_only") is False
    assert spec.get("network.n", 7) == 7


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("[experiment]\nseed = 1\n[nework]\nn = 3\n", 3, "unknown section"),
        ("[network]\nn = 3\nsize = 4\n", 3, "unknown key"),
        ("[network]\n\nn = three\n", 3, "integer"),
        ("[experiment]\nkind = lemma1\ntrials = 0\n", 3, "trials"),
        ("[network]\nn = 4\nk = 2\nplacement = 1=0 1=2\n", 4, "placed twice"),
        ("[field]\nq = 6\n", 2, "q"),
        ("[network]\nn = 1\nn = 2\n", 3, "duplicate"),
        ("n = 1\n", 1, "section"),
    ],
)
def test_config_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigParseError) as info:
        parse_config_text(text, "exp.ini")
    assert info.value.line == line
    assert str(info.value).startswith(f"exp.ini:{line}: ")
    assert fragment in str(info.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigParseError):
        parse_config(tmp_path / "nope.ini")


# -- commands ------------------------------------------------------------------------


def test_lemma2_binary(capsys):
    assert main(["estimate-lemma2", "--q", "2", "--s", "1", "--trials", "20000"]) == 0
    out = rows(capsys.readouterr().out)
    nonorth = next(r for r in out if r["statistic"] == "forget_rate_nonorthogonal")
    assert abs(float(nonorth["value"]) - 0.5) < 0.02
    assert all(r["pass"] in ("1", "") for r in out)


def test_out_file_is_lf_csv(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["metrics", "--topology", "cycle:6", "--out", str(out)]) == 0
    data = out.read_bytes()
    assert b"\r" not in data
    assert data.startswith(b"experiment,case,policy,q,s,k,n,trials,statistic,value,stderr,reference,relation,pass\n")
    assert b"isoperimetric_number,2/3" in data


def test_config_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "m.ini"
    cfg.write_text("[experiment]\nkind = metrics\n[network]\ntopology = complete:4\n")
    assert main(["metrics", "--config", str(cfg)]) == 0
    assert "isoperimetric_number,1/1" in capsys.readouterr().out
    assert main(["metrics", "--config", str(cfg), "--topology", "cycle:6"]) == 0
    assert "isoperimetric_number,2/3" in capsys.readouterr().out


def test_config_kind_mismatch(tmp_path, capsys):
    cfg = tmp_path / "m.ini"
    cfg.write_text("[experiment]\nkind = lemma1\n")
    assert main(["metrics", "--config", str(cfg)]) == 1
    assert "error:" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["oracle", "--q", "5"],
        ["estimate-lemma1", "--q", "6"],
        ["estimate-lemma1", "--trials", "0"],
        ["stopping", "--placement", "1=0 1=1", "--k", "1"],
        ["metrics", "--topology", "path:21"],
        ["lemma3", "--n", "4", "--k", "4"],
    ],
)
def test_invalid_input_exits_1(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_failing_row_exits_2(capsys):
    # an edgeless graph never completes, so the completion row fails
    argv = ["stopping", "--topology", "empty:4", "--n", "4", "--k", "2", "--trials", "2", "--budget", "5"]
    assert main(argv) == 2
    out = rows(capsys.readouterr().out)
    assert next(r for r in out if r["statistic"] == "completion_rate")["pass"] == "0"


def test_simulate_trace(capsys):
    assert main(["simulate", "--n", "4", "--k", "2", "--topology", "cycle:4", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert '"event":"config"' in lines[0] and '"event":"summary"' in lines[-1]


def test_usage_error_exits_1(capsys):
    assert main(["estimate-lemma1", "--bogus"]) == 1
    assert main(["--help"]) == 0
