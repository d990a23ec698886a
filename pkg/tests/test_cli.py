import json

import numpy as np
import pytest

from rhomix.cli import main, parse_generator, read_data
from rhomix.errors import DomainError


def exit_code(args):
    with pytest.raises(SystemExit) as e:
        main.main(args)
    return e.value.code


@pytest.fixture
def normal_file(tmp_path):
    p = tmp_path / "x.txt"
    x = np.random.default_rng(0).normal(size=1000)
    p.write_text("# seeded N(0,1)\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    return p


def test_fit_single_gaussian(normal_file, capsys):
    assert exit_code(["fit", "--data", str(normal_file), "--K", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    (comp,) = out["chosen"]["components"]
    assert abs(comp["location"]) < 0.1
    assert out["n"] == 1000


def test_empty_data_file(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("# nothing\n\n")
    assert exit_code(["fit", "--data", str(p)]) == 3


def test_delta_too_large_names_constraint(normal_file, capsys):
    assert exit_code(["fit", "--data", str(normal_file), "--K", "2", "--delta", "0.75"]) == 3
    assert "(0, 1/K]" in capsys.readouterr().err


def test_unknown_flag_and_study(normal_file):
    assert exit_code(["fit", "--data", str(normal_file), "--bogus"]) == 3
    assert exit_code(["study", "nope"]) == 3
    assert exit_code(["study", "spike", "--alpha", "1.5"]) == 3


def test_budget_exhaustion_is_search_error(normal_file):
    assert exit_code(["fit", "--data", str(normal_file), "--K", "2", "--budget", "1"]) == 2


def test_help_exits_zero():
    assert exit_code(["--help"]) == 0


def test_config_flags_override(tmp_path, normal_file, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(normal_file), "K": 2}))
    assert exit_code(["fit", "--config", str(cfg), "--K", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["descriptor"] == "K=1[gaussian]"


def test_select_commands(capsys):
    gen = "0.5*gaussian:-3:1+0.5*cauchy:3:1"
    assert exit_code(["select-family", "--generate", gen, "--n", "1000", "--seed", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["j_hat"] == 1
    assert exit_code(["select-k", "--generate", "gaussian:0:1", "--n", "500"]) == 0
    assert json.loads(capsys.readouterr().out)["K_hat"] == 1


def test_study_csv_is_byte_identical(tmp_path):
    args = ["study", "rate", "--n-grid", "250,500,1000", "--replications", "2", "--seed", "7"]
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code = exit_code(args + ["--out", str(d)])
        assert code in (0, 4)
    assert (a / "rate.csv").read_bytes() == (b / "rate.csv").read_bytes()
    assert (a / "rate_summary.json").exists() and (a / "rate_runtime.csv").exists()


def test_parse_generator_and_read_data(tmp_path):
    g = parse_generator("0.4*gaussian:-2:1+0.6*gaussian:3:1.5")
    assert [float(w) for w in g.weights.fractions] == pytest.approx([0.4, 0.6])
    s = parse_generator("spike@0.5:0.7")
    assert s.specs[0].alpha == 0.5
    with pytest.raises(DomainError):
        parse_generator("gaussian")
    p = tmp_path / "d.txt"
    p.write_text("1.0\n  # c\n2.5 # tail\n")
    assert list(read_data(p)) == [1.0, 2.5]
