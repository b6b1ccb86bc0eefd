import csv

import pytest

from tfelab.cli import ConfigError, RunConfig, load_config, main, parse_config


def _cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _verdicts(out):
    with open(out / "verdicts.csv") as fh:
        return list(csv.DictReader(fh))


def test_parse_config_and_echo(tmp_path):
    kw = parse_config("grid.M = 64  # comment\n\nscenario.times = 1e-3, 2e-3\nnorm.p = 5\n")
    assert kw == {"M": 64, "times": (1e-3, 2e-3), "p": 5.0}
    cfg = RunConfig(**kw)
    again = RunConfig(**parse_config(cfg.echo()))
    assert again == cfg
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("grid.Q = 3")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("grid.M = many")
    with pytest.raises(ConfigError):
        RunConfig(M=0)
    assert load_config(None, seed=4).seed == 4
    assert RunConfig(n=2).p == 5.0


def test_verify_passes_by_default(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["verify", "--out", str(out), "--quiet"]) == 0
    rows = _verdicts(out)
    assert rows and all(r["passed"] == "1" for r in rows)
    assert (out / "config.txt").read_text() == RunConfig().echo()


def test_verify_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["verify", "--out", str(a), "--quiet"])
    main(["verify", "--out", str(b), "--quiet"])
    assert (a / "verdicts.csv").read_text() == (b / "verdicts.csv").read_text()


def test_verify_uniform_grid_fails_quadrature(tmp_path, capsys):
    out = tmp_path / "v"
    code = main(["verify", "--config", str(_cfg(tmp_path, "grid.gamma = 1\n")), "--out", str(out), "--quiet"])
    assert code == 1
    bad = {r["check"] for r in _verdicts(out) if r["passed"] != "1"}
    assert "quadrature_sqrt_exp" in bad
    assert "quadrature_sqrt_exp" in capsys.readouterr().err


def test_usage_and_config_errors(tmp_path):
    assert main([]) == 2
    assert main(["verify", "--config", str(_cfg(tmp_path, "grid.M 12\n"))]) == 2
    assert main(["verify", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["simulate", "--config", str(_cfg(tmp_path, "scenario.name = spiral\n")),
                 "--out", str(tmp_path / "s")]) == 2


SMALL = "grid.M = 64\ngrid.Xmax = 4\ntime.T = 0.02\ntime.dt = 1e-3\n"


def test_simulate_flat_gives_zero(tmp_path):
    out = tmp_path / "flat"
    code = main(["simulate", "--config", str(_cfg(tmp_path, SMALL + "scenario.name = flat\n")),
                 "--out", str(out), "--quiet"])
    assert code == 0
    vals = dict(csv.reader(open(out / "norms.csv")))
    assert float(vals["xp_norm"]) == 0 and float(vals["film_xp_seminorm"]) == 0


def test_simulate_film_and_norms_round_trip(tmp_path):
    out = tmp_path / "film"
    text = SMALL.replace("1e-3", "5e-4") + "scenario.tests = 5\n"
    assert main(["simulate", "--config", str(_cfg(tmp_path, text)), "--out", str(out), "--quiet"]) == 0
    assert {"trajectory", "energy.csv", "free_boundary.csv", "norms.csv"} <= {p.name for p in out.iterdir()}
    ran = dict(list(csv.reader(open(out / "norms.csv")))[1:])
    out2 = tmp_path / "n"
    assert main(["norms", str(out), "--out", str(out2), "--quiet"]) == 0
    again = dict(list(csv.reader(open(out2 / "norms.csv")))[1:])
    for k in ("xp_norm", "film_xp_seminorm"):
        assert float(again[k]) == pytest.approx(float(ran[k]), rel=1e-12)


def test_simulate_large_data_exit_1(tmp_path, capsys):
    code = main(["simulate", "--config", str(_cfg(tmp_path, SMALL + "scenario.epsilon = 0.5\n")),
                 "--out", str(tmp_path / "big"), "--quiet"])
    assert code == 1
    assert "contraction failure" in capsys.readouterr().err


def test_green_rejects_short_times(tmp_path, capsys):
    text = "grid.M = 256\nscenario.sources = 1\nscenario.widths = 0.1\nscenario.times = 1e-7, 1e-3\nscenario.steps = 50\n"
    assert main(["green", "--config", str(_cfg(tmp_path, text)), "--out", str(tmp_path / "g")]) == 2
    assert "rejected" in capsys.readouterr().err


def test_norms_missing_run(tmp_path):
    assert main(["norms", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 2
