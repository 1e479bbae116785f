import os

import pytest

from tvwsdb import cli, service


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "coarse.cfg"
    cfg.write_text("scenario = II\ngrid_size_m = 160\nn_sam = 50\n")
    return tmp_path, str(cfg)


def test_stage_chain(workdir, capsys):
    tmp, cfg = workdir
    out = str(tmp / "run")
    base = ["--config", cfg, "--out", out, "--seed", "3"]
    for cmd in ("simulate", "complete", "detect", "reuse", "builddb"):
        assert cli.main([cmd] + base) == 0
    text = capsys.readouterr().out
    assert "rse_db:" in text and "detection probability:" in text
    for name in (cli.TRUTH, cli.REPORTS, cli.RECOVERED, cli.MODEL, cli.MPEP, cli.DATABASE):
        assert os.path.exists(os.path.join(out, name))
    db = service.load(os.path.join(out, cli.DATABASE))
    assert db.scenario_id == "II" and db.mpep.grid.shape == (50, 50)


def test_global_flags_before_subcommand(workdir):
    tmp, cfg = workdir
    out = str(tmp / "g")
    assert cli.main(["--config", cfg, "--out", out, "builddb", "--source", "truth"]) == 0
    assert os.path.exists(os.path.join(out, cli.DATABASE))


def test_eval_writes_csv(workdir, capsys):
    tmp, _ = workdir
    out = str(tmp / "ev")
    assert cli.main(["eval", "--experiment", "baseline", "--scenario", "II", "--seeds", "1",
                     "--loc-errors", "50", "--out", out]) == 0
    assert sorted(os.listdir(out)) == ["detection_sweep.csv", "ip_bias_cdf.csv",
                                       "mpep_bias_cdf.csv", "rse_sweep.csv"]
    assert "protected 1.0000" in capsys.readouterr().out


def test_errors_are_reported(workdir, capsys):
    tmp, cfg = workdir
    assert cli.main(["complete", "--config", cfg, "--out", str(tmp / "empty")]) == 1
    assert "error:" in capsys.readouterr().err
    bad = tmp / "bad.tvwsdb"
    bad.write_bytes(b"garbage")
    assert cli.main(["serve", "--db", str(bad)]) == 1
    with pytest.raises(SystemExit):
        cli.main(["nosuch"])
