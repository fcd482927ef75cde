"""Command-line interface: parsing, exit codes, and output files."""

import pytest

from ehdg.cli import UsageError, main, parse_config, parse_kv_lines


# -- key=value parsing ---------------------------------------------------------


def test_kv_lines_skip_comments_and_blanks():
    lines = [
        "# full comment",
        "",
        "   ",
        "case=transport2d-smooth   # trailing comment",
        " p = 3 ",
    ]
    pairs = parse_kv_lines(lines, "test")
    assert pairs == {"case": "transport2d-smooth", "p": "3"}


def test_kv_lines_unknown_key_names_origin_and_line():
    with pytest.raises(UsageError, match=r"myfile:2: unknown key 'bogus'"):
        parse_kv_lines(["p=1", "bogus=7"], "myfile")


def test_kv_lines_missing_equals_names_origin_and_line():
    with pytest.raises(UsageError, match=r"myfile:1: expected key=value"):
        parse_kv_lines(["just a token"], "myfile")


def test_parse_config_defaults():
    cfg = parse_config("solve")
    assert cfg.command == "solve"
    assert cfg.case == "transport2d-smooth"
    assert cfg.nel == (16,)
    assert cfg.p == 1
    assert cfg.dt is None and cfg.steps is None
    assert cfg.stopping == "error-difference"
    assert cfg.tol == 1e-10
    assert cfg.table == "both"


def test_parse_config_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# header\ncase=transport2d-smooth\nnel=4\np=2\ntol=1e-8\n")
    cfg = parse_config("solve", str(path), ["p=1"])
    assert cfg.p == 1          # override wins
    assert cfg.tol == 1e-8     # file value survives
    assert cfg.nel == (4,)


def test_parse_config_missing_file():
    with pytest.raises(UsageError, match="cannot read config file"):
        parse_config("solve", "/nonexistent/run.cfg")


def test_workers_env_honored(monkeypatch):
    monkeypatch.setenv("EHDG_WORKERS", "3")
    assert parse_config("solve").workers == 3
    monkeypatch.setenv("EHDG_WORKERS", "0")
    with pytest.raises(UsageError, match="EHDG_WORKERS"):
        parse_config("solve")


@pytest.mark.parametrize(
    "token",
    ["p=0", "tol=-1", "tol=nope", "stopping=bogus", "case=unknown-case",
     "nel=0", "table=3", "frob=1"],
)
def test_bad_tokens_exit_1(token, capsys):
    assert main(["solve", token]) == 1
    assert "usage error" in capsys.readouterr().err


def test_bad_workers_env_exit_1(monkeypatch, capsys):
    monkeypatch.setenv("EHDG_WORKERS", "many")
    assert main(["solve", "case=transport2d-smooth", "nel=4", "p=1"]) == 1
    assert "EHDG_WORKERS" in capsys.readouterr().err


# -- solve ----------------------------------------------------------------------


def test_solve_steady_writes_outputs(tmp_path):
    rc = main([
        "solve", "case=transport2d-smooth", "nel=4", "p=1",
        f"outdir={tmp_path}",
    ])
    assert rc == 0
    conv = tmp_path / "transport2d-smooth-p1-nel4-convergence.csv"
    field = tmp_path / "transport2d-smooth-p1-nel4-field.txt"
    assert conv.is_file() and field.is_file()
    lines = conv.read_text().splitlines()
    assert lines[0] == "iteration,error_vs_exact,successive_diff,skeleton_norm"
    first = lines[1].split(",")
    assert int(first[0]) == 1
    assert field.stat().st_size > 0


def test_solve_reruns_byte_identical(tmp_path):
    args = ["solve", "case=transport2d-smooth", "nel=4", "p=2", "workers=1"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(args + [f"outdir={out_a}"]) == 0
    assert main(args + [f"outdir={out_b}"]) == 0
    name = "transport2d-smooth-p2-nel4-convergence.csv"
    assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_solve_iteration_cap_exit_2(tmp_path, capsys):
    rc = main([
        "solve", "case=transport2d-smooth", "nel=4", "p=1",
        "max_iters=3", f"outdir={tmp_path}",
    ])
    assert rc == 2
    assert "did not converge" in capsys.readouterr().err


def test_solve_transient_writes_steps_csv(tmp_path):
    rc = main([
        "solve", "case=shallow-standing-wave", "nel=4", "p=1",
        "dt=1e-3", "steps=3", f"outdir={tmp_path}",
    ])
    assert rc == 0
    steps = tmp_path / "shallow-standing-wave-p1-nel4-steps.csv"
    lines = steps.read_text().splitlines()
    assert lines[0] == "step,time,iterations,error_vs_exact"
    assert len(lines) == 4
    last = lines[-1].split(",")
    assert int(last[0]) == 3
    assert abs(float(last[1]) - 3e-3) < 1e-15


def test_solve_config_file_flag(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("case=transport2d-smooth\nnel=4\np=2\n")
    rc = main(["solve", "p=1", f"outdir={tmp_path}", "-c", str(path)])
    assert rc == 0
    # override p=1 beat the file's p=2
    assert (tmp_path / "transport2d-smooth-p1-nel4-convergence.csv").is_file()


# -- study ----------------------------------------------------------------------


def test_study_writes_rate_table(tmp_path):
    rc = main([
        "study", "case=transport2d-smooth", "nels=4,8", "ps=1",
        f"outdir={tmp_path}",
    ])
    assert rc == 0
    lines = (tmp_path / "transport2d-smooth-study.csv").read_text().splitlines()
    assert lines[0] == "case,p,nel,h,error,order,iterations"
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 2
    assert rows[0][5] == ""           # no order on the coarsest mesh
    order = float(rows[1][5])
    assert 1.5 < order < 2.5          # p=1 pair refines at second order
    assert float(rows[1][4]) < float(rows[0][4])


# -- tables ---------------------------------------------------------------------


def test_tables_smoke_table1(tmp_path):
    rc = main(["tables", "table=1", "nels=4", "ps=1", f"outdir={tmp_path}"])
    assert rc == 0
    lines = (tmp_path / "table1-iterations.csv").read_text().splitlines()
    assert lines[0] == "case,nel,p,iterations"
    assert len(lines) == 4            # three steady cases, one cell each
    cells = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
    assert cells["transport2d-smooth"][1] == "16"
    assert cells["transport3d-steady"][1] == "64"
    assert all(int(row[3]) > 0 for row in cells.values())


def test_tables_smoke_table2(tmp_path):
    rc = main([
        "tables", "table=2", "nels=2", "ps=1", "steps=2",
        f"outdir={tmp_path}",
    ])
    assert rc == 0
    lines = (tmp_path / "table2-iterations.csv").read_text().splitlines()
    assert lines[0] == "case,nel,p,dt,steps,iterations_per_step"
    assert len(lines) == 5            # two cases x two step sizes
    for ln in lines[1:]:
        row = ln.split(",")
        assert row[4] == "2"
        assert int(row[5]) >= 1


# -- verify ---------------------------------------------------------------------


def test_verify_transport_passes(capsys):
    rc = main(["verify", "case=transport2d-smooth", "nel=4", "p=1"])
    assert rc == 0
    out = capsys.readouterr().out
    for name in ("iterate-vs-direct", "flux-jump-iterate",
                 "flux-jump-direct", "iteration-converged"):
        assert f"PASS  {name}" in out
    assert "FAIL" not in out


def test_verify_shallow_passes(capsys):
    rc = main([
        "verify", "case=shallow-standing-wave", "nel=4", "p=1", "dt=1e-3",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "PASS  mass-conservation" in out
    assert "FAIL" not in out


def test_verify_detects_flux_defect(monkeypatch, capsys):
    import ehdg.cli as cli_mod

    monkeypatch.setattr(
        cli_mod, "flux_jump_residual", lambda *a, **k: 1.0
    )
    rc = main(["verify", "case=transport2d-smooth", "nel=4", "p=1"])
    assert rc == 3
    out = capsys.readouterr().out
    assert "FAIL  flux-jump-iterate" in out


# -- argument surface -----------------------------------------------------------


def test_unknown_command_rejected(capsys):
    assert main(["frobnicate"]) == 1
    assert "invalid choice" in capsys.readouterr().err
