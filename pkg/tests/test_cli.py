import json

import pytest

from lcphase import cli
from lcphase.cli import EXIT_INTERRUPT, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, EXIT_VERIFY, RunConfig, main
from lcphase.spectra import ConvergenceError

FAST = ["--grid", "9", "--search-resolution", "2,4,2", "--refine-steps", "10"]


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    d = tmp_path / "cache"
    monkeypatch.setenv(cli.CACHE_ENV, str(d))
    return d


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_eig_zero_charge(capsys):
    assert main(["eig", "--q", "0", "--tau", "1", "--grid", "17"]) == EXIT_OK
    assert abs(_json(capsys)["result"]["eigenvalue"]) <= 1e-8


def test_eig_dirichlet_above_neumann(capsys):
    main(["eig", "--q", "5", "--tau", "1", "--grid", "17", "--bc", "dirichlet"])
    d = _json(capsys)["result"]["eigenvalue"]
    main(["eig", "--q", "5", "--tau", "1", "--grid", "17"])
    assert d > _json(capsys)["result"]["eigenvalue"]


@pytest.mark.parametrize(
    "argv",
    [
        ["eig", "--grid", "4", "--q", "1", "--tau", "1"],
        ["eig", "--q", "1"],
        ["eig", "--q", "-1", "--tau", "1"],
        ["eig", "--q", "1", "--tau", "1", "--quat", "1,0,0"],
        ["eig", "--q", "1", "--tau", "1", "--quat", "0,0,0,0"],
        ["eig", "--q", "1", "--tau", "1", "--bc", "robin"],
        ["nosuchcommand"],
        ["verify", "--suite", "nosuch"],
        ["scan", "--q", "5", "--tau", "1"],
        ["theta0", "--resolution", "20"],
        ["eig", "--q", "1", "--tau", "1", "--tol", "0"],
    ],
)
def test_bad_flags_exit_1(argv):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_quaternion_renormalized_with_warning(capsys, caplog):
    assert main(["eig", "--q", "3", "--tau", "1", "--grid", "9", "--quat", "2,0,0,0"]) == EXIT_OK
    assert _json(capsys)["params"]["rotation"] == [1.0, 0.0, 0.0, 0.0]
    assert "renormalizing" in caplog.text


def test_solver_failure_exit_2(monkeypatch):
    def boom(*a, **k):
        raise ConvergenceError("no")

    monkeypatch.setattr(cli, "helical_eigenvalue", boom)
    assert main(["eig", "--q", "1", "--tau", "1", "--grid", "9", "--no-cache"]) == EXIT_SOLVER


def test_interrupt_exit(monkeypatch):
    def stop(*a, **k):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli, "helical_eigenvalue", stop)
    assert main(["eig", "--q", "1", "--tau", "1", "--grid", "9", "--no-cache"]) == EXIT_INTERRUPT


def test_verification_failure_exit_3(monkeypatch, capsys):
    rows = [{"suite": "spectral", "check": "x", "passed": False, "value": 1.0, "threshold": 0.0}]
    monkeypatch.setattr(cli, "run_suite", lambda name, grid, opts: rows)
    assert main(["verify", "--suite", "spectral", "--grid", "9", "--no-cache"]) == EXIT_VERIFY
    assert "FAIL" in capsys.readouterr().out


def test_verify_appendix_a(capsys, tmp_path):
    out = tmp_path / "o"
    assert main(["verify", "--suite", "appendix-a", "--grid", "17", "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "FAIL" not in text and "PASS" in text
    payload = json.loads((out / "verify.json").read_text())
    assert payload["format_version"] == 1 and all(r["passed"] for r in payload["result"])


def test_cache_hit_equals_recompute(cache_dir, capsys):
    argv = ["mustar", "--q", "3", "--tau", "1", *FAST]
    main(argv)
    first = capsys.readouterr().out
    files = list(cache_dir.glob("*.json"))
    assert len(files) == 1
    entry = json.loads(files[0].read_text())
    assert entry["version"] and entry["created_at"] and entry["key"] == files[0].stem
    main(argv)
    assert capsys.readouterr().out == first
    main(argv + ["--no-cache"])
    assert capsys.readouterr().out == first


def test_tampered_cache_entry_is_ignored(cache_dir, capsys):
    argv = ["theta0"]
    main(argv)
    good = capsys.readouterr().out
    path = next(cache_dir.glob("*.json"))
    entry = json.loads(path.read_text())
    entry["value"]["theta0"] = 123.0
    path.write_text(json.dumps(entry))
    main(argv)
    assert capsys.readouterr().out == good


def test_version_in_cache_key():
    cfg = RunConfig()
    k1 = cli.ResultCache.key("eig", cfg, {"q": 1})
    old = cli.__version__
    try:
        cli.__version__ = "0.0.0-old"
        assert cli.ResultCache.key("eig", cfg, {"q": 1}) != k1
    finally:
        cli.__version__ = old


def test_config_file_then_flags(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# reference\ngrid = 11\nL = 2.0\nsearch_resolution = 2,4,2\n")
    main(["eig", "--q", "0", "--tau", "1", "--config", str(conf)])
    c = _json(capsys)["config"]
    assert c["grid"] == 11 and c["L"] == 2.0 and c["search_resolution"] == [2, 4, 2]
    main(["eig", "--q", "0", "--tau", "1", "--config", str(conf), "--grid", "9"])
    assert _json(capsys)["config"]["grid"] == 9


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("nosuchkey = 1\n")
    assert main(["theta0", "--config", str(bad)]) == EXIT_USAGE
    bad.write_text("grid 17\n")
    assert main(["theta0", "--config", str(bad)]) == EXIT_USAGE
    assert main(["theta0", "--config", str(tmp_path / "missing.conf")]) == EXIT_USAGE


def test_config_hash_is_canonical_and_ignores_plumbing():
    a = RunConfig(workers=1, out="x", cache_dir="y")
    b = RunConfig(workers=7)
    assert a.canonical() == b.canonical() and a.digest() == b.digest()
    assert RunConfig(grid=9).digest() != a.digest()
    assert json.loads(a.canonical()) == a.hashed()


def test_scan_writes_csv_and_svg(tmp_path, capsys):
    out = tmp_path / "scan"
    argv = ["scan", "--q", "3", "--tau", "1", "--kappa-sq-ratios", "0.5,1.0,2.0", "--out", str(out), *FAST]
    assert main(argv) == EXIT_OK
    payload = _json(capsys)
    assert [p["classification"] for p in payload["result"]] == ["Nematic", "Critical", "Smectic"]
    assert (out / "scan.csv").read_text().count("\n") == 4
    assert (out / "scan.svg").read_text().startswith("<svg")


def test_minimize_command(tmp_path, capsys):
    out = tmp_path / "m"
    argv = ["minimize", "--q", "3", "--tau", "1", "--kappa", "2", "--mode", "Fdir", "--K1", "5",
            "--seeds", "0,1", "--out", str(out), *FAST]
    assert main(argv) == EXIT_OK
    res = _json(capsys)["result"]
    assert res["mode"] == "Fdir" and res["converged"] and res["g_value"] < 0
    assert (out / "minimize_Fdir_psi.bin").exists()


def test_theta0_command(capsys):
    assert main(["theta0"]) == EXIT_OK
    assert _json(capsys)["result"]["theta0"] == pytest.approx(0.5901, abs=1e-3)
