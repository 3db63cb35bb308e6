import csv
import json

import jsonschema
import numpy as np
import pytest

from kfsi import cli, config as cfgmod
from kfsi.galerkin_core import LEDGER_HEADER


def _outputs(path, kind):
    return sorted(path.glob(f"{kind}-*"))


def test_run_zero_preset(tmp_path, capsys):
    assert cli.main(["run", "--preset", "zero", "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "horizon"
    (ledger,) = _outputs(tmp_path, "ledger")
    rows = list(csv.reader(ledger.open(encoding="utf-8")))
    assert tuple(rows[0]) == LEDGER_HEADER
    body = np.array(rows[1:], dtype=float)
    assert np.all(body[:, 1:7] == 0.0)
    (outcome,) = _outputs(tmp_path, "outcome")
    report = json.loads(outcome.read_text(encoding="utf-8"))
    jsonschema.validate(report, cfgmod.schema("report.schema.json"))
    assert report["outcome"]["windows"][0]["iterations"] == 1


def test_snapshot_layout(tmp_path):
    assert cli.main(["run", "--preset", "zero", "--out", str(tmp_path)]) == 0
    (snap,) = _outputs(tmp_path, "snapshot")
    raw = snap.read_bytes()
    assert raw[:16] == b"KFSI-SNAP\0\0\0\0\0\0\0"
    s = cli.read_snapshot(snap)
    assert (s["dim"], s["n_s"], s["n_f"]) == (2, 8, 32)
    assert s["times"].shape == (21,) and s["alpha"].shape == (21, 40)
    assert len(raw) == 36 + 8 * (21 + 21 * 40 + 21 * 8)


def test_snapshot_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    t, a, c = np.linspace(0, 1, 4), rng.normal(size=(4, 7)), rng.normal(size=(4, 3))
    cli.write_snapshot(tmp_path / "s.bin", 3, t, a, c)
    s = cli.read_snapshot(tmp_path / "s.bin")
    assert s["n_f"] == 4
    np.testing.assert_array_equal(s["alpha"], a)
    np.testing.assert_array_equal(s["coeffs"], c)


def test_runs_are_byte_identical(tmp_path):
    args = ["run", "--preset", "plate-pulse", "--set", "time.horizon=0.1", "--set", "time.window=0.1",
            "--set", "time.dt=0.005", "--set", "basis.n_f=8", "--set", "basis.n_s=4"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    (la,), (lb,) = _outputs(tmp_path / "a", "ledger"), _outputs(tmp_path / "b", "ledger")
    assert la.name == lb.name
    assert la.read_bytes() == lb.read_bytes()


def test_invalid_config_exits_nonzero_with_all_errors(tmp_path, capsys):
    code = cli.main(["run", "--out", str(tmp_path), "--set", "stress.p=1.0", "--set", "time.dt=0"])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert "stress.p" in err["error"] and "time.dt" in err["error"]


def test_solver_failure_exits_nonzero_with_diagnostic(tmp_path, capsys):
    # quintic blend caps the admissible displacement; the strong load drives it past that
    code = cli.main(["run", "--preset", "stress", "--set", "geometry.blend=quintic",
                     "--out", str(tmp_path)])
    assert code != 0
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "failed" and err["diagnostics"]


def test_sweep_isolates_failed_cells(tmp_path, capsys):
    code = cli.main(["sweep", "--preset", "zero", "--out", str(tmp_path),
                     "--grid", "stress.p=1.5,0.5"])
    assert code == 1
    (rep,) = _outputs(tmp_path, "sweep")
    report = json.loads(rep.read_text(encoding="utf-8"))
    assert [c["status"] for c in report["cells"]] == ["horizon", "failed"]


def test_single_point_sweep_matches_run(tmp_path):
    assert cli.main(["sweep", "--preset", "zero", "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["run", "--preset", "zero", "--out", str(tmp_path / "r")]) == 0
    (ls,), (lr,) = _outputs(tmp_path / "s", "ledger"), _outputs(tmp_path / "r", "ledger")
    assert ls.read_bytes() == lr.read_bytes()


def test_export_surface_and_matrices(tmp_path, capsys):
    assert cli.main(["export", "all", "--preset", "zero", "--out", str(tmp_path)]) == 0
    (surf,) = _outputs(tmp_path, "surface")
    rows = list(csv.reader(surf.open(encoding="utf-8")))
    assert rows[0] == ["q", "X0", "X1", "nu0", "nu1", "H", "G", "gamma"]
    assert len(rows) == 33
    assert _outputs(tmp_path, "matrices")


@pytest.mark.parametrize("kind", ["sphere", "cylinder", "circle"])
def test_export_catalog_surfaces(tmp_path, kind):
    assert cli.main(["export", "all", "--set", f"geometry.kind={kind}", "--set", "basis.n_s=4",
                     "--set", "basis.n_tan=8", "--out", str(tmp_path)]) == 0
    (surf,) = _outputs(tmp_path, "surface")
    rows = np.array(list(csv.reader(surf.open(encoding="utf-8")))[1:], dtype=float)
    assert np.all(rows[:, -1] == 1.0)    # gamma of the undeformed surface


def test_verify_stress(tmp_path, capsys):
    assert cli.main(["verify", "stress", "--out", str(tmp_path), "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
    report = json.loads((tmp_path / "verify-stress.json").read_text(encoding="utf-8"))
    jsonschema.validate(report, cfgmod.schema("report.schema.json"))
    assert report["seed"] == 3


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        cli.main(["launch"])
