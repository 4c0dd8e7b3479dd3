import csv
import io as _io
import json

import pytest

from polyfv import io
from polyfv.cli import main
from polyfv.quality import CSV_COLUMNS
from polyfv.study import CSV_COLUMNS as STUDY_COLUMNS, read_vtk


@pytest.fixture
def mesh_file(tmp_path):
    path = tmp_path / "m.json"
    assert main(["gen", "--family", "hexskew", "--n", "6", "--out", str(path)]) == 0
    return path


def test_gen_writes_meta(mesh_file, capsys):
    meta = io.load_meta(mesh_file)
    assert meta["family"] == "hexskew" and meta["n"] == 6


def test_gen_with_target(tmp_path, capsys):
    out = tmp_path / "t.json"
    assert main(["gen", "--family", "hexskew", "--n", "10", "--target-theta", "15",
                 "--out", str(out)]) == 0
    assert "calibrated amplitude" in capsys.readouterr().out
    assert 0.15 < io.load_meta(out)["skew"] < 0.25


def test_gen_unreachable_target(tmp_path, capsys):
    rc = main(["gen", "--family", "hex", "--n", "4", "--target-theta", "20",
               "--out", str(tmp_path / "x.json")])
    assert rc == 2
    assert "CalibrationFailed" in capsys.readouterr().err


def test_gen_explicit_amplitudes(tmp_path):
    out = tmp_path / "t.json"
    assert main(["gen", "--family", "tet", "--n", "4", "--jitter", "0.1", "--seed", "7",
                 "--out", str(out)]) == 0
    meta = io.load_meta(out)
    assert meta["jitter"] == 0.1 and meta["seed"] == 7


def test_check(mesh_file, capsys):
    assert main(["check", "--mesh", str(mesh_file)]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_check_detects_flipped_face(mesh_file, tmp_path, capsys):
    doc = json.loads(mesh_file.read_text())
    doc["faces"][0] = doc["faces"][0][::-1]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["check", "--mesh", str(bad)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_quality_formats(mesh_file, capsys):
    assert main(["quality", "--mesh", str(mesh_file), "--csv"]) == 0
    rows = list(csv.reader(_io.StringIO(capsys.readouterr().out)))
    assert tuple(rows[0]) == CSV_COLUMNS and rows[1][0] == "hexskew"
    assert main(["quality", "--mesh", str(mesh_file), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["mean_d"] == pytest.approx(1 / 6, rel=0.05)
    assert main(["quality", "--mesh", str(mesh_file)]) == 0
    assert "theta_max" in capsys.readouterr().out


def test_solve_and_export(mesh_file, tmp_path, capsys):
    sol = tmp_path / "u.json"
    assert main(["solve", "--mesh", str(mesh_file), "--grad", "ls", "--out", str(sol)]) == 0
    doc = io.load_solution(sol)
    assert len(doc["u"]) == 216 and doc["stagnated"] is False and doc["outer_iters"] > 1
    assert "e2=" in capsys.readouterr().out
    vtk = tmp_path / "u.vtk"
    assert main(["export-vtk", "--mesh", str(mesh_file), "--solution", str(sol),
                 "--out", str(vtk)]) == 0
    assert len(read_vtk(vtk)[3]["u"]) == 216


def test_solve_with_diffusivity(mesh_file, tmp_path):
    sol = tmp_path / "u.json"
    assert main(["solve", "--mesh", str(mesh_file), "--alpha", "const:2", "--out", str(sol)]) == 0
    assert "e2" not in io.load_solution(sol)


def test_solve_stagnation_fails(mesh_file, tmp_path):
    rc = main(["solve", "--mesh", str(mesh_file), "--max-outer", "1", "--out",
               str(tmp_path / "u.json")])
    assert rc == 1


@pytest.mark.parametrize("alpha", ["2", "const:-1", "linear:1"])
def test_bad_alpha(mesh_file, tmp_path, alpha):
    with pytest.raises(SystemExit):
        main(["solve", "--mesh", str(mesh_file), "--alpha", alpha, "--out", str(tmp_path / "u")])


def test_study_pass_and_fail(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["study", "--family", "hex", "--levels", "10,20", "--out", str(out)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert out.read_text().splitlines()[0].split(",") == list(STUDY_COLUMNS)
    # the coarsest gap is still pre-asymptotic and falls below the band
    assert main(["study", "--family", "hex", "--levels", "4,8", "--out", str(out)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_malformed_mesh_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["check", "--mesh", str(bad)]) == 2
    assert "ParseError" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path):
    assert main(["quality", "--mesh", str(tmp_path / "none.json")]) == 2
