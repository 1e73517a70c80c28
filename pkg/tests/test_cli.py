import filecmp
import warnings

import numpy as np
import pytest

from qcerkpm.assembly import run
from qcerkpm.benchmarks import ErrorReport, build_bar_1d, build_plate
from qcerkpm.cli import main
from qcerkpm.io import (dumps_discretization, loads_discretization, read_csv, read_discretization,
                        write_csv, write_discretization, write_report, write_vtk)

BAR = """
[problem]
family = "bar"
[discretization]
h_background = 0.1
"""

PLATE = """
[problem]
family = "plate"
[discretization]
h_background = 0.4
"""


def config(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_run_is_bit_reproducible(tmp_path):
    cfg = config(tmp_path, BAR)
    assert main(["run", cfg, "-o", str(tmp_path / "a")]) == 0
    assert main(["run", cfg, "-o", str(tmp_path / "b")]) == 0
    for name in ("nodes.csv", "summary.csv", "fields.vtk"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)
    header, rows = read_csv(tmp_path / "a" / "summary.csv")
    summary = {k: float(v) for k, v in rows}
    assert summary["l2_error"] <= 1e-10


def test_run_plate_writes_fields(tmp_path):
    assert main(["run", config(tmp_path, PLATE), "-o", str(tmp_path / "out")]) == 0
    header, rows = read_csv(tmp_path / "out" / "nodes.csv")
    assert header[:4] == ["x", "y", "ux", "uy"]
    vals = np.array(rows, dtype=float)
    assert np.all(np.isfinite(vals))
    vtk = (tmp_path / "out" / "fields.vtk").read_text()
    assert "VECTORS displacement" in vtk and "max_principal_stress" in vtk


def test_converge_reports_rates(tmp_path, capsys):
    text = BAR + "[study]\nlevels = 3\nmin_l2_rate = 10.0\n"
    assert main(["converge", config(tmp_path, text), "-o", str(tmp_path / "c")]) == 2
    assert "rates:" in capsys.readouterr().out
    header, rows = read_csv(tmp_path / "c" / "convergence.csv")
    assert header == ["level", "h", "nodes", "l2", "h1", "failed"]
    assert len(rows) == 3


def test_export_discretization(tmp_path):
    assert main(["export-discretization", config(tmp_path, PLATE), "-o", str(tmp_path / "e")]) == 0
    d = read_discretization(tmp_path / "e" / "discretization.txt")
    assert d.cloud.n > 0
    assert (tmp_path / "e" / "nodes.vtk").read_text().startswith("# vtk DataFile Version")


def test_exit_codes(tmp_path):
    assert main(["run", str(tmp_path / "missing.toml")]) == 1
    assert main(["run", config(tmp_path, '[problem]\nfamily = "torus"\n', "bad.toml")]) == 1
    assert main(["run", config(tmp_path, "[problem\n", "broken.toml")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    # an inclusion that does not fit the box is a geometry error
    text = PLATE + "[plate]\ndiameter = 3.9\n"
    assert main(["run", config(tmp_path, text, "geom.toml"), "-o", str(tmp_path / "g")]) == 3


def test_csv_precision(tmp_path):
    path = tmp_path / "t.csv"
    x = 0.1 + 0.2
    write_csv(path, ["a", "b"], [(1, x)])
    header, rows = read_csv(path)
    assert header == ["a", "b"] and float(rows[0][1]) == x


def test_report_csv(tmp_path):
    h = [0.4, 0.2, 0.1]
    rep = ErrorReport(h=h, l2=[x ** 2 for x in h], h1=[x for x in h], nodes=[10, 40, 160])
    l2, h1 = write_report(tmp_path / "r.csv", rep)
    assert np.isclose(l2, 2.0) and np.isclose(h1, 1.0)


def test_vtk_layout(tmp_path):
    pts = np.array([[0.0, 0.0], [1.0, 0.5]])
    write_vtk(tmp_path / "f.vtk", pts, {"displacement": pts, "s": np.array([1.0, 2.0]),
                                         "strain": np.ones((2, 3))})
    text = (tmp_path / "f.vtk").read_text().split("\n")
    assert text[0].startswith("# vtk DataFile Version")
    assert "DATASET UNSTRUCTURED_GRID" in text
    assert "POINTS 2 double" in text
    assert "POINT_DATA 2" in text


@pytest.mark.parametrize("dim", [1, 2])
def test_discretization_round_trip(tmp_path, dim):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if dim == 1:
            problem, d = build_bar_1d()
        else:
            problem, d, _ = build_plate(h_background=0.4)
    text = dumps_discretization(d)
    back = loads_discretization(text)
    assert dumps_discretization(back) == text
    write_discretization(tmp_path / "d.txt", d)
    assert (tmp_path / "d.txt").read_text() == text
    a = run(problem, d, estimate_condition=False).solution.d
    problem.domain = back.domain
    b = run(problem, back, estimate_condition=False).solution.d
    assert np.array_equal(a, b)
