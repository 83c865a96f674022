import json
import os

import pytest

from dfmbench.cli import main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "r0"
    assert main(["run", "--case", "2.1", "--refinement", "0",
                 "--out", str(out)]) == 0
    return out


class TestRun:
    def test_manifest_lists_existing_files(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["schema"] == "dfmbench/1"
        assert manifest["case"] == "2.1"
        for name in manifest["files"]:
            assert (run_dir / name).exists()
        assert "cost.json" in manifest["files"]

    def test_dol_format(self, run_dir):
        lines = (run_dir / "dol_p_matrix_diag.csv").read_text().splitlines()
        assert lines[0] == "fraction,arclength_m,value"
        assert len(lines) == 1001
        first = lines[1].split(",")
        assert float(first[0]) == 0.0 and float(first[1]) == 0.0

    def test_dot_format(self, run_dir):
        lines = (run_dir / "dot_region_1.csv").read_text().splitlines()
        assert lines[0] == "time_s,value"
        assert len(lines) == 102  # initial state plus 100 steps
        assert float(lines[1].split(",")[0]) == 0.0

    def test_cost_fields(self, run_dir):
        cost = json.loads((run_dir / "cost.json").read_text())
        assert cost["dofs"] == sum(cost["cells"].values())
        assert cost["nnz"] > 0

    def test_flux_totals(self, run_dir):
        flux = json.loads((run_dir / "flux.json").read_text())
        assert flux["total_in"] == pytest.approx(-0.1875, rel=1e-9)
        assert flux["total_out"] == pytest.approx(0.1875, rel=1e-9)

    def test_rerun_is_byte_identical(self, run_dir, tmp_path):
        out2 = tmp_path / "r0b"
        assert main(["run", "--case", "2.1", "--refinement", "0",
                     "--out", str(out2)]) == 0
        for name in os.listdir(run_dir):
            if name == "manifest.json":  # timings differ, data must not
                continue
            assert (out2 / name).read_bytes() == \
                (run_dir / name).read_bytes(), name


class TestExitCodes:
    def test_unknown_case(self, tmp_path, capsys):
        assert main(["run", "--case", "9", "--out", str(tmp_path / "x")]) == 2
        assert "error (input)" in capsys.readouterr().err

    def test_missing_mesh(self, tmp_path, capsys):
        assert main(["run", "--case", "3", "--out", str(tmp_path / "x")]) == 2
        assert "mesh" in capsys.readouterr().err

    def test_bad_mesh_file(self, tmp_path, capsys):
        mesh = tmp_path / "bad.msh"
        mesh.write_text("$MeshFormat\n9.9 0 8\n$EndMeshFormat\n")
        assert main(["run", "--case", "3", "--mesh", str(mesh),
                     "--out", str(tmp_path / "x")]) == 2


class TestVerify:
    def test_filter_subset_passes(self, capsys):
        assert main(["verify", "--filter", "series"]) == 0
        out = capsys.readouterr().out
        assert "series-resistance" in out and "PASS" in out

    def test_unmatched_filter(self, capsys):
        assert main(["verify", "--filter", "zzz"]) == 2


class TestCompare:
    def test_identical_runs_zero_spread(self, run_dir, tmp_path):
        out2 = tmp_path / "copy"
        assert main(["run", "--case", "2.1", "--refinement", "0",
                     "--out", str(out2)]) == 0
        cmp_dir = tmp_path / "cmp"
        assert main(["compare", str(run_dir), str(out2),
                     "--out", str(cmp_dir)]) == 0
        rep = json.loads((cmp_dir / "spread_dol_p_matrix_diag.json").read_text())
        assert rep["area_ratio"] == 0.0
        header = (cmp_dir / "spread_dol_p_matrix_diag.csv").read_text() \
            .splitlines()[0]
        assert header == "fraction,p10,mean,p90"

    def test_mixed_kinds_rejected(self, run_dir, tmp_path, capsys):
        assert main(["compare",
                     str(run_dir / "dol_p_matrix_diag.csv"),
                     str(run_dir / "dot_region_1.csv"),
                     "--out", str(tmp_path / "cmp")]) == 2
        assert "mix" in capsys.readouterr().err

    def test_single_file_rejected(self, run_dir, tmp_path):
        assert main(["compare", str(run_dir / "dol_p_matrix_diag.csv"),
                     "--out", str(tmp_path / "cmp")]) == 2
