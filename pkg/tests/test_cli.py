import textwrap

import numpy as np
import pytest

from gradhom.cli import load_config, main, read_tensor_csv
from gradhom.errors import ConfigError

BASE = """\
[geometry]
cell_edge_length = 1.0
wall_thickness = 0.2

[material]
E_matrix = 100.0
nu_matrix = 0.3
E_inclusion = 1e-6
nu_inclusion = 1e-30

[mesh]
elements_per_cell_edge = 10
"""


@pytest.fixture
def write_config(tmp_path):
    def write(extra="", base=BASE, name="run.ini"):
        path = tmp_path / name
        path.write_text(base + textwrap.dedent(extra))
        return path

    return write


def run(*argv):
    return main([str(a) for a in argv])


def data_lines(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


class TestConfig:
    def test_missing_key_named(self, write_config, tmp_path, capsys):
        path = write_config(base=BASE.replace("nu_matrix = 0.3\n", ""))
        assert run("homogenize", "-c", path, "-o", tmp_path / "out") == 2
        assert "[material] nu_matrix" in capsys.readouterr().err

    def test_parse_error_line(self, write_config, capsys, tmp_path):
        path = write_config(base=BASE.replace("[mesh]\n", "[mesh]\nthis line has no separator\n"))
        assert run("homogenize", "-c", path, "-o", tmp_path / "out") == 2
        assert "line 12" in capsys.readouterr().err

    def test_bad_number(self, write_config):
        path = write_config(base=BASE.replace("E_matrix = 100.0", "E_matrix = hundred"))
        with pytest.raises(ConfigError, match="E_matrix"):
            load_config(path)

    def test_invalid_material_is_config_error(self, write_config):
        with pytest.raises(ConfigError, match="nu_matrix"):
            load_config(write_config(base=BASE.replace("nu_matrix = 0.3", "nu_matrix = 0.5")))

    def test_unknown_distribution(self, write_config):
        with pytest.raises(ConfigError, match="source_distribution"):
            load_config(write_config("[solver]\nsource_distribution = random\n"))

    def test_geometry_hash_ignores_output(self, write_config):
        a = load_config(write_config("[output]\ndirectory = a\n", name="a.ini"))
        b = load_config(write_config("[output]\ndirectory = b\n", name="b.ini"))
        assert a.geometry_digest == b.geometry_digest and a.digest != b.digest

    def test_resolution_error_exit(self, write_config, tmp_path):
        path = write_config(base=BASE.replace("wall_thickness = 0.2", "wall_thickness = 0.05"))
        assert run("homogenize", "-c", path, "-o", tmp_path / "out") == 2

    def test_runtime_failure_exit(self, write_config, tmp_path, capsys):
        path = write_config("[solver]\nmax_iter = 1\n")
        assert run("homogenize", "-c", path, "-o", tmp_path / "out") == 1
        assert "SolverError" in capsys.readouterr().err


class TestHomogenize:
    def test_outputs(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert run("homogenize", "-c", write_config(), "-o", out, "--dump-fields", "--mesh-export", "vtk") == 0
        text = (out / "effective_tensors.csv").read_text().splitlines()
        assert text[0] == "# gradhom 0.1.0"
        assert text[1].startswith("# config_sha256 ") and text[2].startswith("# geometry_sha256 ")
        assert "tensor,row,col,value,unit" in text
        C, D, meta = read_tensor_csv(out / "effective_tensors.csv")
        assert C.shape == (2, 2, 2, 2) and D.shape == (2,) * 6
        assert (out / "cell_fields.vtk").read_text().count("VECTORS") == 12
        assert (out / "mesh.vtk").exists()
        report = (out / "report.txt").read_text()
        assert "plane strain" in report and "stiffness" in report

    def test_homogeneous_compatibility(self, write_config, tmp_path):
        base = BASE.replace("E_inclusion = 1e-6", "E_inclusion = 100.0").replace("nu_inclusion = 1e-30", "nu_inclusion = 0.3")
        out = tmp_path / "out"
        assert run("homogenize", "-c", write_config(base=base), "-o", out) == 0
        assert "compatibility check passed" in (out / "report.txt").read_text()
        _, D, _ = read_tensor_csv(out / "effective_tensors.csv")
        assert np.abs(D).max() < 1e-9

    def test_byte_identical_reruns(self, write_config, tmp_path):
        path = write_config()
        run("homogenize", "-c", path, "-o", tmp_path / "a")
        run("homogenize", "-c", path, "-o", tmp_path / "b")
        for name in ("effective_tensors.csv", "report.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestSweep:
    def test_ratios(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert run("sweep", "-c", write_config("[sweep]\ncell_sizes = 1.0, 0.5, 0.2\n"), "-o", out) == 0
        rows = [line.split(",") for line in data_lines(out / "sweep.csv")[1:]]
        for size, factor in (("0.5", 0.25), ("0.2", 0.04)):
            d = [float(r[6]) for r in rows if r[0] == size and r[1] == "D"]
            c = [float(r[6]) for r in rows if r[0] == size and r[1] == "C"]
            assert d and np.allclose(d, factor, rtol=1e-6)
            assert np.allclose(c, 1.0, rtol=1e-8)

    def test_single_size(self, write_config, tmp_path):
        out = tmp_path / "out"
        assert run("sweep", "-c", write_config("[sweep]\ncell_sizes = 2.0\n"), "-o", out) == 0
        ratios = [float(line.split(",")[6]) for line in data_lines(out / "sweep.csv")[1:]]
        assert ratios and all(r == 1.0 for r in ratios)

    @pytest.mark.parametrize("extra", ["[sweep]\ncell_sizes =\n", ""])
    def test_empty_or_missing(self, write_config, tmp_path, extra):
        assert run("sweep", "-c", write_config(extra), "-o", tmp_path / "out") == 2


class TestValidate:
    def test_single_specimen(self, write_config, tmp_path):
        out = tmp_path / "out"
        extra = "[validate]\nratios = 2\nelements_per_cell = 10\nmacro_elements = 8\n"
        assert run("validate", "-c", write_config(extra), "-o", out) == 0
        curves = sorted(p.name for p in out.glob("curve_*.csv"))
        assert curves == ["curve_L2_l1_classical.csv", "curve_L2_l1_gradient.csv", "curve_L2_l1_micro.csv"]
        assert data_lines(out / curves[0])[0] == "theta,energy_mJ"
        study = data_lines(out / "study.csv")
        assert study[0] == "L_over_l,cells,model,k_coefficient,rel_error_vs_micro" and len(study) == 4

    @pytest.mark.slow
    def test_ratio_study_rows(self, write_config, tmp_path):
        out = tmp_path / "out"
        extra = "[validate]\nelements_per_cell = 10\nmacro_elements = 8\n"
        assert run("validate", "-c", write_config(extra), "-o", out) == 0
        assert len(data_lines(out / "study.csv")) == 1 + 12
        assert len(list(out.glob("curve_*.csv"))) == 12

    def test_stale_tensors_warned(self, write_config, tmp_path):
        first = tmp_path / "tensors"
        assert run("homogenize", "-c", write_config(), "-o", first) == 0
        changed = BASE.replace("E_matrix = 100.0", "E_matrix = 200.0")
        extra = f"[validate]\nratios = 2\nelements_per_cell = 10\nmacro_elements = 4\ntensors = {first / 'effective_tensors.csv'}\n"
        out = tmp_path / "out"
        assert run("validate", "-c", write_config(extra, base=changed, name="changed.ini"), "-o", out) == 0
        assert "may be stale" in (out / "validate_report.txt").read_text()

    def test_non_square_cell_count(self, write_config, tmp_path):
        extra = "[validate]\nstudy = cells\ncells = 15\n"
        assert run("validate", "-c", write_config(extra), "-o", tmp_path / "out") == 2
