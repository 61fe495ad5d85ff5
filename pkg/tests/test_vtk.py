"""Legacy VTK writer: structure, data blocks, slices, CSV table."""

import numpy as np
import pytest

from wakegnn.errors import ConfigError, DataError
from wakegnn.meshgraph import FieldSnapshot, MeshSpec, build_graded_mesh
from wakegnn.vtkexport import (fields_to_csv, slice_mask, write_error_vtk,
                               write_field_vtk, write_slice_vtk, write_vtk)


@pytest.fixture(scope="module")
def lattice():
    spec = MeshSpec(box_min=(0.0, 0.0, 0.0), box_max=(40.0, 20.0, 20.0),
                    base_spacing=10.0)
    return build_graded_mesh(spec, seed=0)  # 5 x 3 x 3 vertices


def _fields(g, seed=0):
    rng = np.random.default_rng(seed)
    n = g.n_vertices
    return FieldSnapshot(u=rng.normal(8, 1, n), v=rng.normal(0, 0.2, n),
                         w=rng.normal(0, 0.2, n), tke=rng.uniform(0, 1, n))


def _section(text, key):
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line.startswith(key):
            return i, lines
    raise AssertionError(f"section {key} not found")


class TestWriter:
    def test_header_and_points(self, tmp_path):
        pos = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0]])
        p = write_vtk(tmp_path / "t.vtk", pos)
        text = p.read_text()
        lines = text.splitlines()
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert lines[2] == "ASCII"
        assert lines[3] == "DATASET UNSTRUCTURED_GRID"
        i, _ = _section(text, "POINTS 3 double")
        got = np.array([[float(v) for v in lines[i + 1 + k].split()]
                        for k in range(3)])
        assert np.array_equal(got, pos)

    def test_vertex_cells_without_edges(self, tmp_path):
        pos = np.zeros((4, 3))
        pos[:, 0] = np.arange(4)
        text = write_vtk(tmp_path / "t.vtk", pos).read_text()
        i, lines = _section(text, "CELLS 4 8")
        assert lines[i + 1] == "1 0"
        j, _ = _section(text, "CELL_TYPES 4")
        assert lines[j + 1] == "1"

    def test_line_cells_with_edges(self, tmp_path):
        pos = np.zeros((3, 3))
        pos[:, 0] = np.arange(3)
        edges = np.array([[0, 1], [1, 2]])
        text = write_vtk(tmp_path / "t.vtk", pos, edges=edges).read_text()
        i, lines = _section(text, "CELLS 2 6")
        assert lines[i + 1] == "2 0 1"
        assert lines[i + 2] == "2 1 2"
        j, _ = _section(text, "CELL_TYPES 2")
        assert lines[j + 1] == "3"

    def test_scalar_values_roundtrip(self, tmp_path):
        pos = np.zeros((2, 3))
        pos[1, 0] = 1.0
        vals = np.array([0.1234567890123456789, -3.5e-7])
        text = write_vtk(tmp_path / "t.vtk", pos,
                         point_scalars={"q": vals}).read_text()
        i, lines = _section(text, "SCALARS q double 1")
        assert lines[i + 1] == "LOOKUP_TABLE default"
        got = np.array([float(lines[i + 2]), float(lines[i + 3])])
        assert np.array_equal(got, vals)  # repr() keeps full precision
        _section(text, "POINT_DATA 2")

    def test_bad_inputs_rejected(self, tmp_path):
        pos = np.zeros((2, 3))
        with pytest.raises(DataError):
            write_vtk(tmp_path / "t.vtk", np.zeros((2, 2)))
        with pytest.raises(DataError):
            write_vtk(tmp_path / "t.vtk", pos, edges=np.array([[0, 5]]))
        with pytest.raises(DataError):
            write_vtk(tmp_path / "t.vtk", pos,
                      point_scalars={"q": np.zeros(3)})
        with pytest.raises(DataError):
            write_vtk(tmp_path / "t.vtk", pos,
                      point_vectors={"q": np.zeros((2, 2))})
        with pytest.raises(ConfigError):
            write_vtk(tmp_path / "t.vtk", pos, title="a\nb")


class TestFieldExports:
    def test_field_file_blocks(self, tmp_path, lattice):
        f = _fields(lattice)
        text = write_field_vtk(tmp_path / "f.vtk", lattice, f).read_text()
        n = lattice.n_vertices
        _section(text, f"POINTS {n} double")
        _section(text, f"POINT_DATA {n}")
        _section(text, "SCALARS speed double 1")
        _section(text, "SCALARS tke double 1")
        i, lines = _section(text, "VECTORS velocity double")
        row = [float(v) for v in lines[i + 1].split()]
        assert row == [f.u[0], f.v[0], f.w[0]]
        # undirected edges only
        m = lattice.n_directed_edges // 2
        _section(text, f"CELLS {m} {3 * m}")

    def test_error_map_difference(self, tmp_path, lattice):
        pred = _fields(lattice, seed=1)
        truth = _fields(lattice, seed=2)
        text = write_error_vtk(tmp_path / "e.vtk", lattice, pred,
                               truth).read_text()
        i, lines = _section(text, "SCALARS speed_diff double 1")
        got = float(lines[i + 2])
        assert got == pred.speed()[0] - truth.speed()[0]
        _section(text, "SCALARS tke_pred double 1")
        _section(text, "SCALARS tke_true double 1")

    def test_error_map_length_mismatch(self, tmp_path, lattice):
        pred = _fields(lattice)
        short = FieldSnapshot(u=np.ones(2), v=np.zeros(2), w=np.zeros(2),
                              tke=np.zeros(2))
        with pytest.raises(DataError):
            write_error_vtk(tmp_path / "e.vtk", lattice, pred, short)


class TestSlices:
    def test_plane_capture(self, lattice):
        mask = slice_mask(lattice, "x", 0.0)
        # one lattice plane: 3 x 3 vertices
        assert mask.sum() == 9
        assert np.all(lattice.positions[mask, 0] == 0.0)

    def test_explicit_thickness(self, lattice):
        mask = slice_mask(lattice, "x", 5.0, thickness=11.0)
        assert set(np.unique(lattice.positions[mask, 0])) == {0.0, 10.0}

    def test_bad_axis(self, lattice):
        with pytest.raises(ConfigError):
            slice_mask(lattice, "w", 0.0)

    def test_empty_slice(self, lattice):
        with pytest.raises(DataError):
            slice_mask(lattice, "x", 1e6)

    def test_slice_file(self, tmp_path, lattice):
        f = _fields(lattice)
        text = write_slice_vtk(tmp_path / "s.vtk", lattice, f, "y",
                               0.0).read_text()
        n = int(slice_mask(lattice, "y", 0.0).sum())
        _section(text, f"POINTS {n} double")
        i, lines = _section(text, f"CELL_TYPES {n}")
        assert lines[i + 1] == "1"


class TestCsv:
    def test_vertex_table(self, tmp_path, lattice):
        f = _fields(lattice)
        p = fields_to_csv(tmp_path / "t.csv", lattice, f)
        lines = p.read_text().splitlines()
        assert lines[0] == "x,y,z,boundary_tag,u,v,w,tke"
        assert len(lines) == lattice.n_vertices + 1
        row = lines[1].split(",")
        assert float(row[0]) == lattice.positions[0, 0]
        assert float(row[4]) == f.u[0]

    def test_graph_only_table(self, tmp_path, lattice):
        p = fields_to_csv(tmp_path / "g.csv", lattice, None)
        lines = p.read_text().splitlines()
        assert lines[0] == "x,y,z,boundary_tag"
        assert len(lines) == lattice.n_vertices + 1
