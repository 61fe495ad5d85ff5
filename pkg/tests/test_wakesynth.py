import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wakegnn.errors import ConfigError
from wakegnn.gad import RotorSpec, abl_reference_tke
from wakegnn.meshgraph import (BoundaryTag, GlobalConditions,
                               build_graded_mesh, mesh_to_graph)
from wakegnn.mgf import read_sample
from wakegnn.wakesynth import (ConditionRanges, WakeParameterError,
                               WakeParams, default_mesh_spec, gen_dataset,
                               shear_profile, synth_wake_field)

ROTOR = RotorSpec(radius=46.5, hub_height=65.0)
D = 2 * ROTOR.radius


def point_graph(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    tags = np.full(len(pts), BoundaryTag.INTERIOR, dtype=np.uint8)
    return mesh_to_graph(pts, np.empty((0, 2), dtype=int), tags)


def field_at(points, cond, params=None):
    g = point_graph(points)
    return synth_wake_field(g, cond, ROTOR, params)


class TestSynthField:
    def test_upstream_is_undisturbed(self):
        cond = GlobalConditions(8.0, 0.10, 0.0)
        fs = field_at([[-2 * D, 0.0, ROTOR.hub_height],
                       [-D, 30.0, 40.0]], cond)
        want = shear_profile(np.array([ROTOR.hub_height, 40.0]), 8.0,
                             ROTOR.hub_height, 0.14)
        assert np.allclose(fs.u, want)
        assert np.allclose(fs.tke, abl_reference_tke(8.0, 0.10))

    def test_hub_height_upstream_speed_is_u_inf(self):
        cond = GlobalConditions(7.3, 0.08, 0.0)
        fs = field_at([[-D, 0.0, ROTOR.hub_height]], cond)
        assert fs.u[0] == pytest.approx(7.3)

    def test_mirror_symmetry_without_yaw(self):
        cond = GlobalConditions(8.0, 0.10, 0.0)
        y = 37.0
        fs = field_at([[3 * D, y, 50.0], [3 * D, -y, 50.0]], cond)
        assert fs.u[0] == pytest.approx(fs.u[1], rel=1e-14)
        assert fs.tke[0] == pytest.approx(fs.tke[1], rel=1e-14)

    def test_centerline_hand_value_at_5d(self):
        # k_w = 0.05 makes sigma(5D) = 0.25D + 0.25D = 0.5D
        params = WakeParams(c_t=0.8, k_w=0.05)
        cond = GlobalConditions(8.0, 0.10, 0.0)
        fs = field_at([[5 * D, 0.0, ROTOR.hub_height]], cond, params)
        amplitude = 1 - math.sqrt(0.6)
        assert fs.u[0] == pytest.approx(8.0 * (1 - amplitude), rel=1e-12)

    def test_deficit_bounds_and_positive_speed(self):
        g = build_graded_mesh(default_mesh_spec(
            ROTOR, base_spacing_fraction=0.6, refined_spacing_fraction=0.3))
        for yaw in (-30.0, 0.0, 17.5):
            cond = GlobalConditions(10.0, 0.15, yaw)
            fs = synth_wake_field(g, cond, ROTOR)
            assert np.all(fs.u > 0)
            base = shear_profile(g.positions[:, 2], 10.0, ROTOR.hub_height,
                                 0.14)
            f = 1 - fs.u / base
            assert np.all(f >= -1e-12)
            assert np.all(f < 1)

    def test_monotone_centerline_recovery(self):
        xs = np.linspace(2 * D, 10 * D, 120)
        pts = np.column_stack([xs, np.zeros_like(xs),
                               np.full_like(xs, ROTOR.hub_height)])
        cond = GlobalConditions(8.0, 0.10, 0.0)
        fs = field_at(pts, cond)
        assert np.all(np.diff(fs.u) >= 0)

    def test_yaw_antisymmetry(self):
        pts = [[2 * D, 25.0, 60.0], [4 * D, -70.0, 72.0],
               [6 * D, 10.0, ROTOR.hub_height]]
        mirrored = [[x, -y, z] for x, y, z in pts]
        c_pos = GlobalConditions(9.0, 0.12, 20.0)
        c_neg = GlobalConditions(9.0, 0.12, -20.0)
        f_pos = field_at(pts, c_pos)
        f_neg = field_at(mirrored, c_neg)
        assert np.allclose(f_pos.u, f_neg.u, rtol=1e-14)
        assert np.allclose(f_pos.tke, f_neg.tke, rtol=1e-14)

    def test_positive_yaw_deflects_positive_y(self):
        cond = GlobalConditions(8.0, 0.10, 25.0)
        off = 20.0
        fs = field_at([[4 * D, off, ROTOR.hub_height],
                       [4 * D, -off, ROTOR.hub_height]], cond)
        # deeper deficit on the +y side
        assert fs.u[0] < fs.u[1]

    def test_tke_floor(self):
        g = build_graded_mesh(default_mesh_spec(
            ROTOR, base_spacing_fraction=0.6, refined_spacing_fraction=0.3))
        cond = GlobalConditions(6.0, 0.07, -10.0)
        fs = synth_wake_field(g, cond, ROTOR)
        ref = abl_reference_tke(6.0, 0.07)
        assert np.all(fs.tke >= ref - 1e-15)
        upstream = g.positions[:, 0] <= 0
        assert np.allclose(fs.tke[upstream], ref)
        assert fs.tke.max() > ref

    def test_strict_mode_raises_near_rotor(self):
        params = WakeParams(clamp_near_wake=False)
        cond = GlobalConditions(8.0, 0.10, 0.0)
        with pytest.raises(WakeParameterError, match="radicand"):
            field_at([[0.1 * D, 0.0, ROTOR.hub_height]], cond, params)

    def test_strict_mode_fine_in_far_wake(self):
        params = WakeParams(clamp_near_wake=False)
        cond = GlobalConditions(8.0, 0.10, 0.0)
        fs = field_at([[6 * D, 0.0, ROTOR.hub_height]], cond, params)
        assert 0 < fs.u[0] < 8.0

    def test_deterministic(self):
        g = point_graph([[2 * D, 5.0, 60.0], [3 * D, -5.0, 70.0]])
        cond = GlobalConditions(8.0, 0.10, 12.0)
        a = synth_wake_field(g, cond, ROTOR)
        b = synth_wake_field(g, cond, ROTOR)
        assert np.array_equal(a.u, b.u) and np.array_equal(a.tke, b.tke)

    @given(st.floats(1.5, 10.0), st.floats(-80.0, 80.0),
           st.floats(5.0, 180.0), st.floats(5.0, 10.0),
           st.floats(0.05, 0.15), st.floats(-30.0, 30.0))
    @settings(max_examples=60, deadline=None)
    def test_pointwise_bounds_property(self, x_d, y, z, u_inf, ti, yaw):
        cond = GlobalConditions(u_inf, ti, yaw)
        fs = field_at([[x_d * D, y, z]], cond)
        base = shear_profile(np.array([z]), u_inf, ROTOR.hub_height, 0.14)
        assert 0 < fs.u[0] <= base[0] + 1e-12
        assert fs.tke[0] >= abl_reference_tke(u_inf, ti) - 1e-15


class TestWakeParams:
    def test_ct_validation(self):
        with pytest.raises(WakeParameterError):
            WakeParams(c_t=0.0)
        with pytest.raises(WakeParameterError):
            WakeParams(c_t=1.0)

    def test_kw_validation(self):
        with pytest.raises(WakeParameterError):
            WakeParams(k_w=-0.01)

    def test_sigma0_validation(self):
        with pytest.raises(WakeParameterError):
            WakeParams(sigma0=0.0)

    def test_growth_rate_default_tracks_ti(self):
        p = WakeParams()
        assert p.growth_rate(0.10) == pytest.approx(0.035 + 0.035)
        assert p.growth_rate(0.05) < p.growth_rate(0.15)

    def test_sigma_monotone_downstream(self):
        p = WakeParams()
        k = p.growth_rate(0.1)
        xs = np.linspace(0.0, 10 * D, 50)
        sigma = p.sigma0 * D + k * xs
        assert np.all(np.diff(sigma) > 0)


class TestGenDataset:
    @pytest.fixture
    def small_graph(self):
        return build_graded_mesh(default_mesh_spec(
            ROTOR, base_spacing_fraction=1.0, refined_spacing_fraction=0.5))

    def test_ranges_respected(self, tmp_path, small_graph):
        paths = gen_dataset(small_graph, 12, ConditionRanges(), ROTOR,
                            seed=4, out_dir=tmp_path)
        assert len(paths) == 12
        for p in paths:
            s = read_sample(p)
            assert 5.0 <= s.conditions.u_inf <= 10.0
            assert 0.05 <= s.conditions.ti_inf <= 0.15
            assert -30.0 <= s.conditions.yaw_deg <= 30.0

    def test_same_seed_identical_bytes(self, tmp_path, small_graph):
        a = gen_dataset(small_graph, 5, ConditionRanges(), ROTOR, seed=9,
                        out_dir=tmp_path / "a")
        b = gen_dataset(small_graph, 5, ConditionRanges(), ROTOR, seed=9,
                        out_dir=tmp_path / "b")
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_differs(self, tmp_path, small_graph):
        a = gen_dataset(small_graph, 3, ConditionRanges(), ROTOR, seed=1,
                        out_dir=tmp_path / "a")
        b = gen_dataset(small_graph, 3, ConditionRanges(), ROTOR, seed=2,
                        out_dir=tmp_path / "b")
        assert a[0].read_bytes() != b[0].read_bytes()

    def test_manifest_and_params_written(self, tmp_path, small_graph):
        gen_dataset(small_graph, 3, ConditionRanges(), ROTOR, seed=0,
                    out_dir=tmp_path)
        manifest = (tmp_path / "manifest.csv").read_text().strip().split("\n")
        assert manifest[0] == "file,u_inf,ti_inf,yaw_deg"
        assert len(manifest) == 4
        meta = (tmp_path / "params.json").read_text()
        assert '"c_t": 0.8' in meta

    def test_zero_samples_rejected(self, tmp_path, small_graph):
        with pytest.raises(ConfigError):
            gen_dataset(small_graph, 0, ConditionRanges(), ROTOR, seed=0,
                        out_dir=tmp_path)

    def test_bad_range_rejected(self):
        with pytest.raises(ConfigError):
            ConditionRanges(u_inf=(10.0, 5.0))
