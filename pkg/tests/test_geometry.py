import numpy as np
import pytest

from aaim.errors import DegenerateGeometryError, InvalidArgumentError
from aaim.geometry import (
    FlowField,
    MicArray,
    build_focus_grid,
    green_function,
    mach_distance,
    propagation_vector,
    steering_matrix,
)
from aaim.pipeline import resolve_geometry


class TestMachDistance:
    def test_zero_mach_is_euclidean(self):
        assert mach_distance([0, 0, 0], [0, 0, 2], [0, 0, 0]) == pytest.approx(2.0)

    def test_perpendicular_mach_scales_by_beta(self):
        # |m| = 0.6 perpendicular to x - y: distance = beta * |x - y| = 0.8
        assert mach_distance([0, 0, 0], [1, 0, 0], [0, 0.6, 0]) == pytest.approx(0.8)

    def test_parallel_mach_closed_form(self):
        # sqrt(0.09 + 0.91) = 1 exactly
        assert mach_distance([1, 0, 0], [0, 0, 0], [0.3, 0, 0]) == pytest.approx(1.0, abs=1e-15)

    def test_zero_mach_euclidean_random(self, rng):
        for _ in range(20):
            x, y = rng.standard_normal(3), rng.standard_normal(3)
            assert mach_distance(x, y, np.zeros(3)) == pytest.approx(np.linalg.norm(x - y))

    def test_coincident_points_raise(self):
        with pytest.raises(DegenerateGeometryError):
            mach_distance([1, 2, 3], [1, 2, 3], [0.1, 0, 0])

    def test_supersonic_rejected(self):
        with pytest.raises(InvalidArgumentError):
            mach_distance([0, 0, 0], [1, 0, 0], [1.0, 0.2, 0])


class TestGreenFunction:
    def test_static_free_field(self, still_air):
        g = green_function([0, 0, 0], [1, 0, 0], 0.0, still_air)
        assert g == pytest.approx(1.0 / (4 * np.pi))
        assert g.imag == 0.0

    def test_zero_mach_phase_and_amplitude(self, still_air, rng):
        omega = 2 * np.pi * 1700.0
        k = omega / still_air.speed_of_sound
        for _ in range(10):
            x, y = rng.standard_normal(3), rng.standard_normal(3) + 3.0
            r = np.linalg.norm(x - y)
            g = green_function(x, y, omega, still_air)
            expected = np.exp(-1j * k * r) / (4 * np.pi * r)
            assert g == pytest.approx(expected, rel=1e-12)

    def test_flow_reversal_symmetry(self, rng):
        omega = 2 * np.pi * 900.0
        for _ in range(10):
            m = rng.uniform(-0.4, 0.4, 3)
            fwd = FlowField(speed_of_sound=340.0, mach=m)
            rev = FlowField(speed_of_sound=340.0, mach=-m)
            x, y = rng.standard_normal(3), rng.standard_normal(3) + 2.0
            assert green_function(y, x, omega, rev) == pytest.approx(green_function(x, y, omega, fwd), rel=1e-12)

    def test_magnitude_is_inverse_mach_distance(self, rng):
        flow = FlowField(speed_of_sound=343.0, mach=[0.25, -0.1, 0.05])
        omega = 2 * np.pi * 2500.0
        for _ in range(10):
            x, y = rng.standard_normal(3), rng.standard_normal(3) + 2.0
            g = green_function(x, y, omega, flow)
            assert abs(g) == pytest.approx(1.0 / (4 * np.pi * mach_distance(x, y, flow.mach)), rel=1e-12)

    def test_coincident_points_raise(self, still_air):
        with pytest.raises(DegenerateGeometryError):
            green_function([0, 0, 0], [0, 0, 0], 100.0, still_air)


class TestPropagationVector:
    def test_components_match_green_function(self, still_air):
        array = resolve_geometry("benchmark64", None)
        y = np.array([0.0, 0.0, 0.75])
        omega = 2 * np.pi * 4000.0
        g = propagation_vector(array, y, omega, still_air)
        assert np.all(np.isfinite(g)) and np.all(np.abs(g) > 0)
        for m in range(array.num_mics):
            assert g[m] == pytest.approx(green_function(array.positions[m], y, omega, still_air), rel=1e-12)

    def test_equidistant_mics_share_magnitude(self, still_air):
        array = MicArray(positions=np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]], dtype=float))
        g = propagation_vector(array, [0, 0, 0], 2 * np.pi * 1000.0, still_air)
        assert np.allclose(np.abs(g), 1.0 / (4 * np.pi), rtol=1e-12)

    def test_permutation_equivariance(self, three_mics, still_air, rng):
        omega = 2 * np.pi * 1500.0
        y = np.array([0.1, -0.05, 0.8])
        g = propagation_vector(three_mics, y, omega, still_air)
        perm = rng.permutation(3)
        permuted = MicArray(positions=three_mics.positions[perm])
        assert np.allclose(propagation_vector(permuted, y, omega, still_air), g[perm])

    def test_focus_on_microphone_raises(self, three_mics, still_air):
        with pytest.raises(DegenerateGeometryError):
            propagation_vector(three_mics, three_mics.positions[1], 1000.0, still_air)

    def test_steering_matrix_matches_per_point(self, three_mics, still_air):
        grid = build_focus_grid([-0.2, -0.2, 0.7], 0.2, 0.2, 3, 2)
        omega = 2 * np.pi * 2000.0
        gm = steering_matrix(three_mics, grid, omega, still_air)
        for n in range(grid.num_points):
            assert np.allclose(gm[:, n], propagation_vector(three_mics, grid.points[n], omega, still_air))


class TestFocusGrid:
    def test_single_point(self):
        grid = build_focus_grid([1.0, 2.0, 3.0], 0.1, 0.1, 1, 1)
        assert grid.num_points == 1
        assert np.allclose(grid.points[0], [1, 2, 3])

    def test_paper_grid_point_count(self):
        grid = build_focus_grid([-0.5, -0.5, 0.75], 0.025, 0.025, 41, 41)
        assert grid.num_points == 1681
        assert np.allclose(grid.points[0], [-0.5, -0.5, 0.75])
        assert np.allclose(grid.points[-1], [0.5, 0.5, 0.75])

    def test_row_major_spacing(self):
        grid = build_focus_grid([0, 0, 1], 0.5, 0.25, 2, 3)
        assert grid.num_points == 6
        # x varies fastest
        assert np.allclose(grid.points[1] - grid.points[0], [0.5, 0, 0])
        assert np.allclose(grid.points[2] - grid.points[0], [0, 0.25, 0])
        for i in range(6):
            ix, iy = i % 2, i // 2
            assert np.allclose(grid.points[i], [0.5 * ix, 0.25 * iy, 1.0])

    def test_zero_counts_rejected(self):
        with pytest.raises(InvalidArgumentError):
            build_focus_grid([0, 0, 0], 0.1, 0.1, 0, 5)

    def test_nonpositive_spacing_rejected(self):
        with pytest.raises(InvalidArgumentError):
            build_focus_grid([0, 0, 0], -0.1, 0.1, 2, 2)

    def test_lattice_regenerates_points(self):
        grid = build_focus_grid([-1, -1, 0.5], 0.2, 0.3, 4, 5)
        assert np.allclose(grid.lattice.regenerate(), grid.points)
        assert grid.lattice.shape == (5, 4)


class TestTypes:
    def test_mic_array_needs_two_mics(self):
        with pytest.raises(InvalidArgumentError):
            MicArray(positions=np.array([[0.0, 0.0, 0.0]]))

    def test_mic_array_rejects_duplicates(self):
        with pytest.raises(InvalidArgumentError):
            MicArray(positions=np.array([[0, 0, 0], [0, 0, 0]], dtype=float))

    def test_flow_field_subsonic(self):
        with pytest.raises(InvalidArgumentError):
            FlowField(speed_of_sound=340.0, mach=[0.8, 0.8, 0.0])
        with pytest.raises(InvalidArgumentError):
            FlowField(speed_of_sound=-1.0)
        assert FlowField(speed_of_sound=340.0, mach=[0.6, 0, 0]).beta_squared == pytest.approx(0.64)
