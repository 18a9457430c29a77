import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from spm.core import GridSpec, ParticleEnsemble, RngStream
from spm.vug import (
    EmptyFieldError,
    VugMap,
    build_solution_map,
    grid_coord,
    occupancy,
    sample_from_map,
    total_variation_Z,
)


def _map_1d(values, h=1.0, coords=None):
    grid = GridSpec(anchor=0.0, h=h, dim=1)
    if coords is None:
        coords = np.arange(len(values)).reshape(-1, 1)
    return VugMap(grid, np.asarray(coords, dtype=np.int64).reshape(-1, 1),
                  np.asarray(values, dtype=np.float64))


# ---------------------------------------------------------------------------
# coordinates
# ---------------------------------------------------------------------------

class TestGridCoord:
    def test_basic(self):
        g = GridSpec(anchor=(0.0, 0.0), h=0.1, dim=2)
        assert np.array_equal(
            grid_coord(np.array([[0.15, 0.27]]), g), [[1, 2]]
        )

    def test_anchor_is_zero_coordinate(self):
        g = GridSpec(anchor=(0.3, -0.2), h=0.1, dim=2)
        assert np.array_equal(grid_coord(np.array([[0.3, -0.2]]), g), [[0, 0]])

    def test_negative_point(self):
        g = GridSpec(anchor=-1.0, h=0.1, dim=1)
        assert np.array_equal(grid_coord(np.array([[-0.05]]), g), [[9]])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-100, 100), st.floats(0.01, 5.0))
    def test_floor_property(self, x, h):
        g = GridSpec(anchor=0.0, h=h, dim=1)
        c = int(grid_coord(np.array([[x]]), g)[0, 0])
        assert c * h <= x + 1e-9 * max(1.0, abs(x))
        assert x < (c + 1) * h + 1e-9 * max(1.0, abs(x))


# ---------------------------------------------------------------------------
# deposition
# ---------------------------------------------------------------------------

class TestBuildSolutionMap:
    def test_single_particle(self):
        ens = ParticleEnsemble(np.array([[0.2]]), np.array([2.0]))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=0.5, dim=1))
        assert m.n_cells == 1
        assert m.values[0] == pytest.approx(4.0)

    def test_two_particles_one_cell(self):
        ens = ParticleEnsemble(np.array([[0.1], [0.9]]), np.array([1.0, 3.0]))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=1.0, dim=1))
        assert m.n_cells == 1
        assert m.values[0] == pytest.approx(2.0)

    def test_reproduces_step_function_exactly(self):
        # particle placement chosen as exact cell-average quadrature of a
        # three-cell step function
        h = 0.5
        step = np.array([1.0, -2.0, 0.5])
        n = 3
        locs = ((np.arange(3) + 0.5) * h).reshape(-1, 1)
        weights = step * n * h
        ens = ParticleEnsemble(locs, weights)
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=h, dim=1))
        assert np.allclose(m.values, step)

    def test_mass_consistency(self, rng):
        ens = ParticleEnsemble(rng.normal(size=(5000, 2)), rng.normal(size=5000))
        grid = GridSpec(anchor=0.0, h=0.3, dim=2)
        m = build_solution_map(ens, grid)
        lhs = float(np.sum(m.values)) * grid.cell_measure
        rhs = float(np.sum(ens.weights)) / ens.n
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_worker_count_invariance_with_uniform_magnitudes(self, rng):
        # dyadic weight magnitude and dyadic N h^d make every partial sum
        # exact, so the merge tree cannot change the result
        n = 16_384  # with h = 0.25, d = 3: N h^d = 256, a power of two
        w = np.where(rng.random(n) < 0.5, 1.0, -1.0) * 2.0
        ens = ParticleEnsemble(rng.normal(size=(n, 3)), w)
        grid = GridSpec(anchor=0.0, h=0.25, dim=3)
        maps = [build_solution_map(ens, grid, workers=k) for k in (1, 2, 3, 7)]
        for m in maps[1:]:
            assert np.array_equal(m.coords, maps[0].coords)
            assert np.array_equal(m.values, maps[0].values)

    def test_cell_count_bounded_by_n(self, rng):
        ens = ParticleEnsemble(rng.normal(size=(500, 4)), np.ones(500))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=0.5, dim=4))
        assert m.n_cells <= 500


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

class TestEval:
    def test_value_in_occupied_cell(self):
        ens = ParticleEnsemble(np.array([[0.2]]), np.array([2.0]))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=0.5, dim=1))
        assert m.eval(np.array([0.3])) == pytest.approx(4.0)

    def test_empty_region_is_zero(self):
        m = _map_1d([1.0])
        assert m.eval(np.array([55.5])) == 0.0
        assert m.eval(np.array([-3.0])) == 0.0

    def test_first_order_accuracy_of_cell_averages(self):
        # exact cell averages of a smooth profile: sup error at off-center
        # points decays like h
        u = lambda x: np.exp(-(x**2))
        pts = np.linspace(-1.8, 1.8, 271)
        errs = []
        hs = [0.2, 0.1, 0.05]
        for h in hs:
            grid = GridSpec(anchor=0.0, h=h, dim=1)
            k = np.arange(math.floor(-3 / h), math.ceil(3 / h))
            avg = np.array([
                integrate.quad(u, c * h, (c + 1) * h)[0] / h for c in k
            ])
            m = VugMap(grid, k.reshape(-1, 1), avg)
            errs.append(float(np.max(np.abs(m.eval(pts.reshape(-1, 1)) - u(pts)))))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 0.8 <= slope <= 1.2


class TestGradient:
    def test_central_difference(self):
        m = _map_1d([1.0, 5.0, 3.0], h=0.5)
        # gradient at the middle cell: (3 - 1) / (2 * 0.5) = 2
        g = m.grad_component(np.array([0.75]), 0)
        assert g == pytest.approx(2.0)

    def test_absent_neighbors_contribute_zero(self):
        m = _map_1d([7.0], h=0.5, coords=[[4]])
        # both neighbors of an isolated far-away cell are absent
        assert m.grad_component(np.array([100.0]), 0) == 0.0

    def test_stored_gradient_matches_pointwise(self, rng):
        ens = ParticleEnsemble(rng.normal(size=(3000, 2)), rng.normal(size=3000))
        grid = GridSpec(anchor=0.0, h=0.4, dim=2)
        m = build_solution_map(ens, grid)
        for axis in (0, 1):
            fast = m.grad_component_at_stored(axis)
            slow = m.grad_component_at_coords(m.coords, axis)
            assert np.allclose(fast, slow, atol=1e-12)

    def test_first_order_accuracy_on_sine(self):
        u = lambda x: np.sin(x)
        pts = np.linspace(-1.3, 1.3, 113)
        errs = []
        hs = [0.2, 0.1, 0.05]
        for h in hs:
            grid = GridSpec(anchor=0.0, h=h, dim=1)
            k = np.arange(math.floor(-3 / h), math.ceil(3 / h))
            avg = np.array([
                integrate.quad(u, c * h, (c + 1) * h)[0] / h for c in k
            ])
            m = VugMap(grid, k.reshape(-1, 1), avg)
            g = m.grad_component(pts.reshape(-1, 1), 0)
            errs.append(float(np.max(np.abs(g - np.cos(pts)))))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 0.8 <= slope <= 1.2


# ---------------------------------------------------------------------------
# total variation and sampling
# ---------------------------------------------------------------------------

class TestTotalVariation:
    def test_signed_cells(self):
        grid = GridSpec(anchor=0.0, h=0.5, dim=2)
        m = VugMap(grid, np.array([[0, 0], [1, 0]]), np.array([2.0, -3.0]))
        assert m.total_variation() == pytest.approx(1.25)

    def test_single_cell(self):
        m = _map_1d([-4.0], h=0.25)
        assert m.total_variation() == pytest.approx(1.0)

    def test_zero_field_aborts(self):
        m = _map_1d([0.0])
        with pytest.raises(EmptyFieldError):
            total_variation_Z(m)

    def test_normalized_density_z_near_one(self):
        rng = RngStream(5).generator()
        n = 1_000_000
        ens = ParticleEnsemble(rng.standard_normal((n, 1)), np.ones(n))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=0.05, dim=1))
        z = total_variation_Z(m)
        assert abs(z - 1.0) < 0.05


class TestSampleFromMap:
    def test_selection_probabilities(self):
        m = _map_1d([1.0, 3.0])
        z = total_variation_Z(m)
        rng = np.random.default_rng(0)
        _, idx = sample_from_map(m, z, rng, 1_000_000, return_indices=True)
        obs = np.bincount(idx, minlength=2)
        exp = np.array([0.25, 0.75]) * 1_000_000
        chi2 = float(np.sum((obs - exp) ** 2 / exp))
        assert chi2 < stats.chi2.ppf(0.99, df=1)

    def test_single_cell_map(self):
        m = _map_1d([2.0], h=0.5, coords=[[3]])
        pts = sample_from_map(m, m.total_variation(), np.random.default_rng(0), 500)
        assert np.all((pts >= 1.5) & (pts < 2.0))

    def test_sign_blind_selection(self):
        a = _map_1d([1.0, 3.0])
        b = _map_1d([-1.0, 3.0])
        _, ia = sample_from_map(a, 4.0, np.random.default_rng(7), 10_000,
                                return_indices=True)
        _, ib = sample_from_map(b, 4.0, np.random.default_rng(7), 10_000,
                                return_indices=True)
        assert np.array_equal(ia, ib)

    def test_round_trip_cell_membership(self, rng):
        grid = GridSpec(anchor=-1.0, h=0.3, dim=2)
        coords = np.array([[0, 0], [2, -1], [5, 4]])
        m = VugMap(grid, coords, np.array([1.0, -2.0, 0.5]))
        pts, idx = sample_from_map(m, m.total_variation(),
                                   np.random.default_rng(3), 5000,
                                   return_indices=True)
        back = grid_coord(pts, grid)
        assert np.array_equal(back, m.coords[idx])

    def test_zero_z_rejected(self):
        m = _map_1d([1.0])
        with pytest.raises(EmptyFieldError):
            sample_from_map(m, 0.0, np.random.default_rng(0), 1)


# ---------------------------------------------------------------------------
# occupancy and serialization
# ---------------------------------------------------------------------------

class TestOccupancy:
    def test_single_particle(self):
        ens = ParticleEnsemble(np.array([[0.1, 0.1]]), np.array([1.0]))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=0.5, dim=2))
        occ = occupancy(m)
        assert occ.stored_cells == 1
        assert 0 < occ.ratio <= 1

    def test_explicit_box(self):
        ens = ParticleEnsemble(np.array([[0.1, 0.1], [0.9, 0.9]]), np.ones(2))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=0.5, dim=2))
        occ = occupancy(m, box=(np.zeros(2), np.ones(2)))
        assert occ.full_cells == 4
        assert occ.stored_cells == 2
        assert occ.ratio == pytest.approx(0.5)

    def test_box_must_contain_cells(self):
        ens = ParticleEnsemble(np.array([[5.0, 5.0]]), np.array([1.0]))
        m = build_solution_map(ens, GridSpec(anchor=0.0, h=0.5, dim=2))
        with pytest.raises(ValueError):
            occupancy(m, box=(np.zeros(2), np.ones(2) * 0.5))


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        ens = ParticleEnsemble(rng.normal(size=(300, 3)), rng.normal(size=300))
        grid = GridSpec(anchor=0.0, h=0.4, dim=3)
        m = build_solution_map(ens, grid)
        path = tmp_path / "map.txt"
        m.to_text(path)
        back = VugMap.from_text(path, grid)
        assert np.array_equal(back.coords, m.coords)
        assert np.array_equal(back.values, m.values)
