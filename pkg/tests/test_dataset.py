import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ostl.dataset import (
    TEST,
    TRAIN,
    VALIDATION,
    NormalizedInput,
    build_dataset,
    centroid_seed,
    dataset_to_bytes,
    farthest_point_sampling,
    flatten,
    load_dataset,
    make_splits,
    normalize_input,
    save_dataset,
    unflatten,
)
from ostl.errors import DataError
from ostl.exciton import ParameterGrid, SimulationPoint, fmo_system, paper_grid
from ostl.ltlme import TimeGrid, Trajectory, paper_time_grid, propagate

from .oracles import brute_force_fps


def fake_trajectory(point, n_sites=7, grid_len=3, seed=0):
    """Random Hermitian, trace-one states; cheap stand-in for a propagated trajectory."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(grid_len, n_sites, n_sites)) + 1j * rng.normal(size=(grid_len, n_sites, n_sites))
    rho = a @ np.conj(np.swapaxes(a, 1, 2))
    rho /= np.trace(rho, axis1=1, axis2=2)[:, None, None]
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    return Trajectory(point, TimeGrid(np.arange(grid_len) * 5.0), rho)


class TestFlatten:
    def test_paper_length(self):
        traj = propagate(fmo_system(), SimulationPoint(0, 40, 75, 290), paper_time_grid())
        flat = flatten(traj)
        assert flat.size == 39249 == 801 * 49
        assert list(flat[:49]) == [1.0] + [0.0] * 48

    def test_ordering_two_sites(self):
        states = np.array([[[0.7, 0.1 + 0.2j], [0.1 - 0.2j, 0.3]]])
        assert list(flatten(states)) == [0.7, 0.1, 0.2, 0.3]

    def test_three_site_ordering(self):
        rho = np.zeros((1, 3, 3), dtype=complex)
        rho[0, 0, 0], rho[0, 1, 1], rho[0, 2, 2] = 11, 22, 33
        rho[0, 0, 1], rho[0, 0, 2], rho[0, 1, 2] = 1 + 2j, 3 + 4j, 5 + 6j
        assert list(flatten(rho)) == [11, 1, 2, 3, 4, 22, 5, 6, 33]

    def test_unflatten_hermitian_completion(self):
        states = unflatten([0.7, 0.1, 0.2, 0.3], 2, 1)
        assert states[0, 1, 0] == 0.1 - 0.2j
        assert states[0, 0, 1] == 0.1 + 0.2j
        assert states[0, 0, 0] == 0.7 and states[0, 0, 0].imag == 0

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            unflatten(np.zeros(39248), 7, 801)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 12), st.integers(0, 2 ** 31))
    def test_round_trip_bit_exact(self, n, m, seed):
        traj = fake_trajectory(SimulationPoint(0, 1, 1, 1), n, m, seed)
        flat = flatten(traj)
        back = unflatten(flat, n, m)
        iu = np.triu_indices(n)
        assert back[:, iu[0], iu[1]].tobytes() == traj.states[:, iu[0], iu[1]].tobytes()
        assert flatten(back).tobytes() == flat.tobytes()
        assert np.array_equal(back, np.conj(np.swapaxes(back, 1, 2)))


class TestNormalize:
    def test_maxima(self):
        v = normalize_input(SimulationPoint(0, 310, 300, 310), paper_grid()).vector
        assert list(v) == [0, 1.0, 1.0, 1.0]

    def test_minima(self):
        v = normalize_input(SimulationPoint(1, 10, 25, 30), paper_grid()).vector
        assert list(v) == [1, 10 / 310, 25 / 300, 30 / 310]

    def test_not_applied_twice(self):
        once = normalize_input(SimulationPoint(1, 10, 25, 30), paper_grid())
        with pytest.raises(TypeError):
            normalize_input(once, paper_grid())

    def test_range_on_paper_grid(self):
        vs = np.array([normalize_input(p, paper_grid()).vector for p in paper_grid()])
        assert np.all((vs[:, 1:] > 0) & (vs[:, 1:] <= 1))
        assert set(vs[:, 0]) == {0.0, 1.0}


def unit_grid(n=3):
    return np.array(list(itertools.product(np.linspace(0, 1, n), repeat=3)))


class TestFPS:
    def test_line_extremes(self):
        c = [[0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]]
        assert farthest_point_sampling(c, 2, seed_index=0) == [0, 2]

    def test_exhaustion(self):
        c = np.random.default_rng(0).uniform(size=(9, 3))
        sel = farthest_point_sampling(c, 9, seed_index=4)
        assert sorted(sel) == list(range(9))
        assert sel == farthest_point_sampling(c, 9, seed_index=4)

    def test_too_many(self):
        with pytest.raises(ValueError):
            farthest_point_sampling(np.zeros((3, 3)), 4, 0)

    def test_mixed_sites_rejected(self):
        c = [NormalizedInput(np.array([0, .1, .2, .3])), NormalizedInput(np.array([1, .1, .2, .3]))]
        with pytest.raises(ValueError):
            farthest_point_sampling(c, 1, 0)

    def test_cube_greedy_is_not_the_corner_set(self):
        # greedy picks the opposite corner, then edge midpoints at distance sqrt(1.25)
        grid = unit_grid()
        sel = farthest_point_sampling(grid, 8, seed_index=0)
        assert sel == brute_force_fps(grid.tolist(), 8, 0)
        assert sel[:2] == [0, 26]
        assert list(grid[sel[2]]) == [0.0, 0.5, 1.0]
        corners = {i for i, p in enumerate(grid) if set(p) <= {0.0, 1.0}}
        assert set(sel) != corners

    def test_corners_are_the_unique_max_min_subset(self):
        # exhaustive search over all C(27, 8) subsets
        grid = unit_grid()
        d = np.sqrt(((grid[:, None] - grid[None]) ** 2).sum(-1))
        combos = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(27), 8)),
                             dtype=np.int8).reshape(-1, 8)
        best = np.full(len(combos), np.inf)
        for a, b in itertools.combinations(range(8), 2):
            np.minimum(best, d[combos[:, a], combos[:, b]], out=best)
        winners = combos[best >= best.max() - 1e-12]
        corners = sorted(i for i, p in enumerate(grid) if set(p) <= {0.0, 1.0})
        assert best.max() == pytest.approx(1.0)
        assert [sorted(w) for w in winners] == [corners]

    def test_centroid_seed(self):
        assert centroid_seed(unit_grid()) == 13

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(5, 40))
    def test_min_distances_non_increasing(self, seed, m):
        c = np.random.default_rng(seed).uniform(size=(m, 3))
        _, dist = farthest_point_sampling(c, m, 0, return_distances=True)
        assert all(b <= a for a, b in zip(dist, dist[1:]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(3, 30))
    def test_permutation_independent(self, seed, m):
        rng = np.random.default_rng(seed)
        c = rng.uniform(size=(m, 3))
        k = rng.integers(1, m + 1)
        base = farthest_point_sampling(c, k, 0)
        perm = rng.permutation(m)
        inv = np.argsort(perm)
        shuffled = farthest_point_sampling(c[perm], k, int(inv[0]))
        assert [int(perm[i]) for i in shuffled] == base

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(2, 25))
    def test_matches_brute_force(self, seed, m):
        rng = np.random.default_rng(seed)
        c = rng.uniform(size=(m, 3))
        k = int(rng.integers(1, m + 1))
        s = int(rng.integers(0, m))
        assert farthest_point_sampling(c, k, s) == brute_force_fps(c.tolist(), k, s)


def small_dataset(grid, n_sites=2, grid_len=2):
    trajs = [fake_trajectory(p, n_sites, grid_len, i) for i, p in enumerate(grid)]
    return build_dataset(trajs, grid)


class TestSplits:
    def test_paper_counts(self):
        grid = paper_grid()
        ds = small_dataset(grid, n_sites=2, grid_len=1)
        out = make_splits(ds, 500, 100)
        assert out.split_sizes() == {"train": 1000, "validation": 200, "test": 2760}
        for j in (0, 1):
            on_site = out.raw[:, 0] == j
            assert np.sum(on_site & (out.split == TRAIN)) == 500
            assert np.sum(on_site & (out.split == VALIDATION)) == 100
        n = len(out)
        assert round(100 * 1000 / n) == 25 and round(100 * 200 / n) == 5 and round(100 * 2760 / n) == 70

    def test_exhaustion(self):
        grid = ParameterGrid((10, 20), (1,), (1,))
        out = make_splits(small_dataset(grid), 1, 1)
        assert out.split_sizes() == {"train": 2, "validation": 2, "test": 0}

    def test_infeasible(self):
        grid = ParameterGrid((10, 20), (1,), (1,))
        with pytest.raises(DataError, match="site label 0"):
            make_splits(small_dataset(grid), 2, 1)

    def test_deterministic(self):
        grid = ParameterGrid((10, 160, 310), (25, 150, 300), (30, 170, 310))
        ds = small_dataset(grid)
        a, b = make_splits(ds, 16, 4, 3), make_splits(ds, 16, 4, 3)
        assert np.array_equal(a.split, b.split)
        assert dataset_to_bytes(a) == dataset_to_bytes(b)

    def test_partition(self):
        grid = ParameterGrid((10, 160, 310), (25, 150, 300), (30, 170, 310))
        out = make_splits(small_dataset(grid), 16, 4)
        assert set(out.split) == {TRAIN, VALIDATION, TEST}
        assert out.split_sizes() == {"train": 32, "validation": 8, "test": 14}


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        grid = ParameterGrid((10, 160), (25, 300), (30,))
        ds = make_splits(small_dataset(grid, 3, 4), 1, 1)
        save_dataset(ds, tmp_path / "d.bin")
        back = load_dataset(tmp_path / "d.bin")
        for name in ("raw", "inputs", "targets", "split", "times"):
            assert np.array_equal(getattr(back, name), getattr(ds, name))
        assert back.maxima == ds.maxima and back.n_sites == 3
        assert dataset_to_bytes(back) == (tmp_path / "d.bin").read_bytes()

    def test_corrupted(self, tmp_path):
        grid = ParameterGrid((10, 160), (25,), (30,))
        blob = bytearray(dataset_to_bytes(small_dataset(grid)))
        blob[-40] ^= 1
        (tmp_path / "d.bin").write_bytes(bytes(blob))
        with pytest.raises(DataError):
            load_dataset(tmp_path / "d.bin")

    def test_inconsistent_grids(self):
        a = fake_trajectory(SimulationPoint(0, 1, 1, 1), 2, 3)
        b = fake_trajectory(SimulationPoint(0, 2, 1, 1), 2, 4)
        with pytest.raises(DataError):
            build_dataset([a, b], (2, 1, 1))

    def test_diagonals_in_unit_interval(self):
        traj = propagate(fmo_system(), SimulationPoint(1, 310, 25, 310), paper_time_grid())
        ds = build_dataset([traj], paper_grid())
        from ostl.dataset import feature_kinds
        diag = ds.targets[0].reshape(801, 49)[:, feature_kinds(7) == 0]
        assert diag.min() >= -1e-8 and diag.max() <= 1 + 1e-8
        assert math.isclose(ds.inputs[0, 1], 1.0)
