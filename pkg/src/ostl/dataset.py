"""Trajectory -> supervised point transformation, FPS splits and dataset files."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _binary
from .errors import DataError
from .exciton import ParameterGrid, SimulationPoint
from .ltlme import Trajectory, upper_triangle_columns

TRAIN, VALIDATION, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VALIDATION: "validation", TEST: "test"}

# relative tolerance under which two FPS distances count as tied
TIE_RTOL = 1e-12


def features_per_step(n_sites: int) -> int:
    return n_sites + n_sites * (n_sites - 1)


def target_length(n_sites: int, grid_len: int) -> int:
    return grid_len * features_per_step(n_sites)


@lru_cache(maxsize=None)
def _layout(n_sites: int):
    cols = upper_triangle_columns(n_sites)
    rows = np.array([c[1] for c in cols])
    cs = np.array([c[2] for c in cols])
    imag = np.array([c[3] == 1 for c in cols])
    return rows, cs, imag


def feature_kinds(n_sites: int) -> np.ndarray:
    """Per-feature category: 0 diagonal, 1 off-diagonal real, 2 off-diagonal imaginary."""
    rows, cs, imag = _layout(n_sites)
    return np.where(rows == cs, 0, np.where(imag, 2, 1))


def flatten(traj: Trajectory | np.ndarray) -> np.ndarray:
    """Time-major vector [Y(t0), Y(t1), ...] of upper-triangle features."""
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj)
    rows, cs, imag = _layout(states.shape[1])
    z = states[:, rows, cs]
    return np.where(imag, z.imag, z.real).reshape(-1)


def unflatten(flat, n_sites: int, grid_len: int) -> np.ndarray:
    """Inverse of :func:`flatten`: Hermitian (grid_len, n, n) complex matrices."""
    flat = np.asarray(flat, dtype=float)
    nf = features_per_step(n_sites)
    if flat.ndim != 1 or flat.size != grid_len * nf:
        raise DataError(f"expected {grid_len * nf} values for {n_sites} sites x {grid_len} steps, got {flat.size}")
    y = flat.reshape(grid_len, nf)
    rows, cs, imag = _layout(n_sites)
    diag = rows == cs
    states = np.zeros((grid_len, n_sites, n_sites), dtype=complex)
    d = np.arange(n_sites)
    states[:, d, d] = y[:, diag]
    re_cols = ~diag & ~imag
    upper = y[:, re_cols] + 1j * y[:, imag]
    states[:, rows[re_cols], cs[re_cols]] = upper
    states[:, cs[re_cols], rows[re_cols]] = upper.conj()
    return states


@dataclass(frozen=True)
class NormalizedInput:
    """[j, lam/lam_max, gamma/gamma_max, T/T_max]."""

    vector: np.ndarray

    @property
    def j(self) -> int:
        return int(self.vector[0])

    @property
    def coords(self) -> np.ndarray:
        return self.vector[1:]


def normalize_input(point: SimulationPoint, maxima: ParameterGrid | Sequence[float]) -> NormalizedInput:
    if isinstance(point, NormalizedInput):
        raise TypeError("input is already normalized")
    if isinstance(maxima, ParameterGrid):
        maxima = maxima.maxima
    lam_max, gamma_max, t_max = (float(m) for m in maxima)
    if min(lam_max, gamma_max, t_max) <= 0:
        raise ValueError("normalization maxima must be positive")
    return NormalizedInput(np.array([point.j, point.lam / lam_max, point.gamma / gamma_max,
                                     point.temperature / t_max]))


def _coords(candidates) -> np.ndarray:
    if len(candidates) and isinstance(candidates[0], NormalizedInput):
        if len({c.j for c in candidates}) > 1:
            raise ValueError("farthest point sampling runs on one excitation-site label at a time")
        return np.array([c.coords for c in candidates])
    return np.atleast_2d(np.asarray(candidates, dtype=float))


def _argmax_lowest(d: np.ndarray) -> int:
    top = d.max()
    return int(np.flatnonzero(d >= top - TIE_RTOL * max(1.0, abs(top)))[0])


def centroid_seed(candidates) -> int:
    """Index of the candidate nearest the centroid (lowest index on ties)."""
    x = _coords(candidates)
    d = np.sqrt(((x - x.mean(axis=0)) ** 2).sum(axis=1))
    return _argmax_lowest(-d)


def farthest_point_sampling(candidates, k: int, seed_index: int | None = None,
                            return_distances: bool = False):
    """Greedy max-min selection under Euclidean distance.

    Starts from ``seed_index`` (centroid rule when None) and repeatedly adds
    the candidate farthest from the selected set.  Distances equal within a
    relative 1e-12 are ties, resolved toward the lowest index.
    With ``return_distances`` the min-distance of each pick (inf for the
    seed) is returned as well.
    """
    x = _coords(candidates)
    m = x.shape[0]
    if k > m:
        raise ValueError(f"cannot select {k} of {m} candidates")
    if k <= 0:
        return ([], []) if return_distances else []
    seed = centroid_seed(x) if seed_index is None else int(seed_index)
    if not 0 <= seed < m:
        raise IndexError(f"seed index {seed} outside 0..{m - 1}")

    selected = [seed]
    picked_dist = [math.inf]
    mind = np.sqrt(((x - x[seed]) ** 2).sum(axis=1))
    taken = np.zeros(m, dtype=bool)
    taken[seed] = True
    while len(selected) < k:
        d = np.where(taken, -np.inf, mind)
        nxt = _argmax_lowest(d)
        selected.append(nxt)
        picked_dist.append(float(mind[nxt]))
        taken[nxt] = True
        mind = np.minimum(mind, np.sqrt(((x - x[nxt]) ** 2).sum(axis=1)))
    return (selected, picked_dist) if return_distances else selected


@dataclass
class Dataset:
    """Supervised points: normalized inputs, flattened targets and split tags."""

    raw: np.ndarray  # (m, 4) j, lam, gamma, T
    inputs: np.ndarray  # (m, 4) normalized
    targets: np.ndarray  # (m, target_length)
    split: np.ndarray  # (m,) uint8
    n_sites: int
    times: np.ndarray  # fs
    maxima: tuple[float, float, float]
    digest: bytes = field(default=_binary.NO_DIGEST, repr=False)

    def __post_init__(self):
        m = self.raw.shape[0]
        if not (self.inputs.shape[0] == self.targets.shape[0] == self.split.shape[0] == m):
            raise DataError("dataset columns have different lengths")
        if self.targets.shape[1] != target_length(self.n_sites, len(self.times)):
            raise DataError("target length inconsistent with n_sites and time grid")

    def __len__(self) -> int:
        return self.raw.shape[0]

    @property
    def points(self) -> list[SimulationPoint]:
        return [SimulationPoint.from_array(r) for r in self.raw]

    @property
    def grid_len(self) -> int:
        return len(self.times)

    def indices(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def subset(self, tag: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(tag)
        return self.inputs[idx], self.targets[idx]

    def split_sizes(self) -> dict[str, int]:
        return {SPLIT_NAMES[t]: int(np.sum(self.split == t)) for t in SPLIT_NAMES}


def build_dataset(trajectories: Sequence[Trajectory], maxima, digest: bytes = _binary.NO_DIGEST) -> Dataset:
    """Flatten and normalize trajectories; every entry starts in the test split."""
    if not trajectories:
        raise DataError("no trajectories")
    if isinstance(maxima, ParameterGrid):
        maxima = maxima.maxima
    times = trajectories[0].grid.times
    n = trajectories[0].n_sites
    for t in trajectories:
        if t.n_sites != n or not np.array_equal(t.grid.times, times):
            raise DataError(f"trajectory {t.point.key()} has a different shape or time grid")
    raw = np.array([t.point.as_array() for t in trajectories])
    inputs = np.array([normalize_input(t.point, maxima).vector for t in trajectories])
    targets = np.array([flatten(t) for t in trajectories])
    split = np.full(len(trajectories), TEST, dtype=np.uint8)
    return Dataset(raw, inputs, targets, split, n, np.array(times), tuple(float(v) for v in maxima), digest)


def make_splits(ds: Dataset, n_train_per_site: int, n_val_per_site: int,
                seed_index: int | None = None) -> Dataset:
    """Tag train/validation/test entries by FPS, run separately per site label.

    Training points are chosen by FPS from ``seed_index`` (position within
    that site's entries; centroid rule when None).  Validation points are
    chosen by a fresh FPS over the remaining entries, seeded at their
    centroid.  Everything else is test.
    """
    split = np.full(len(ds), TEST, dtype=np.uint8)
    for j in sorted(set(ds.raw[:, 0].astype(int))):
        idx = np.flatnonzero(ds.raw[:, 0] == j)
        if n_train_per_site + n_val_per_site > idx.size:
            raise DataError(f"site label {j}: cannot take {n_train_per_site} train + "
                            f"{n_val_per_site} validation from {idx.size} points")
        coords = ds.inputs[idx, 1:]
        train = farthest_point_sampling(coords, n_train_per_site, seed_index)
        split[idx[train]] = TRAIN
        rest = np.setdiff1d(np.arange(idx.size), train)
        if n_val_per_site:
            val = farthest_point_sampling(coords[rest], n_val_per_site, None)
            split[idx[rest[val]]] = VALIDATION
    return Dataset(ds.raw, ds.inputs, ds.targets, split, ds.n_sites, ds.times, ds.maxima, ds.digest)


DATASET_MAGIC = b"OSTLDSET"
DATASET_VERSION = 1
_DS_HEADER = "<IIIIQ32s"


def _record_dtype(ntarget: int) -> np.dtype:
    return np.dtype([("raw", "<f8", 4), ("inp", "<f8", 4), ("tgt", "<f8", ntarget), ("split", "u1")])


def dataset_to_bytes(ds: Dataset) -> bytes:
    ntarget = ds.targets.shape[1]
    recs = np.empty(len(ds), dtype=_record_dtype(ntarget))
    recs["raw"], recs["inp"], recs["tgt"], recs["split"] = ds.raw, ds.inputs, ds.targets, ds.split
    body = b"".join([
        struct.pack(_DS_HEADER, ds.n_sites, ds.grid_len, 4, ntarget, len(ds), ds.digest),
        np.asarray(ds.maxima, dtype="<f8").tobytes(),
        np.asarray(ds.times, dtype="<f8").tobytes(),
        recs.tobytes(),
    ])
    return _binary.seal(DATASET_MAGIC, DATASET_VERSION, body)


def dataset_from_bytes(blob: bytes, what: str = "dataset") -> Dataset:
    r = _binary.Reader(_binary.unseal(blob, DATASET_MAGIC, DATASET_VERSION, what), what)
    n_sites, grid_len, nfeat, ntarget, count, digest = r.unpack(_DS_HEADER)
    if nfeat != 4 or ntarget != target_length(n_sites, grid_len):
        raise DataError(f"{what}: inconsistent header")
    maxima = tuple(float(v) for v in r.array("<f8", 3))
    times = r.array("<f8", grid_len)
    rec = _record_dtype(ntarget)
    recs = np.frombuffer(r.take(rec.itemsize * count), dtype=rec)
    r.done()
    if np.any(recs["split"] > TEST):
        raise DataError(f"{what}: invalid split tag")
    return Dataset(recs["raw"].astype(float), recs["inp"].astype(float), recs["tgt"].astype(float),
                   recs["split"].astype(np.uint8), n_sites, times, maxima, digest)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return dataset_from_bytes(blob, str(path))
