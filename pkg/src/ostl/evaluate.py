"""One-shot prediction, error decomposition, physicality diagnostics and latency."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .cnn import Model
from .dataset import TEST, TRAIN, Dataset, feature_kinds, features_per_step, normalize_input, unflatten
from .errors import DataError
from .exciton import SimulationPoint
from .ltlme import TimeGrid, Trajectory, hermiticity_residual, min_eigenvalues, trace_deviation


def model_grid(model: Model) -> tuple[int, TimeGrid, tuple[float, float, float]]:
    """(n_sites, time grid, normalization maxima) recorded in a trained model."""
    try:
        meta = model.meta
        n_sites, times, maxima = int(meta["n_sites"]), meta["times"], tuple(meta["maxima"])
    except KeyError as exc:
        raise DataError(f"model metadata lacks {exc}") from None
    return n_sites, TimeGrid(np.asarray(times, dtype=float)), maxima


def predict(model: Model, point: SimulationPoint) -> Trajectory:
    """Whole trajectory from one forward pass."""
    n_sites, grid, maxima = model_grid(model)
    if model.output_length != len(grid) * features_per_step(n_sites):
        raise DataError("model output length does not match its recorded time grid")
    flat = model.predict(normalize_input(point, maxima))
    return Trajectory(point, grid, unflatten(flat, n_sites, len(grid)))


@dataclass(frozen=True)
class ErrorReport:
    mae_diagonal: float
    rmse_diagonal: float
    mae_offdiag_real: float
    rmse_offdiag_real: float
    mae_offdiag_imag: float
    rmse_offdiag_imag: float
    n_trajectories: int

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(ErrorReport))

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in asdict(self).values())


def error_report(predictions, references, n_sites: int) -> ErrorReport:
    """MAE and RMSE pooled over every (trajectory, time, element) sample per category.

    ``predictions`` and ``references`` are (n_traj, target_length) arrays of
    flattened trajectories.
    """
    pred = np.atleast_2d(np.asarray(predictions, dtype=float))
    ref = np.atleast_2d(np.asarray(references, dtype=float))
    nf = features_per_step(n_sites)
    if pred.shape != ref.shape or pred.shape[1] % nf:
        raise DataError(f"mismatched prediction/reference shapes {pred.shape} vs {ref.shape}")
    err = (pred - ref).reshape(pred.shape[0], -1, nf)
    kinds = feature_kinds(n_sites)
    stats = []
    for k in (0, 1, 2):
        e = err[:, :, kinds == k]
        if e.size == 0:
            stats += [0.0, 0.0]
            continue
        stats += [float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e * e)))]
    return ErrorReport(*stats, n_trajectories=pred.shape[0])


def predict_flat(model: Model, inputs) -> np.ndarray:
    return model.forward(np.asarray(inputs, dtype=float))


@dataclass(frozen=True)
class LatencyStats:
    median_ms: float
    p95_ms: float
    mean_ms: float
    repetitions: int


def latency_benchmark(model: Model, points, repetitions: int = 50, warmup: int = 5) -> LatencyStats:
    """Wall-clock forward + unflatten time per trajectory on one BLAS thread."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    points = list(points)
    if not points:
        raise ValueError("need at least one point")
    samples = []
    with threadpool_limits(limits=1):
        for i in range(warmup + repetitions):
            point = points[i % len(points)]
            t0 = time.perf_counter()
            predict(model, point)
            dt = time.perf_counter() - t0
            if i >= warmup:
                samples.append(dt * 1e3)
    s = np.array(samples)
    return LatencyStats(float(np.median(s)), float(np.percentile(s, 95)), float(s.mean()), repetitions)


@dataclass(frozen=True)
class PhysicalityReport:
    trace_deviation: np.ndarray
    min_eigenvalue: np.ndarray
    hermiticity_residual: np.ndarray
    flagged: np.ndarray  # bool per step

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())


def physicality_report(states, trace_tol: float = 1e-2, eig_tol: float = 1e-2) -> PhysicalityReport:
    states = getattr(states, "states", states)
    states = np.asarray(states)
    if states.ndim == 2:
        states = states[None]
    tr = trace_deviation(states)
    ev = min_eigenvalues(states)
    herm = hermiticity_residual(states)
    return PhysicalityReport(tr, ev, herm, (tr > trace_tol) | (ev < -eig_tol))


def _bounding_boxes(ds: Dataset) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    boxes = {}
    for j in np.unique(ds.inputs[:, 0]).astype(int):
        tr = ds.inputs[(ds.split == TRAIN) & (ds.inputs[:, 0] == j), 1:]
        if len(tr):
            boxes[j] = (tr.min(axis=0), tr.max(axis=0))
    return boxes


def interior_mask(ds: Dataset, tol: float = 1e-12) -> np.ndarray:
    """Entries inside the axis-aligned bounding box of their site's training points."""
    boxes = _bounding_boxes(ds)
    mask = np.zeros(len(ds), dtype=bool)
    for i, row in enumerate(ds.inputs):
        box = boxes.get(int(row[0]))
        if box is not None:
            lo, hi = box
            mask[i] = bool(np.all(row[1:] >= lo - tol) and np.all(row[1:] <= hi + tol))
    return mask


def interpolation_split_eval(model: Model, ds: Dataset) -> dict[str, ErrorReport]:
    """Test-set errors split into interior/exterior of the training bounding box.

    Empty partitions are left out of the result.
    """
    test = ds.split == TEST
    inside = interior_mask(ds)
    out = {}
    for name, sel in (("interior", test & inside), ("exterior", test & ~inside)):
        idx = np.flatnonzero(sel)
        if idx.size:
            out[name] = error_report(predict_flat(model, ds.inputs[idx]), ds.targets[idx], ds.n_sites)
    return out


def evaluate_split(model: Model, ds: Dataset, tag: int = TEST) -> ErrorReport:
    idx = ds.indices(tag)
    if idx.size == 0:
        raise DataError("no entries in the requested split")
    return error_report(predict_flat(model, ds.inputs[idx]), ds.targets[idx], ds.n_sites)
