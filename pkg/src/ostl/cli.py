"""Command-line pipeline: generate, build-dataset, train, predict, evaluate, bench.

Every command writes a JSON manifest next to its primary output.  The
manifest's config digest (sha256 of the canonical JSON configuration) is
also embedded in each artifact header, so any file can be traced back to
the run that produced it.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .cnn import TrainConfig, load_model, paper_architecture, save_model, train
from .dataset import TEST, build_dataset, flatten, load_dataset, make_splits, save_dataset, unflatten
from .errors import DataError, NumericError
from .evaluate import (
    error_report,
    evaluate_split,
    interpolation_split_eval,
    latency_benchmark,
    model_grid,
    physicality_report,
    predict,
    predict_flat,
)
from .exciton import ParameterGrid, SimulationPoint, fmo_system, load_grid, load_system, paper_grid, parse_grid
from .ltlme import TimeGrid, paper_time_grid, propagate, read_trajectory, save_trajectory, write_trajectory_csv

log = logging.getLogger("ostl")

DATA_DIR_ENV = "OSTL_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# reduced grid used for quick end-to-end runs
DESK_GRID = ParameterGrid((10, 160, 310), (25, 150, 300), (30, 170, 310))


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "ostl_data"))


def config_digest(config: dict) -> bytes:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, command: str, config: dict, seeds: dict, inputs: dict, outputs: dict,
                   started: str) -> None:
    manifest = {
        "tool": "ostl",
        "version": __version__,
        "command": command,
        "config": config,
        "config_digest": config_digest(config).hex(),
        "seeds": seeds,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "started": started,
        "finished": _now(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: unreadable manifest ({exc})") from None


def resolve_grid(name: str) -> ParameterGrid:
    if name == "full":
        return paper_grid()
    if name == "desk":
        return DESK_GRID
    return load_grid(name)


def trajectory_path(out_dir: Path, point: SimulationPoint) -> Path:
    return out_dir / f"{point.key()}.bin"


def _is_complete(path: Path, point: SimulationPoint, digest: bytes, times: np.ndarray) -> bool:
    if not path.exists():
        return False
    try:
        traj, d = read_trajectory(path)
    except DataError as exc:
        log.warning("regenerating %s: %s", path.name, exc)
        return False
    return d == digest and traj.point == point and np.array_equal(traj.grid.times, times)


def _generate_one(system, point, times, path, digest) -> str:
    traj = propagate(system, point, TimeGrid(times))
    tmp = path.with_suffix(".part")
    save_trajectory(traj, tmp, digest)
    os.replace(tmp, path)
    return point.key()


def cmd_generate(args) -> int:
    started = _now()
    system = load_system(args.system) if args.system else fmo_system()
    grid = resolve_grid(args.grid)
    tgrid = paper_time_grid()
    if args.max_time_fs is not None:
        tgrid = tgrid.truncate(args.max_time_fs)
    out = Path(args.out) if args.out else data_dir() / "trajectories"
    out.mkdir(parents=True, exist_ok=True)

    config = {
        "hamiltonian_sha256": hashlib.sha256(system.hamiltonian.tobytes()).hexdigest(),
        "excitation_sites": list(system.excitation_sites),
        "grid": grid.to_text(),
        "times_fs": tgrid.times.tolist(),
    }
    digest = config_digest(config)
    todo = [p for p in grid if not _is_complete(trajectory_path(out, p), p, digest, tgrid.times)]
    log.info("%d of %d trajectories to compute", len(todo), len(grid))

    t0 = time.perf_counter()
    jobs = [(system, p, tgrid.times, trajectory_path(out, p), digest) for p in todo]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for key in pool.map(_generate_one, *zip(*jobs)):
                log.debug("wrote %s", key)
    else:
        for job in jobs:
            _generate_one(*job)
    write_manifest(out / "manifest.json", "generate", config, {}, {"system": args.system or "bundled:fmo7"},
                   {"trajectories": out}, started)
    print(f"generated={len(todo)} skipped={len(grid) - len(todo)} total={len(grid)} "
          f"({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    started = _now()
    src = Path(args.trajectories) if args.trajectories else data_dir() / "trajectories"
    gen = read_manifest(src / "manifest.json")
    grid = parse_grid(gen["config"]["grid"], str(src / "manifest.json"))
    gen_digest = bytes.fromhex(gen["config_digest"])

    trajs, missing = [], []
    for p in grid:
        path = trajectory_path(src, p)
        try:
            traj, d = read_trajectory(path)
        except (DataError, FileNotFoundError):
            missing.append(p.key())
            continue
        if d != gen_digest:
            missing.append(f"{p.key()} (stale)")
            continue
        trajs.append(traj)
    if missing:
        raise DataError(f"{len(missing)} trajectories missing or invalid:\n  " + "\n  ".join(missing))

    config = {
        "generate_digest": gen["config_digest"],
        "train_per_site": args.train_per_site,
        "val_per_site": args.val_per_site,
        "fps_seed_index": args.seed,
    }
    digest = config_digest(config)
    ds = make_splits(build_dataset(trajs, grid, digest), args.train_per_site, args.val_per_site, args.seed)
    out = Path(args.out) if args.out else data_dir() / "dataset.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "build-dataset", config,
                   {"fps_seed_index": args.seed}, {"trajectories": src}, {"dataset": out}, started)
    sizes = ds.split_sizes()
    print(f"train={sizes['train']} val={sizes['validation']} test={sizes['test']}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    ds_path = Path(args.dataset) if args.dataset else data_dir() / "dataset.bin"
    ds = load_dataset(ds_path)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                      seed=args.seed, patience=args.patience)
    config = {
        "dataset_sha256": file_sha256(ds_path),
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.patience,
        "init_seed": args.seed,
        "shuffle_seed": cfg.seed,
    }
    digest = config_digest(config)
    model = paper_architecture(ds.targets.shape[1]).initialize(args.seed)
    model.meta = {
        "n_sites": ds.n_sites,
        "times": ds.times.tolist(),
        "maxima": list(ds.maxima),
        "config_digest": digest.hex(),
    }

    def report(epoch, tr, va):
        if epoch % args.log_every == 0:
            log.info("epoch %d train %.4e val %.4e", epoch, tr, va)

    t0 = time.perf_counter()
    res = train(model, ds, cfg, callback=report)
    out = Path(args.out) if args.out else data_dir() / "model.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    history = out.with_name(out.name + ".history.txt")
    history.write_text(f"# config_digest {digest.hex()}\n" + res.history_text())
    write_manifest(out.with_name(out.name + ".manifest.json"), "train", config,
                   {"init_seed": args.seed, "shuffle_seed": cfg.seed}, {"dataset": ds_path},
                   {"model": out, "history": history}, started)
    print(f"best_epoch={res.best_epoch} best_val_mse={res.best_val_mse:.6e} "
          f"epochs={len(res.history)} ({time.perf_counter() - t0:.1f} s, backend={_backend.BACKEND})")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    point = SimulationPoint(args.site, args.lam, args.gamma, args.temperature)
    _, _, maxima = model_grid(model)
    for name, v, hi in zip(("lambda", "gamma", "temperature"), (args.lam, args.gamma, args.temperature), maxima):
        if v > hi:
            log.warning("%s = %g exceeds the training maximum %g; extrapolating", name, v, hi)
    t0 = time.perf_counter()
    traj = predict(model, point)
    dt = time.perf_counter() - t0
    write_trajectory_csv(traj.grid.times, traj.states, args.out)
    phys = physicality_report(traj)
    if phys.n_flagged:
        log.warning("%d of %d predicted states violate trace/positivity tolerances", phys.n_flagged, len(traj.grid))
    print(f"wrote {args.out} ({len(traj.grid)} steps) in {dt * 1e3:.2f} ms")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = _now()
    model = load_model(args.model)
    ds = load_dataset(args.dataset)
    digest = model.meta.get("config_digest", "")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rep = evaluate_split(model, ds, TEST)
    head = f"config_digest = {digest!r}\n"
    (out / "report.txt").write_text(head + rep.to_text())
    rows = [("pooled", rep)]
    parts = interpolation_split_eval(model, ds)
    for name, r in parts.items():
        (out / f"report_{name}.txt").write_text(head + r.to_text())
        rows.append((name, r))
    (out / "report.csv").write_text("partition," + rep.csv_header() + "\n" +
                                    "".join(f"{n},{r.csv_row()}\n" for n, r in rows))
    if {"interior", "exterior"} <= parts.keys():
        log.info("interior diag MAE %.3e, exterior %.3e",
                 parts["interior"].mae_diagonal, parts["exterior"].mae_diagonal)

    idx = ds.indices(TEST)
    n_sites, grid, _ = model_grid(model)
    flagged = 0
    for row in predict_flat(model, ds.inputs[idx]):
        flagged += physicality_report(unflatten(row, n_sites, len(grid))).n_flagged
    (out / "physicality.txt").write_text(head + f"flagged_states = {flagged}\n"
                                         f"total_states = {idx.size * len(grid)}\n")

    if args.trajectories:
        # independent check against the stored reference files
        refs = []
        for i in idx:
            traj, _ = read_trajectory(trajectory_path(Path(args.trajectories), SimulationPoint.from_array(ds.raw[i])))
            refs.append(flatten(traj))
        ref_rep = error_report(predict_flat(model, ds.inputs[idx]), np.array(refs), n_sites)
        (out / "report_reference_files.txt").write_text(head + ref_rep.to_text())

    write_manifest(out / "manifest.json", "evaluate", {"model_digest": digest, "dataset_sha256":
                   file_sha256(args.dataset)}, {}, {"model": args.model, "dataset": args.dataset},
                   {"reports": out}, started)
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    model = load_model(args.model)
    _, _, maxima = model_grid(model)
    rng = np.random.default_rng(args.seed)
    pts = [SimulationPoint(int(rng.integers(0, 2)), *(float(rng.uniform(0.05, 1.0)) * m for m in maxima))
           for _ in range(8)]
    stats = latency_benchmark(model, pts, repetitions=args.repetitions)
    print(f"median_ms={stats.median_ms:.3f} p95_ms={stats.p95_ms:.3f} "
          f"repetitions={stats.repetitions} output_length={model.output_length}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ostl", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"ostl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="propagate reference trajectories over a parameter grid")
    g.add_argument("--system", help="Hamiltonian file (default: bundled 7-site FMO)")
    g.add_argument("--grid", default="full", help="grid file, or 'full' (3960 points) / 'desk' (54 points)")
    g.add_argument("--max-time-fs", type=float, help="truncate the time grid (e.g. 1000 for 201 steps)")
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out", help=f"output directory (default: ${DATA_DIR_ENV}/trajectories)")
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("build-dataset", help="flatten, normalize and FPS-split trajectories")
    b.add_argument("--trajectories", help="trajectory directory from 'generate'")
    b.add_argument("--train-per-site", type=int, default=500)
    b.add_argument("--val-per-site", type=int, default=100)
    b.add_argument("--seed", type=int, default=None, help="FPS seed index per site (default: centroid)")
    b.add_argument("--out", help=f"dataset file (default: ${DATA_DIR_ENV}/dataset.bin)")
    b.set_defaults(func=cmd_build_dataset)

    t = sub.add_parser("train", help="train the CNN with best-validation checkpointing")
    t.add_argument("--dataset")
    t.add_argument("--epochs", "--max-epochs", dest="epochs", type=int, default=10000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--patience", type=int, default=None)
    t.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    t.add_argument("--log-every", type=int, default=100)
    t.add_argument("--out", help=f"model file (default: ${DATA_DIR_ENV}/model.bin)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="one-shot trajectory prediction to CSV")
    r.add_argument("--model", required=True)
    r.add_argument("--site", type=int, choices=(0, 1), required=True, help="initial excitation label j")
    r.add_argument("--lam", type=float, required=True, help="reorganization energy, cm^-1")
    r.add_argument("--gamma", type=float, required=True, help="bath cutoff frequency, cm^-1")
    r.add_argument("--temperature", type=float, required=True, help="K")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="test-set error reports")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--trajectories", help="also score against the stored reference files")
    e.add_argument("--out", required=True, help="report directory")
    e.set_defaults(func=cmd_evaluate)

    n = sub.add_parser("bench", help="single-thread prediction latency")
    n.add_argument("--model", required=True)
    n.add_argument("--repetitions", type=int, default=50)
    n.add_argument("--seed", type=int, default=0)
    n.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        # invalid parameter values given on the command line
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
