"""Command-line pipeline: simulate -> precompute -> train -> reconstruct -> eval.

One TOML configuration file drives every command; flags only choose artifact
paths and solver subsets.  Every artifact written here records the config
hash, and every command re-checks the hashes of the artifacts it consumes, so
a dataset simulated under one configuration cannot silently feed a model
trained under another.  All artifacts except the timing report are
byte-for-byte reproducible from (config, root seed).

Exit codes: 0 success, 2 configuration/validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio
from .alista import compute_analytic_weights, sweep_layers, train
from .config import ConfigError, RunConfig, load_config
from .evaluate import benchmark, make_solver, nmse_db, to_point_cloud
from .model import build_steering_matrix
from .scene import Labeling, build_sample_set, generate_scene
from .solvers import largest_gram_eigenvalue

__all__ = ["main"]

_SOLVER_NAMES = ("omp", "iht", "ista", "alista")


class CliError(ValueError):
    """Input validation failed (bad flag value, mismatched artifact, ...)."""


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise CliError(f"missing input {path} ({hint})")
    return path


def _load_artifact(loader, path, *args, **kwargs):
    """Treat unreadable or mismatched artifacts as validation failures."""
    try:
        return loader(path, *args, **kwargs)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _check_binding(path, header: dict, cfg: RunConfig, geometry_hash=None, grid_hash=None):
    """Refuse artifacts produced under a different config/geometry/grid."""
    recorded = header.get("config_hash")
    if recorded is not None and recorded != cfg.config_hash:
        raise CliError(
            f"{path} was produced under config {recorded[:12]}..., current config "
            f"is {cfg.config_hash[:12]}...; refusing to mix runs"
        )
    for name, want, have in (
        ("geometry", geometry_hash, header.get("geometry_hash")),
        ("grid", grid_hash, header.get("grid_hash")),
    ):
        if want is not None and have is not None and want != have:
            raise CliError(f"{path} was built against a different {name}")


def _manifest(cfg: RunConfig, artifact: Path, kind: str, extra: dict) -> None:
    doc = {
        "artifact": kind,
        "file": artifact.name,
        "format_version": fileio.FORMAT_VERSION,
        "config_hash": cfg.config_hash,
    }
    doc.update(extra)
    fileio.save_json(Path(str(artifact) + ".manifest.json"), doc)


def _out(cfg: RunConfig, override, default_name: str) -> Path:
    base = cfg.output_dir()
    base.mkdir(parents=True, exist_ok=True)
    return Path(override) if override else base / default_name


# --- commands -----------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    geometry = cfg.geometry()
    grid = cfg.grid()
    labeling = cfg.labeling()
    try:
        scene = generate_scene(cfg.scene_spec(), grid)
        dataset = build_sample_set(
            scene,
            geometry,
            grid,
            cfg["dataset.snr_db"],
            labeling,
            cfg.stage_seed("dataset"),
            split_fractions=tuple(cfg["dataset.split_fractions"]),
            label_config=cfg.label_config(),
            criteria=cfg.selection_criteria(),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    path = _out(cfg, args.output, "dataset.bin")
    fileio.save_dataset(
        path,
        dataset,
        extra_header={
            "config_hash": cfg.config_hash,
            "snr_db": cfg["dataset.snr_db"],
            "scene_seed": cfg.stage_seed("scene"),
            "dataset_seed": cfg.stage_seed("dataset"),
        },
    )
    _manifest(
        cfg,
        path,
        "dataset",
        {
            "geometry_hash": dataset.geometry_hash,
            "grid_hash": dataset.grid_hash,
            "labeling": labeling.value,
            "seeds": {
                "scene": cfg.stage_seed("scene"),
                "dataset": cfg.stage_seed("dataset"),
            },
            "counts": {tag: len(idx) for tag, idx in sorted(dataset.splits.items())},
            "num_samples": len(dataset),
        },
    )
    print(f"wrote {path} ({len(dataset)} samples, labeling={labeling.value})")
    return 0


def cmd_precompute(cfg: RunConfig, args) -> int:
    geometry = cfg.geometry()
    grid = cfg.grid()
    R = build_steering_matrix(geometry, grid)
    W = compute_analytic_weights(R)
    s_path = _out(cfg, args.steering, "steering.bin")
    w_path = _out(cfg, args.weights, "weights.bin")
    fileio.save_steering(
        s_path,
        R,
        extra_header={"config_hash": cfg.config_hash, "grid_hash": grid.content_hash()},
    )
    fileio.save_weights(
        w_path, W, extra_header={"config_hash": cfg.config_hash}
    )
    _manifest(
        cfg,
        s_path,
        "steering",
        {
            "geometry_hash": R.geometry_hash,
            "grid_hash": grid.content_hash(),
            "num_channels": R.num_channels,
            "num_positions": R.num_positions,
        },
    )
    _manifest(
        cfg,
        w_path,
        "weights",
        {
            "steering_hash": W.steering_hash,
            "objective_value": W.objective_value,
            "constraint": "unit_diagonal",
            "constraint_residual": W.constraint_residual(R),
        },
    )
    print(f"wrote {s_path} and {w_path} (objective {W.objective_value:.12g})")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    geometry = cfg.geometry()
    grid = cfg.grid()
    R = build_steering_matrix(geometry, grid)
    ds_path = _require(_out(cfg, args.dataset, "dataset.bin"), "run simulate first")
    w_path = _require(_out(cfg, args.weights, "weights.bin"), "run precompute first")
    _check_binding(
        ds_path,
        _load_artifact(fileio.read_header, ds_path, "dataset"),
        cfg,
        geometry.content_hash(),
        grid.content_hash(),
    )
    dataset = _load_artifact(fileio.load_dataset, ds_path)
    _check_binding(w_path, _load_artifact(fileio.read_header, w_path, "weights"), cfg)
    _load_artifact(fileio.load_weights, w_path, steering=R)  # validates pairing + objective

    model = train(dataset, R, cfg["alista.layers"], cfg.train_config())
    m_path = _out(cfg, args.model, "model.bin")
    fileio.save_model(
        m_path, model, extra_header={"config_hash": cfg.config_hash}
    )
    curve_path = _out(cfg, args.loss_curve, "loss_curve.json")
    fileio.save_json(
        curve_path,
        {
            "config_hash": cfg.config_hash,
            "train_loss": model.metadata["train_loss"],
            "validation_loss": model.metadata["validation_loss"],
            "selected_epoch": model.metadata["selected_epoch"],
            "best_validation_loss": model.metadata["best_validation_loss"],
            "layer_depths": model.metadata["layer_depths"],
        },
    )
    _manifest(
        cfg,
        m_path,
        "model",
        {
            "layers": model.layers,
            "steering_hash": model.weights.steering_hash,
            "selected_epoch": model.metadata["selected_epoch"],
            "best_validation_loss": model.metadata["best_validation_loss"],
            "training_seed": cfg.stage_seed("train"),
        },
    )
    print(
        f"wrote {m_path} (best validation loss "
        f"{model.metadata['best_validation_loss']:.6g} at epoch "
        f"{model.metadata['selected_epoch']})"
    )
    return 0


def _parse_depths(text: str) -> list:
    if ":" in text:
        lo, _, hi = text.partition(":")
        depths = list(range(int(lo), int(hi) + 1))
    else:
        depths = [int(tok) for tok in text.split(",") if tok]
    if not depths or min(depths) < 1:
        raise CliError(f"bad --depths '{text}' (use 'lo:hi' or 'k1,k2,...')")
    return depths


def cmd_sweep_layers(cfg: RunConfig, args) -> int:
    R = build_steering_matrix(cfg.geometry(), cfg.grid())
    ds_path = _require(_out(cfg, args.dataset, "dataset.bin"), "run simulate first")
    _check_binding(ds_path, _load_artifact(fileio.read_header, ds_path, "dataset"), cfg)
    dataset = _load_artifact(fileio.load_dataset, ds_path)
    depths = _parse_depths(args.depths or f"1:{cfg['alista.layers']}")
    curve = sweep_layers(dataset, R, depths, cfg.train_config())
    path = _out(cfg, args.output, "layer_sweep.json")
    fileio.save_json(
        path,
        {
            "config_hash": cfg.config_hash,
            "depths": [k for k, _ in curve],
            "validation_nmse_db": [v for _, v in curve],
        },
    )
    for k, v in curve:
        print(f"layers {k:3d}  validation NMSE {v:8.3f} (-dB)")
    print(f"wrote {path}")
    return 0


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    geometry = cfg.geometry()
    grid = cfg.grid()
    R = build_steering_matrix(geometry, grid)
    ds_path = _require(_out(cfg, args.dataset, "dataset.bin"), "run simulate first")
    _check_binding(
        ds_path,
        _load_artifact(fileio.read_header, ds_path, "dataset"),
        cfg,
        geometry.content_hash(),
        grid.content_hash(),
    )
    dataset = _load_artifact(fileio.load_dataset, ds_path)

    name = args.solver
    if name == "alista":
        m_path = _require(_out(cfg, args.model, "model.bin"), "run train first")
        _check_binding(m_path, _load_artifact(fileio.read_header, m_path, "model"), cfg)
        model = _load_artifact(fileio.load_model, m_path, steering=R)
        solve = make_solver(name, R, model=model)
    elif name == "ista":
        lip = 1.01 * largest_gram_eigenvalue(R)
        solve = make_solver(name, R, ista_config=cfg.ista_config(lip))
    else:
        solve = make_solver(name, R, greedy_config=cfg.greedy_config(name))

    samples = list(dataset.samples)
    profiles = np.zeros((len(samples), grid.num_positions), dtype=np.complex128)

    def run(idx):
        profiles[idx] = solve(samples[idx].measurement)

    workers = cfg.workers()
    if workers <= 1 or len(samples) < 2:
        for i in range(len(samples)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(samples))))

    coords = [s.pixel_coords for s in samples]
    e_path = _out(cfg, args.output, f"estimates_{name}.bin")
    fileio.save_estimates(
        e_path,
        coords,
        profiles,
        solver=name,
        geometry_hash=dataset.geometry_hash,
        grid_hash=dataset.grid_hash,
        extra_header={"config_hash": cfg.config_hash},
    )
    cloud = to_point_cloud(
        dict(zip(coords, profiles)), grid, geometry, cfg["eval.detection_threshold"]
    )
    tag = f"config_hash {cfg.config_hash}"
    xyz_path = Path(str(e_path).removesuffix(".bin") + ".xyz")
    ply_path = Path(str(e_path).removesuffix(".bin") + ".ply")
    fileio.write_xyz(xyz_path, cloud, comment=tag)
    fileio.write_ply(ply_path, cloud, comment=tag)
    _manifest(
        cfg,
        e_path,
        "estimates",
        {
            "solver": name,
            "num_pixels": len(samples),
            "geometry_hash": dataset.geometry_hash,
            "grid_hash": dataset.grid_hash,
            "point_cloud": {"xyz": xyz_path.name, "ply": ply_path.name, "points": len(cloud)},
        },
    )
    print(f"wrote {e_path} ({len(samples)} pixels) and {xyz_path} ({len(cloud)} points)")
    return 0


def _eval_rows(dataset):
    """(coords -> label) over the test split, or the whole set if no test tag."""
    idx = dataset.splits.get("test") or range(len(dataset.samples))
    rows = [dataset.samples[i] for i in idx]
    return {s.pixel_coords: s.label for s in rows}


def cmd_eval(cfg: RunConfig, args) -> int:
    ds_path = _require(_out(cfg, args.dataset, "dataset.bin"), "run simulate first")
    _check_binding(ds_path, _load_artifact(fileio.read_header, ds_path, "dataset"), cfg)
    dataset = _load_artifact(fileio.load_dataset, ds_path)
    wanted = _eval_rows(dataset)

    rows = []
    for est_path in args.estimates:
        est_path = _require(Path(est_path), "run reconstruct first")
        coords, profiles, header = _load_artifact(fileio.load_estimates, est_path)
        _check_binding(
            est_path, header, cfg, dataset.geometry_hash, dataset.grid_hash
        )
        pairs = [
            (profiles[i], wanted[c]) for i, c in enumerate(coords) if c in wanted
        ]
        if not pairs:
            raise CliError(f"{est_path} shares no pixels with the evaluation split")
        report = nmse_db(
            [p for p, _ in pairs],
            [t for _, t in pairs],
            solver=header.get("solver", est_path.name),
            mode=cfg["eval.nmse_mode"],
        )
        rows.append(report)

    rows.sort(key=lambda r: r.aggregate_db, reverse=True)
    path = _out(cfg, args.output, "nmse_report.json")
    fileio.save_json(
        path,
        {
            "config_hash": cfg.config_hash,
            "mode": cfg["eval.nmse_mode"],
            "rows": [fileio.report_to_dict(r) for r in rows],
            "ordering": [r.solver for r in rows],
        },
    )
    print(f"{'solver':<12} {'pixels':>7} {'NMSE (-dB)':>11}")
    for r in rows:
        print(f"{r.solver:<12} {r.sample_count:>7} {r.aggregate_db:>11.4f}")
    print("ordering: " + " > ".join(r.solver for r in rows))
    print(f"wrote {path}")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    geometry = cfg.geometry()
    grid = cfg.grid()
    R = build_steering_matrix(geometry, grid)
    ds_path = _require(_out(cfg, args.dataset, "dataset.bin"), "run simulate first")
    _check_binding(ds_path, _load_artifact(fileio.read_header, ds_path, "dataset"), cfg)
    dataset = _load_artifact(fileio.load_dataset, ds_path)
    labels = _eval_rows(dataset)
    measurements = [
        s.measurement for s in dataset.samples if s.pixel_coords in labels
    ]

    names = [tok.strip() for tok in args.solvers.split(",") if tok.strip()]
    bad = [n for n in names if n not in _SOLVER_NAMES]
    if bad or not names:
        raise CliError(f"unknown solver(s) {bad}; choose from {_SOLVER_NAMES}")

    lip = 1.01 * largest_gram_eigenvalue(R)
    reports = []
    for name in names:
        if name == "alista":
            m_path = _require(_out(cfg, args.model, "model.bin"), "run train first")
            model = _load_artifact(fileio.load_model, m_path, steering=R)
            solve = make_solver(name, R, model=model)
            budget = model.layers
        elif name == "ista":
            solve = make_solver(name, R, ista_config=cfg.ista_config(lip))
            budget = cfg["solvers.ista.max_iters"]
        else:
            gc = cfg.greedy_config(name)
            solve = make_solver(name, R, greedy_config=gc)
            budget = gc.max_iters
        reports.append(
            benchmark(
                name,
                solve,
                measurements,
                iteration_budget=budget,
                repetitions=cfg["eval.bench_repetitions"],
            )
        )

    reports.sort(key=lambda r: r.per_pixel_mean_seconds)
    path = _out(cfg, args.output, "bench_report.json")
    fileio.save_json(
        path,
        {
            "config_hash": cfg.config_hash,
            "pixels": len(measurements),
            "rows": [fileio.report_to_dict(r) for r in reports],
            "ordering": [r.solver for r in reports],
        },
    )
    print(f"{'solver':<12} {'budget':>7} {'ms/pixel':>10} {'total s':>9}")
    for r in reports:
        print(
            f"{r.solver:<12} {r.iteration_budget:>7} "
            f"{1e3 * r.per_pixel_mean_seconds:>10.4f} {r.total_wall_seconds:>9.3f}"
        )
    print(f"wrote {path}")
    return 0


# --- entry point ----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sartomo",
        description="Sparse elevation reconstruction pipeline for multi-baseline "
        "tomographic SAR stacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "generate the scene and labeled dataset")
    p.add_argument("--output", help="dataset path (default <output_dir>/dataset.bin)")

    p = add("precompute", cmd_precompute, "build the steering matrix and weights")
    p.add_argument("--steering", help="steering path (default <output_dir>/steering.bin)")
    p.add_argument("--weights", help="weights path (default <output_dir>/weights.bin)")

    p = add("train", cmd_train, "train the unrolled network's per-layer scalars")
    p.add_argument("--dataset", help="dataset path")
    p.add_argument("--weights", help="precomputed-weights path")
    p.add_argument("--model", help="model output path (default <output_dir>/model.bin)")
    p.add_argument("--loss-curve", help="loss-curve output path")

    p = add("sweep-layers", cmd_sweep_layers, "train at several unroll depths")
    p.add_argument("--dataset", help="dataset path")
    p.add_argument("--depths", help="'lo:hi' or comma list (default 1:<alista.layers>)")
    p.add_argument("--output", help="curve output path")

    p = add("reconstruct", cmd_reconstruct, "run one solver over every pixel")
    p.add_argument("--solver", required=True, choices=_SOLVER_NAMES)
    p.add_argument("--dataset", help="dataset path")
    p.add_argument("--model", help="model path (alista only)")
    p.add_argument("--output", help="estimates path")

    p = add("eval", cmd_eval, "NMSE of one or more estimate files on the test split")
    p.add_argument("--dataset", help="dataset path")
    p.add_argument("--estimates", nargs="+", required=True, help="estimate file(s)")
    p.add_argument("--output", help="report path")

    p = add("bench", cmd_bench, "time solvers over the test split")
    p.add_argument("--dataset", help="dataset path")
    p.add_argument("--solvers", default="omp,iht,ista,alista", help="comma list")
    p.add_argument("--model", help="model path (for alista)")
    p.add_argument("--output", help="report path")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except (ConfigError, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: solver/file-system/numerical
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
