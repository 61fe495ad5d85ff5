"""Single executable for the whole pipeline.

Subcommands: gen-mesh, gen-data, train, evaluate, predict, farm, export.
Exit codes: 0 success, 1 usage, 2 config, 3 data/format, 4 numerical.
Every command writes run_manifest.json next to its outputs; outputs are
reproducible for a fixed config and seed (manifests differ in timestamps
and timings only).

Heavy imports stay inside the handlers so --threads can cap BLAS pools
before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("wakegnn.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage to 1
        raise UsageError(message)


def _setup_logging() -> None:
    name = os.environ.get("WAKE_GNN_LOG", "warn").lower()
    if name not in _LOG_LEVELS:
        raise UsageError(
            f"WAKE_GNN_LOG must be one of {sorted(_LOG_LEVELS)}, got "
            f"'{name}'")
    logging.basicConfig(level=_LOG_LEVELS[name],
                        format="%(levelname)s %(name)s: %(message)s")


def _apply_threads(n: int) -> None:
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _load_config(path: str | None) -> dict:
    from .errors import ConfigError

    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return doc


def _require(cfg: dict, key: str):
    from .errors import ConfigError

    if key not in cfg:
        raise ConfigError(f"config key '{key}' is required")
    return cfg[key]


def _rotor_path(cfg: dict) -> Path:
    p = cfg.get("rotor_file")
    if p is None:
        return Path(__file__).parent / "data" / "default_rotor.json"
    return Path(p)


def _mesh_spec(cfg: dict):
    """MeshSpec from an explicit 'mesh' block, else from the rotor."""
    from .gad import load_rotor_file
    from .meshgraph import MeshSpec
    from .wakesynth import default_mesh_spec
    from .errors import ConfigError

    if "mesh" in cfg:
        try:
            return MeshSpec(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in cfg["mesh"].items()})
        except TypeError as e:
            raise ConfigError(f"bad mesh block: {e}") from e
    rotor, _, _ = load_rotor_file(_rotor_path(cfg))
    return default_mesh_spec(
        rotor,
        extent_diameters=tuple(cfg.get("extent_diameters",
                                       (2.0, 8.0, 2.5, 2.0))),
        base_spacing_fraction=cfg.get("base_spacing_fraction", 0.5),
        refined_spacing_fraction=cfg.get("refined_spacing_fraction", 0.25),
        vertex_budget=cfg.get("vertex_budget", 200_000))


def _graph_from_config(cfg: dict, seed: int):
    from .meshgraph import build_graded_mesh
    from .mgf import read_graph

    if "mesh_file" in cfg:
        return read_graph(cfg["mesh_file"]), [str(cfg["mesh_file"])]
    return build_graded_mesh(_mesh_spec(cfg), seed=seed,
                             jitter=cfg.get("jitter", 0.0)), []


def _conditions(cfg: dict):
    from .meshgraph import GlobalConditions
    from .errors import ConfigError

    c = _require(cfg, "conditions")
    try:
        return GlobalConditions(u_inf=float(c["u_inf"]),
                                ti_inf=float(c["ti_inf"]),
                                yaw_deg=float(c.get("yaw_deg", 0.0)))
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad conditions block: {e}") from e


def _load_samples(data_dir: str | Path) -> list:
    from .errors import DataError
    from .mgf import read_sample

    root = Path(data_dir)
    if not root.is_dir():
        from .errors import ConfigError

        raise ConfigError(f"data directory not found: {root}")
    manifest = root / "manifest.csv"
    if manifest.is_file():
        import csv

        with open(manifest, newline="") as fh:
            files = [root / row["file"] for row in csv.DictReader(fh)]
    else:
        files = sorted(root.glob("*.mgf"))
    if not files:
        raise DataError(f"no samples found under {root}")
    return [read_sample(f) for f in files]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# each handler returns (inputs, outputs, extra) for the manifest

def cmd_gen_mesh(args, cfg):
    from .mgf import write_graph

    g, inputs = _graph_from_config(cfg, args.seed)
    out = _out_dir(args) / "mesh.mgf"
    write_graph(out, g)
    log.info("mesh: %d vertices, %d directed edges", g.n_vertices,
             g.n_directed_edges)
    return inputs, [str(out)], {"n_vertices": g.n_vertices,
                                "n_directed_edges": g.n_directed_edges}


def cmd_gen_data(args, cfg):
    from .errors import ConfigError
    from .gad import load_rotor_file
    from .wakesynth import ConditionRanges, WakeParams, gen_dataset

    n = int(_require(cfg, "n_samples"))
    g, inputs = _graph_from_config(cfg, args.seed)
    rotor_file = _rotor_path(cfg)
    rotor, _, _ = load_rotor_file(rotor_file)
    inputs.append(str(rotor_file))
    try:
        ranges = ConditionRanges(**{k: tuple(v) for k, v in
                                    cfg.get("ranges", {}).items()})
        params = WakeParams(**cfg.get("wake_params", {}))
    except TypeError as e:
        raise ConfigError(f"bad ranges or wake_params block: {e}") from e
    paths = gen_dataset(g, n, ranges, rotor, seed=args.seed,
                        out_dir=_out_dir(args), params=params)
    outputs = [str(p) for p in paths]
    outputs += [str(_out_dir(args) / "manifest.csv"),
                str(_out_dir(args) / "params.json")]
    return inputs, outputs, {"n_samples": n}


def _split_from_config(cfg, samples):
    from .train import DEFAULT_SPLIT_RATIOS, split_dataset

    ratios = tuple(cfg.get("ratios", DEFAULT_SPLIT_RATIOS))
    return split_dataset(samples, ratios, seed=int(cfg.get("split_seed", 0)))


def cmd_train(args, cfg):
    from .errors import ConfigError
    from .gnn import GnnModel, ModelConfig
    from .train import TrainRunConfig, train_loop

    data_dir = _require(cfg, "data_dir")
    samples = _load_samples(data_dir)
    ds = _split_from_config(cfg, samples)
    try:
        model_cfg = ModelConfig.from_dict(cfg.get("model", {}))
    except TypeError as e:
        raise ConfigError(f"bad model block: {e}") from e
    train_kwargs = dict(cfg.get("train", {}))
    if args.seed_given:
        train_kwargs["seed"] = args.seed
    try:
        train_cfg = TrainRunConfig(**train_kwargs)
    except TypeError as e:
        raise ConfigError(f"bad train block: {e}") from e
    model = GnnModel(model_cfg, seed=train_cfg.seed)
    out = _out_dir(args)
    result = train_loop(model, ds, train_cfg, out_dir=out)
    outputs = [str(out / "best.ckp"), str(out / "train_curve.csv"),
               str(out / "val_curve.csv")]
    return ([str(data_dir)], outputs,
            {"best_val_mse": result.best_val, "best_step": result.best_step,
             "n_train": len(ds.train_idx), "n_val": len(ds.val_idx),
             "n_test": len(ds.test_idx)})


def cmd_evaluate(args, cfg):
    import csv

    from .checkpoint import load_checkpoint
    from .train import Dataset, evaluate, model_from_checkpoint

    ckpt_path = _require(cfg, "checkpoint")
    data_dir = _require(cfg, "data_dir")
    ckpt = load_checkpoint(ckpt_path)
    model, norm = model_from_checkpoint(ckpt)
    samples = _load_samples(data_dir)
    base = _split_from_config(cfg, samples)
    # features must use the checkpoint's training statistics
    ds = Dataset(samples=samples, train_idx=base.train_idx,
                 val_idx=base.val_idx, test_idx=base.test_idx, norm=norm)
    report = evaluate(model, ds, split=args.split)
    out = _out_dir(args)
    metrics = out / "metrics.csv"
    rows = report.rows()
    with open(metrics, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    summary = out / "summary.txt"
    with open(summary, "w") as fh:
        fh.write(f"split={args.split} n_samples={report.n_samples} "
                 f"mse={report.mse:.6e}\n")
        for r in rows:
            fh.write(f"{r['field']}: median accuracy "
                     f"{r['median_accuracy_pct']:.2f}%  "
                     f"box [{r['q1']:.4g}, {r['q3']:.4g}]  "
                     f"whiskers [{r['whisker_lo']:.4g}, "
                     f"{r['whisker_hi']:.4g}]\n")
    return ([str(ckpt_path), str(data_dir)], [str(metrics), str(summary)],
            {"split": args.split, "mse": report.mse,
             "speed_median_accuracy_pct": 100 * report.speed.median_accuracy,
             "tke_median_accuracy_pct": 100 * report.tke.median_accuracy})


def cmd_predict(args, cfg):
    from .checkpoint import load_checkpoint
    from .meshgraph import Sample
    from .mgf import read_sample, write_sample
    from .train import model_from_checkpoint, predict_fields
    from .vtkexport import write_error_vtk, write_field_vtk, write_slice_vtk

    ckpt_path = _require(cfg, "checkpoint")
    ckpt = load_checkpoint(ckpt_path)
    model, norm = model_from_checkpoint(ckpt)
    g, inputs = _graph_from_config(cfg, args.seed)
    cond = _conditions(cfg)
    inputs.append(str(ckpt_path))
    t0 = time.monotonic()
    fields = predict_fields(model, norm, g, cond)
    predict_s = time.monotonic() - t0
    out = _out_dir(args)
    pred_path = out / "prediction.mgf"
    write_sample(pred_path, Sample(graph=g, conditions=cond, fields=fields))
    outputs = [str(pred_path)]
    if cfg.get("vtk", False):
        outputs.append(str(write_field_vtk(out / "prediction.vtk", g,
                                           fields)))
    for i, sl in enumerate(cfg.get("slices", [])):
        path = out / f"slice_{i}_{sl['axis']}.vtk"
        outputs.append(str(write_slice_vtk(path, g, fields, sl["axis"],
                                           float(sl["value"]),
                                           sl.get("thickness"))))
    if "truth_file" in cfg:
        truth = read_sample(cfg["truth_file"])
        inputs.append(str(cfg["truth_file"]))
        outputs.append(str(write_error_vtk(out / "error.vtk", g, fields,
                                           truth.fields)))
    log.info("predicted %d vertices in %.3f s", g.n_vertices, predict_s)
    return inputs, outputs, {"predict_s": predict_s,
                             "n_vertices": g.n_vertices}


def cmd_farm(args, cfg):
    from .farm import (AnalyticWakePredictor, GnnWakePredictor,
                       bundled_layout_path, farm_power, load_farm_layout)
    from .gad import load_rotor_file

    layout_ref = cfg.get("layout", "bundled")
    layout_path = bundled_layout_path() if layout_ref == "bundled" \
        else Path(layout_ref)
    layout = load_farm_layout(layout_path)
    g, inputs = _graph_from_config(cfg, args.seed)
    inputs.append(str(layout_path))
    if "checkpoint" in cfg:
        predictor = GnnWakePredictor(cfg["checkpoint"], g)
        inputs.append(str(cfg["checkpoint"]))
    else:
        from .wakesynth import WakeParams

        rotor, _, _ = load_rotor_file(_rotor_path(cfg))
        params = WakeParams(**cfg.get("wake_params", {}))
        predictor = AnalyticWakePredictor(graph=g, rotor=rotor,
                                          params=params)
    cond = _conditions(cfg)
    out = _out_dir(args)
    csv_path = out / "power.csv"
    results = farm_power(layout, predictor, cond, method=args.method,
                         extraction=cfg.get("extraction", "rotor"),
                         out_csv=csv_path)
    total = sum(r.power for r in results)
    log.info("farm total power %.4g W over %d turbines", total, len(results))
    return inputs, [str(csv_path)], {"method": args.method,
                                     "n_turbines": len(results),
                                     "total_power_w": total}


def cmd_export(args, cfg):
    from .errors import FormatError
    from .mgf import read_graph, read_sample
    from .vtkexport import fields_to_csv, write_field_vtk, write_slice_vtk, write_vtk

    src = Path(_require(cfg, "input"))
    try:
        sample = read_sample(src)
        g, fields = sample.graph, sample.fields
    except FormatError as sample_err:
        try:
            g, fields = read_graph(src), None
        except FormatError:
            raise sample_err from None
    out = _out_dir(args)
    formats = cfg.get("formats", ["csv", "vtk"])
    outputs = []
    if "csv" in formats:
        outputs.append(str(fields_to_csv(out / f"{src.stem}.csv", g,
                                         fields)))
    if "vtk" in formats:
        path = out / f"{src.stem}.vtk"
        if fields is not None:
            outputs.append(str(write_field_vtk(path, g, fields)))
        else:
            edges = g.edges[g.edges[:, 0] < g.edges[:, 1]]
            outputs.append(str(write_vtk(
                path, g.positions, edges=edges,
                point_scalars={
                    "boundary_tag": g.boundary_tags.astype(float)},
                title="mesh graph")))
    for i, sl in enumerate(cfg.get("slices", [])):
        if fields is None:
            from .errors import ConfigError

            raise ConfigError("slice export needs a sample file with fields")
        path = out / f"{src.stem}_slice_{i}_{sl['axis']}.vtk"
        outputs.append(str(write_slice_vtk(path, g, fields, sl["axis"],
                                           float(sl["value"]),
                                           sl.get("thickness"))))
    return [str(src)], outputs, {"has_fields": fields is not None}


_COMMANDS = {
    "gen-mesh": (cmd_gen_mesh, "build a graded box mesh and save it"),
    "gen-data": (cmd_gen_data, "generate analytic wake samples"),
    "train": (cmd_train, "train a model on a sample directory"),
    "evaluate": (cmd_evaluate, "score a checkpoint on a dataset split"),
    "predict": (cmd_predict, "run a checkpoint on a graph"),
    "farm": (cmd_farm, "per-turbine power over a farm layout"),
    "export": (cmd_export, "convert an MGF1 file to CSV/VTK"),
}


def build_parser() -> _Parser:
    parser = _Parser(prog="wake-gnn",
                     description="wind turbine wake flow surrogate pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config document")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        if name == "farm":
            p.add_argument("--method", choices=("sos", "linear", "max"),
                           default="sos")
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "val", "test"),
                           default="test")
        p.set_defaults(func=func)
    return parser


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"wakegnn": __version__, "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


def _write_manifest(args, inputs, outputs, extra, started, wall_s) -> None:
    manifest = {
        "command": args.command,
        "config": args.config,
        "seed": args.seed,
        "threads": args.threads,
        "inputs": inputs,
        "outputs": outputs,
        "versions": _versions(),
        "timings": {"wall_s": wall_s},
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
    }
    manifest.update(extra)
    path = _out_dir(args) / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def main(argv=None) -> int:
    try:
        _setup_logging()
        parser = build_parser()
        args = parser.parse_args(argv)
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0
        if args.threads is not None:
            _apply_threads(args.threads)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    from .errors import ConfigError, DataError, NumericalError

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.monotonic()
    try:
        cfg = _load_config(args.config)
        inputs, outputs, extra = args.func(args, cfg)
        _write_manifest(args, inputs, outputs, extra, started,
                        time.monotonic() - t0)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
