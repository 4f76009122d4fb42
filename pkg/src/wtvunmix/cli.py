"""Command-line interface: simulate / weights / unmix / sweep / evaluate.

Every flag of a subcommand can also be supplied through ``--config FILE``
(flat ``key = value`` lines keyed by the flag names); explicit flags
override file values. Each command writes a ``manifest.cfg`` with its
resolved parameters, so any output is reproducible by rerunning with the
manifest as config.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 I/O or format
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as wio
from .core import (
    AbundanceImage,
    FormatError,
    GenerationError,
    GridDims,
    ValidationError,
)
from .evaluate import SweepGrid, rmse_edge, rmse_whole, sweep
from .grid import DIRECTIONS, build_difference_operator, edge_mask_table
from .guidance import WeightConfig, WeightKind, build_weights
from .simgen import Scene, SceneSpec, generate_scene
from .solver import SolverOptions, reweighted_unmix, unmix

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

DEFAULT_LAMBDAS = "0.001,0.05,0.1,0.5,1,1.5"
DEFAULT_SIGMAS = "1e-05,0.0001,0.001,0.01,0.1"
ALL_KINDS = ",".join(k.value for k in WeightKind)


class UsageError(Exception):
    pass


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise UsageError(f"expected a number, got {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise UsageError(f"expected an integer, got {text!r}") from exc


def _parse_float_list(text: str) -> tuple:
    return tuple(_parse_float(part) for part in text.split(",") if part != "")


def _parse_int_list(text: str) -> tuple:
    return tuple(_parse_int(part) for part in text.split(",") if part != "")


def _parse_kind(text: str) -> WeightKind:
    try:
        return WeightKind(text)
    except ValueError as exc:
        raise UsageError(
            f"unknown weight kind {text!r}; choose from {ALL_KINDS}") from exc


def _parse_kind_list(text: str) -> tuple:
    return tuple(_parse_kind(part) for part in text.split(",") if part != "")


@dataclass(frozen=True)
class Flag:
    name: str
    parse: callable
    default: object = None
    required: bool = False
    help: str = ""

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_SOLVER_FLAGS = [
    Flag("lambda", _parse_float, 0.0, help="spatial regularization strength"),
    Flag("mu", _parse_float, 0.05, help="augmented-Lagrangian parameter"),
    Flag("max-iter", _parse_int, 500, help="ADMM iteration cap"),
    Flag("tol", _parse_float, 1e-5, help="relative primal/dual residual tolerance"),
    Flag("outer-max", _parse_int, 5, help="outer reweighting solves (abundance kinds)"),
    Flag("outer-tol", _parse_float, 1e-3,
         help="relative abundance change stopping the outer loop"),
]

_COMMAND_FLAGS = {
    "simulate": [
        Flag("height", _parse_int, 64, help="grid height in pixels"),
        Flag("width", _parse_int, 64, help="grid width in pixels"),
        Flag("endmembers", _parse_int, 5, help="number of endmembers"),
        Flag("bands", _parse_int, 100, help="number of spectral bands"),
        Flag("regions", _parse_int, 5, help="number of label classes"),
        Flag("beta", _parse_float, 2.0, help="Potts spatial coupling"),
        Flag("snr-hsi", _parse_float, 20.0, help="cube SNR in dB (inf = noiseless)"),
        Flag("snr-dsm", _parse_float, 50.0, help="surface model SNR in dB"),
        Flag("class-heights", _parse_float_list, None,
             help="comma-separated class heights in meters"),
        Flag("seed", _parse_int, 0, help="scene seed"),
        Flag("out-dir", str, required=True, help="output directory"),
    ],
    "weights": [
        Flag("kind", _parse_kind, required=True, help="weighting scheme"),
        Flag("cube", str, help="cube file (hi/pc1 kinds)"),
        Flag("dsm", str, help="surface model raster (dsm kinds)"),
        Flag("abundances", str, help="directory of abundance rasters (abund kinds)"),
        Flag("sigma", _parse_float, help="primary kernel range parameter"),
        Flag("sigma-height", _parse_float, help="height kernel range parameter"),
        Flag("out-dir", str, required=True, help="output directory"),
    ],
    "unmix": [
        Flag("cube", str, required=True, help="input cube file"),
        Flag("endmembers", str, required=True, help="endmember CSV"),
        Flag("kind", _parse_kind, WeightKind.NONE, help="weighting scheme"),
        Flag("dsm", str, help="surface model raster (dsm kinds)"),
        Flag("sigma", _parse_float, help="primary kernel range parameter"),
        Flag("sigma-height", _parse_float, help="height kernel range parameter"),
        *_SOLVER_FLAGS,
        Flag("out-dir", str, required=True, help="output directory"),
    ],
    "sweep": [
        Flag("scene-dir", str, required=True, help="directory written by simulate"),
        Flag("kinds", _parse_kind_list, _parse_kind_list(ALL_KINDS),
             help="comma-separated weight kinds"),
        Flag("lambdas", _parse_float_list, _parse_float_list(DEFAULT_LAMBDAS),
             help="comma-separated lambda grid"),
        Flag("sigmas", _parse_float_list, _parse_float_list(DEFAULT_SIGMAS),
             help="comma-separated sigma grid"),
        Flag("seeds", _parse_int_list, None,
             help="multi-seed mode: regenerate the scene per seed and aggregate"),
        Flag("mu", _parse_float, 0.05, help="augmented-Lagrangian parameter"),
        Flag("max-iter", _parse_int, 500, help="ADMM iteration cap"),
        Flag("tol", _parse_float, 1e-5, help="residual tolerance"),
        Flag("outer-max", _parse_int, 5, help="outer solves for abundance kinds"),
        Flag("outer-tol", _parse_float, 1e-3, help="outer loop tolerance"),
        Flag("out-dir", str, required=True, help="output directory"),
    ],
    "evaluate": [
        Flag("truth-dir", str, required=True, help="directory with truth abundances"),
        Flag("estimate-dir", str, required=True, help="directory with estimates"),
        Flag("edge-mask", str, help="edge mask raster for edge-restricted RMSE"),
        Flag("out", str, help="also write the report to this CSV"),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wtvunmix",
                     description="Guidance-weighted TV spectral unmixing")
    sub = parser.add_subparsers(dest="command", metavar="command")
    descriptions = {
        "simulate": "generate a synthetic scene",
        "weights": "export per-edge weights for inspection",
        "unmix": "estimate abundances for a cube",
        "sweep": "run a lambda/sigma grid against scene ground truth",
        "evaluate": "RMSE between truth and estimated abundances",
    }
    for command, flags in _COMMAND_FLAGS.items():
        cp = sub.add_parser(command, help=descriptions[command])
        cp.add_argument("--config", default=None,
                        help="key = value file supplying flag defaults")
        for flag in flags:
            cp.add_argument(f"--{flag.name}", dest=flag.dest, default=None,
                            metavar="V", help=flag.help)
    return parser


def _resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge CLI flags over config-file values over defaults."""
    flags = _COMMAND_FLAGS[command]
    by_name = {flag.name: flag for flag in flags}
    config_values = {}
    if args.config is not None:
        raw = wio.read_config(args.config)
        for key in raw:
            if key not in by_name:
                raise UsageError(f"unknown config key {key!r} for {command}")
        config_values = raw
    resolved = {}
    for flag in flags:
        cli_value = getattr(args, flag.dest)
        if cli_value is not None:
            resolved[flag.name] = flag.parse(cli_value)
        elif flag.name in config_values:
            resolved[flag.name] = flag.parse(config_values[flag.name])
        elif flag.required:
            raise UsageError(f"missing required flag --{flag.name}")
        else:
            resolved[flag.name] = flag.default
    return resolved


def _manifest_value(value):
    if isinstance(value, WeightKind):
        return value.value
    if isinstance(value, tuple):
        return ",".join(_manifest_value(v) for v in value)
    if value is None:
        return None
    return wio.format_value(value)


def _write_manifest(out_dir: Path, values: dict) -> None:
    # out-dir is where outputs land, not a parameter of what they contain;
    # leaving it out keeps manifests byte-identical across destinations.
    wio.write_config(out_dir / "manifest.cfg",
                     {k: _manifest_value(v) for k, v in values.items()
                      if k != "out-dir"})


def _ensure_out_dir(path_text: str) -> Path:
    out_dir = Path(path_text)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_abundances(out_dir: Path, prefix: str, ab: AbundanceImage) -> None:
    for m in range(ab.count):
        wio.write_raster(out_dir / f"{prefix}_{m:02d}.raster", ab.dims, ab.data[m])


def _read_abundances(directory: Path) -> AbundanceImage:
    planes = sorted(directory.glob("truth_abundance_*.raster"))
    if not planes:
        planes = sorted(directory.glob("abundance_*.raster"))
    if not planes:
        raise FormatError(f"{directory}: no abundance rasters found")
    dims = None
    rows = []
    for plane in planes:
        pdims, values = wio.read_raster(plane)
        if dims is None:
            dims = pdims
        elif pdims != dims:
            raise ValidationError(f"{plane}: grid differs from other planes")
        rows.append(values)
    return AbundanceImage(dims=dims, data=np.vstack(rows))


def _solver_options(values: dict) -> SolverOptions:
    return SolverOptions(
        lam=values.get("lambda", 0.0),
        mu=values["mu"],
        max_iterations=values["max-iter"],
        tolerance=values["tol"],
        outer_max=values["outer-max"],
        outer_tolerance=values["outer-tol"],
    )


def _weight_config(kind: WeightKind, sigma, sigma_height) -> WeightConfig:
    return WeightConfig(
        kind=kind,
        sigma_primary=sigma if kind.primary_source is not None else None,
        sigma_height=sigma_height if kind.uses_height else None,
    )


def _check_weight_inputs(kind: WeightKind, values: dict) -> None:
    needs_cube = kind.primary_source in ("hi", "pc1")
    if kind.uses_height and not values.get("dsm"):
        raise UsageError(f"kind {kind.value} requires --dsm")
    if not kind.uses_height and values.get("dsm"):
        raise UsageError(f"kind {kind.value} does not accept --dsm")
    if needs_cube and not values.get("cube"):
        raise UsageError(f"kind {kind.value} requires --cube")
    if kind.primary_source is not None:
        if values.get("sigma") is None:
            raise UsageError(f"kind {kind.value} requires --sigma")
    if kind.uses_height and values.get("sigma-height") is None:
        raise UsageError(f"kind {kind.value} requires --sigma-height")


def cmd_simulate(values: dict) -> int:
    out_dir = _ensure_out_dir(values["out-dir"])
    spec = SceneSpec(
        dims=GridDims(values["height"], values["width"]),
        num_endmembers=values["endmembers"],
        num_bands=values["bands"],
        num_regions=values["regions"],
        potts_beta=values["beta"],
        snr_hsi_db=values["snr-hsi"],
        snr_dsm_db=values["snr-dsm"],
        class_heights=values["class-heights"],
        seed=values["seed"],
    )
    scene = generate_scene(spec)
    manifest = dict(values)
    manifest["class-heights"] = tuple(spec.class_heights)
    _write_manifest(out_dir, manifest)
    wio.write_cube(out_dir / "cube.hsic", scene.cube)
    wio.write_endmembers_csv(out_dir / "endmembers.csv", scene.endmembers)
    _write_abundances(out_dir, "truth_abundance", scene.truth_abundances)
    wio.write_raster(out_dir / "dsm.raster", scene.dims, scene.dsm.heights)
    wio.write_raster(out_dir / "dsm_clean.raster", scene.dims, scene.dsm_clean.heights)
    wio.write_raster(out_dir / "edge_mask.raster", scene.dims,
                     scene.edge_mask.astype(np.float64))
    wio.write_raster(out_dir / "labels.raster", scene.dims,
                     scene.labels.astype(np.float64))
    return EXIT_OK


def _load_guidance_inputs(values: dict):
    cube = wio.read_cube(values["cube"]) if values.get("cube") else None
    dsm = wio.read_surface_model(values["dsm"]) if values.get("dsm") else None
    abundances = None
    if values.get("abundances"):
        abundances = _read_abundances(Path(values["abundances"]))
    return cube, dsm, abundances


def cmd_weights(values: dict) -> int:
    kind = values["kind"]
    _check_weight_inputs(kind, values)
    if kind.uses_abundances and not values.get("abundances"):
        raise UsageError(f"kind {kind.value} requires --abundances")
    cube, dsm, abundances = _load_guidance_inputs(values)
    provided = [obj for obj in (cube, dsm, abundances) if obj is not None]
    if not provided:
        raise UsageError(
            f"kind {kind.value} needs an input defining the grid "
            "(--cube, --dsm or --abundances)")
    dims = provided[0].dims
    cfg = _weight_config(kind, values.get("sigma"), values.get("sigma-height"))
    ab = abundances
    if ab is not None:
        ab = AbundanceImage(dims=ab.dims, data=ab.data, constrained=False)
    weights = build_weights(cfg, dims, cube=cube, dsm=dsm, abundances=ab)
    out_dir = _ensure_out_dir(values["out-dir"])
    _write_manifest(out_dir, values)
    exists = edge_mask_table(dims)
    rows = []
    for d, name in enumerate(DIRECTIONS):
        wio.write_raster(out_dir / f"weight_{name}.raster", dims, weights[d])
        edge_values = weights[d][exists[d]]
        rows.append([name, float(edge_values.min()), float(edge_values.mean())])
    all_values = weights[exists]
    rows.append(["all", float(all_values.min()), float(all_values.mean())])
    wio.write_table_csv(out_dir / "summary.csv", ["direction", "min", "mean"], rows)
    return EXIT_OK


def cmd_unmix(values: dict) -> int:
    kind = values["kind"]
    _check_weight_inputs(kind, values)
    cube = wio.read_cube(values["cube"])
    library = wio.read_endmembers_csv(values["endmembers"])
    dsm = wio.read_surface_model(values["dsm"]) if values.get("dsm") else None
    options = _solver_options(values)
    cfg = _weight_config(kind, values.get("sigma"), values.get("sigma-height"))
    if kind.uses_abundances:
        result = reweighted_unmix(cube, library, cfg, options, dsm=dsm)
    else:
        weights = build_weights(cfg, cube.dims, cube=cube, dsm=dsm)
        operator = build_difference_operator(weights, cube.dims)
        result = unmix(cube, library, operator, options)
    out_dir = _ensure_out_dir(values["out-dir"])
    _write_manifest(out_dir, values)
    _write_abundances(out_dir, "abundance", result.abundances)
    trace_rows = [
        [k + 1, result.objective_trace[k],
         result.residual_trace[k, 0], result.residual_trace[k, 1]]
        for k in range(result.iterations_used)
    ]
    wio.write_table_csv(out_dir / "trace.csv",
                        ["iteration", "objective", "primal_residual", "dual_residual"],
                        trace_rows)
    return EXIT_OK


def _load_scene(scene_dir: Path) -> Scene:
    cube = wio.read_cube(scene_dir / "cube.hsic")
    library = wio.read_endmembers_csv(scene_dir / "endmembers.csv")
    truth = _read_abundances(scene_dir)
    truth = AbundanceImage(dims=truth.dims, data=truth.data, constrained=True)
    dsm = wio.read_surface_model(scene_dir / "dsm.raster")
    clean = wio.read_surface_model(scene_dir / "dsm_clean.raster")
    _, mask_values = wio.read_raster(scene_dir / "edge_mask.raster")
    _, label_values = wio.read_raster(scene_dir / "labels.raster")
    return Scene(
        labels=label_values.astype(np.int64),
        truth_abundances=truth,
        cube=cube,
        dsm=dsm,
        dsm_clean=clean,
        edge_mask=mask_values > 0.5,
        endmembers=library,
    )


def _scene_spec_from_manifest(scene_dir: Path, seed: int) -> SceneSpec:
    manifest = wio.read_config(scene_dir / "manifest.cfg")
    heights = manifest.get("class-heights")
    return SceneSpec(
        dims=GridDims(int(manifest["height"]), int(manifest["width"])),
        num_endmembers=int(manifest["endmembers"]),
        num_bands=int(manifest["bands"]),
        num_regions=int(manifest["regions"]),
        potts_beta=float(manifest["beta"]),
        snr_hsi_db=float(manifest["snr-hsi"]),
        snr_dsm_db=float(manifest["snr-dsm"]),
        class_heights=_parse_float_list(heights) if heights else None,
        seed=seed,
    )


def _record_rows(records, seed=None):
    rows = []
    for r in records:
        row = [r.kind.value, r.lam, r.sigma_primary, r.sigma_height,
               r.rmse_whole, r.rmse_edge, r.iterations_used]
        if seed is not None:
            row.insert(0, seed)
        rows.append(row)
    return rows


_RECORD_HEADER = ["kind", "lambda", "sigma", "sigma_height",
                  "rmse_whole", "rmse_edge", "iterations"]


def _per_lambda_rows(records, kinds, lambdas):
    """Two slices per (kind, lambda): best sigma at that lambda, and the
    globally optimal sigma's value at that lambda."""
    rows = []
    for kind in kinds:
        of_kind = [r for r in records if r.kind is kind]
        finite = [r for r in of_kind if math.isfinite(r.rmse_whole)]
        global_best = min(finite, key=lambda r: r.rmse_whole, default=None)
        for lam in lambdas:
            at_lam = [r for r in of_kind if r.lam == lam]
            if not at_lam:
                continue
            best_here = min(at_lam, key=lambda r: r.rmse_whole)
            fixed = None
            if global_best is not None:
                fixed = next((r for r in at_lam
                              if r.sigma_primary == global_best.sigma_primary
                              and r.sigma_height == global_best.sigma_height), None)
            rows.append([kind.value, lam,
                         best_here.rmse_whole, best_here.rmse_edge,
                         fixed.rmse_whole if fixed else math.inf,
                         fixed.rmse_edge if fixed else math.inf])
    return rows


_PER_LAMBDA_HEADER = ["kind", "lambda", "rmse_whole_best_sigma", "rmse_edge_best_sigma",
                      "rmse_whole_optimal_sigma", "rmse_edge_optimal_sigma"]


def cmd_sweep(values: dict) -> int:
    scene_dir = Path(values["scene-dir"])
    grid = SweepGrid(lambdas=values["lambdas"], sigmas=values["sigmas"],
                     weight_kinds=values["kinds"])
    options = SolverOptions(
        mu=values["mu"], max_iterations=values["max-iter"], tolerance=values["tol"],
        outer_max=values["outer-max"], outer_tolerance=values["outer-tol"])
    out_dir = _ensure_out_dir(values["out-dir"])
    _write_manifest(out_dir, values)

    seeds = values.get("seeds")
    if not seeds:
        scene = _load_scene(scene_dir)
        records, best = sweep(scene, grid, options)
        wio.write_table_csv(out_dir / "records.csv", _RECORD_HEADER,
                            _record_rows(records))
        wio.write_table_csv(
            out_dir / "summary.csv", ["kind", "lambda", "sigma", "sigma_height",
                                      "rmse_whole", "rmse_edge"],
            [[k.value, b.lam, b.sigma_primary, b.sigma_height,
              b.rmse_whole, b.rmse_edge] for k, b in best.items()])
        wio.write_table_csv(out_dir / "per_lambda.csv", _PER_LAMBDA_HEADER,
                            _per_lambda_rows(records, grid.weight_kinds, grid.lambdas))
        any_ok = any(math.isfinite(r.rmse_whole) for r in records)
        return EXIT_OK if any_ok else EXIT_NUMERICAL

    all_rows = []
    per_seed = {}
    bests = {}
    for seed in seeds:
        scene = generate_scene(_scene_spec_from_manifest(scene_dir, seed))
        records, best = sweep(scene, grid, options)
        all_rows.extend(_record_rows(records, seed=seed))
        per_seed[seed] = records
        for kind, record in best.items():
            bests.setdefault(kind, []).append(record)
    wio.write_table_csv(out_dir / "records.csv", ["seed", *_RECORD_HEADER], all_rows)

    # Mean/std across seeds, cell by cell (cells are ordered identically in
    # every seed's record list).
    reference = per_seed[seeds[0]]
    agg_rows = []
    for idx, ref in enumerate(reference):
        whole = np.array([per_seed[s][idx].rmse_whole for s in seeds])
        edge = np.array([per_seed[s][idx].rmse_edge for s in seeds])
        agg_rows.append([ref.kind.value, ref.lam, ref.sigma_primary, ref.sigma_height,
                         float(whole.mean()), float(whole.std()),
                         float(edge.mean()), float(edge.std())])
    wio.write_table_csv(out_dir / "aggregated.csv",
                        ["kind", "lambda", "sigma", "sigma_height",
                         "mean_rmse_whole", "std_rmse_whole",
                         "mean_rmse_edge", "std_rmse_edge"], agg_rows)

    summary_rows = []
    for kind, choices in bests.items():
        whole = np.array([c.rmse_whole for c in choices])
        edge = np.array([c.rmse_edge for c in choices])
        summary_rows.append([kind.value, float(whole.mean()), float(whole.std()),
                             float(edge.mean()), float(edge.std())])
    wio.write_table_csv(out_dir / "summary.csv",
                        ["kind", "mean_rmse_whole", "std_rmse_whole",
                         "mean_rmse_edge", "std_rmse_edge"], summary_rows)
    any_ok = any(math.isfinite(row[5]) for row in all_rows)
    return EXIT_OK if any_ok else EXIT_NUMERICAL


def cmd_evaluate(values: dict) -> int:
    truth = _read_abundances(Path(values["truth-dir"]))
    estimate = _read_abundances(Path(values["estimate-dir"]))
    whole = rmse_whole(truth, estimate)
    lines = [("rmse_whole", whole)]
    if values.get("edge-mask"):
        _, mask_values = wio.read_raster(values["edge-mask"])
        lines.append(("rmse_edge", rmse_edge(truth, estimate, mask_values > 0.5)))
    for name, value in lines:
        print(f"{name} {value:.6f}")
    if values.get("out"):
        wio.write_table_csv(values["out"], ["metric", "value"],
                            [[name, f"{value:.6f}"] for name, value in lines])
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "weights": cmd_weights,
    "unmix": cmd_unmix,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (see --help)")
        values = _resolve(args.command, args)
        return _COMMANDS[args.command](values)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GenerationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def console_main() -> None:
    raise SystemExit(main())
