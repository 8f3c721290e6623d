"""Command-line driver: ``shapemip <subcommand> ...``.

Exit codes: 0 success, 1 budget reached without a certificate (outputs are
still written), 2 input error, 3 infeasible model.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .geometry import ShapeError, decimate, farthest_point_sampling, load_shape, write_obj, write_off
from .model import ModelError, assemble
from .pipeline import (ConfigError, PipelineConfig, curve_csv, error_curve, gap_curve, geodesic_errors,
                       load_pair, load_result_file, manifest, prepare, run_match, write_match_outputs)

EXIT_OK, EXIT_BUDGET, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("shapemip")


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception, code: int = EXIT_INPUT):
        super().__init__(f"[{stage}] {exc}")
        self.code = code


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (OSError, ValueError, ShapeError, ModelError, KeyError, IndexError) as exc:
        raise StageError(name, exc) from exc


# flag name -> (config key, type); 'store_true' flags are handled separately
OVERRIDES = {
    "--lambda-c": ("lambda_c", float), "--bins": ("bins", int), "--n-out": ("n_out", int),
    "--distortion-bound": ("distortion_bound", float), "--budget": ("budget", float),
    "--gap-target": ("gap_target", float), "--workers": ("workers", int),
    "--seed-vertex": ("seed_vertex", int), "-u": ("u", int), "-v": ("v", int),
    "--n-lap": ("n_lap", int), "--engine": ("engine", str),
}


def load_config(args) -> PipelineConfig:
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise StageError("config", FileNotFoundError(f"no such file: {path}"))
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise StageError("config", ValueError(f"{path}: {exc}")) from exc
    for flag, (key, _) in OVERRIDES.items():
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    for key in ("injective", "deterministic"):
        if getattr(args, key, False):
            doc[key] = True
    for key in ("source", "target", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    try:
        cfg = PipelineConfig.from_dict(doc)
        cfg.match_config().validate()
    except (ConfigError, TypeError, ModelError) as exc:
        raise StageError("config", exc) from exc
    return cfg


def cmd_match(args) -> int:
    cfg = load_config(args)
    x, y = _stage("load", load_pair, cfg)
    out = _stage("solve", run_match, x, y, cfg)
    write_match_outputs(out, cfg, Path(cfg.out_dir))
    r = out.result
    print(f"status={r.status} upper={r.upper:.9g} lower={r.lower:.9g} gap={r.gap:.3e} "
          f"nodes={r.nodes} time={r.wall_time:.2f}s")
    if r.status == "infeasible":
        return EXIT_INFEASIBLE
    if r.status in ("time-limit",):
        return EXIT_BUDGET
    return EXIT_OK


def _read_gt(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    text = p.read_text().strip()
    if text.startswith("[") or text.startswith("{"):
        doc = json.loads(text)
        return np.asarray(doc["ground_truth"] if isinstance(doc, dict) else doc, dtype=np.int64)
    return np.asarray(text.split(), dtype=np.int64)


def cmd_evaluate(args) -> int:
    corr_path = Path(args.correspondences)
    if not corr_path.exists():
        raise StageError("evaluate", FileNotFoundError(f"no such file: {corr_path}"))
    corr = _stage("evaluate", lambda: json.loads(corr_path.read_text()))
    gt = _stage("evaluate", _read_gt, args.ground_truth)
    y = _stage("load", load_shape, args.target, None, args.k)
    err = _stage("evaluate", geodesic_errors, corr, gt, y)
    thr = np.linspace(0.0, args.max_threshold, args.steps)
    text = curve_csv("threshold", thr, {"fraction": error_curve(err, thr)})
    _emit(text, args.out)
    return EXIT_OK


def _time_grid(text: str) -> np.ndarray:
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.array([float(t) for t in text.split(",") if t.strip()])


def cmd_gap_curve(args) -> int:
    results = [_stage("gap-curve", load_result_file, p) for p in args.results]
    times = _stage("gap-curve", _time_grid, args.times)
    g, solved = _stage("gap-curve", gap_curve, results, times)
    _emit(curve_csv("t", times, {"g": g, "solved": solved}), args.out)
    return EXIT_OK


def cmd_export_model(args) -> int:
    cfg = load_config(args)
    x, y = _stage("load", load_pair, cfg)
    inst = _stage("prepare", prepare, x, y, cfg)
    model = _stage("assemble", assemble, inst.data, cfg.match_config())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(model.to_json())
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, {"census": model.census(),
                                                                 "files": ["model.json"]}), indent=1))
    print(json.dumps(model.census()))
    return EXIT_OK


def cmd_decimate(args) -> int:
    mesh = _stage("load", load_shape, args.input, "mesh")
    small = _stage("decimate", decimate, mesh, args.faces)
    (write_obj if Path(args.output).suffix.lower() == ".obj" else write_off)(args.output, small)
    print(f"{mesh.n_faces} -> {small.n_faces} faces")
    return EXIT_OK


def cmd_sample(args) -> int:
    shape = _stage("load", load_shape, args.input, None, args.k)
    idx = _stage("sample", farthest_point_sampling, shape.graph, args.count, seed=args.seed_vertex)
    _emit(json.dumps([int(i) for i in idx]) + "\n", args.out)
    return EXIT_OK


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--source", help="source mesh (OFF/PLY/OBJ)")
    p.add_argument("--target", help="target mesh or point cloud")
    p.add_argument("--out", dest="out_dir", help="run directory")
    for flag, (key, typ) in OVERRIDES.items():
        p.add_argument(flag, dest=key, type=typ, default=None)
    p.add_argument("--injective", action="store_true")
    p.add_argument("--deterministic", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapemip", description="Globally optimal sparse non-rigid shape matching.")
    ap.add_argument("--verbose", "-V", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="solve a matching problem")
    _add_config_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("export-model", help="write the assembled model as JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_export_model)

    p = sub.add_parser("evaluate", help="geodesic-error curve of a correspondence file")
    p.add_argument("correspondences")
    p.add_argument("ground_truth", help="target vertex per control point (JSON list or whitespace separated)")
    p.add_argument("target")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--max-threshold", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=101)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gap-curve", help="g(t) and solved fraction over result files")
    p.add_argument("results", nargs="+")
    p.add_argument("--times", required=True, help="'start:stop:count' or comma separated seconds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gap_curve)

    p = sub.add_parser("decimate", help="vertex-clustering decimation")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--faces", type=int, default=300)
    p.set_defaults(func=cmd_decimate)

    p = sub.add_parser("sample", help="geodesic farthest point sampling")
    p.add_argument("input")
    p.add_argument("count", type=int)
    p.add_argument("--seed-vertex", type=int, default=0)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
