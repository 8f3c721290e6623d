"""End-to-end matching pipeline and evaluation helpers."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .deformation import deform_mesh
from .geometry import (PointCloud, Shape, TriMesh, denormalize, farthest_point_sampling,
                       geodesic_distances, load_shape, normalize_pair, write_obj)
from .model import MatchConfig, ProblemData, assemble
from .polyhedra import ConvexPolyhedron, build_polyhedra
from .reduction import MatchMask, build_mask, full_mask, percentile_features
from .solver.bnb import BnBSettings, SolveResult, branch_and_bound
from .solver.gap import g_statistic, solved_fraction

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    source: str | None = None
    target: str | None = None
    target_kind: str | None = None  # mesh | cloud | None (by extension)
    out_dir: str = "run"
    # model weights and switches
    lambda_c: float = 4.0
    lambda_r: float = 1.0
    lambda_s: float = 0.5
    bins: int = 4
    big_m: float = 0.2
    n_out: int = 0
    injective: bool = False
    distortion_bound: float | None = None
    deform_bound: float = 10.0
    both_orientations: bool = True
    # sampling, patches, reduction
    u: int = 10
    v: int = 10
    seed_vertex: int = 0
    seed_vertex_y: int | None = None
    control_x: list | None = None
    control_y: list | None = None
    eta: float = 0.5
    max_points: int = 5
    single_point: bool = False
    n_lap: int | None = 5
    n_prctile: int | None = None
    k: int = 3
    # solver
    budget: float = 3600.0
    gap_target: float = 1e-4
    workers: int = 1
    deterministic: bool = True
    engine: str | None = None
    mip_start: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def match_config(self) -> MatchConfig:
        return MatchConfig(self.lambda_c, self.lambda_r, self.lambda_s, self.bins, self.big_m, self.n_out,
                           self.injective, self.distortion_bound, self.deform_bound, self.both_orientations)

    def bnb_settings(self) -> BnBSettings:
        workers = 1 if self.deterministic else self.workers
        return BnBSettings(budget=self.budget, gap_target=self.gap_target, workers=workers, engine=self.engine)


@dataclass
class Instance:
    """Normalised shapes and everything derived from them before assembly."""

    x: TriMesh
    y: Shape
    scale: float
    offset_x: np.ndarray
    offset_y: np.ndarray
    control_x: np.ndarray
    control_y: np.ndarray
    dist_x: np.ndarray  # (u, n_x) geodesics from source control points
    dist_y: np.ndarray  # (v, n_y)
    polyhedra: list[ConvexPolyhedron]
    mask: MatchMask
    data: ProblemData = field(repr=False, default=None)


def sample_control_points(shape: Shape, count: int, seed: int = 0) -> np.ndarray:
    return farthest_point_sampling(shape.graph, count, seed=seed)


def prepare(x: Shape, y: Shape, cfg: PipelineConfig) -> Instance:
    """normalise -> sample -> polyhedra -> reduction mask."""
    if not isinstance(x, TriMesh):
        raise ConfigError("the source shape must be a triangle mesh")
    (xn, off_x), (yn, off_y), scale = normalize_pair(x, y)
    cx = np.asarray(cfg.control_x if cfg.control_x is not None
                    else sample_control_points(xn, cfg.u, cfg.seed_vertex), dtype=np.int64)
    seed_y = cfg.seed_vertex if cfg.seed_vertex_y is None else cfg.seed_vertex_y
    cy = np.asarray(cfg.control_y if cfg.control_y is not None
                    else sample_control_points(yn, cfg.v, seed_y), dtype=np.int64)
    dx = geodesic_distances(xn.graph, cx)
    dy = geodesic_distances(yn.graph, cy)
    polys = build_polyhedra(yn, cy, cfg.eta, cfg.max_points, cfg.single_point)
    n_prc = cfg.n_prctile or min(xn.n_vertices, yn.n_vertices)
    if cfg.n_lap is None or cfg.n_lap <= 0:
        mask = full_mask(len(cx), len(cy))
    else:
        gx = percentile_features(dx, n_prc)
        gy = percentile_features(dy, n_prc)
        mask = build_mask(gx, gy, cfg.n_lap)
    data = ProblemData(xn, cx, polys, mask.allowed, dx[:, cx], dy[:, cy])
    return Instance(xn, yn, scale, off_x, off_y, cx, cy, dx, dy, polys, mask, data)


@dataclass
class MatchOutput:
    instance: Instance
    model: object
    result: SolveResult
    correspondences: list
    deformed: TriMesh | None  # original coordinates of the target
    deformed_normalized: TriMesh | None
    inconsistency: float


def correspondences(instance: Instance, result: SolveResult) -> list[dict]:
    """One entry per source control point, in the target's original coordinates."""
    sol = result.solution
    out = []
    if sol is None:
        return out
    off = instance.offset_y
    offsets = np.concatenate([[0], np.cumsum([p.d for p in instance.polyhedra])])
    for i in range(len(instance.control_x)):
        j = int(sol.matches[i])
        row = sol.alpha[i, offsets[j]:offsets[j + 1]]
        outlier = bool(sol.outliers[i])
        point = None if outlier else denormalize(row @ instance.polyhedra[j].vertices, instance.scale, off)
        out.append({"source": int(instance.control_x[i]), "control": i, "match": j,
                    "target_vertex": int(instance.control_y[j]), "alpha": row.tolist(),
                    "point": None if point is None else point.tolist(), "outlier": outlier})
    return out


def run_match(x: Shape, y: Shape, cfg: PipelineConfig, callback=None) -> MatchOutput:
    inst = prepare(x, y, cfg)
    model = assemble(inst.data, cfg.match_config())
    start = [inst.mask.assignments[0]] if cfg.mip_start and inst.mask.assignments else None
    res = branch_and_bound(model, settings=cfg.bnb_settings(), start=start, callback=callback)
    deformed = deformed_n = None
    worst = float("nan")
    if res.solution is not None:
        deformed_n, worst = deform_mesh(inst.x, res.solution.field)
        deformed = TriMesh(denormalize(deformed_n.vertices, inst.scale, inst.offset_y), deformed_n.faces)
    return MatchOutput(inst, model, res, correspondences(inst, res), deformed, deformed_n, worst)


def manifest(cfg: PipelineConfig, extra: dict | None = None) -> dict:
    import platform

    import scipy

    doc = {"config_sha256": cfg.digest(), "config": cfg.to_dict(),
           "versions": {"shapemip": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                        "python": platform.python_version()}}
    try:
        import clarabel
        doc["versions"]["clarabel"] = getattr(clarabel, "__version__", "unknown")
    except ImportError:
        pass
    doc.update(extra or {})
    return doc


def write_match_outputs(out: MatchOutput, cfg: PipelineConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "correspondences.json").write_text(json.dumps(out.correspondences, indent=1))
    (out_dir / "result.json").write_text(out.result.to_json())
    from .solver.gap import format_log_line
    (out_dir / "solver.log").write_text("".join(format_log_line(e) + "\n" for e in out.result.log))
    if out.deformed is not None:
        write_obj(out_dir / "deformed.obj", out.deformed)
    files = sorted(p.name for p in out_dir.iterdir() if p.name != "manifest.json")
    (out_dir / "manifest.json").write_text(json.dumps(
        manifest(cfg, {"status": out.result.status, "files": files,
                       "census": out.model.census()}), indent=1))


def load_pair(cfg: PipelineConfig) -> tuple[TriMesh, Shape]:
    if cfg.source is None or cfg.target is None:
        raise ConfigError("source and target paths are required")
    x = load_shape(cfg.source, "mesh", cfg.k)
    y = load_shape(cfg.target, cfg.target_kind, cfg.k)
    return x, y


# ----------------------------------------------------------------- evaluation


def snap_to_vertex(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Nearest vertex per point under Euclidean distance, ties to the lowest index."""
    d = np.linalg.norm(points[:, None, :] - vertices[None, :, :], axis=2)
    return np.argmin(d, axis=1)


def geodesic_errors(corr: list[dict], ground_truth, y: Shape, sample=None) -> np.ndarray:
    """Normalised geodesic error per control point; inf for outliers.

    The normaliser is the largest geodesic distance among ``sample``
    (default: all target vertices referenced by the correspondences).
    """
    gt = np.asarray(ground_truth, dtype=np.int64)
    if len(gt) != len(corr):
        raise ValueError(f"ground truth has {len(gt)} entries for {len(corr)} correspondences")
    if gt.size and (gt.min() < 0 or gt.max() >= y.n_vertices):
        raise IndexError("ground-truth index out of range")
    pts = np.array([c["point"] if c["point"] is not None else [np.nan] * 3 for c in corr], float)
    ok = ~np.isnan(pts).any(axis=1)
    snapped = np.full(len(corr), -1)
    if ok.any():
        snapped[ok] = snap_to_vertex(pts[ok], y.vertices)
    ref = np.unique(np.concatenate([gt, snapped[ok]])) if sample is None else np.asarray(sample)
    dref = geodesic_distances(y.graph, ref)[:, ref]
    diam = float(dref[np.isfinite(dref)].max()) if dref.size else 0.0
    diam = diam if diam > 0 else 1.0
    err = np.full(len(corr), np.inf)
    if ok.any():
        d = geodesic_distances(y.graph, gt[ok])
        err[ok] = d[np.arange(ok.sum()), snapped[ok]] / diam
    return err


def error_curve(errors: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of points with error <= threshold; outliers (inf) never count."""
    e = np.asarray(errors, float)
    return np.array([(e <= t).sum() / len(e) for t in thresholds]) if len(e) else np.zeros(len(thresholds))


def curve_csv(x_name: str, xs, cols: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([x_name] + list(cols))
    for k, xv in enumerate(xs):
        w.writerow([f"{xv:.10g}"] + [f"{cols[c][k]:.10g}" for c in cols])
    return buf.getvalue()


def gap_curve(results: list[tuple[float, float]], times) -> tuple[np.ndarray, np.ndarray]:
    times = np.asarray(list(times), float)
    if times.size == 0:
        raise ValueError("empty time grid")
    g = np.array([g_statistic(results, t) for t in times])
    solved = np.array([solved_fraction(results, t) for t in times])
    return g, solved


def load_result_file(path) -> tuple[float, float]:
    """(wall time, relative gap) from a result.json written by ``match``."""
    try:
        doc = json.loads(Path(path).read_text())
        return float(doc["wall_time"]), float(doc["gap"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed result file ({exc})") from exc


__all__ = [
    "ConfigError", "Instance", "MatchOutput", "PipelineConfig", "PointCloud", "correspondences",
    "curve_csv", "error_curve", "gap_curve", "geodesic_errors", "load_pair", "load_result_file",
    "manifest", "prepare", "run_match", "sample_control_points", "snap_to_vertex", "write_match_outputs",
]
