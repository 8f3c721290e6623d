"""Independent feasibility checker for returned matchings.

Works from the decoded shape-level solution and the problem data only; it
never reads the assembled constraint rows, so a bug in assembly cannot hide
itself here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..deformation import apply_triangle_transform
from ..model.blocks import MatchConfig, ProblemData, Solution


@dataclass
class VerifyReport:
    residuals: dict = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def ok(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def failures(self) -> dict:
        return {k: v for k, v in self.residuals.items() if v > self.tol}


def _pos(a) -> float:
    a = np.asarray(a, float)
    return float(np.maximum(a, 0.0).max()) if a.size else 0.0


def consistency_residual(mesh, fld) -> float:
    """Largest disagreement between adjacent faces' images of a shared vertex."""
    worst = 0.0
    for i, nf in enumerate(mesh.vertex_faces):
        if len(nf) < 2:
            continue
        imgs = np.array([apply_triangle_transform(fld, int(p), mesh.vertices[i]) for p in nf])
        worst = max(worst, float(np.abs(imgs - imgs[0]).max()))
    return worst


def conflicting_pairs(geo_x, geo_y, allowed, bound: float):
    """(s, t, p, q) with s < p whose joint assignment distorts a geodesic by more than ``bound``."""
    out = []
    u, v = allowed.shape
    for s in range(u):
        for p in range(s + 1, u):
            for t in range(v):
                for q in range(v):
                    if allowed[s, t] and allowed[p, q] and abs(geo_x[s, p] - geo_y[t, q]) > bound:
                        out.append((s, t, p, q))
    return out


def verify_solution(sol: Solution, data: ProblemData, config: MatchConfig, tol: float = 1e-6) -> VerifyReport:
    """Residual per constraint family; ``ok`` when all are within ``tol``."""
    res = {}
    P, alpha = np.asarray(sol.P, float), np.asarray(sol.alpha, float)
    u, v = P.shape
    allowed = data.allowed
    d = [p.d for p in data.polyhedra]
    offsets = np.concatenate([[0], np.cumsum(d)]).astype(int)

    res["integrality"] = float(np.abs(P - P.round()).max())
    res["mask"] = float(np.abs(P[~allowed]).max()) if (~allowed).any() else 0.0
    res["row_stochastic"] = float(np.abs(P.sum(axis=1) - 1).max())

    res["alpha_nonneg"] = _pos(-alpha)
    res["alpha_rows"] = float(np.abs(alpha.sum(axis=1) - 1).max())
    block = np.stack([alpha[:, offsets[j]:offsets[j + 1]].sum(axis=1) for j in range(v)], axis=1)
    res["alpha_block"] = _pos(block - P)
    res["alpha_columns"] = _pos(alpha.sum(axis=0) - 1)

    res["consistency"] = consistency_residual(data.mesh, sol.field)
    res["rotation_box"] = _pos(np.abs(sol.field.R) - 1)
    res["deform_box"] = max(_pos(np.abs(sol.field.T) - config.deform_bound),
                            _pos(np.abs(sol.field.t) - config.deform_bound))

    if config.injective:
        res["injectivity"] = _pos(P.sum(axis=0) - 1)
    if config.distortion_bound is not None:
        pairs = conflicting_pairs(data.geo_x, data.geo_y, allowed, config.distortion_bound)
        res["distortion"] = max((P[s, t] + P[p, q] - 1 for s, t, p, q in pairs), default=0.0)
        res["distortion"] = max(res["distortion"], 0.0)
    if config.n_out > 0:
        eps, delta = np.asarray(sol.eps, float).reshape(u, 3), np.asarray(sol.delta, float)
        res["outlier_integrality"] = float(np.abs(delta - delta.round()).max())
        res["big_m"] = _pos(np.abs(eps) - config.big_m * delta[:, None])
        res["outlier_count"] = _pos(delta.sum() - config.n_out)
    return VerifyReport(res, tol)


def objective_value(sol: Solution, data: ProblemData, config: MatchConfig, weights: dict,
                    both_orientations: bool = True) -> float:
    """Objective recomputed from the deformation itself (not from epigraphs)."""
    mesh, fld = data.mesh, sol.field
    faces = [int(mesh.vertex_faces[int(i)][0]) for i in data.control]
    tx = np.array([apply_triangle_transform(fld, p, mesh.vertices[int(i)]) for p, i in zip(faces, data.control)])
    Z = np.concatenate([p.vertices for p in data.polyhedra])
    r = tx - np.asarray(sol.alpha) @ Z
    if sol.eps is not None:
        r = r + np.asarray(sol.eps).reshape(-1, 3)
    total = weights["corr"] * np.linalg.norm(r) + weights["rigid"] * np.linalg.norm(fld.T)
    if weights["smooth"]:
        from ..geometry import face_adjacency

        adj = face_adjacency(mesh)
        pairs, lengths = adj.pairs, adj.lengths
        if both_orientations:
            pairs = np.vstack([pairs, pairs[:, ::-1]])
            lengths = np.concatenate([lengths, lengths])
        w = lengths / lengths.sum()
        c = mesh.centroids
        delta = np.array([apply_triangle_transform(fld, p, c[q]) - (c[q] + fld.t[q]) for p, q in pairs])
        total += weights["smooth"] * np.linalg.norm(w[:, None] * delta)
    return float(total)
