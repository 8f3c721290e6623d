"""Search-space reduction: geodesic percentile features and sequential assignments."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class InfeasibleAssignment(Exception):
    pass


@dataclass(frozen=True)
class Assignment:
    """Row -> column map of a rectangular assignment, or an infeasibility marker."""

    columns: np.ndarray | None
    cost: float

    @property
    def feasible(self) -> bool:
        return self.columns is not None


@dataclass
class MatchMask:
    allowed: np.ndarray  # (u, v) bool
    distances: np.ndarray | None = None
    assignments: list[np.ndarray] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)

    @property
    def shape(self):
        return self.allowed.shape

    def to_csv(self) -> str:
        lines = ["i,j,distance,allowed"]
        u, v = self.allowed.shape
        for i in range(u):
            for j in range(v):
                d = "" if self.distances is None else f"{self.distances[i, j]:.17g}"
                lines.append(f"{i},{j},{d},{int(self.allowed[i, j])}")
        return "\n".join(lines) + "\n"


def percentile_features(distances, n_prctile: int) -> np.ndarray:
    """Per row, ``n_prctile`` evenly spaced percentiles (0 to 100 %) of the distances.

    Linear interpolation between order statistics; column 0 is the row
    minimum and the last column its maximum.
    """
    d = np.atleast_2d(np.asarray(distances, dtype=float))
    if n_prctile < 2:
        raise ValueError("n_prctile must be >= 2")
    bad = np.flatnonzero(~np.isfinite(d).all(axis=1))
    if len(bad):
        raise ValueError(f"control point {bad[0]}: infinite geodesic distance (disconnected shape)")
    return np.percentile(d, np.linspace(0.0, 100.0, n_prctile), axis=1, method="linear").T


def lap_solve(cost, forbidden=None) -> Assignment:
    """Minimum-cost assignment of every row to a distinct column (rows <= columns).

    Shortest augmenting path Hungarian method with row/column potentials.
    Columns are scanned in index order and only a strictly smaller reduced
    cost replaces the current choice, so ties resolve towards lower column
    indices. Forbidden entries are never used; if no complete assignment
    exists the result has ``columns=None``.
    """
    c = np.asarray(cost, dtype=float)
    u, v = c.shape
    if u > v:
        raise ValueError("lap_solve needs rows <= columns")
    blocked = np.zeros_like(c, dtype=bool) if forbidden is None else np.asarray(forbidden, dtype=bool)
    blocked = blocked | ~np.isfinite(c)
    if u == 0:
        return Assignment(np.zeros(0, dtype=np.int64), 0.0)
    work = np.where(blocked, np.inf, c)
    # 1-based bookkeeping; column 0 is the virtual source column
    pot_r = np.zeros(u + 1)
    pot_c = np.zeros(v + 1)
    match = np.zeros(v + 1, dtype=np.int64)  # match[j] = row (1-based) owning column j
    way = np.zeros(v + 1, dtype=np.int64)
    for i in range(1, u + 1):
        match[0] = i
        j0 = 0
        minv = np.full(v + 1, np.inf)
        used = np.zeros(v + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            red = work[i0 - 1] - pot_r[i0] - pot_c[1:]
            free = ~used[1:]
            upd = free & (red < minv[1:])
            minv[1:][upd] = red[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            if not np.isfinite(delta):
                return Assignment(None, np.inf)
            pot_r[match[used]] += delta
            pot_c[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    cols = np.full(u, -1, dtype=np.int64)
    for j in range(1, v + 1):
        if match[j]:
            cols[match[j] - 1] = j - 1
    return Assignment(cols, float(c[np.arange(u), cols].sum()))


def feature_distances(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return np.linalg.norm(gx[:, None, :] - gy[None, :, :], axis=2)


def build_mask(gx, gy, n_lap: int = 5) -> MatchMask:
    """Union of ``n_lap`` successive optimal assignments over feature distances.

    Assignment l forbids every pair used by assignments 1..l-1. For more
    rows than columns no reduction is defined and everything is allowed.
    """
    gx = np.atleast_2d(gx)
    gy = np.atleast_2d(gy)
    d = feature_distances(gx, gy)
    u, v = d.shape
    if u > v:
        warnings.warn("u > v: search-space reduction skipped, all matches allowed", stacklevel=2)
        return MatchMask(np.ones((u, v), dtype=bool), d)
    return mask_from_costs(d, n_lap)


def mask_from_costs(d: np.ndarray, n_lap: int) -> MatchMask:
    u, v = d.shape
    allowed = np.zeros((u, v), dtype=bool)
    mask = MatchMask(allowed, d)
    for ell in range(n_lap):
        res = lap_solve(d, forbidden=allowed)
        if not res.feasible:
            if ell == 0:
                raise InfeasibleAssignment("first assignment problem is infeasible")
            warnings.warn(f"assignment {ell + 1} of {n_lap} infeasible; keeping {ell}", stacklevel=3)
            break
        allowed[np.arange(u), res.columns] = True
        mask.assignments.append(res.columns)
        mask.costs.append(res.cost)
        logger.debug("LAP %d cost %.6g", ell + 1, res.cost)
    return mask


def identity_mask(u: int, v: int | None = None) -> MatchMask:
    v = u if v is None else v
    return MatchMask(np.eye(u, v, dtype=bool))


def full_mask(u: int, v: int) -> MatchMask:
    return MatchMask(np.ones((u, v), dtype=bool))
