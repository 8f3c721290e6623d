"""Mixed-integer second-order-cone model container.

A model is ``min c'x + c0`` subject to sparse linear equalities and
inequalities, variable bounds, binary restrictions, and cones of the form
``x[t] >= ||F x + g||``. Rows keep a tag naming the block that emitted them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from ..deformation import LinearConstraintBlock


class ModelError(ValueError):
    """The model cannot be built (e.g. an empty mask row)."""


@dataclass(frozen=True, eq=False)
class Cone:
    epigraph: int
    F: sparse.csr_matrix
    g: np.ndarray
    tag: str

    @property
    def dim(self) -> int:
        return 1 + self.F.shape[0]

    def value(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.F @ x + self.g)) if self.F.shape[0] else 0.0


@dataclass(frozen=True, eq=False)
class Sos2Group:
    """lambda weights over ``grid`` linked to Gray-coded ``bits``.

    ``codes[c]`` is the bit pattern selecting cell c = [grid[c], grid[c+1]].
    ``value`` is the variable equal to ``grid @ lambda``.
    """

    name: str
    value: int
    weights: np.ndarray
    bits: np.ndarray
    grid: np.ndarray
    codes: np.ndarray

    def cell_of(self, x: float) -> int:
        b = len(self.grid) - 1
        c = int(np.searchsorted(self.grid, x, side="right")) - 1
        return min(max(c, 0), b - 1)


@dataclass(frozen=True, eq=False)
class ConicModel:
    n_vars: int
    lb: np.ndarray
    ub: np.ndarray
    is_binary: np.ndarray
    names: dict
    blocks: list
    cones: list
    sos2: list
    c: np.ndarray
    c0: float = 0.0
    layout: object = None
    data: object = None
    config: object = None
    branch_order: np.ndarray = field(default=None)

    @cached_property
    def eq_blocks(self) -> list[LinearConstraintBlock]:
        return [b for b in self.blocks if b.sense == "eq"]

    @cached_property
    def le_blocks(self) -> list[LinearConstraintBlock]:
        return [b for b in self.blocks if b.sense == "le"]

    @cached_property
    def A_eq(self) -> sparse.csr_matrix:
        return _stack([b.matrix(self.n_vars) for b in self.eq_blocks], self.n_vars)

    @cached_property
    def b_eq(self) -> np.ndarray:
        return np.concatenate([b.rhs for b in self.eq_blocks]) if self.eq_blocks else np.zeros(0)

    @cached_property
    def A_le(self) -> sparse.csr_matrix:
        return _stack([b.matrix(self.n_vars) for b in self.le_blocks], self.n_vars)

    @cached_property
    def b_le(self) -> np.ndarray:
        return np.concatenate([b.rhs for b in self.le_blocks]) if self.le_blocks else np.zeros(0)

    @cached_property
    def binaries(self) -> np.ndarray:
        return np.flatnonzero(self.is_binary)

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.c0)

    def tighten_epigraphs(self, x: np.ndarray) -> np.ndarray:
        """Set each cone's epigraph variable to the norm it bounds."""
        x = x.copy()
        for cone in self.cones:
            x[cone.epigraph] = cone.value(x)
        return x

    def residuals(self, x: np.ndarray) -> dict:
        """Worst violation per constraint family at ``x``."""
        out = {}
        for b in self.blocks:
            r = b.matrix(self.n_vars) @ x - b.rhs
            v = np.abs(r) if b.sense == "eq" else np.maximum(r, 0.0)
            out[b.tag] = max(out.get(b.tag, 0.0), float(v.max(initial=0.0)))
        out["bounds"] = float(max(np.maximum(self.lb - x, 0).max(initial=0.0),
                                  np.maximum(x - self.ub, 0).max(initial=0.0)))
        xb = x[self.binaries]
        out["integrality"] = float(np.minimum(np.abs(xb), np.abs(1 - xb)).max(initial=0.0))
        out["cones"] = float(max((c.value(x) - x[c.epigraph] for c in self.cones), default=0.0))
        out["cones"] = max(out["cones"], 0.0)
        return out

    def census(self) -> dict:
        lay = self.layout
        rot = int(lay.rotation_bits.size) if lay is not None else 0
        p_bin = int((lay.P >= 0).sum()) if lay is not None else 0
        out_bin = int(lay.delta.size) if lay is not None and lay.delta is not None else 0
        return {
            "variables": int(self.n_vars),
            "binaries": int(self.is_binary.sum()),
            "rotation_binaries": rot,
            "assignment_binaries": p_bin,
            "outlier_binaries": out_bin,
            "equalities": int(self.A_eq.shape[0]),
            "inequalities": int(self.A_le.shape[0]),
            "cones": len(self.cones),
            "cone_dims": [c.dim for c in self.cones],
            "sos2_groups": len(self.sos2),
            "rows_by_tag": _rows_by_tag(self.blocks),
        }

    def check_structure(self) -> None:
        """Assert the model is linear + SOC once binaries are fixed.

        Every nonlinearity lives in a cone whose epigraph variable carries a
        non-negative objective weight and appears in no other cone.
        """
        epi = [c.epigraph for c in self.cones]
        if len(set(epi)) != len(epi):
            raise ModelError("an epigraph variable is shared between cones")
        for c in self.cones:
            if self.c[c.epigraph] < 0:
                raise ModelError(f"cone {c.tag}: negative objective weight on epigraph")
            if c.F.shape[0] and np.any(c.F[:, c.epigraph].toarray()):
                raise ModelError(f"cone {c.tag}: epigraph variable inside its own norm")
        if np.any(self.lb[self.binaries] < 0) or np.any(self.ub[self.binaries] > 1):
            raise ModelError("binary variable with bounds outside [0, 1]")

    def structural_lower_bound(self) -> float:
        """c'x lower bound from variable bounds alone (may be -inf)."""
        c = self.c
        lo = np.where(c > 0, c * self.lb, np.where(c < 0, c * self.ub, 0.0))
        lo = np.where(np.isnan(lo), 0.0, lo)
        return float(lo.sum() + self.c0)

    def to_json(self) -> str:
        names = np.empty(self.n_vars, dtype=object)
        for name, idx in self.names.items():
            idx = np.asarray(idx)
            for k, i in np.ndenumerate(idx):
                if i >= 0:
                    names[i] = f"{name}[{','.join(map(str, k))}]" if idx.ndim else name
        doc = {
            "format": "shapemip-conic-1",
            "variables": [{"name": names[i], "kind": "binary" if self.is_binary[i] else "continuous",
                           "lb": _num(self.lb[i]), "ub": _num(self.ub[i])} for i in range(self.n_vars)],
            "objective": {"constant": self.c0,
                          "terms": [[int(i), float(self.c[i])] for i in np.flatnonzero(self.c)]},
            "constraints": [{"tag": b.tag, "sense": b.sense, "rhs": b.rhs.tolist(),
                             "triplets": np.column_stack([b.rows, b.cols, b.vals]).tolist()}
                            for b in self.blocks],
            "cones": [{"tag": c.tag, "epigraph": c.epigraph, "dim": c.dim,
                       "triplets": _triplets(c.F), "offset": c.g.tolist()} for c in self.cones],
            "sos2": [{"name": g.name, "value": g.value, "weights": g.weights.tolist(),
                      "bits": g.bits.tolist(), "grid": g.grid.tolist(), "codes": g.codes.tolist()}
                     for g in self.sos2],
            "census": self.census(),
        }
        return json.dumps(doc)


def _num(v):
    return None if not np.isfinite(v) else float(v)


def _triplets(m: sparse.csr_matrix):
    c = m.tocoo()
    return np.column_stack([c.row, c.col, c.data]).tolist()


def _rows_by_tag(blocks):
    out: dict[str, int] = {}
    for b in blocks:
        out[b.tag] = out.get(b.tag, 0) + b.n_rows
    return out


def _stack(mats, n):
    return sparse.vstack(mats, format="csr") if mats else sparse.csr_matrix((0, n))


class ModelBuilder:
    """Accumulates variables, rows and cones; ``build`` freezes them."""

    def __init__(self):
        self.n = 0
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._bin: list[np.ndarray] = []
        self.names: dict[str, np.ndarray] = {}
        self.blocks: list[LinearConstraintBlock] = []
        self._cones: list[tuple] = []
        self.sos2: list[Sos2Group] = []
        self._obj: dict[int, float] = {}

    def add_var(self, name: str, shape=(), kind: str = "continuous", lb=-np.inf, ub=np.inf) -> np.ndarray:
        if name in self.names:
            raise ModelError(f"duplicate variable block {name!r}")
        size = int(np.prod(shape)) if shape != () else 1
        idx = self.n + np.arange(size)
        self.n += size
        if kind == "binary":
            lb, ub = 0.0, 1.0
        elif kind != "continuous":
            raise ModelError(f"unknown variable kind {kind!r}")
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (size,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (size,)).copy())
        self._bin.append(np.full(size, kind == "binary"))
        idx = idx.reshape(shape) if shape != () else idx[0]
        self.names[name] = idx
        return idx

    def add_rows(self, block: LinearConstraintBlock) -> None:
        if block.n_rows:
            self.blocks.append(block)

    def rows(self, terms: list[tuple[list, list, float]], sense: str, tag: str) -> None:
        """Add rows given as ``(cols, vals, rhs)`` tuples."""
        rows, cols, vals, rhs = [], [], [], []
        for r, (cs, vs, b) in enumerate(terms):
            rows.extend([r] * len(cs))
            cols.extend(cs)
            vals.extend(vs)
            rhs.append(b)
        self.add_rows(LinearConstraintBlock(np.asarray(rows, np.int64), np.asarray(cols, np.int64),
                                            np.asarray(vals, float), np.asarray(rhs, float), sense, tag))

    def add_cone(self, epigraph: int, rows, cols, vals, const, tag: str) -> None:
        self._cones.append((int(epigraph), np.asarray(rows, np.int64), np.asarray(cols, np.int64),
                            np.asarray(vals, float), np.asarray(const, float), tag))

    def add_objective(self, idx: int, coef: float) -> None:
        self._obj[int(idx)] = self._obj.get(int(idx), 0.0) + float(coef)

    def build(self, layout=None, data=None, config=None, branch_order=None) -> ConicModel:
        n = self.n
        cones = [Cone(e, sparse.csr_matrix((v, (r, c)), shape=(len(g), n)), g, tag)
                 for e, r, c, v, g, tag in self._cones]
        c = np.zeros(n)
        for i, v in self._obj.items():
            c[i] = v
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
        for b in self.blocks:
            b.matrix(n)  # raises on undeclared variables
        is_bin = cat(self._bin, bool)
        if branch_order is None:
            branch_order = np.flatnonzero(is_bin)
        return ConicModel(n, cat(self._lb, float), cat(self._ub, float), is_bin, dict(self.names),
                          list(self.blocks), cones, list(self.sos2), c, 0.0, layout, data, config,
                          np.asarray(branch_order, dtype=np.int64))
