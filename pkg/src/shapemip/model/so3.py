"""Piecewise-linear rotation constraints with logarithmically encoded sos2 weights.

The first two rows of R (six entries in [-1, 1]) each get an sos2 weight
vector over the uniform grid ``linspace(-1, 1, b + 1)``; ``ceil(log2 b)``
Gray-coded binaries select the active cell. Squares are replaced by
``lambda @ grid**2``. The nine bilinear products needed for ``R1 . R2 = 0``
and ``R3 = R1 x R2`` are auxiliaries held by McCormick envelopes of the
selected cells, switched on through the same Gray bits (big-M on the code
mismatch), so no binaries beyond the 6 * log2(b) are introduced.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .conic import ModelBuilder, ModelError, Sos2Group

# (row, col) pairs of R multiplied together; orthogonality uses the first three
ORTHO_PRODUCTS = [((0, 0), (1, 0)), ((0, 1), (1, 1)), ((0, 2), (1, 2))]
# R3 = R1 x R2: component k = sum of sign * product
CROSS_TERMS = {
    0: [(+1, (0, 1), (1, 2)), (-1, (0, 2), (1, 1))],
    1: [(+1, (0, 2), (1, 0)), (-1, (0, 0), (1, 2))],
    2: [(+1, (0, 0), (1, 1)), (-1, (0, 1), (1, 0))],
}


def n_bits(bins: int) -> int:
    return int(math.ceil(math.log2(bins)))


def check_bins(bins: int) -> None:
    if bins < 2 or bins & (bins - 1):
        raise ModelError(f"bins must be a power of two >= 2, got {bins}")


def gray_codes(bins: int) -> np.ndarray:
    """Reflected binary Gray code of each cell, MSB first, shape (bins, L)."""
    L = n_bits(bins)
    g = np.arange(bins) ^ (np.arange(bins) >> 1)
    return ((g[:, None] >> np.arange(L - 1, -1, -1)) & 1).astype(np.int64)


def grid(bins: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, bins + 1)


def sos2_weights(x: float, bins: int) -> np.ndarray:
    """The sos2 vector with ``grid @ lambda == x`` (two adjacent non-zeros at most)."""
    if not -1.0 <= x <= 1.0:
        raise ValueError("x must lie in [-1, 1]")
    phi = grid(bins)
    lam = np.zeros(bins + 1)
    c = min(int(np.searchsorted(phi, x, side="right")) - 1, bins - 1)
    s = (x - phi[c]) / (phi[c + 1] - phi[c])
    lam[c], lam[c + 1] = 1.0 - s, s
    return lam


def pwl_square(x, bins: int):
    """Piecewise-linear interpolation of x**2 through the grid points."""
    phi = grid(bins)
    x = np.asarray(x, float)
    return np.interp(x, phi, phi**2)


def link_sets(bins: int):
    """Per bit, grid points whose every containing cell has the bit set / clear."""
    codes = gray_codes(bins)
    L = codes.shape[1]
    ones, zeros = [], []
    for bit in range(L):
        on, off = [], []
        for m in range(bins + 1):
            cells = [c for c in (m - 1, m) if 0 <= c < bins]
            vals = {int(codes[c, bit]) for c in cells}
            if vals == {1}:
                on.append(m)
            elif vals == {0}:
                off.append(m)
        ones.append(on)
        zeros.append(off)
    return ones, zeros


def _mismatch_terms(bits: np.ndarray, code: np.ndarray):
    """Mismatch count between binaries and a code, as (cols, vals, const)."""
    vals = 1.0 - 2.0 * code
    return list(bits), list(vals), float(code.sum())


def _mccormick(xl, xu, yl, yu):
    """The four envelope rows as (cx, cy, cw, rhs) with cx*x + cy*y + cw*w <= rhs."""
    return [
        (yl, xl, -1.0, xl * yl),  # w >= yl x + xl y - xl yl
        (yu, xu, -1.0, xu * yu),  # w >= yu x + xu y - xu yu
        (-yl, -xu, 1.0, -xu * yl),  # w <= yl x + xu y - xu yl
        (-yu, -xl, 1.0, -xl * yu),  # w <= yu x + xl y - xl yu
    ]


def _big_m(cx, cy, cw, rhs):
    # worst violation over the box x, y, w in [-1, 1]
    worst = max(cx * x + cy * y for x, y in itertools.product((-1, 1), repeat=2)) + abs(cw)
    return max(worst - rhs, 0.0)


def build_so3_block(mb: ModelBuilder, bins: int, prefix: str = "") -> dict:
    """Add the rotation variables and their piecewise-linear SO(3) rows.

    Returns a dict with index arrays ``R`` (3, 3), ``lam`` (6, b+1),
    ``bits`` (6, L) and ``w`` (dict product -> index).
    """
    check_bins(bins)
    L = n_bits(bins)
    phi = grid(bins)
    codes = gray_codes(bins)
    R = mb.add_var(prefix + "R", (3, 3), lb=-1.0, ub=1.0)
    lam = mb.add_var(prefix + "lambda", (6, bins + 1), lb=0.0, ub=1.0)
    bits = mb.add_var(prefix + "gray", (6, L), kind="binary")
    entries = [(a, b) for a in range(2) for b in range(3)]
    ones, zeros = link_sets(bins)

    eq, le = [], []
    for k, (a, b) in enumerate(entries):
        eq.append((list(lam[k]), [1.0] * (bins + 1), 1.0))
        eq.append((list(lam[k]) + [R[a, b]], list(phi) + [-1.0], 0.0))
        for bit in range(L):
            if ones[bit]:
                le.append(([lam[k, m] for m in ones[bit]] + [bits[k, bit]],
                           [1.0] * len(ones[bit]) + [-1.0], 0.0))
            if zeros[bit]:
                le.append(([lam[k, m] for m in zeros[bit]] + [bits[k, bit]],
                           [1.0] * len(zeros[bit]) + [1.0], 1.0))
        mb.sos2.append(Sos2Group(f"R[{a},{b}]", int(R[a, b]), lam[k].copy(), bits[k].copy(), phi, codes))

    # unit rows: sum of piecewise-linear squares equals one
    for a in range(2):
        ks = [k for k, e in enumerate(entries) if e[0] == a]
        eq.append(([lam[k, m] for k in ks for m in range(bins + 1)],
                   [phi[m] ** 2 for _ in ks for m in range(bins + 1)], 1.0))

    products = {}
    pairs = list(ORTHO_PRODUCTS) + [(e1, e2) for terms in CROSS_TERMS.values() for _, e1, e2 in terms]
    for e1, e2 in pairs:
        key = (e1, e2)
        if key in products:
            continue
        products[key] = mb.add_var(f"{prefix}w[{e1[0]}{e1[1]}*{e2[0]}{e2[1]}]", lb=-1.0, ub=1.0)
    for (e1, e2), w in products.items():
        x, y = R[e1], R[e2]
        k1, k2 = entries.index(e1), entries.index(e2)
        # global envelope on [-1, 1]^2
        for cx, cy, cw, rhs in _mccormick(-1.0, 1.0, -1.0, 1.0):
            le.append(([x, y, w], [cx, cy, cw], rhs))
        for c1 in range(bins):
            for c2 in range(bins):
                m1 = _mismatch_terms(bits[k1], codes[c1])
                m2 = _mismatch_terms(bits[k2], codes[c2])
                for cx, cy, cw, rhs in _mccormick(phi[c1], phi[c1 + 1], phi[c2], phi[c2 + 1]):
                    M = _big_m(cx, cy, cw, rhs)
                    cols = [x, y, w] + m1[0] + m2[0]
                    vals = [cx, cy, cw] + [-M * v for v in m1[1]] + [-M * v for v in m2[1]]
                    le.append((cols, vals, rhs + M * (m1[2] + m2[2])))
    eq.append(([products[p] for p in ORTHO_PRODUCTS], [1.0, 1.0, 1.0], 0.0))
    for k, terms in CROSS_TERMS.items():
        eq.append(([R[2, k]] + [products[(e1, e2)] for _, e1, e2 in terms],
                   [1.0] + [-float(s) for s, _, _ in terms], 0.0))
    mb.rows(eq, "eq", "so3")
    mb.rows(le, "le", "so3")
    return {"R": R, "lam": lam, "bits": bits, "w": products, "entries": entries}


def codes_for_rotation(Rm: np.ndarray, bins: int) -> np.ndarray:
    """Gray codes (6, L) of the cells containing the first two rows of ``Rm``."""
    phi = grid(bins)
    codes = gray_codes(bins)
    out = []
    for a in range(2):
        for b in range(3):
            x = float(np.clip(Rm[a, b], -1, 1))
            c = min(max(int(np.searchsorted(phi, x, side="right")) - 1, 0), bins - 1)
            out.append(codes[c])
    return np.asarray(out)


def rotation_completion(Rm: np.ndarray, bins: int, block: dict) -> dict:
    """Values for every SO(3)-block variable given a rotation ``Rm``.

    Exact (all rows satisfied) when the first two rows of ``Rm`` are grid
    points, e.g. signed permutation rotations. Returns {index: value}.
    """
    Rm = np.asarray(Rm, float)
    out = {int(i): float(v) for i, v in zip(block["R"].ravel(), Rm.ravel())}
    codes = codes_for_rotation(Rm, bins)
    for k, (a, b) in enumerate(block["entries"]):
        lam = sos2_weights(float(np.clip(Rm[a, b], -1, 1)), bins)
        out.update({int(i): float(v) for i, v in zip(block["lam"][k], lam)})
        out.update({int(i): float(v) for i, v in zip(block["bits"][k], codes[k])})
    for (e1, e2), w in block["w"].items():
        out[int(w)] = float(Rm[e1] * Rm[e2])
    return out
