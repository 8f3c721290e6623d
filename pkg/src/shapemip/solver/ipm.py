"""Homogeneous self-dual interior-point method for linear and second-order cones.

Solves ``min c'x  s.t.  Ax = b,  Gx + s = h,  s in K`` where K is a product
of a non-negative orthant of size ``l`` and second-order cones of sizes
``q``. Mehrotra predictor-corrector steps with Nesterov-Todd scaling; the
KKT system keeps each cone's scaling sparse by one auxiliary row per cone
and is factored by sparse LU with static regularisation and iterative
refinement.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConeDims:
    l: int
    q: tuple[int, ...] = ()

    @property
    def m(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)


@dataclass
class IPMSettings:
    feastol: float = 1e-7
    reltol: float = 1e-7
    abstol: float = 1e-8
    # accepted when progress stalls
    feastol_inacc: float = 1e-4
    gaptol_inacc: float = 5e-5
    max_iter: int = 200
    step: float = 0.99
    reg: float = 1e-8
    refine: int = 3


@dataclass
class IPMResult:
    status: str  # optimal | inaccurate | infeasible | unbounded | max_iter | numerical
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    pobj: float
    dobj: float
    iters: int
    pres: float
    dres: float
    gap: float


class _Cones:
    """Cone arithmetic on stacked vectors: orthant first, then each SOC."""

    def __init__(self, dims: ConeDims):
        self.dims = dims
        self.l = dims.l
        starts = np.cumsum([dims.l] + list(dims.q))
        self.soc = [(int(a), int(a + q)) for a, q in zip(starts[:-1], dims.q)]
        self.e = np.zeros(dims.m)
        self.e[: dims.l] = 1.0
        for a, _ in self.soc:
            self.e[a] = 1.0

    def min_eig(self, u):
        vals = [u[: self.l].min()] if self.l else []
        for a, b in self.soc:
            vals.append(u[a] - np.linalg.norm(u[a + 1:b]))
        return min(vals) if vals else np.inf

    def shift_interior(self, u):
        a = -self.min_eig(u)
        return u + (1.0 + a) * self.e if a >= 0 else u.copy()

    def dot(self, u, v):
        return float(u @ v)

    def jprod(self, u, v):
        out = np.empty_like(u)
        l = self.l
        out[:l] = u[:l] * v[:l]
        for a, b in self.soc:
            out[a] = u[a:b] @ v[a:b]
            out[a + 1:b] = u[a] * v[a + 1:b] + v[a] * u[a + 1:b]
        return out

    def jdiv(self, lam, d):
        """x with lam o x = d."""
        out = np.empty_like(d)
        l = self.l
        out[:l] = d[:l] / lam[:l]
        for a, b in self.soc:
            l0, l1 = lam[a], lam[a + 1:b]
            d0, d1 = d[a], d[a + 1:b]
            det = l0 * l0 - l1 @ l1
            x0 = (l0 * d0 - l1 @ d1) / det
            out[a] = x0
            out[a + 1:b] = (d1 - x0 * l1) / l0
        return out

    @np.errstate(over="ignore", invalid="ignore")
    def max_step(self, v, d):
        """Largest alpha with v + alpha d in the cone (v interior)."""
        amax = np.inf
        l = self.l
        if l:
            neg = d[:l] < 0
            if neg.any():
                amax = min(amax, float(np.min(-v[:l][neg] / d[:l][neg])))
        for a, b in self.soc:
            v0, v1 = v[a], v[a + 1:b]
            d0, d1 = d[a], d[a + 1:b]
            A = d0 * d0 - d1 @ d1
            B = v0 * d0 - v1 @ d1
            C = max(v0 * v0 - v1 @ v1, 0.0)
            D = B * B - A * C
            if (A > 0 and (B >= 0 or D < 0)) or (A == 0 and B >= 0):
                continue
            if A == 0:
                amax = min(amax, -C / (2 * B))
            else:
                # smallest positive root of A t^2 + 2 B t + C
                amax = min(amax, C / (-B + np.sqrt(max(D, 0.0))))
        return amax


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^-1 s = lam."""

    def __init__(self, cones: _Cones, s, z):
        self.cones = cones
        l = cones.l
        self.w = np.sqrt(s[:l] / z[:l])
        self.soc = []
        for a, b in cones.soc:
            sa, za = s[a:b], z[a:b]
            sres = sa[0] ** 2 - sa[1:] @ sa[1:]
            zres = za[0] ** 2 - za[1:] @ za[1:]
            sres, zres = max(sres, 1e-300), max(zres, 1e-300)
            sb = sa / np.sqrt(sres)
            zb = za / np.sqrt(zres)
            gamma = np.sqrt(max((1.0 + sb @ zb) / 2.0, 1e-300))
            wb = np.empty_like(sb)
            wb[0] = (sb[0] + zb[0]) / (2 * gamma)
            wb[1:] = (sb[1:] - zb[1:]) / (2 * gamma)
            eta = (sres / zres) ** 0.25
            self.soc.append((a, b, wb, eta))
        self.lam = self.apply(z)

    def apply(self, v, inverse=False):
        out = np.empty_like(v)
        l = self.cones.l
        out[:l] = v[:l] / self.w if inverse else v[:l] * self.w
        for a, b, wb, eta in self.soc:
            w0, w1 = wb[0], wb[1:]
            v0, v1 = v[a], v[a + 1:b]
            if inverse:
                w1 = -w1
            t = w1 @ v1
            out[a] = w0 * v0 + t
            out[a + 1:b] = v1 + (v0 + t / (1.0 + w0)) * w1
            out[a:b] *= (1.0 / eta) if inverse else eta
        return out


class _KKT:
    """Factorable reduced KKT system ``[[0, A', G'], [A, 0, 0], [G, 0, -W^2]]``.

    Orthant rows of G with a single non-zero (plain variable bounds) are
    eliminated into the x-block diagonal. Each SOC scaling is kept sparse by
    one auxiliary variable carrying its rank-one part.
    """

    def __init__(self, A, G, cones: _Cones, st: IPMSettings):
        self.st = st
        self.n, self.p, self.m = A.shape[1], A.shape[0], G.shape[0]
        n, p, l = self.n, self.p, cones.l
        self.cones = cones
        nnz = np.diff(G.indptr)
        single = np.zeros(self.m, dtype=bool)
        single[:l] = nnz[:l] == 1
        self.S = np.flatnonzero(single)
        self.S_col = G.indices[G.indptr[self.S]]
        self.S_val = G.data[G.indptr[self.S]]
        self.keep = np.flatnonzero(~single)
        self.lk = int((~single[:l]).sum())
        Gk = G[self.keep]
        self.mk = len(self.keep)
        self.nq = len(cones.soc)
        self.N = n + p + self.mk + self.nq
        self.zoff = n + p
        self.base = sparse.bmat([[sparse.csr_matrix((n, n)), A.T, Gk.T], [A, None, None], [Gk, None, None]],
                                format="coo")
        self.pos = np.full(self.m, -1)
        self.pos[self.keep] = np.arange(self.mk)

    def factor(self, scaling: _Scaling | None):
        n, p, zoff, nq, l = self.n, self.p, self.zoff, self.nq, self.cones.l
        b = self.base
        rows, cols, vals = [b.row], [b.col], [b.data]
        w2 = np.ones(l) if scaling is None else scaling.w ** 2
        self.dS = w2[self.S]
        xdiag = np.bincount(self.S_col, self.S_val ** 2 / self.dS, minlength=n)
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(xdiag)
        idx = zoff + np.arange(self.lk)
        rows.append(idx)
        cols.append(idx)
        vals.append(-w2[self.keep[: self.lk]])
        for k, (a, bb) in enumerate(self.cones.soc):
            d = bb - a
            idx = zoff + self.pos[a:bb]
            xi = n + p + self.mk + k
            if scaling is None:
                rows += [idx, [xi]]
                cols += [idx, [xi]]
                vals += [-np.ones(d), [1.0]]
                continue
            _, _, wb, eta = scaling.soc[k]
            jd = np.full(d, -1.0)
            jd[0] = 1.0
            off = -np.sqrt(2.0) * eta * wb
            rows += [idx, idx, np.full(d, xi), [xi]]
            cols += [idx, np.full(d, xi), idx, [xi]]
            vals += [eta ** 2 * jd, off, off, [1.0]]
        K = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows).astype(np.int64),
                                                        np.concatenate(cols).astype(np.int64))),
                              shape=(self.N, self.N))
        reg = np.concatenate([np.full(n, self.st.reg), np.full(p + self.mk, -self.st.reg), np.zeros(nq)])
        self.K = K
        self.lu = spla.splu((K + sparse.diags(reg)).tocsc(), permc_spec="MMD_AT_PLUS_A",
                            diag_pivot_thresh=0.0, options={"SymmetricMode": True})

    def solve(self, rx, ry, rz):
        n, p, zoff = self.n, self.p, self.zoff
        rS = rz[self.S]
        rx = rx + np.bincount(self.S_col, self.S_val * rS / self.dS, minlength=n)
        rhs = np.concatenate([rx, ry, rz[self.keep], np.zeros(self.nq)])
        sol = self.lu.solve(rhs)
        tol = 1e-14 * (1 + np.linalg.norm(rhs, np.inf))
        for _ in range(self.st.refine):
            res = rhs - self.K @ sol
            if np.linalg.norm(res, np.inf) < tol:
                break
            sol = sol + self.lu.solve(res)
        dx = sol[:n]
        dz = np.empty(self.m)
        dz[self.keep] = sol[zoff:zoff + self.mk]
        dz[self.S] = (self.S_val * dx[self.S_col] - rS) / self.dS
        return dx, sol[n:n + p], dz


def solve_socp(c, G, h, dims: ConeDims, A=None, b=None, settings: IPMSettings | None = None) -> IPMResult:
    st = settings or IPMSettings()
    c = np.asarray(c, float)
    n = len(c)
    G = sparse.csr_matrix(G)
    G.sum_duplicates()
    G.eliminate_zeros()
    h = np.asarray(h, float)
    if A is None:
        A = sparse.csr_matrix((0, n))
        b = np.zeros(0)
    A = sparse.csr_matrix(A)
    b = np.asarray(b, float)
    p, m = A.shape[0], G.shape[0]
    if m != dims.m:
        raise ValueError(f"G has {m} rows but the cones need {dims.m}")
    cones = _Cones(dims)
    kkt = _KKT(A, G, cones, st)

    def factor(scaling):
        kkt.factor(scaling)
        return kkt.solve

    def fail(status, it, x=None, y=None, z=None, s=None):
        x = np.full(n, np.nan) if x is None else x
        return IPMResult(status, x, np.zeros(p) if y is None else y, np.zeros(m) if z is None else z,
                         np.zeros(m) if s is None else s, np.nan, np.nan, it, np.inf, np.inf, np.inf)

    try:
        solve = factor(None)
        x, _, zz = solve(np.zeros(n), b, h)
        s = cones.shift_interior(-zz)
        _, y, z = solve(-c, np.zeros(p), np.zeros(m))
        z = cones.shift_interior(z)
    except RuntimeError:
        return fail("numerical", 0)
    tau = kappa = 1.0
    nb, nh, nc = max(1.0, np.linalg.norm(b)), max(1.0, np.linalg.norm(h)), max(1.0, np.linalg.norm(c))
    best = None
    stalls = 0
    status = "max_iter"
    it = 0
    for it in range(st.max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = s + G @ x - h * tau
        cx, by_hz = c @ x, b @ y + h @ z
        rt = kappa + cx + by_hz
        pobj, dobj = cx / tau, -by_hz / tau
        gap = (s @ z) / tau**2
        pres = max(np.linalg.norm(ry) / nb, np.linalg.norm(rz) / nh) / tau
        dres = np.linalg.norm(rx) / nc / tau
        if dobj > 0:
            relgap = gap / dobj
        elif pobj < 0:
            relgap = gap / -pobj
        else:
            relgap = np.inf
        if pres < st.feastol and dres < st.feastol and (gap < st.abstol or relgap < st.reltol):
            status = "optimal"
            break
        # infeasibility certificates
        if by_hz < 0 and np.linalg.norm(A.T @ y + G.T @ z) / -by_hz < st.feastol:
            status = "infeasible"
            break
        if cx < 0 and max(np.linalg.norm(A @ x), np.linalg.norm(G @ x + s)) / -cx < st.feastol:
            status = "unbounded"
            break
        if pres < st.feastol_inacc and dres < st.feastol_inacc and \
                (gap < st.gaptol_inacc or relgap < st.gaptol_inacc):
            best = (x.copy(), y.copy(), z.copy(), s.copy(), tau, pres, dres, gap)
        if it == st.max_iter:
            break
        try:
            W = _Scaling(cones, s, z)
            solve = factor(W)
        except (RuntimeError, FloatingPointError, ValueError):
            status = "numerical"
            break
        lam = W.lam
        mu = (s @ z + tau * kappa) / (dims.degree + 1)
        x1, y1, z1 = solve(-c, b, h)
        den = c @ x1 + b @ y1 + h @ z1 - kappa / tau

        def direction(dx_, dy_, dz_, dt_, ds_, dk_):
            x2, y2, z2 = solve(-dx_, -dy_, -dz_ - W.apply(cones.jdiv(lam, ds_)))
            dtau = (-dt_ - dk_ / tau - c @ x2 - b @ y2 - h @ z2) / den
            dx, dy, dz = x2 + dtau * x1, y2 + dtau * y1, z2 + dtau * z1
            dsv = W.apply(cones.jdiv(lam, ds_) - W.apply(dz))
            dk = (dk_ - kappa * dtau) / tau
            return dx, dy, dz, dsv, dtau, dk

        def steplen(dz, dsv, dtau, dk):
            a = min(cones.max_step(s, dsv), cones.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dk < 0:
                a = min(a, -kappa / dk)
            return a

        aff = direction(rx, ry, rz, rt, -cones.jprod(lam, lam), -kappa * tau)
        a_aff = min(1.0, steplen(aff[2], aff[3], aff[4], aff[5]))
        sigma = min(1.0, max(0.0, (1.0 - a_aff))) ** 3
        ds_corr = -cones.jprod(lam, lam) - cones.jprod(W.apply(aff[3], inverse=True), W.apply(aff[2])) \
            + sigma * mu * cones.e
        dk_corr = -kappa * tau - aff[5] * aff[4] + sigma * mu
        g = 1.0 - sigma
        dx, dy, dz, dsv, dtau, dk = direction(g * rx, g * ry, g * rz, g * rt, ds_corr, dk_corr)
        alpha = min(1.0, st.step * steplen(dz, dsv, dtau, dk))
        if not np.isfinite(alpha) or alpha <= 1e-14 or not np.all(np.isfinite(dx)):
            status = "numerical"
            break
        stalls = stalls + 1 if alpha < 1e-3 else 0
        if stalls >= 3:
            status = "numerical"
            break
        x, y, z, s = x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * dsv
        tau, kappa = tau + alpha * dtau, kappa + alpha * dk
        logger.debug("it %d pobj %.6e dobj %.6e pres %.1e dres %.1e gap %.1e a %.3f", it, pobj, dobj,
                     pres, dres, gap, alpha)
    if status in ("infeasible", "unbounded"):
        scale = -(b @ y + h @ z) if status == "infeasible" else -(c @ x)
        return IPMResult(status, x / scale, y / scale, z / scale, s / scale, np.nan, np.nan, it,
                         np.inf, np.inf, np.inf)
    if status in ("numerical", "max_iter") and best is not None:
        x, y, z, s, tau, pres, dres, gap = best
        status = "inaccurate"
    return IPMResult(status, x / tau, y / tau, z / tau, s / tau, float(c @ x / tau),
                     float(-(b @ y + h @ z) / tau), it, float(pres), float(dres), float(gap))
