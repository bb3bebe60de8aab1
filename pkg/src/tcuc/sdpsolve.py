"""Dense primal-dual SDP solver on a homogeneous self-dual embedding.

Problem form (block-diagonal variable X, optional free scalars x_f)::

    primal:  minimize   sum_j <C_j, X_j> + c_f' x_f
             subject to sum_j <A_ij, X_j> + (F x_f)_i = b_i,   X_j psd
    dual:    maximize   b' y
             subject to Z_j = C_j - sum_i y_i A_ij  psd,  F' y = c_f

Internally the dual is treated as the cone LP ``min -b'y  s.t. G y + s = h,
s in K`` with the primal as its Lagrange dual, embedded homogeneously with
variables (tau, kappa). Steps use Nesterov-Todd scaling, a Mehrotra-type
predictor-corrector and scaling updates carried out in the scaled space.
Blocks of order one are handled as a nonnegative orthant.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla


class SDPStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    INACCURATE = "inaccurate"


@dataclass
class SDPProblem:
    block_sizes: list[int]
    C: list[np.ndarray]
    A: list[np.ndarray]  # per block, shape (m, n_j, n_j)
    b: np.ndarray
    F: np.ndarray | None = None  # (m, n_free)
    c_free: np.ndarray | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        m = self.b.size
        if len(self.C) != len(self.block_sizes) or len(self.A) != len(self.block_sizes):
            raise ValueError("one C and one A stack per block expected")
        for j, nj in enumerate(self.block_sizes):
            if nj < 1:
                raise ValueError("block sizes must be >= 1")
            self.C[j] = np.asarray(self.C[j], dtype=float).reshape(nj, nj)
            self.A[j] = np.asarray(self.A[j], dtype=float).reshape(m, nj, nj)
            scale = 1.0 + np.abs(self.A[j]).max(initial=0.0) + np.abs(self.C[j]).max(initial=0.0)
            if (np.abs(self.C[j] - self.C[j].T).max(initial=0.0) > 1e-12 * scale
                    or np.abs(self.A[j] - self.A[j].transpose(0, 2, 1)).max(initial=0.0) > 1e-12 * scale):
                raise ValueError(f"block {j}: data matrices must be symmetric")
        if self.F is None:
            self.F = np.zeros((m, 0))
            self.c_free = np.zeros(0)
        self.F = np.asarray(self.F, dtype=float).reshape(m, -1)
        self.c_free = np.asarray(self.c_free, dtype=float).reshape(-1)
        if self.F.shape[1] != self.c_free.size:
            raise ValueError("F and c_free disagree")

    @property
    def m(self) -> int:
        return self.b.size

    def dual_slack(self, y) -> list[np.ndarray]:
        return [C - np.tensordot(y, A, axes=1) for C, A in zip(self.C, self.A)]

    def apply(self, X) -> np.ndarray:
        """A(X) = (sum_j <A_ij, X_j>)_i."""
        return sum(np.tensordot(A, Xj, axes=([1, 2], [0, 1])) for A, Xj in zip(self.A, X))

    def primal_objective(self, X, xf=None) -> float:
        val = sum(float(np.sum(C * Xj)) for C, Xj in zip(self.C, X))
        if xf is not None and xf.size:
            val += float(self.c_free @ xf)
        return val


@dataclass
class SDPOutcome:
    status: SDPStatus
    X: list[np.ndarray]
    y: np.ndarray
    Z: list[np.ndarray]
    x_free: np.ndarray
    primal_objective: float
    dual_objective: float
    certificate: object = None  # ray y (primal infeasible) or (X, x_f) (dual infeasible)
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.dual_objective


# ---------------------------------------------------------------------------
# cone bookkeeping

class _Cone:
    """Orthant of dimension nl followed by groups of equal-order psd blocks.

    Vectors are flat: the orthant part, then each group's blocks stored as
    full row-major matrices, so dot products equal trace inner products."""

    def __init__(self, sizes):
        self.sizes = list(sizes)
        self.nl = sum(1 for s in sizes if s == 1)
        orders = sorted({s for s in sizes if s > 1})
        self.groups = []  # (order, count, offset)
        self.where = [None] * len(sizes)
        off = self.nl
        li = 0
        for j, s in enumerate(sizes):
            if s == 1:
                self.where[j] = (-1, li)
                li += 1
        for gi, order in enumerate(orders):
            members = [j for j, s in enumerate(sizes) if s == order]
            for pos, j in enumerate(members):
                self.where[j] = (gi, pos)
            self.groups.append((order, len(members), off))
            off += len(members) * order * order
        self.dim = off
        self.degree = self.nl + sum(o * c for o, c, _ in self.groups)

    def gview(self, v, gi):
        order, count, off = self.groups[gi]
        return v[off: off + count * order * order].reshape((count, order, order) + v.shape[1:])

    def pack(self, blocks) -> np.ndarray:
        """Pack a list of per-block arrays shaped (..., n_j, n_j)."""
        lead = np.shape(blocks[0])[:-2]
        out = np.zeros((self.dim,) + lead)
        for j, B in enumerate(blocks):
            gi, pos = self.where[j]
            B = np.asarray(B)
            if gi < 0:
                out[pos] = B[..., 0, 0]
            else:
                order, count, off = self.groups[gi]
                start = off + pos * order * order
                out[start: start + order * order] = np.moveaxis(B.reshape(lead + (order * order,)), -1, 0)
        return out

    def unpack(self, v) -> list[np.ndarray]:
        out = []
        for j, s in enumerate(self.sizes):
            gi, pos = self.where[j]
            if gi < 0:
                out.append(np.array([[v[pos]]]))
            else:
                out.append(self.gview(v, gi)[pos].copy())
        return out

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dim)
        e[: self.nl] = 1.0
        for gi, (order, count, off) in enumerate(self.groups):
            self.gview(e, gi)[:] = np.eye(order)
        return e

    def min_eig(self, v) -> float:
        vals = [v[: self.nl].min(initial=np.inf)]
        for gi in range(len(self.groups)):
            B = self.gview(v, gi)
            vals.append(np.linalg.eigvalsh(0.5 * (B + B.transpose(0, 2, 1))).min())
        return float(min(vals))

    def symmetrize(self, v):
        for gi in range(len(self.groups)):
            B = self.gview(v, gi)
            B[:] = 0.5 * (B + B.transpose(0, 2, 1))
        return v


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^{-T} s = lambda (diagonal)."""

    def __init__(self, cone: _Cone, d, lam_l, R, Rinv, lam_g):
        self.cone, self.d, self.lam_l, self.R, self.Rinv, self.lam_g = cone, d, lam_l, R, Rinv, lam_g

    @classmethod
    def from_pair(cls, cone, s, z):
        sl, zl = s[: cone.nl], z[: cone.nl]
        d = np.sqrt(sl / zl)
        lam_l = np.sqrt(sl * zl)
        R, Rinv, lam_g = [], [], []
        for gi in range(len(cone.groups)):
            r, ri, lam = _nt_blocks(cone.gview(s, gi), cone.gview(z, gi))
            R.append(r)
            Rinv.append(ri)
            lam_g.append(lam)
        return cls(cone, d, lam_l, R, Rinv, lam_g)

    def compose(self, inner: "_Scaling") -> "_Scaling":
        R = [a @ b for a, b in zip(self.R, inner.R)]
        Rinv = [b @ a for a, b in zip(self.Rinv, inner.Rinv)]
        return _Scaling(self.cone, self.d * inner.d, inner.lam_l, R, Rinv, inner.lam_g)

    def lam(self) -> np.ndarray:
        v = np.zeros(self.cone.dim)
        v[: self.cone.nl] = self.lam_l
        for gi, lam in enumerate(self.lam_g):
            B = self.cone.gview(v, gi)
            idx = np.arange(lam.shape[1])
            B[:, idx, idx] = lam
        return v

    def _apply(self, v, l_op, left, right):
        cone = self.cone
        out = np.empty_like(v)
        out[: cone.nl] = l_op(v[: cone.nl])
        for gi in range(len(cone.groups)):
            B = cone.gview(v, gi)
            L, Rm = left[gi], right[gi]
            if B.ndim == 4:  # columns of a matrix: (count, n, n, k)
                Bt = np.moveaxis(B, -1, 0)
                res = np.moveaxis(L[None] @ Bt @ Rm[None], 0, -1)
            else:
                res = L @ B @ Rm
            cone.gview(out, gi)[:] = res
        return out

    def W(self, v):  # R^T V R
        d = self.d if v.ndim == 1 else self.d[:, None]
        return self._apply(v, lambda u: d * u, [r.transpose(0, 2, 1) for r in self.R], self.R)

    def WT(self, v):  # R V R^T
        d = self.d if v.ndim == 1 else self.d[:, None]
        return self._apply(v, lambda u: d * u, self.R, [r.transpose(0, 2, 1) for r in self.R])

    def Winv(self, v):  # R^{-T} V R^{-1}
        d = self.d if v.ndim == 1 else self.d[:, None]
        return self._apply(v, lambda u: u / d, [r.transpose(0, 2, 1) for r in self.Rinv], self.Rinv)

    def WinvT(self, v):  # R^{-1} V R^{-T}
        d = self.d if v.ndim == 1 else self.d[:, None]
        return self._apply(v, lambda u: u / d, self.Rinv, [r.transpose(0, 2, 1) for r in self.Rinv])

    # Jordan algebra at the scaled point lambda
    def lam_prod(self, v):
        cone = self.cone
        out = np.empty_like(v)
        out[: cone.nl] = self.lam_l * v[: cone.nl]
        for gi, lam in enumerate(self.lam_g):
            B = cone.gview(v, gi)
            cone.gview(out, gi)[:] = 0.5 * (lam[:, :, None] + lam[:, None, :]) * B
        return out

    def lam_div(self, v):
        cone = self.cone
        out = np.empty_like(v)
        out[: cone.nl] = v[: cone.nl] / self.lam_l
        for gi, lam in enumerate(self.lam_g):
            B = cone.gview(v, gi)
            cone.gview(out, gi)[:] = 2.0 * B / (lam[:, :, None] + lam[:, None, :])
        return out

    def max_step(self, dv) -> float:
        """Largest alpha with lambda + alpha*dv in the cone."""
        cone = self.cone
        a = _ratio(self.lam_l, dv[: cone.nl])
        for gi, lam in enumerate(self.lam_g):
            B = cone.gview(dv, gi)
            isq = 1.0 / np.sqrt(lam)
            Ms = isq[:, :, None] * B * isq[:, None, :]
            emin = np.linalg.eigvalsh(0.5 * (Ms + Ms.transpose(0, 2, 1))).min()
            if emin < 0:
                a = min(a, -1.0 / emin)
        return a


def _ratio(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _safe_cholesky(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, Q = np.linalg.eigh(S)
        floor = 1e-14 * np.maximum(np.abs(w).max(axis=-1, keepdims=True), 1e-300)
        w = np.maximum(w, floor)
        return np.linalg.cholesky((Q * w[..., None, :]) @ Q.transpose(0, 2, 1))


def _nt_blocks(S, Z):
    S = 0.5 * (S + S.transpose(0, 2, 1))
    Z = 0.5 * (Z + Z.transpose(0, 2, 1))
    Ls = _safe_cholesky(S)
    Lz = _safe_cholesky(Z)
    U, lam, Vt = np.linalg.svd(Lz.transpose(0, 2, 1) @ Ls)
    isq = 1.0 / np.sqrt(lam)
    R = Ls @ Vt.transpose(0, 2, 1) * isq[:, None, :]
    Rinv = isq[:, :, None] * (U.transpose(0, 2, 1) @ Lz.transpose(0, 2, 1))
    return R, Rinv, lam


# ---------------------------------------------------------------------------
# embedding solver

class _KKTSolver:
    """Solves [[0, A', G'], [A, 0, 0], [G, 0, -W'W]] (x, y, z) = (bx, by, bz)
    returning (x, y, W z)."""

    def __init__(self, G, A, scaling: _Scaling):
        self.sc = scaling
        self.Gs = scaling.WinvT(G)
        H = self.Gs.T @ self.Gs
        self.A = A
        n, p = H.shape[0], A.shape[0]
        self.n = n
        self.regularized = False
        if p == 0:
            try:
                self.chol = sla.cho_factor(H, check_finite=False)
            except np.linalg.LinAlgError:
                self.regularized = True
                self.chol = sla.cho_factor(H + 1e-12 * max(1.0, np.trace(H) / n) * np.eye(n), check_finite=False)
            self.lu = None
        else:
            K = np.zeros((n + p, n + p))
            K[:n, :n] = H
            K[:n, n:] = A.T
            K[n:, :n] = A
            self.lu = sla.lu_factor(K, check_finite=False)

    def _base(self, rx, ry):
        if self.lu is None:
            return sla.cho_solve(self.chol, rx, check_finite=False), np.zeros(0)
        sol = sla.lu_solve(self.lu, np.concatenate([rx, ry]), check_finite=False)
        return sol[: self.n], sol[self.n:]

    def solve(self, bx, by, bz_scaled, refine: int = 2):
        dx, dy = self._base(bx + self.Gs.T @ bz_scaled, by)
        dz = self.Gs @ dx - bz_scaled
        # refinement against the unreduced equations G'W^{-1}dz + A'dy = bx, A dx = by
        for _ in range(refine):
            rx = bx - self.Gs.T @ dz - self.A.T @ dy
            ry = by - self.A @ dx
            if max(np.abs(rx).max(initial=0.0), np.abs(ry).max(initial=0.0)) == 0.0:
                break
            ex, ey = self._base(rx, ry)
            dx, dy = dx + ex, dy + ey
            dz = self.Gs @ dx - bz_scaled
        return dx, dy, dz


def _start_kkt(G, A):
    n, p = G.shape[1], A.shape[0]
    H = G.T @ G
    K = np.zeros((n + p, n + p))
    K[:n, :n] = H + 1e-12 * max(1.0, np.trace(H) / max(n, 1)) * np.eye(n)
    K[:n, n:] = A.T
    K[n:, :n] = A
    return sla.lu_factor(K, check_finite=False)


def _hsd(c, G, h, A, b, cone: _Cone, gap_tol, feas_tol, maxiter, ratio=1e6):
    """Core embedding iteration on  min c'x  s.t.  Gx + s = h, Ax = b, s in K."""
    nx, p = c.size, A.shape[0]
    e = cone.identity()
    lu = _start_kkt(G, A)
    sol = sla.lu_solve(lu, np.concatenate([G.T @ h, b]), check_finite=False)
    x, y = sol[:nx], sol[nx:]
    s = h - G @ x
    sol = sla.lu_solve(lu, np.concatenate([-c, np.zeros(p)]), check_finite=False)
    z = G @ sol[:nx]
    for v in (s, z):
        cone.symmetrize(v)
        lo = cone.min_eig(v)
        nrm = max(1.0, float(np.linalg.norm(v)))
        if lo < 1e-8 * nrm:
            v += (1.0 + max(0.0, -lo)) * e
    tau = kappa = 1.0
    sc = _Scaling.from_pair(cone, s, z)

    resx0 = max(1.0, float(np.linalg.norm(c)))
    resyz0 = max(1.0, float(np.sqrt(np.dot(b, b) + np.dot(h, h))))
    deg = cone.degree
    history = []
    status = "iter_limit"
    best = None

    for it in range(maxiter + 1):
        lam = sc.lam()
        F1 = A.T @ y + G.T @ z + c * tau
        F2 = -A @ x + b * tau
        F3 = -G @ x - s + h * tau
        cx, by, hz = float(c @ x), float(b @ y), float(h @ z)
        F4 = -cx - by - hz - kappa
        gap = float(s @ z)
        mu = (gap + tau * kappa) / (deg + 1)

        pres = float(np.sqrt(F2 @ F2 + F3 @ F3)) / tau / resyz0
        dres = float(np.linalg.norm(F1)) / tau / resx0
        pcost, dcost = cx / tau, -(by + hz) / tau
        rgap = max(abs(pcost - dcost), gap / tau ** 2) / (1.0 + abs(dcost))
        # infeasibility measures (rays normalized by their objective)
        pinf = dinf = np.inf
        if hz + by < 0:
            pinf = float(np.linalg.norm(A.T @ y + G.T @ z)) / resx0 / (-(hz + by))
        if cx < 0:
            dinf = float(np.sqrt(np.linalg.norm(A @ x) ** 2 + np.linalg.norm(G @ x + s) ** 2)) / resyz0 / (-cx)
        history.append(dict(it=it, pcost=pcost, dcost=dcost, gap=gap, mu=mu, pres=pres, dres=dres,
                            tau=tau, kappa=kappa, comp=gap + tau * kappa))
        score = max(pres, dres, rgap)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), z.copy(), s.copy(), tau, kappa, it, max(pres, dres), rgap)
        elif best[0] < 1e-5 and score > 1e3 * best[0]:
            status = "diverging"  # rounding has taken over; fall back to the best iterate
            break

        if pres <= feas_tol and dres <= feas_tol and rgap <= gap_tol and tau >= ratio * kappa:
            status = "optimal"
            break
        if pinf <= feas_tol and kappa >= ratio * tau:
            status = "primal_infeasible"  # of the cone LP
            break
        if dinf <= feas_tol and kappa >= ratio * tau:
            status = "dual_infeasible"
            break
        if it == maxiter:
            break

        try:
            kkt = _KKTSolver(G, A, sc)
        except (np.linalg.LinAlgError, ValueError):
            status = "numerical"
            break
        hs = sc.WinvT(h)
        x1, y1, z1 = kkt.solve(-c, b, hs)
        coef = float(z1 @ z1) + kappa / tau
        F3s = sc.WinvT(F3)

        def direction(sigma, eta, corr, corr_t):
            ds = sc.lam_div(sigma * mu * e - sc.lam_prod(lam) - corr)
            x0, y0, z0 = kkt.solve(-eta * F1, eta * F2, eta * F3s - ds)
            dtau = (-eta * F4 + c @ x0 + b @ y0 + hs @ z0 + (sigma * mu - tau * kappa - corr_t) / tau) / coef
            dx = x0 + dtau * x1
            dy = y0 + dtau * y1
            dz = z0 + dtau * z1
            dsv = ds - dz
            dkappa = (sigma * mu - tau * kappa - corr_t - kappa * dtau) / tau
            return dx, dy, dz, dsv, dtau, dkappa

        def steplen(d):
            _, _, dz, dsv, dtau, dkappa = d
            a = min(sc.max_step(dz), sc.max_step(dsv))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        aff = direction(0.0, 1.0, 0.0, 0.0)
        a_aff = min(1.0, steplen(aff))
        sigma = min(1.0, (1.0 - a_aff) ** 3)
        corr = _jordan(cone, aff[3], aff[2])
        d = direction(sigma, 1.0 - sigma, corr, aff[4] * aff[5])
        alpha = min(1.0, 0.99 * steplen(d))
        if not np.isfinite(alpha) or alpha < 1e-10:
            status = "stalled"
            break
        dx, dy, dz, dsv, dtau, dkappa = d
        x = x + alpha * dx
        y = y + alpha * dy
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        s = cone.symmetrize(s + alpha * sc.WT(dsv))
        z = cone.symmetrize(z + alpha * sc.Winv(dz))
        st = cone.symmetrize(lam + alpha * dsv)
        zt = cone.symmetrize(lam + alpha * dz)
        try:
            sc = sc.compose(_Scaling.from_pair(cone, st, zt))
        except (np.linalg.LinAlgError, FloatingPointError):
            status = "numerical"
            break

    if status not in ("optimal", "primal_infeasible", "dual_infeasible"):
        _, x, y, z, s, tau, kappa, _, feas, rgap = best
        if feas <= 100 * feas_tol and rgap <= gap_tol and tau >= ratio * kappa:
            status = "optimal_reduced"
    return dict(status=status, x=x, y=y, z=z, s=s, tau=tau, kappa=kappa,
                iterations=len(history) - 1, history=history)


def _jordan(cone, u, v):
    out = np.empty_like(u)
    out[: cone.nl] = u[: cone.nl] * v[: cone.nl]
    for gi in range(len(cone.groups)):
        U, V = cone.gview(u, gi), cone.gview(v, gi)
        P = U @ V
        cone.gview(out, gi)[:] = 0.5 * (P + P.transpose(0, 2, 1))
    return out


# ---------------------------------------------------------------------------
# public API

def _cone_data(p: SDPProblem):
    cone = _Cone(p.block_sizes)
    G = cone.pack([A for A in p.A])  # (dim, m): column i holds A_i
    h = cone.pack(p.C)
    return cone, G, h


def _dependent_rows(p: SDPProblem, G):
    """Orthonormal bases (range, null) of the y-space for the stacked map
    y -> (sum_i y_i A_i, F'y); the null part is empty for independent data."""
    M = np.vstack([G, p.F.T])
    _, sv, Vt = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(sv > 1e-10 * max(sv.max(initial=0.0), 1e-300)))
    return Vt[:rank].T, Vt[rank:].T


def solve_sdp(p: SDPProblem, gap_tol: float = 1e-7, cert_tol: float = 1e-6,
              feas_tol: float = 1e-8, maxiter: int = 100) -> SDPOutcome:
    cone, G, h = _cone_data(p)
    keep, null = _dependent_rows(p, G)
    if null.shape[1] == 0 or keep.shape[1] == 0:
        return _solve_embedded(p, cone, G, h, gap_tol, cert_tol, feas_tol, maxiter)
    # a direction y with sum y_i A_i = 0 and F'y = 0: if b sees it the dual is
    # unbounded along it, otherwise it can be projected out
    leak = null @ (null.T @ p.b)
    if np.linalg.norm(leak) > 1e-9 * max(1.0, float(np.linalg.norm(p.b))):
        ray = leak / float(p.b @ leak)
        if verify_primal_infeasibility(p, ray, cert_tol):
            return SDPOutcome(SDPStatus.PRIMAL_INFEASIBLE, [np.zeros((n, n)) for n in p.block_sizes], ray,
                              p.dual_slack(ray), np.zeros(p.F.shape[1]), np.nan, np.nan, certificate=ray,
                              info=dict(raw_status="dependent_rows", history=[]))
    red = SDPProblem(list(p.block_sizes), [C.copy() for C in p.C],
                     [np.tensordot(keep.T, A, axes=1) for A in p.A], keep.T @ p.b, keep.T @ p.F, p.c_free.copy())
    out = solve_sdp(red, gap_tol, cert_tol, feas_tol, maxiter)
    out.info["reduced_rows"] = null.shape[1]
    if out.status == SDPStatus.PRIMAL_INFEASIBLE:
        ray = keep @ out.certificate
        ok = verify_primal_infeasibility(p, ray, cert_tol)
        out.certificate = ray if ok else None
        out.y = ray
        out.status = out.status if ok else SDPStatus.INACCURATE
        return out
    out.y = keep @ out.y
    out.Z = p.dual_slack(out.y)
    if out.status in (SDPStatus.OPTIMAL, SDPStatus.INACCURATE):
        out.dual_objective = float(p.b @ out.y)
        out.primal_objective = p.primal_objective(out.X, out.x_free)
        out.info.update(residuals(p, out))
    return out


def _solve_embedded(p: SDPProblem, cone, G, h, gap_tol, cert_tol, feas_tol, maxiter) -> SDPOutcome:
    res = _hsd(-p.b, G, h, p.F.T, p.c_free, cone, gap_tol, feas_tol, maxiter)
    st = res["status"]
    tau, kappa = res["tau"], res["kappa"]
    y, z, w = res["x"], res["z"], res["y"]
    info = dict(tau=tau, kappa=kappa, history=res["history"], raw_status=st)
    info["reduced_accuracy"] = st == "optimal_reduced"
    if st in ("optimal", "optimal_reduced"):
        y = y / tau
        X = cone.unpack(z / tau)
        xf = w / tau
        Z = p.dual_slack(y)
        out = SDPOutcome(SDPStatus.OPTIMAL, X, y, Z, xf, p.primal_objective(X, xf), float(p.b @ y),
                         iterations=res["iterations"], info=info)
        info.update(residuals(p, out))
        return out
    if st == "dual_infeasible":
        # cone-LP unbounded: improving ray of the dual, i.e. the primal is infeasible
        ray = y / float(p.b @ y)
        ok = verify_primal_infeasibility(p, ray, cert_tol)
        status = SDPStatus.PRIMAL_INFEASIBLE if ok else SDPStatus.INACCURATE
        return SDPOutcome(status, [np.zeros((n, n)) for n in p.block_sizes], y, p.dual_slack(y),
                          np.zeros(p.F.shape[1]), np.nan, np.nan, certificate=ray if ok else None,
                          iterations=res["iterations"], info=info)
    if st == "primal_infeasible":
        scale = -float(h @ z + p.c_free @ w)
        Xr = cone.unpack(z / scale)
        xfr = w / scale
        ok = verify_dual_infeasibility(p, Xr, xfr, cert_tol)
        status = SDPStatus.DUAL_INFEASIBLE if ok else SDPStatus.INACCURATE
        return SDPOutcome(status, Xr, np.zeros(p.m), [np.zeros((n, n)) for n in p.block_sizes], xfr,
                          np.nan, np.nan, certificate=(Xr, xfr) if ok else None,
                          iterations=res["iterations"], info=info)
    # best iterate, scaled back
    y = y / tau
    X = cone.unpack(z / tau)
    xf = w / tau
    out = SDPOutcome(SDPStatus.INACCURATE, X, y, p.dual_slack(y), xf, p.primal_objective(X, xf),
                     float(p.b @ y), iterations=res["iterations"], info=info)
    info.update(residuals(p, out))
    return out


def residuals(p: SDPProblem, out: SDPOutcome) -> dict:
    pr = p.apply(out.X) + p.F @ out.x_free - p.b
    dr = p.F.T @ out.y - p.c_free
    return {
        "primal_residual": float(np.abs(pr).max(initial=0.0)),
        "dual_residual": float(np.abs(dr).max(initial=0.0)),
        "min_eig_X": min(float(np.linalg.eigvalsh(Xj).min()) for Xj in out.X),
        "min_eig_Z": min(float(np.linalg.eigvalsh(0.5 * (Zj + Zj.T)).min()) for Zj in out.Z),
        "gap": abs(out.primal_objective - out.dual_objective),
    }


def _data_scale(p: SDPProblem) -> float:
    return 1.0 + max(np.abs(A).max(initial=0.0) for A in p.A)


def verify_primal_infeasibility(p: SDPProblem, ray, tol: float = 1e-6) -> bool:
    """Check b'ray > 0, -sum ray_i A_i psd and F'ray = 0, independently of the solver."""
    ray = np.asarray(ray, dtype=float)
    bt = float(p.b @ ray)
    if not bt > 0:
        return False
    ray = ray / bt
    scale = _data_scale(p) * (1.0 + np.abs(ray).max())
    for A in p.A:
        M = -np.tensordot(ray, A, axes=1)
        if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -tol * scale:
            return False
    return bool(np.abs(p.F.T @ ray).max(initial=0.0) <= tol * scale)


def verify_dual_infeasibility(p: SDPProblem, X, xf, tol: float = 1e-6) -> bool:
    """Check <C,X> + c_f'x_f < 0, A(X) + F x_f = 0 and X psd."""
    obj = p.primal_objective(X, xf)
    if not obj < 0:
        return False
    X = [Xj / -obj for Xj in X]
    xf = np.asarray(xf) / -obj
    scale = _data_scale(p) * (1.0 + max(np.abs(Xj).max() for Xj in X))
    if any(np.linalg.eigvalsh(0.5 * (Xj + Xj.T)).min() < -tol * scale for Xj in X):
        return False
    return bool(np.abs(p.apply(X) + p.F @ xf).max(initial=0.0) <= tol * scale)


# ---------------------------------------------------------------------------
# sparse text dump

def dump_sdp(p: SDPProblem, path) -> None:
    """Write the problem in SDPA sparse format.

    SDPA solves  min c'x  s.t.  sum_i F_i x_i - F_0 psd; we write c = -b,
    F_0 = -C, F_i = -A_i so that x coincides with our dual vector y.
    Lines after the header are ``matno block i j value`` (1-based, upper
    triangle). Free variables are not representable and are rejected.
    """
    if p.F.shape[1]:
        raise ValueError("free variables cannot be written in SDPA format")
    lines = [f'"tcuc sdp: max b\'y s.t. C - sum y_i A_i psd"', str(p.m), str(len(p.block_sizes)),
             " ".join(str(n) for n in p.block_sizes),
             " ".join(repr(float(-v)) for v in p.b)]
    for j, n in enumerate(p.block_sizes):
        mats = [p.C[j]] + list(p.A[j])
        for k, M in enumerate(mats):
            iu, ju = np.triu_indices(n)
            vals = M[iu, ju]
            for a, bb, v in zip(iu, ju, vals):
                if v != 0.0:
                    lines.append(f"{k} {j + 1} {a + 1} {bb + 1} {-float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_sdp(path) -> SDPProblem:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and ln[0] not in '"*']
    m = int(rows[0].split()[0])
    nb = int(rows[1].split()[0])
    sizes = [abs(int(t)) for t in rows[2].replace(",", " ").split()[:nb]]
    b = -np.array([float(t) for t in rows[3].replace(",", " ").split()[:m]])
    C = [np.zeros((n, n)) for n in sizes]
    A = [np.zeros((m, n, n)) for n in sizes]
    for ln in rows[4:]:
        k, j, i1, j1, v = ln.split()
        k, j, i1, j1, v = int(k), int(j) - 1, int(i1) - 1, int(j1) - 1, -float(v)
        M = C[j] if k == 0 else A[j][k - 1]
        M[i1, j1] = v
        M[j1, i1] = v
    return SDPProblem(sizes, C, A, b)
