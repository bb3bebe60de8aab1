"""Dense primal-dual interior-point solver for small convex QPs and LPs.

    minimize    1/2 x'Qx + q'x
    subject to  rows  a_i'x  (<= | = | >=)  rhs_i
                lb <= x <= ub

Mehrotra predictor-corrector on the normalized form ``Ax = b, Gx + s = h``.
Infeasibility is certified by a phase-one LP whose optimal dual is a Farkas
certificate.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"


class NotConvexError(ValueError):
    pass


@dataclass
class ConvexProgram:
    q: np.ndarray
    Q: np.ndarray | None = None
    A: np.ndarray | None = None
    senses: str = ""  # one of "<", "=", ">" per row
    rhs: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        n = self.q.size
        self.Q = np.zeros((n, n)) if self.Q is None else np.asarray(self.Q, dtype=float)
        self.A = np.zeros((0, n)) if self.A is None else np.asarray(self.A, dtype=float).reshape(-1, n)
        self.rhs = np.zeros(0) if self.rhs is None else np.asarray(self.rhs, dtype=float)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if len(self.senses) != self.A.shape[0] or self.rhs.size != self.A.shape[0]:
            raise ValueError("rows, senses and rhs disagree in length")
        if set(self.senses) - set("<=>"):
            raise ValueError("senses must be drawn from '<', '=', '>'")

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def normalized(self):
        """Return (A, b, G, h): equality rows and <= rows including bounds."""
        sen = np.array(list(self.senses), dtype="<U1")
        eq = sen == "="
        le = sen == "<"
        ge = sen == ">"
        G = [self.A[le], -self.A[ge]]
        h = [self.rhs[le], -self.rhs[ge]]
        eye = np.eye(self.n)
        fu = np.isfinite(self.ub)
        fl = np.isfinite(self.lb)
        G += [eye[fu], -eye[fl]]
        h += [self.ub[fu], -self.lb[fl]]
        return self.A[eq], self.rhs[eq], np.vstack(G), np.concatenate(h)


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray
    objective: float
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))  # equality duals
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))  # <= duals (normalized rows)
    certificate: np.ndarray | None = None  # w with w'[A;G] = 0, w'[b;h] > 0
    iterations: int = 0
    regularized: bool = False
    residuals: dict = field(default_factory=dict)


def check_psd(Q: np.ndarray, floor: float = -1e-10) -> bool:
    if Q.size == 0:
        return True
    if not np.allclose(Q, Q.T, atol=1e-12 * (1 + np.abs(Q).max())):
        return False
    return np.linalg.eigvalsh(Q).min() >= floor * max(1.0, np.abs(Q).max())


def kkt_residuals(Q, q, A, b, G, h, x, y, z, s=None):
    """Scaled infinity-norm KKT residuals at (x, y, z)."""
    pres = 0.0
    if A.shape[0]:
        pres = np.abs(A @ x - b).max()
    if G.shape[0]:
        pres = max(pres, np.maximum(G @ x - h, 0.0).max())
    scale_p = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(h).max(initial=0.0))
    rd = Q @ x + q + A.T @ y + G.T @ z
    dres = np.abs(rd).max(initial=0.0) / (1.0 + np.abs(q).max(initial=0.0))
    slack = h - G @ x if s is None else s
    obj = 0.5 * x @ Q @ x + q @ x
    comp = abs(float(slack @ z)) / (1.0 + abs(obj))
    zneg = max(0.0, -z.min(initial=0.0))
    return {"primal": pres / scale_p, "dual": max(dres, zneg), "comp": comp}


class _KKT:
    """Factorization of [[H, A'], [A, -delta I]]."""

    def __init__(self, H, A, delta=0.0):
        n, p = H.shape[0], A.shape[0]
        K = np.zeros((n + p, n + p))
        K[:n, :n] = H
        K[:n, n:] = A.T
        K[n:, :n] = A
        K[n:, n:] = -delta * np.eye(p)
        self.n = n
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            self.lu = sla.lu_factor(K, check_finite=False)

    def solve(self, r1, r2):
        sol = sla.lu_solve(self.lu, np.concatenate([r1, r2]), check_finite=False)
        return sol[: self.n], sol[self.n:]


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def lagrange_dual_value(Q, q, A, b, G, h, y, z) -> float:
    """min_x of the Lagrangian at multipliers (y, z >= 0); -inf when unbounded below."""
    if np.any(z < 0):
        return -np.inf
    r = q + A.T @ y + G.T @ z
    const = -float(b @ y) - float(h @ z)
    if not np.any(Q):
        return const if np.abs(r).max(initial=0.0) <= 1e-9 * (1.0 + np.abs(q).max(initial=0.0)) else -np.inf
    w, *_ = np.linalg.lstsq(Q, -r, rcond=None)
    if np.abs(Q @ w + r).max(initial=0.0) > 1e-9 * (1.0 + np.abs(r).max(initial=0.0)):
        return -np.inf
    return const + 0.5 * float(r @ w)


def _ipm(Q, q, A, b, G, h, tol, maxiter, reg, log=None):
    n, p, m = q.size, A.shape[0], G.shape[0]
    Hreg = Q + reg * np.eye(n)
    scale_p = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(h).max(initial=0.0))

    # starting point: least-squares fit of Gx ~ h subject to Ax = b
    try:
        kkt = _KKT(Hreg + G.T @ G + 1e-8 * np.eye(n), A, 1e-12)
        x, y = kkt.solve(-q + G.T @ h, b)
    except (np.linalg.LinAlgError, ValueError, sla.LinAlgWarning):
        x, y = np.zeros(n), np.zeros(p)
    if not np.all(np.isfinite(x)):
        x, y = np.zeros(n), np.zeros(p)
    s = h - G @ x
    shift = max(0.0, -1.5 * s.min(initial=0.0)) + 1.0
    s = s + shift
    z = np.ones(m)

    info = {"iterations": 0, "diverged": False}
    hist = []
    for it in range(maxiter):
        info["iterations"] = it
        res = kkt_residuals(Q, q, A, b, G, h, x, y, z, s)
        res["comp"] = float(s @ z) / (1.0 + abs(0.5 * x @ Q @ x + q @ x))
        if max(res.values()) <= tol and np.all(G @ x - h <= tol * scale_p):
            return "optimal", x, y, z, s, info
        hist.append(res["primal"])
        if log is not None:
            log.append({"it": it, "primal_objective": float(0.5 * x @ Q @ x + q @ x),
                        "primal_residual": res["primal"],
                        "dual_value": lagrange_dual_value(Q, q, A, b, G, h, y, z)})
        if not np.all(np.isfinite(x)) or np.abs(z).max(initial=0.0) > 1e12 or np.abs(x).max(initial=0.0) > 1e14:
            info["diverged"] = True
            break
        if it >= 25 and hist[-1] > 0.5 * hist[-10] and res["primal"] > 1e3 * tol:
            info["diverged"] = True
            break

        rd = Q @ x + q + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ z) / max(m, 1)
        d = z / s
        H = Hreg + (G.T * d) @ G
        try:
            kkt = _KKT(H, A, 1e-14)
        except (np.linalg.LinAlgError, ValueError, sla.LinAlgWarning):
            break

        def direction(rc):
            r1 = -rd - G.T @ ((rc + z * ri) / s)
            dx, dy = kkt.solve(r1, -rp)
            dz = (rc + z * ri) / s + d * (G @ dx)
            ds = -ri - G @ dx
            return dx, dy, dz, ds

        # predictor
        dx, dy, dz, ds = direction(-s * z)
        a_aff = min(1.0, _max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / max(m, 1)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, dy, dz, ds = direction(-s * z + sigma * mu - ds * dz)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        if not np.isfinite(alpha) or alpha <= 0:
            break
        nxt = (x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * ds)
        if not all(np.all(np.isfinite(v)) for v in nxt) or nxt[3].min(initial=1.0) <= 0 or nxt[2].min(initial=1.0) <= 0:
            break  # accuracy exhausted; keep the last finite iterate
        x, y, z, s = nxt
    else:
        info["iterations"] = maxiter
    return "stalled", x, y, z, s, info


def _phase_one(A, b, G, h, tol, maxiter):
    """min 1'(r+ + r-) + 1't  s.t.  Ax + r+ - r- = b, Gx - t <= h, r, t >= 0."""
    n, p, m = G.shape[1] if G.size else A.shape[1], A.shape[0], G.shape[0]
    N = n + 2 * p + m
    c = np.concatenate([np.zeros(n), np.ones(2 * p + m)])
    A1 = np.hstack([A, np.eye(p), -np.eye(p), np.zeros((p, m))])
    G1 = np.hstack([G, np.zeros((m, 2 * p)), -np.eye(m)])
    Gb = np.hstack([np.zeros((2 * p + m, n)), -np.eye(2 * p + m)])
    G1 = np.vstack([G1, Gb])
    h1 = np.concatenate([h, np.zeros(2 * p + m)])
    status, w, y, z, s, info = _ipm(np.zeros((N, N)), c, A1, b, G1, h1, tol, maxiter, 1e-12)
    return status, float(c @ w), y, z[:m], info


def solve_convex(p: ConvexProgram, tol: float = 1e-8, maxiter: int = 200, log: list | None = None) -> SolveOutcome:
    """Pass a list as ``log`` to receive one record per iterate of the main solve
    (primal objective, primal residual, Lagrangian dual value)."""
    if not check_psd(p.Q):
        raise NotConvexError("objective matrix is not symmetric positive semidefinite")
    A, b, G, h = p.normalized()
    if np.any(p.lb > p.ub):
        bad = int(np.argmax(p.lb > p.ub))
        cert = _bound_certificate(p, A, G, bad)
        return SolveOutcome(Status.INFEASIBLE, np.zeros(p.n), np.nan, certificate=cert)

    # tiny diagonal curvature on linear-only directions keeps the KKT matrix regular
    reg = 1e-12 * max(1.0, np.abs(p.Q).max(initial=0.0))
    regularized = bool(np.any(np.abs(np.diag(p.Q)) == 0))
    status, x, y, z, s, info = _ipm(p.Q, p.q, A, b, G, h, tol, maxiter, reg, log)
    if status == "optimal":
        res = kkt_residuals(p.Q, p.q, A, b, G, h, x, y, z)
        return SolveOutcome(Status.OPTIMAL, x, p.objective(x), y, z, None, info["iterations"], regularized, res)

    # no convergence: decide between infeasible and numerical trouble
    st1, val1, y1, z1, _ = _phase_one(A, b, G, h, tol, maxiter)
    scale = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(h).max(initial=0.0))
    if st1 == "optimal" and val1 > 1e3 * tol * scale:
        cert = -np.concatenate([y1, z1])
        if verify_certificate(A, b, G, h, cert, tol=1e3 * tol):
            return SolveOutcome(Status.INFEASIBLE, x, np.nan, certificate=cert,
                                iterations=info["iterations"], regularized=regularized)
    if st1 == "optimal" and info["diverged"] and np.abs(x).max(initial=0.0) > 1e12:
        return SolveOutcome(Status.UNBOUNDED, x, p.objective(x), iterations=info["iterations"])
    res = kkt_residuals(p.Q, p.q, A, b, G, h, x, y, z)
    return SolveOutcome(Status.ITER_LIMIT, x, p.objective(x), y, z, None, info["iterations"], regularized, res)


def _bound_certificate(p, A, G, j):
    # rows of G are: '<' rows, '>' rows, finite ub, finite lb
    sen = np.array(list(p.senses), dtype="<U1")
    n_le = int(np.sum(sen == "<") + np.sum(sen == ">"))
    fu = np.flatnonzero(np.isfinite(p.ub))
    fl = np.flatnonzero(np.isfinite(p.lb))
    w = np.zeros(A.shape[0] + G.shape[0])
    w[A.shape[0] + n_le + int(np.searchsorted(fu, j))] = -1.0
    w[A.shape[0] + n_le + fu.size + int(np.searchsorted(fl, j))] = -1.0
    return w


def verify_certificate(A, b, G, h, w, tol=1e-6) -> bool:
    """Check w'[A;G] = 0, w_G <= 0 and w'[b;h] > 0, after normalizing w'[b;h] = 1."""
    p = A.shape[0]
    rhs = float(w[:p] @ b + w[p:] @ h)
    if not rhs > 0:
        return False
    w = w / rhs
    comb = A.T @ w[:p] + G.T @ w[p:]
    return bool(np.abs(comb).max(initial=0.0) <= tol * (1 + np.abs(w).max()) and w[p:].max(initial=0.0) <= tol)
