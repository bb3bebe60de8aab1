"""Quadratic lower envelope of generator cost curves and the non-revenue
power (NRP) lower bound used by the NRP cuts."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .convexsolve import ConvexProgram, Status, solve_convex


@dataclass(frozen=True)
class CostCurve:
    c2: float
    c1: float
    c0: float = 0.0

    def __call__(self, x):
        return self.c2 * np.square(x) + self.c1 * np.asarray(x) + self.c0

    def largest_root(self, level: float) -> float | None:
        """Largest x with C(x) = level, or None if the level is never reached."""
        a, b, c = self.c2, self.c1, self.c0 - level
        if a == 0.0:
            if b == 0.0:
                return math.inf if c == 0.0 else None
            return -c / b
        disc = b * b - 4 * a * c
        if disc < 0:
            return None
        return (-b + math.sqrt(disc)) / (2 * a)


@dataclass(frozen=True)
class EnvelopeQuadratic:
    a: float
    b: float
    c: float
    grid: tuple[float, ...] = ()    # points whose sum of f is maximized
    extra: tuple[float, ...] = ()   # further points where f <= min C was imposed

    def __call__(self, x):
        return self.c * np.square(x) + self.b * np.asarray(x) + self.a

    def variable_part(self, x):
        """f(x) - f(0); the part charged in the master objective."""
        return self.c * np.square(x) + self.b * np.asarray(x)

    def inverse_variable_part(self, level: float) -> float:
        """Largest x >= 0 with c x^2 + b x <= level (inf if f is flat)."""
        if level <= 0:
            return 0.0
        if self.c > 0:
            return (-self.b + math.sqrt(self.b * self.b + 4 * self.c * level)) / (2 * self.c)
        if self.b > 0:
            return level / self.b
        return math.inf


def default_grid(p_min: float, p_max: float, points: int = 101) -> np.ndarray:
    return np.linspace(p_min, p_max, points)


def _crossings(curves, lo, hi):
    """Points in [lo, hi] where two cost curves meet (the kinks of their minimum)."""
    out = []
    for p, q in itertools.combinations(curves, 2):
        d = CostCurve(p.c2 - q.c2, p.c1 - q.c1, p.c0 - q.c0)
        if d.c2 != 0.0:
            disc = d.c1 ** 2 - 4 * d.c2 * d.c0
            if disc >= 0:
                r = math.sqrt(disc)
                out += [(-d.c1 - r) / (2 * d.c2), (-d.c1 + r) / (2 * d.c2)]
        elif d.c1 != 0.0:
            out.append(-d.c0 / d.c1)
    return [x for x in out if lo < x < hi]


def _basis(X, span):
    t = np.asarray(X, dtype=float) / span
    return np.column_stack([np.ones_like(t), t, t * t])


def _optimal_vertex(obj, rows, cap, guess, keep=8):
    """Certified optimal vertex of  max obj'v  s.t.  rows v <= cap, v >= 0.

    With three variables an optimal vertex is fixed by three active
    constraints. Among the ones tightest at ``guess`` we look for a
    vertex that is feasible and whose active rows combine to the objective
    with nonnegative weights, which proves optimality. None if not found."""
    A = np.vstack([rows, -np.eye(3)])
    b = np.r_[cap, np.zeros(3)]
    scale = np.maximum(1.0, np.abs(b))
    order = np.argsort((b - A @ guess) / scale)[:keep]
    for idx in itertools.combinations(order, 3):
        B = A[list(idx)]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        v = np.linalg.solve(B, b[list(idx)])
        weights = np.linalg.solve(B.T, obj)
        if np.all(A @ v <= b + 1e-12 * scale) and weights.min() >= -1e-12 * max(1.0, np.abs(weights).max()):
            return np.maximum(v, 0.0)
    return None


def fit_lower_envelope(costs, grid, tol: float = 1e-9, refine: int = 10) -> EnvelopeQuadratic:
    """Tightest f = c x^2 + b x + a (a, b, c >= 0) below every cost curve on the grid,
    in the sense of the largest sum of f over the grid.

    f is a quadratic while the minimum of the curves has kinks where they
    cross, so f can rise above the minimum between grid points. Such points,
    found on a ``refine``-times finer grid and at the crossings, are added
    as constraints and the LP is solved again; the objective stays the sum
    over ``grid``. ``refine=1`` solves the plain grid LP."""
    curves = [c if isinstance(c, CostCurve) else CostCurve(*c) for c in costs]
    X = np.asarray(grid, dtype=float)
    if X.size < 3:
        raise ValueError("need at least three grid points")
    if any(cv.c2 < 0 for cv in curves):
        raise ValueError("cost curves must be convex (c2 >= 0)")

    def lower(pts):
        return np.min([cv(pts) for cv in curves], axis=0)

    if np.any(X < 0) or np.any(lower(X) < 0):
        raise ValueError("the grid and the cost curves on it must be nonnegative")
    span = float(X.max()) or 1.0
    if refine > 1:
        fine = np.linspace(X.min(), X.max(), refine * (X.size - 1) + 1)
        probe = np.union1d(fine, _crossings(curves, X.min(), X.max()))
    else:  # the plain grid LP
        probe = X
    obj = _basis(X, span).sum(axis=0)
    pts = X.copy()
    for _ in range(20):
        rows, cap = _basis(pts, span), lower(pts)
        # variables (a, b', c') with x scaled to [0, 1]; maximize sum f == minimize its negative
        out = solve_convex(ConvexProgram(q=-obj, A=rows, senses="<" * pts.size, rhs=cap, lb=np.zeros(3)), tol=tol)
        coef = None
        if out.status in (Status.OPTIMAL, Status.ITER_LIMIT) and np.all(np.isfinite(out.x)):
            coef = _optimal_vertex(obj, rows, cap, np.maximum(out.x, 0.0))
        if coef is None:
            if out.status != Status.OPTIMAL:
                raise RuntimeError(f"envelope LP failed: {out.status.value}")
            coef = np.maximum(out.x, 0.0)
        # an interior-point answer sits a hair off the constraints; shift the constant
        # down, then scale the rest, so that f <= min C holds on the points
        slack = float(np.min(cap - rows @ coef))
        if slack < 0:
            coef[0] = max(0.0, coef[0] + slack)
            if float(np.min(cap - rows @ coef)) < 0:
                coef[1], coef[2] = _shrink(rows, cap, coef[1], coef[2])
        low = lower(probe)
        over = _basis(probe, span) @ coef - low > 1e-12 * np.maximum(1.0, np.abs(low))
        if not over.any():
            break
        pts = np.union1d(pts, probe[over])
    a, b, c = coef[0], coef[1] / span, coef[2] / span ** 2
    return EnvelopeQuadratic(float(a), float(b), float(c), tuple(float(x) for x in X),
                             tuple(float(x) for x in np.setdiff1d(pts, X)))


def _shrink(rows, cap, b, c):
    vals = rows[:, 1] * b + rows[:, 2] * c
    pos = vals > 0
    factor = np.min(np.where(pos, np.maximum(cap, 0) / np.where(pos, vals, 1), 1.0))
    return b * min(1.0, factor), c * min(1.0, factor)


def nrp_lower_bound(objective: float, demand: float, curves, p_max) -> float:
    """Lower bound on the non-revenue power given a cost budget.

    Generators are visited by decreasing average cost at full output. The first
    pass serves demand and removes the cost of what was served from the budget;
    the second converts what remains into power by inverting the cost curves.
    """
    return float(sum(nrp_contributions(objective, demand, curves, p_max)))


def nrp_contributions(objective: float, demand: float, curves, p_max) -> list[float]:
    """Power credited to each generator (input order) in the second pass."""
    curves = [c if isinstance(c, CostCurve) else CostCurve(*c) for c in curves]
    p_max = [float(p) for p in p_max]
    out = [0.0] * len(curves)
    if objective <= 0 or not curves:
        return out

    def avg(i):
        return float(curves[i](p_max[i])) / p_max[i] if p_max[i] > 0 else -math.inf

    order = sorted(range(len(curves)), key=lambda i: (-avg(i), i))
    budget, rest, pos = float(objective), float(max(demand, 0.0)), 0
    while budget > 0 and rest > 0 and pos < len(order):
        g = order[pos]
        served = min(rest, p_max[g])
        rest -= served
        budget -= min(float(curves[g](p_max[g])), float(curves[g](served)))
        pos += 1
    while budget > 0 and pos < len(order):
        g = order[pos]
        if float(curves[g](p_max[g])) <= budget:
            out[g] = p_max[g]    # the budget covers the whole unit (also for flat curves)
        else:
            root = curves[g].largest_root(budget)
            if root is not None:
                out[g] = min(p_max[g], max(root, 0.0))
        budget -= min(float(curves[g](p_max[g])), budget)
        pos += 1
    return out
