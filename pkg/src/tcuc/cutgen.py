"""Cut families exchanged between the period sub-problems and the master, and
the pool that stores them.

Every cut is built from the indicator expression

    E(u) = 1 - |on| + sum_{k in on} u_k - sum_{k in off} u_k

which equals 1 at the commitment (on committed, off decommitted) and is at
most 0 at every other binary point. A no-good cut reads E(u) <= 0; an NRP cut
reads bound * E(u) <= theta. Generators in neither set (strengthened and
partition cuts) do not enter E.
"""
from __future__ import annotations

import enum
import hashlib
import math
import threading
from dataclasses import dataclass

import numpy as np

from .subproblem import signatures_match


class CutKind(str, enum.Enum):
    NOGOOD = "NoGood"
    NOGOOD_RAMPING = "NoGoodRamping"
    NRP = "NRP"
    NRP_RAMPING = "NRPRamping"
    NRP_PARTITION = "NRPPartition"
    NRP_PERGEN = "NRPPerGen"


NRP_KINDS = (CutKind.NRP, CutKind.NRP_RAMPING, CutKind.NRP_PARTITION, CutKind.NRP_PERGEN)


@dataclass(frozen=True)
class RampIndicator:
    """Selection of the ramp indicator v[g, t, d] recorded for one generator."""
    generator: int
    value: float     # max(0, p_max - P_prev - ramp_up) at the incumbent
    index: int = -1  # d, assigned when the indicator is materialized in the master


@dataclass(frozen=True)
class Cut:
    kind: CutKind
    period: int                    # origin period (position)
    on: tuple[int, ...]
    off: tuple[int, ...]
    signature: tuple[float, ...]
    bound: float = 0.0             # NRP lower bound (power units)
    generator: int | None = None   # per-generator NRP cuts
    relaxed: tuple[int, ...] = ()  # partition cuts: generators left out
    ramp: tuple[RampIndicator, ...] = ()
    local: bool = False            # only valid at the origin period

    def __post_init__(self):
        if set(self.on) & set(self.off):
            raise ValueError("a generator cannot be in both the on and off sets")
        if self.kind in NRP_KINDS and not (self.bound >= 0 and math.isfinite(self.bound)):
            raise ValueError(f"NRP bound must be finite and nonnegative, got {self.bound}")

    @property
    def key(self):
        return (self.kind, self.on, self.off, self.generator, self.relaxed,
                tuple((r.generator, r.index) for r in self.ramp), self.period if self.local else None)

    def indicator(self, u_col) -> float:
        """E(u) at one period's commitment column (ramp indicators not included)."""
        return 1 - len(self.on) + sum(u_col[k] for k in self.on) - sum(u_col[k] for k in self.off)

    def u_coefficients(self) -> dict[int, float]:
        coef = {k: 1.0 for k in self.on}
        coef.update({k: -1.0 for k in self.off})
        return coef

    def excludes(self, u_col) -> bool:
        """True if a no-good cut forbids this commitment column."""
        return self.kind in (CutKind.NOGOOD,) and self.indicator(u_col) > 0.5

    def describe(self) -> str:
        sig = hashlib.sha1(np.asarray(self.signature, dtype=float).tobytes()).hexdigest()[:12]
        gen = "" if self.generator is None else f" gen={self.generator}"
        return (f"{self.kind.value} period={self.period} on={list(self.on)} off={list(self.off)}"
                f" relaxed={list(self.relaxed)} bound={self.bound:.12g}{gen} sig={sig}")


# ---------------------------------------------------------------------------
# constructors

def make_no_good(on, generators, t: int, sig) -> Cut:
    on = tuple(sorted(set(on)))
    off = tuple(k for k in generators if k not in on)
    return Cut(CutKind.NOGOOD, t, on, off, tuple(np.asarray(sig, dtype=float)))


def zero_capable(gen, i: int) -> bool:
    """A committed generator that can sit at zero output (so committing it
    never removes operating points)."""
    return gen.p_min[i] <= 0 and gen.q_min[i] <= 0 <= gen.q_max[i]


def strengthen_no_good(on, t: int, probe, generators, p_max, sig, zero_ok=None) -> Cut:
    """Grow the committed set by off generators in increasing p_max order
    while the probe still reports infeasibility; the cut then forbids every
    commitment between the original set and the largest infeasible superset.

    ``probe(on_set)`` returns "infeasible", "feasible" or "inaccurate". The
    interval claim is only certified when at most one generator was added or
    every added generator is zero-capable (then infeasibility is inherited
    by subsets); ``zero_ok(k)`` tells which ones are.
    """
    on = tuple(sorted(set(on)))
    cand = sorted((k for k in generators if k not in on), key=lambda k: (p_max[k], k))
    cur = list(on)
    added = []
    for k in cand:
        trial_added = added + [k]
        if len(trial_added) > 1 and not (zero_ok and all(zero_ok(g) for g in trial_added)):
            break
        if probe(tuple(sorted(cur + [k]))) != "infeasible":
            break
        cur.append(k)
        added = trial_added
    big = set(cur)
    off = tuple(k for k in generators if k not in big)
    return Cut(CutKind.NOGOOD, t, on, off, tuple(np.asarray(sig, dtype=float)))


def make_nrp_cut(on, generators, bound: float, t: int, sig) -> Cut:
    if not bound >= 0:
        raise ValueError("NRP bound must be nonnegative")
    on = tuple(sorted(set(on)))
    off = tuple(k for k in generators if k not in on)
    return Cut(CutKind.NRP, t, on, off, tuple(np.asarray(sig, dtype=float)), float(bound))


def make_nrp_partition_cut(on, off, relaxed, bound: float, t: int, sig) -> Cut:
    on, off, relaxed = (tuple(sorted(set(s))) for s in (on, off, relaxed))
    if set(on) & set(off) or set(on) & set(relaxed) or set(off) & set(relaxed):
        raise ValueError("partition sets overlap")
    if not bound >= 0:
        raise ValueError("NRP bound must be nonnegative")
    return Cut(CutKind.NRP_PARTITION, t, on, off, tuple(np.asarray(sig, dtype=float)),
               float(bound), relaxed=relaxed)


def make_pergen_nrp_cut(on, generators, gen: int, bound: float, t: int, sig) -> Cut:
    if gen not in on:
        raise ValueError("per-generator NRP bound must refer to a committed generator")
    if not bound >= 0:
        raise ValueError("NRP bound must be nonnegative")
    on = tuple(sorted(set(on)))
    off = tuple(k for k in generators if k not in on)
    return Cut(CutKind.NRP_PERGEN, t, on, off, tuple(np.asarray(sig, dtype=float)), float(bound),
               generator=gen)


def ramp_values(inst, P, i: int) -> dict[int, float]:
    """max(0, p_max - P_prev - ramp_up) per ramp-limited generator at period position i."""
    out = {}
    for k, g in enumerate(inst.generators):
        if not math.isfinite(g.ramp_up):
            continue
        prev = g.init_p if i == 0 else float(P[k, i - 1])
        out[k] = max(0.0, g.p_max[i] - prev - g.ramp_up)
    return out


def big_m(gen) -> float:
    return float(np.max(gen.p_max)) + gen.ramp_up + 1.0


def make_ramping_variants(base: Cut, values: dict[int, float], enabled: bool = False) -> Cut:
    """Ramp-indicator version of a no-good or NRP cut, valid only at its
    origin period. The indicator variables and their big-M rows are created
    in the master by :func:`RampRegistry.materialize`. Pass values only for
    generators with a finite ramp rate; the others always match."""
    if not enabled:
        raise RuntimeError("ramping-aware cuts are disabled")
    kind = {CutKind.NOGOOD: CutKind.NOGOOD_RAMPING, CutKind.NRP: CutKind.NRP_RAMPING}.get(base.kind)
    if kind is None:
        raise ValueError(f"no ramping variant for {base.kind.value}")
    ramp = tuple(RampIndicator(k, float(values[k])) for k in sorted(values))
    return Cut(kind, base.period, base.on, base.off, base.signature, base.bound, ramp=ramp, local=True)


class RampRegistry:
    """Distinct recorded ramp values per (generator, period) and the master
    variables standing for them."""

    def __init__(self, eps: float = 1e-6):
        self.values: dict[tuple[int, int], list[float]] = {}
        self.eps = eps

    def index_of(self, k: int, i: int, value: float) -> int:
        vals = self.values.setdefault((k, i), [])
        for d, v in enumerate(vals):
            if abs(v - value) <= 1e-9 * max(1.0, abs(v)):
                return d
        vals.append(value)
        return len(vals) - 1

    def resolve(self, cut: Cut) -> Cut:
        ramp = tuple(RampIndicator(r.generator, r.value, self.index_of(r.generator, cut.period, r.value))
                     for r in cut.ramp)
        return Cut(cut.kind, cut.period, cut.on, cut.off, cut.signature, cut.bound, cut.generator,
                   cut.relaxed, ramp, cut.local)

    def materialize(self, master, inst, cut: Cut):
        """Create missing indicator binaries and their big-M rows."""
        i = cut.period
        for r in cut.ramp:
            k, g = r.generator, inst.generators[r.generator]
            name = f"v[{k},{i},{r.index}]"
            if name in master.index:
                continue
            v = master.add_var(name, binary=True)
            M = big_m(g)
            const = g.p_max[i] - g.ramp_up - r.value  # x - V = const - P_prev
            if i == 0:
                # previous output is the fixed initial power
                gap = const - g.init_p
                master.add_row({v: M}, "<", M + self.eps - gap, f"vbigm1[{k},{i},{r.index}]")
                master.add_row({v: M}, "<", M + self.eps + gap, f"vbigm2[{k},{i},{r.index}]")
            else:
                p = master.p(k, i - 1)
                master.add_row({p: -1.0, v: M}, "<", M + self.eps - const, f"vbigm1[{k},{i},{r.index}]")
                master.add_row({p: 1.0, v: M}, "<", M + self.eps + const, f"vbigm2[{k},{i},{r.index}]")
            ids = [master.index[f"v[{k},{i},{d}]"] for d in range(len(self.values[(k, i)]))
                   if f"v[{k},{i},{d}]" in master.index]
            master.add_row({j: 1.0 for j in ids}, "<", 1.0, f"vsum[{k},{i},{len(ids)}]")


def cut_row(master, cut: Cut, i: int, registry: RampRegistry | None = None):
    """Linear row (coef, sense, rhs) of a cut instantiated at period position i."""
    u = master.u
    n_on = len(cut.on)
    coef: dict[int, float] = {}
    for k, a in cut.u_coefficients().items():
        coef[u(k, i)] = a
    const = 1.0 - n_on
    if cut.ramp:
        if registry is None:
            raise ValueError("ramping cuts need the indicator registry")
        on = set(cut.on)
        for r in cut.ramp:
            k = r.generator
            for d in range(len(registry.values.get((k, i), []))):
                j = master.index[f"v[{k},{i},{d}]"]
                if d != r.index:
                    coef[j] = coef.get(j, 0.0) - 1.0
                elif k in on:
                    coef[j] = coef.get(j, 0.0) + 1.0
        # E reaches 1 only with every committed unit's indicator at 1
        const -= sum(1 for r in cut.ramp if r.generator in on)
    if cut.kind in (CutKind.NOGOOD, CutKind.NOGOOD_RAMPING):
        return coef, "<", -const
    # bound * (const + coef.u) <= theta
    th = master.theta(i) if cut.kind != CutKind.NRP_PERGEN else master.index[f"theta[{cut.generator},{i}]"]
    row = {j: cut.bound * a for j, a in coef.items()}
    row[th] = row.get(th, 0.0) - 1.0
    return row, "<", -cut.bound * const


# ---------------------------------------------------------------------------
# pool

class CutPool:
    """Cuts with their load signatures; duplicates (same kind, sets and
    signature) are ignored."""

    def __init__(self, rtol: float = 1e-9):
        self.cuts: list[Cut] = []
        self.rtol = rtol
        self._reps: list[tuple] = []       # representative signatures
        self._class: list[int] = []        # signature class of each cut
        self._keys: set = set()
        self._lock = threading.Lock()
        self._applicable: dict[tuple, bool] = {}

    def __len__(self):
        return len(self.cuts)

    def _sig_class(self, sig) -> int:
        for c, rep in enumerate(self._reps):
            if signatures_match(sig, rep, self.rtol):
                return c
        self._reps.append(tuple(sig))
        return len(self._reps) - 1

    def add(self, cut: Cut) -> bool:
        with self._lock:
            c = self._sig_class(cut.signature)
            key = (c,) + cut.key
            if key in self._keys:
                return False
            self._keys.add(key)
            self.cuts.append(cut)
            self._class.append(c)
            return True

    def snapshot(self) -> list[Cut]:
        with self._lock:
            return list(self.cuts)

    def applies(self, idx: int, i: int, signature) -> bool:
        cut = self.cuts[idx]
        if cut.local:
            return i == cut.period
        key = (idx, i, tuple(np.asarray(signature, dtype=float)))
        hit = self._applicable.get(key)
        if hit is None:
            hit = signatures_match(cut.signature, signature, self.rtol)
            self._applicable[key] = hit
        return hit

    def dump(self) -> str:
        return "".join(c.describe() + "\n" for c in self.snapshot())

    def counts(self) -> dict[str, int]:
        out = {k.value: 0 for k in CutKind}
        for c in self.snapshot():
            out[c.kind.value] += 1
        return out


def applicable_cuts(pool: CutPool, i: int, signature) -> list[tuple[Cut, int]]:
    """Every pooled cut that applies at period position i, paired with i."""
    return [(c, i) for idx, c in enumerate(pool.snapshot()) if pool.applies(idx, i, signature)]
