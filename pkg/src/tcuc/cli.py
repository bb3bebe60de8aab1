"""Command-line front end.

Every option can also be set through an environment variable named
``TCUC_<SUBCOMMAND>_<OPTION>``, e.g. ``TCUC_SOLVE_GAP=1e-3``.

Exit codes: 0 optimal within the gap, 2 stopped by a limit with an incumbent
(or optimal but with undecided sub-problems), 3 proven infeasible, 1 error.
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import orchestrator as orch
from .netmodel import CaseParseError, CaseValidationError, load_json, network_from_dict
from .oracle import OracleRefused, commitment_rules_ok, enumerate_solve
from .subproblem import build_dual_sdp, unadjusted_restriction
from .ucmaster import UCInstance, UCValidationError, uc_from_dict

EXIT_OK, EXIT_ERROR, EXIT_LIMIT, EXIT_INFEASIBLE = 0, 1, 2, 3
ENV_PREFIX = "TCUC"


class CliFailure(click.ClickException):
    exit_code = EXIT_ERROR


def _num(v):
    v = float(v)
    return float(f"{v:.12g}") if math.isfinite(v) else None


def _load(network, uc=None):
    try:
        net = network_from_dict(load_json(network))
        inst = uc_from_dict(load_json(uc), net) if uc else None
    except (CaseParseError, CaseValidationError, UCValidationError, OSError, KeyError, TypeError) as exc:
        raise CliFailure(f"{type(exc).__name__}: {exc}") from exc
    return net, inst


def _dump(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text)


def schedule_problems(inst: UCInstance, sched: dict, tol: float = 1e-6) -> list[str]:
    """Reasons a schedule file does not fit its instance (empty when it does)."""
    out = []
    if sched.get("schema") != 1:
        out.append("schedule: unsupported schema")
    if sched.get("u") is None:
        return out + ["schedule: no commitment"]
    G, T = inst.n_gen, inst.n_periods
    try:
        u = np.asarray(sched["u"], dtype=float)
        P = np.asarray(sched["P"], dtype=float)
    except (KeyError, TypeError, ValueError):
        return out + ["schedule: u and P must be numeric matrices"]
    if u.shape != (G, T) or P.shape != (G, T):
        return out + [f"schedule: u and P must be {G} x {T}"]
    if sched.get("generators") not in (None, [g.name for g in inst.generators]):
        out.append("schedule: generator names differ from the instance")
    if not np.all((u == 0) | (u == 1)):
        return out + ["schedule: u is not binary"]
    u = u.astype(int)
    if not commitment_rules_ok(inst, u):
        out.append("schedule: commitment breaks the commitment rules")
    for i in range(T):
        D = inst.demand[i]
        scale = max(1.0, abs(D))
        if abs(P[:, i].sum() - D) > tol * scale:
            out.append(f"schedule: period {inst.periods[i]} dispatch does not meet demand")
        for k, g in enumerate(inst.generators):
            hi = min(g.p_max[i], inst.pmax_demand_frac * D) * u[k, i]
            if P[k, i] < g.p_min[i] * u[k, i] - tol * scale or P[k, i] > hi + tol * scale:
                out.append(f"schedule: {g.name} out of range in period {inst.periods[i]}")
    return out


def exit_code(report: orch.Report) -> int:
    if report.termination == orch.INFEASIBLE_RUN:
        return EXIT_INFEASIBLE if report.certified else EXIT_ERROR
    if report.incumbent is None:
        return EXIT_ERROR
    if report.termination == orch.OPTIMAL and report.certified:
        return EXIT_OK
    return EXIT_LIMIT


@click.group(context_settings={"auto_envvar_prefix": ENV_PREFIX, "show_default": True})
def cli():
    """Unit commitment with AC transmission constraints."""


@cli.command()
@click.option("--network", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--uc", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gap", type=float, default=1e-4)
@click.option("--time-limit", "time_limit_s", type=float, default=None, help="seconds")
@click.option("--node-limit", type=int, default=None)
@click.option("--workers", type=int, default=1)
@click.option("--enable-ramping-cuts/--no-ramping-cuts", default=False)
@click.option("--enable-pergen-nrp/--no-pergen-nrp", default=False)
@click.option("--enable-strengthening/--no-strengthening", default=True)
@click.option("--incumbent-stride", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--trace-clock", type=click.Choice(["wall", "work"]), default="wall")
@click.option("--schedule", "schedule_path", default="schedule.json")
@click.option("--trace", "trace_path", default="trace.csv")
@click.option("--cut-log", "cut_log_path", default="cuts.log")
def solve(network, uc, schedule_path, trace_path, cut_log_path, **cfg):
    """Run the decomposition solver and write schedule, trace and cut log."""
    _, inst = _load(network, uc)
    try:
        config = orch.Config(**cfg)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise CliFailure(str(exc)) from exc
    report = orch.solve(inst, config)
    orch.write_schedule(report, schedule_path)
    orch.write_trace(report, trace_path)
    orch.write_cut_log(report, cut_log_path)
    click.echo(f"{report.termination} objective={report.objective:.12g} lb={report.master_lb:.12g} "
               f"nodes={report.nodes} sdp={report.sdp_solves} unresolved={report.unresolved}")
    return exit_code(report)


@cli.command()
@click.option("--network", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--uc", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--limit", type=int, default=20, help="largest |G||T| enumerated without --override")
@click.option("--override", is_flag=True)
@click.option("--out", default="-", help="output JSON path, '-' for stdout")
def oracle(network, uc, limit, override, out):
    """Enumerate every commitment and report the best one."""
    _, inst = _load(network, uc)
    try:
        res = enumerate_solve(inst, limit=limit, override=override)
    except OracleRefused as exc:
        raise CliFailure(str(exc)) from exc
    _dump({
        "schema": 1,
        "value": _num(res.value),
        "u": None if res.u is None else res.u.tolist(),
        "screened": res.screened,
        "inaccurate": res.inaccurate,
        "table": [{"u": u.tolist(), "status": s, "value": _num(v)} for u, s, v in res.entries()],
    }, out)
    return EXIT_OK if res.feasible else (EXIT_INFEASIBLE if res.inaccurate == 0 else EXIT_ERROR)


@cli.command()
@click.option("--network", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--uc", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--schedule", "schedule_path", type=click.Path(exists=True, dir_okay=False), default=None)
def validate(network, uc, schedule_path):
    """Check a network file, optionally a UC file and a schedule against them."""
    if schedule_path and not uc:
        raise CliFailure("--schedule needs --uc")
    net, inst = _load(network, uc)
    msg = f"network ok: {net.n_bus} buses, {len(net.branches)} branches"
    if inst is not None:
        msg += f"; uc ok: {inst.n_gen} generators, {inst.n_periods} periods"
    if schedule_path:
        try:
            sched = load_json(schedule_path)
        except CaseParseError as exc:
            raise CliFailure(str(exc)) from exc
        problems = schedule_problems(inst, sched)
        if problems:
            raise CliFailure("\n".join(problems))
        msg += "; schedule ok"
    click.echo(msg)
    return EXIT_OK


@cli.command("dump-sdp")
@click.option("--network", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--uc", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--period", type=int, default=None, help="period label (default: first)")
@click.option("--on", default=None, help="comma-separated committed generator names (default: all)")
@click.option("--out", default="-")
def dump_sdp(network, uc, period, on, out):
    """Write the dual SDP of one period for a given commitment."""
    _, inst = _load(network, uc)
    label = inst.periods[0] if period is None else period
    i = inst.pos(label)
    if not 0 <= i < inst.n_periods:
        raise CliFailure(f"no period {label}")
    names = [g.name for g in inst.generators]
    if on is None:
        on_set = tuple(range(inst.n_gen))
    else:
        wanted = [s.strip() for s in on.split(",") if s.strip()]
        missing = [w for w in wanted if w not in names]
        if missing:
            raise CliFailure(f"unknown generators: {', '.join(missing)}")
        on_set = tuple(sorted(names.index(w) for w in wanted))
    ds = build_dual_sdp(inst, unadjusted_restriction(inst, i, on_set))
    p = ds.problem

    def sparse(M):
        rows, cols = np.nonzero(np.triu(M))
        return [[int(r), int(c), _num(M[r, c])] for r, c in zip(rows, cols)]

    _dump({
        "schema": 1, "period": label, "on": [names[k] for k in on_set],
        "form": "maximize b'y subject to C_j - sum_i y_i A_ij PSD for every block j",
        "scale": _num(ds.scale), "offset": _num(ds.offset), "trivially_infeasible": ds.trivially_infeasible,
        "block_sizes": list(p.block_sizes), "b": [_num(v) for v in p.b],
        "C": [sparse(C) for C in p.C],
        "A": [[{"row": m, "entries": sparse(A[m])} for m in range(p.m) if np.any(A[m])] for A in p.A],
    }, out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="tcuc", standalone_mode=False, auto_envvar_prefix=ENV_PREFIX)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except click.Abort:
        return EXIT_ERROR
    return int(rv or 0)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
