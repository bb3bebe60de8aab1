import json

import pytest

from oracles import THREE_BUS, THREE_BUS_UC, three_bus
from tcuc.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, main
from tcuc.oracle import enumerate_solve
from tcuc.subproblem import build_dual_sdp, unadjusted_restriction


@pytest.fixture
def case(tmp_path):
    net, uc = tmp_path / "net.json", tmp_path / "uc.json"
    net.write_text(json.dumps(THREE_BUS))
    uc.write_text(json.dumps(THREE_BUS_UC))
    return tmp_path, str(net), str(uc)


def run_solve(tmp, net, uc, *extra):
    files = [str(tmp / n) for n in ("s.json", "t.csv", "c.log")]
    code = main(["solve", "--network", net, "--uc", uc, "--gap", "0", "--schedule", files[0],
                 "--trace", files[1], "--cut-log", files[2], *extra])
    return code, files


def test_solve_writes_outputs_and_validates(case):
    tmp, net, uc = case
    code, (s, t, c) = run_solve(tmp, net, uc)
    assert code == EXIT_OK
    sched = json.loads(open(s).read())
    assert sched["termination"] == "OptimalWithinGap"
    assert sched["objective"] == pytest.approx(enumerate_solve(three_bus()).value, rel=1e-4)
    assert open(t).readline().strip() == "wall_s,master_lb,master_ub,subproblem_ub"
    assert open(c).read().strip()
    assert main(["validate", "--network", net, "--uc", uc, "--schedule", s]) == EXIT_OK


def test_tampered_schedule_rejected(case):
    tmp, net, uc = case
    _, (s, _, _) = run_solve(tmp, net, uc)
    sched = json.loads(open(s).read())
    sched["P"][0][0] += 25.0
    bad = tmp / "bad.json"
    bad.write_text(json.dumps(sched))
    assert main(["validate", "--network", net, "--uc", uc, "--schedule", str(bad)]) == EXIT_ERROR


def test_oracle_json(case, capsys):
    _, net, uc = case
    assert main(["oracle", "--network", net, "--uc", uc]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    ref = enumerate_solve(three_bus())
    assert out["value"] == pytest.approx(ref.value, rel=1e-9)
    assert out["u"] == ref.u.tolist() and len(out["table"]) == 16
    assert main(["oracle", "--network", net, "--uc", uc, "--limit", "2"]) == EXIT_ERROR


def test_dangling_branch_rejected(tmp_path):
    bad = dict(THREE_BUS, branches=THREE_BUS["branches"] + [{"id": 9, "from": 1, "to": 7, "g": 1, "b": -5}])
    path = tmp_path / "net.json"
    path.write_text(json.dumps(bad))
    assert main(["validate", "--network", str(path)]) == EXIT_ERROR


def test_env_overrides(case, monkeypatch):
    tmp, net, uc = case
    monkeypatch.setenv("TCUC_SOLVE_TRACE_CLOCK", "work")
    code, (_, t, _) = run_solve(tmp, net, uc)
    assert code == EXIT_OK
    assert open(t).readline().startswith("work,")
    monkeypatch.setenv("TCUC_SOLVE_WORKERS", "0")
    assert run_solve(tmp, net, uc)[0] == EXIT_ERROR


def test_infeasible_exit_code(tmp_path):
    uc = dict(THREE_BUS_UC, loads={"P": [[0, 0], [900, 900], [0, 0]]})
    (tmp_path / "n.json").write_text(json.dumps(THREE_BUS))
    (tmp_path / "u.json").write_text(json.dumps(uc))
    code, _ = run_solve(tmp_path, str(tmp_path / "n.json"), str(tmp_path / "u.json"))
    assert code == EXIT_INFEASIBLE


def test_dump_sdp(case, capsys):
    _, net, uc = case
    assert main(["dump-sdp", "--network", net, "--uc", uc, "--on", "b"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    inst = three_bus()
    ds = build_dual_sdp(inst, unadjusted_restriction(inst, 0, (1,)))
    assert out["block_sizes"] == list(ds.problem.block_sizes) and out["on"] == ["b"]
    assert main(["dump-sdp", "--network", net, "--uc", uc, "--on", "zzz"]) == EXIT_ERROR
