import json
import math

import numpy as np
import pytest

from dagbnb.bnb import (BranchAndBound, SolveReport, StopRule, early_stop_threshold,
                        primal_heuristic, rel_gap, solve, violated_cycles)
from dagbnb.datagen import GenConfig, make_instance
from dagbnb.formulation import build_problem
from dagbnb.graphs import find_cycle, is_acyclic
from dagbnb.oracle import exact_solve
from dagbnb.relax import NodeConstraints, solve_relaxation
from dagbnb.score import score


def check_report(rep: SolveReport):
    """Trajectory and gap identities every report must satisfy."""
    lbs = [lb for _, lb, _ in rep.trajectory]
    ubs = [ub for _, _, ub in rep.trajectory]
    assert all(b >= a for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a for a, b in zip(ubs, ubs[1:]))
    assert all(lb <= ub for lb, ub in zip(lbs, ubs))
    assert rep.gap == pytest.approx(rep.ub - rep.lb, abs=1e-9)
    if rep.ub > 0:
        assert rep.rgap == pytest.approx((rep.ub - rep.lb) / rep.ub, abs=1e-9)


def _spec(m, seed, sup="moral", **kw):
    inst = make_instance(GenConfig(m=m, n=100, seed=seed))
    return build_problem(inst.data, getattr(inst, sup), **kw)[0], inst


@pytest.mark.parametrize("mode,enc", [("persp", "cp_lazy"), ("bigm", "cp_lazy"),
                                      ("perspcut", "cp_lazy"), ("persp", "ln")])
@pytest.mark.parametrize("seed", [0, 1])
def test_matches_oracle(mode, enc, seed):
    spec, _ = _spec(5, seed, "complete", mode=mode, encoding=enc)
    rep = solve(spec, StopRule(0.0, 0.0))
    ref = exact_solve(spec)
    assert rep.status == "optimal"
    assert rep.ub == pytest.approx(ref.score, rel=1e-6)
    assert is_acyclic(rep.dag)
    check_report(rep)


def test_branching_rules_agree():
    spec, _ = _spec(6, 2)
    a = solve(spec, StopRule(0.0, 0.0), branching="max_beta")
    b = solve(spec, StopRule(0.0, 0.0), branching="most_fractional")
    assert a.ub == pytest.approx(b.ub, rel=1e-9)
    with pytest.raises(ValueError):
        BranchAndBound(spec, StopRule(), branching="random")


def test_incumbent_score_is_consistent():
    spec, _ = _spec(6, 3, "complete")
    rep = solve(spec, StopRule(0.0, 0.0))
    beta = {(j, k): b for j, k, b in rep.arcs}
    assert rep.ub == pytest.approx(score(beta, beta.keys(), spec.gram_data, spec.penalty), rel=1e-9)
    assert rep.root_relaxation_value <= rep.ub


def test_limits_stop_early_with_valid_bounds():
    spec, _ = _spec(8, 0, "complete")
    rep = solve(spec, StopRule(0.0, 0.0, node_limit=5))
    assert rep.status == "node_limit"
    assert rep.nodes_explored <= 5 + 1
    ref = exact_solve(spec)
    assert rep.lb <= ref.score + 1e-6 * ref.score <= rep.ub + 1e-6 * ref.score
    check_report(rep)
    rep = solve(spec, StopRule(0.0, 0.0, time_limit=1e-3))
    assert rep.status in ("time_limit", "optimal")
    check_report(rep)


def test_gap_rules():
    spec, _ = _spec(8, 1, "complete")
    ref = exact_solve(spec)
    for stop in (StopRule(abs_gap=5.0, rel_gap=0.0), StopRule(abs_gap=0.0, rel_gap=0.01)):
        rep = solve(spec, stop)
        assert rep.status in ("optimal", "gap_reached")
        assert rep.gap <= stop.abs_gap + 1e-9 or rep.rgap <= stop.rel_gap + 1e-12
        assert rep.lb <= ref.score * (1 + 1e-9)
        assert rep.ub >= ref.score * (1 - 1e-9)
        check_report(rep)


def test_early_stop_threshold():
    assert early_stop_threshold(10, 100, 19) == pytest.approx(0.4375, abs=1e-4)
    assert early_stop_threshold(20, 100, 58) == pytest.approx(1.7375, abs=1e-4)
    assert early_stop_threshold(10, 100, 0) == 0.0
    with pytest.raises(ValueError):
        early_stop_threshold(10, 100, -1)


def test_stop_rule_validation_and_default():
    with pytest.raises(ValueError):
        StopRule(abs_gap=-1)
    with pytest.raises(ValueError):
        StopRule(time_limit=0)
    assert StopRule.default_for(12).time_limit == 600


def test_rel_gap_edge_cases():
    assert rel_gap(10.0, 9.0) == pytest.approx(0.1)
    assert rel_gap(math.inf, 1.0) == math.inf
    assert rel_gap(0.0, 0.0) == 0.0


def test_violated_cycles_finds_fractional_cycle():
    spec, _ = _spec(4, 0, "complete")
    g = np.zeros(len(spec.super_arcs))
    for a in [(0, 1), (1, 2), (2, 0)]:
        g[spec.arc_index[a]] = 0.9
    cycles = violated_cycles(spec, g)
    assert cycles
    c = cycles[0]
    assert sum(g[spec.arc_index[a]] for a in c.arcs) > len(c) - 1


def test_primal_heuristic_returns_dag():
    spec, _ = _spec(6, 4, "complete")
    r = solve_relaxation(spec, NodeConstraints.root(spec))
    inc = primal_heuristic(r, spec)
    assert inc is not None and find_cycle(inc.dag) is None
    assert inc.ub == pytest.approx(score(inc.beta, inc.dag.arcs, spec.gram_data, spec.penalty), rel=1e-9)


def test_threads_give_same_optimum():
    spec, _ = _spec(6, 2, "complete")
    a = solve(spec, StopRule(0.0, 0.0), threads=1)
    b = solve(spec, StopRule(0.0, 0.0), threads=3)
    assert a.ub == pytest.approx(b.ub, rel=1e-9)


def test_report_json_roundtrip():
    spec, _ = _spec(4, 0)
    rep = solve(spec, StopRule(0.0, 0.0, node_limit=1))
    d = json.loads(rep.to_json())
    assert d["status"] == rep.status
    assert d["config"]["mode"] == "persp"
    assert all(len(a) == 3 for a in d["arcs"])
