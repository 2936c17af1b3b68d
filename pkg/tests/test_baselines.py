import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowsplit.baselines import bipartite_matching_policy, build_conflict_graph, distributed_rule
from flowsplit.errors import InfeasibleError
from flowsplit.optimize import bh_optimize
from flowsplit.sim.kernel import pick_successor
from flowsplit.topology import Policy, topology_from_dict
from flowsplit.travel_time import evaluate_objective
from gen import chain, twin_paths


def crossing(mu=3.0, rates=(1.0, 1.0)):
    """Two flows that can each use middle queue x or y before a common sink."""
    return topology_from_dict({
        "queues": [{"id": "a", "mu_max": 20.0}, {"id": "b", "mu_max": 20.0},
                   {"id": "x", "mu_max": mu}, {"id": "y", "mu_max": mu},
                   {"id": "z", "mu_max": 20.0, "service_model": "sink"}],
        "junctions": [{"from": s, "to": m} for s in "ab" for m in "xy"]
                     + [{"from": m, "to": "z"} for m in "xy"],
        "flows": [{"id": "f1", "ingress": "a", "egress": "z", "rate": rates[0], "omega": 3.0},
                  {"id": "f2", "ingress": "b", "egress": "z", "rate": rates[1], "omega": 3.0}],
    })


def test_conflict_graph_small(small):
    g = build_conflict_graph(small)
    assert g.conflicts("f2:early", "f2:late")
    assert g.conflicts("f1:main", "f2:early")
    # every path runs through q5
    assert g.conflicts("f1:main", "f2:late")
    assert not g.conflicts("f1:main", "f1:main")
    assert ("f2", "f2:late") in g.flow_path_edges
    assert g.neighbours("f2:early") == {"f1:main", "f2:late"}


def test_disjoint_paths_do_not_conflict():
    topo = crossing()
    g = build_conflict_graph(topo)
    by_mid = {}
    for w in topo.paths:
        by_mid.setdefault(w.queues[1], []).append(w.id)
    for xs, ys in itertools.product(by_mid["x"], by_mid["y"]):
        if topo.path_by_id[xs].flow != topo.path_by_id[ys].flow:
            assert not g.conflicts(xs, ys)


def test_sink_sharing_is_not_a_conflict():
    topo = topology_from_dict({
        "queues": [{"id": "a", "mu_max": 3.0}, {"id": "b", "mu_max": 3.0},
                   {"id": "z", "mu_max": 20.0, "service_model": "sink"}],
        "junctions": [{"from": "a", "to": "z"}, {"from": "b", "to": "z"}],
        "flows": [{"id": "f1", "ingress": "a", "egress": "z", "rate": 1.0, "omega": 3.0},
                  {"id": "f2", "ingress": "b", "egress": "z", "rate": 1.0, "omega": 3.0}],
    })
    a, b = (w.id for w in topo.paths)
    assert not build_conflict_graph(topo).conflicts(a, b)
    tw = twin_paths()
    assert build_conflict_graph(tw).conflicts(*(w.id for w in tw.paths))


def test_bipartite_two_flows_take_distinct_paths():
    topo = crossing()
    pol = bipartite_matching_policy(topo)
    chosen = {w.flow: w.queues[1] for w in topo.paths if pol.p(w.id) == 1.0}
    assert set(chosen.values()) == {"x", "y"}
    # exhaustive check of the four whole assignments
    best = min(itertools.product("xy", repeat=2),
               key=lambda c: evaluate_objective(topo, whole(topo, dict(zip(("f1", "f2"), c)))).objective)
    assert best[0] != best[1]


def whole(topo, mids):
    probs = {w.id: float(w.queues[1] == mids[w.flow]) for w in topo.paths}
    return Policy(probs, topo.uniform_policy().service_rates)


def test_bipartite_single_path():
    topo = chain([3.0, 2.0])
    assert bipartite_matching_policy(topo).p(topo.paths[0].id) == 1.0


@pytest.mark.parametrize("name", ["small", "medium", "large"])
def test_bipartite_is_degenerate_and_not_better_than_bh(name, request):
    topo = request.getfixturevalue(name)
    pol = bipartite_matching_policy(topo)
    for f in topo.flows:
        ps = sorted(pol.p(w.id) for w in topo.paths_of(f.id))
        assert ps[-1] == 1.0 and sum(ps) == 1.0
    assert bipartite_matching_policy(topo) == pol
    bh = bh_optimize(topo).final_objective
    assert bh <= evaluate_objective(topo, pol).objective


def test_bipartite_infeasible():
    topo = crossing(mu=1.5, rates=(2.0, 1.0))
    with pytest.raises(InfeasibleError):
        bipartite_matching_policy(topo)


def test_distributed_rule_examples():
    assert distributed_rule({"a": 3, "b": 1}) == "b"
    lanes = {"a": 0, "b": 1}
    assert distributed_rule({"a": 2, "b": 2}, current_lane=1, lanes=lanes) == "b"
    assert distributed_rule({"b": 2, "a": 2}, current_lane=5, lanes=lanes) == "a"
    assert distributed_rule({"b": 2, "a": 2}) == "a"
    with pytest.raises(ValueError):
        distributed_rule({})


occ_maps = st.dictionaries(st.sampled_from(list("abcdef")), st.integers(0, 4), min_size=1)


@given(occ_maps, st.integers(-1, 2))
def test_distributed_rule_pure_and_matches_kernel(occ, cur):
    lanes = {q: i % 3 for i, q in enumerate("abcdef")}
    lane = cur if cur >= 0 else None
    first = distributed_rule(dict(occ), lane, lanes)
    assert first == distributed_rule(dict(occ), lane, lanes)
    ids = sorted(occ)
    idx = {q: i for i, q in enumerate("abcdef")}
    cands = np.array([idx[q] for q in ids], dtype=np.int64)
    occ_arr = np.zeros(6, dtype=np.int64)
    for q, n in occ.items():
        occ_arr[idx[q]] = n
    lane_arr = np.array([lanes[q] for q in "abcdef"], dtype=np.int64)
    got = pick_successor(cands, len(cands), occ_arr, lane_arr, cur)
    assert "abcdef"[got] == first
