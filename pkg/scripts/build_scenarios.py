"""Regenerate the bundled medium and large scenario files.

medium: three parallel lanes of five segments each, feeding one sink.
Lane changes between consecutive segments follow a fixed pattern per
boundary, which yields 11 + 13 + 11 = 35 lane-level paths.

large: a 49-segment synthetic network with five flows of different
lengths (3, 3, 4, 1 and 4 alternative paths); flows f1 and f2 share a
three-way split, flows f3 and f4 share their last two segments.
"""
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "flowsplit" / "scenarios"

# allowed lane moves at each of the four segment boundaries
BOUNDARY_MOVES = [
    {1: [1, 2], 2: [1, 2, 3], 3: [2, 3]},   # adjacent changes both ways
    {1: [1], 2: [1, 2, 3], 3: [3]},         # centre lane may move outward
    {1: [1], 2: [1, 2, 3], 3: [3]},
    {1: [1, 2], 2: [2], 3: [2, 3]},         # outer lanes may move inward
]


def medium():
    lanes, segs = 3, 5
    qid = lambda lane, seg: f"l{lane}s{seg}"
    queues = [{"id": qid(l, s), "mu_max": 15.0, "service_model": "mm1", "lane": l}
              for l in range(1, lanes + 1) for s in range(1, segs + 1)]
    queues.append({"id": "q_omega", "mu_max": 15.0, "service_model": "sink"})
    junctions = []
    for s, moves in enumerate(BOUNDARY_MOVES, start=1):
        for l, targets in moves.items():
            junctions += [{"from": qid(l, s), "to": qid(t, s + 1)} for t in targets]
    junctions += [{"from": qid(l, segs), "to": "q_omega"} for l in range(1, lanes + 1)]
    rates = {1: 10.0, 2: 1.0, 3: 5.0}
    flows = [{"id": f"f{l}", "ingress": qid(l, 1), "egress": "q_omega", "rate": rates[l], "omega": 1.0}
             for l in range(1, lanes + 1)]
    return {"description": "Three-lane road stretch (5 segments per lane) with lane changes at segment "
                           "boundaries and a zero-time sink; heavily unbalanced lane demand.",
            "queues": queues, "junctions": junctions, "flows": flows}


def large():
    mu = {}
    edges = []

    def chain(*ids):
        edges.extend(zip(ids[:-1], ids[1:]))

    def split(src, branches, dst):
        for b in branches:
            edges.append((src, b))
            edges.append((b, dst))

    # f1 / f2 share a2 -> {b1, b2, b3} -> a3
    chain("a1", "a2")
    split("a2", ["b1", "b2", "b3"], "a3")
    chain("c1", "c2", "a2")
    chain("a3", "c3", "c4", "c5", "c6", "c7", "c8", "c9")
    mu.update({q: 7.0 for q in ["a1", "a2", "a3"]})
    mu.update({"b1": 3.0, "b2": 2.5, "b3": 2.0})
    mu.update({f"c{i}": 6.0 for i in range(1, 10)})
    # f3: two sequential two-way splits on a long route
    chain("d1", "d2")
    split("d2", ["e1", "e2"], "d3")
    chain("d3", "d4", "d5")
    split("d5", ["e3", "e4"], "d6")
    chain("d6", "d7", "d8", "d9", "d10", "d11", "d12")
    mu.update({f"d{i}": 5.0 for i in range(1, 13)})
    mu.update({"d9": 7.0, "d10": 7.0})
    mu.update({"e1": 2.0, "e2": 1.5, "e3": 2.0, "e4": 1.2})
    # f4: single short path merging into d9, d10
    chain("g1", "g2", "g3", "g4", "g5", "d9")
    mu.update({f"g{i}": 12.0 for i in range(1, 6)})
    # f5: two sequential two-way splits
    chain("h1", "h2")
    split("h2", ["i1", "i2"], "h3")
    chain("h3", "h4")
    split("h4", ["i3", "i4"], "h5")
    chain("h5", "h6", "h7", "h8", "h9")
    mu.update({f"h{i}": 8.0 for i in range(1, 10)})
    mu.update({"i1": 4.0, "i2": 3.0, "i3": 4.5, "i4": 2.5})

    queues = [{"id": q, "mu_max": m, "service_model": "mm1"} for q, m in sorted(mu.items())]
    junctions = [{"from": a, "to": b} for a, b in edges]
    flows = [
        {"id": "f1", "ingress": "a1", "egress": "a3", "rate": 2.0, "omega": 2.0},
        {"id": "f2", "ingress": "c1", "egress": "c9", "rate": 1.5, "omega": 4.0},
        {"id": "f3", "ingress": "d1", "egress": "d12", "rate": 1.0, "omega": 6.0},
        {"id": "f4", "ingress": "g1", "egress": "d10", "rate": 1.5, "omega": 2.0},
        {"id": "f5", "ingress": "h1", "egress": "h9", "rate": 2.0, "omega": 4.0},
    ]
    return {"description": "Synthetic 49-segment urban surrogate: five flows of different lengths, "
                           "flows f1/f2 overlapping on a three-way split, f3/f4 merging near the end.",
            "queues": queues, "junctions": junctions, "flows": flows}


if __name__ == "__main__":
    for name, build in (("medium", medium), ("large", large)):
        (OUT / f"{name}.json").write_text(json.dumps(build(), indent=1) + "\n")
        print("wrote", OUT / f"{name}.json")
