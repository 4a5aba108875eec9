"""Inductive miner: DFG, noise filtering, cut detection, net compilation."""

from collections import Counter

import numpy as np
import pytest

from trafficmine.conformance import trace_fitness
from trafficmine.discovery import (DirectlyFollowsGraph, build_dfg, discover,
                                   filter_dfg, inductive_miner, leaf,
                                   silent_leaf, tree, tree_to_petri)
from trafficmine.petri import can_reach_final

from conftest import playout, random_tree


def _dfg_oracle(traces):
    """Recount adjacency with plain Counters, no shared code."""
    edges, starts, ends = Counter(), Counter(), Counter()
    for tr in traces:
        if not tr:
            continue
        starts[tr[0]] += 1
        ends[tr[-1]] += 1
        edges.update(zip(tr, tr[1:]))
    return dict(edges), dict(starts), dict(ends)


def test_build_dfg_matches_recount():
    traces = [("a", "b", "c"), ("a", "b", "b"), ("c",), ()]
    dfg = build_dfg(traces)
    edges, starts, ends = _dfg_oracle(traces)
    assert dfg.edges == edges
    assert dfg.starts == starts
    assert dfg.ends == ends
    assert dfg.activities == {"a", "b", "c"}


def test_filter_dfg_zero_is_identity():
    dfg = build_dfg([("a", "b"), ("a", "c")])
    assert filter_dfg(dfg, 0.0) is dfg


def test_filter_dfg_drops_relative_to_source_max():
    edges = {("a", "b"): 10, ("a", "c"): 1, ("d", "e"): 1}
    dfg = DirectlyFollowsGraph(activities=frozenset("abcde"), edges=edges,
                               starts={"a": 10, "d": 1}, ends={"b": 9, "c": 1, "e": 1})
    out = filter_dfg(dfg, 0.2)
    # a->c is 1 < 0.2*10; d->e is its own source's max, so it stays
    assert out.edges == {("a", "b"): 10, ("d", "e"): 1}
    # starts: max 10, cutoff 2 -> d dropped; ends: max 9, cutoff 1.8 -> c,e dropped
    assert out.starts == {"a": 10}
    assert out.ends == {"b": 9}
    assert out.activities == dfg.activities


@pytest.mark.parametrize("bad", [-0.1, 1.0, 2.0])
def test_filter_dfg_threshold_range(bad):
    dfg = build_dfg([("a",)])
    with pytest.raises(ValueError):
        filter_dfg(dfg, bad)
    with pytest.raises(ValueError):
        inductive_miner([("a",)], noise_threshold=bad)


def test_miner_base_cases():
    assert inductive_miner([]).to_text() == "tau"
    assert inductive_miner([(), ()]).to_text() == "tau"
    assert inductive_miner([("a",), ("a",)]).to_text() == "a"
    # some empty traces alongside real ones: optional skip
    t = inductive_miner([(), ("a",)])
    assert t.operator == "XOR"
    assert t.children[0].to_text() == "tau"
    assert t.children[1].to_text() == "a"


def test_miner_choice():
    t = inductive_miner([("a",), ("b",)])
    assert t.operator == "XOR"
    assert sorted(c.to_text() for c in t.children) == ["a", "b"]


def test_miner_sequence_with_choice():
    t = inductive_miner([("a", "b"), ("a", "c")])
    assert t.to_text() == "SEQ(a, XOR(b, c))"


def test_miner_parallel():
    t = inductive_miner([("a", "b"), ("b", "a")])
    assert t.operator == "PAR"
    assert sorted(c.to_text() for c in t.children) == ["a", "b"]


def test_miner_loop():
    t = inductive_miner([("a", "b", "a"), ("a",), ("a", "b", "a", "b", "a")])
    assert t.to_text() == "LOOP(a, b)"


def test_miner_flower_fallback():
    # a directed 3-cycle with every activity both a start and an end defeats
    # XOR (connected), SEQ (one SCC), PAR (negated graph connected), and
    # LOOP (no redo candidates left)
    traces = [("a", "b"), ("b", "c"), ("c", "a")]
    t = inductive_miner(traces)
    assert t.operator == "LOOP"
    assert t.children[0].to_text() == "tau"
    assert sorted(c.to_text() for c in t.children[1:]) == ["a", "b", "c"]
    _, net = discover(traces)
    for tr in traces:
        assert trace_fitness(tr, net) == pytest.approx(1.0, abs=1e-12)


def test_miner_deterministic():
    traces = [("a", "b", "c"), ("a", "c", "b"), ("a", "b")]
    assert inductive_miner(traces).to_text() == inductive_miner(traces).to_text()


def test_tree_to_petri_leaf_shape():
    net = tree_to_petri(leaf("a"))
    assert len(net.places) == 2
    assert list(net.transitions.values()) == ["a"]
    assert len(net.arcs) == 2
    assert can_reach_final(net)


def test_tree_to_petri_silent_leaf():
    net = tree_to_petri(silent_leaf())
    assert list(net.transitions.values()) == [None]
    assert can_reach_final(net)


def test_tree_to_petri_replays_own_language():
    cases = [
        (tree("SEQ", leaf("a"), leaf("b")), [("a", "b")]),
        (tree("XOR", leaf("a"), leaf("b")), [("a",), ("b",)]),
        (tree("PAR", leaf("a"), leaf("b")), [("a", "b"), ("b", "a")]),
        (tree("LOOP", leaf("a"), leaf("b")),
         [("a",), ("a", "b", "a"), ("a", "b", "a", "b", "a")]),
        (tree("SEQ", leaf("a"), tree("XOR", leaf("b"), silent_leaf())),
         [("a", "b"), ("a",)]),
    ]
    for node, traces in cases:
        net = tree_to_petri(node)
        for tr in traces:
            assert trace_fitness(tr, net) == pytest.approx(1.0, abs=1e-12), \
                f"{node.to_text()} should replay {tr}"


def test_tree_to_petri_rejects_garbage_operator():
    with pytest.raises(ValueError):
        tree_to_petri(tree("MAYBE", leaf("a")))


def test_discover_perfect_fitness_on_random_logs():
    # with no noise filtering, every observed trace must replay exactly
    rng = np.random.default_rng(1234)
    for _ in range(8):
        alphabet = list("abcdef")[: int(rng.integers(2, 6))]
        traces = []
        for _ in range(int(rng.integers(3, 20))):
            n = int(rng.integers(1, 7))
            traces.append(tuple(alphabet[int(i)]
                                for i in rng.integers(0, len(alphabet), n)))
        _, net = discover(traces, noise_threshold=0.0)
        for tr in set(traces):
            assert trace_fitness(tr, net) == pytest.approx(1.0, abs=1e-12)


def test_rediscovery_from_playouts():
    # logs sampled from a known tree mine back to a model accepting them all
    rng = np.random.default_rng(7)
    for _ in range(5):
        node = random_tree(rng, list("abcde"), depth=2)
        traces = [playout(node, rng) for _ in range(40)]
        mined, net = discover(traces, noise_threshold=0.0)
        assert set(mined.leaves()) - {None} <= set("abcde")
        for tr in set(traces):
            assert trace_fitness(tr, net) == pytest.approx(1.0, abs=1e-12)


def test_to_text_and_leaves():
    node = tree("SEQ", leaf("x"), tree("LOOP", silent_leaf(), leaf("y")))
    assert node.to_text() == "SEQ(x, LOOP(tau, y))"
    assert node.leaves() == ["x", None, "y"]
