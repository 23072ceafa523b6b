import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from concat.data import (Cascade, CascadeDataError, EventTriplet, RawCascade, build_cascade_graph,
                         build_global_graph, dataset_stats, filter_cascades, format_record,
                         GlobalGraph, parse_dataset, parse_lines, read_cascades, split_dataset,
                         truncate_triplets, window_and_label, write_cascades)
from concat.synthetic import synthetic_records


def raw(times, cid="c", origin="u0"):
    trips = [EventTriplet(origin, f"v{k}", float(t)) for k, t in enumerate(times)]
    return RawCascade(cid, origin, 0.0, trips)


def cascade(trips, t_s=30.0, cid="c", origin="u0", label=0):
    return Cascade(cid, origin, 0.0, [EventTriplet(*t) for t in trips], t_s, 2 * t_s, label)


# --- parsing ---------------------------------------------------------------

def test_parse_reference_line():
    records, issues = parse_lines(["42 u0 1300000000 3 u0:0 u0/u1:10 u0/u1/u2:25"])
    assert issues == []
    (r,) = records
    assert r.cascade_id == "42" and r.origin_user == "u0"
    assert r.triplets == [EventTriplet("u0", "u1", 10.0), EventTriplet("u1", "u2", 25.0)]


def test_parse_root_only():
    (r,), _ = parse_lines(["7 a 1 1 a:0"])
    assert r.triplets == []


def test_parse_file_with_malformed_line(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text("1 a 0 2 a:0 a/b:3\n"
                    "2 a 0 2 a:0 a/b\n"  # no time suffix
                    "3 x 0 1 x:0\n"
                    "4 y 0 3 y:0 y/z:1 y/z/w:2\n")
    records, issues = parse_dataset(path)
    assert [r.cascade_id for r in records] == ["1", "3", "4"]
    assert len(issues) == 1 and issues[0].line_no == 2 and issues[0].severity == "error"


@pytest.mark.parametrize("line", [
    "1 a 0 3 a:0 a/b:3",  # count mismatch
    "1 a 0 2 a:0 b/c:3",  # path not from origin
    "1 a 0 2 a:0 a/b:x",  # bad time
    "1 a 0",  # too short
])
def test_parse_errors_name_the_line(line):
    records, issues = parse_lines(["", line])
    assert records == [] and issues[0].line_no == 2 and issues[0].severity == "error"


def test_non_monotone_record_is_skipped_with_warning():
    records, issues = parse_lines(["1 a 0 3 a:0 a/b:10 a/b/c:5"])
    assert records == [] and issues[0].severity == "warning"


def test_parse_sorts_paths_by_time():
    (r,), _ = parse_lines(["1 a 0 3 a:0 a/c:9 a/b:4"])
    assert [t.target for t in r.triplets] == ["b", "c"]


def test_format_record_round_trips():
    for rec in synthetic_records(5, seed=3):
        (back,), issues = parse_lines([format_record(rec)])
        assert not issues
        assert back.triplets == rec.triplets


# --- windowing and shaping --------------------------------------------------

def test_window_reference_example():
    c = window_and_label(raw([0.1, 0.4, 0.9, 2.0, 5.0]), 1.0, 3.0)
    assert len(c.triplets) == 3 and c.label == 1


def test_window_all_after_observation():
    c = window_and_label(raw([2.0, 2.5, 4.0]), 1.0, 3.0)
    assert c.triplets == [] and c.label == 2


def test_window_horizon_beyond_last_event():
    c = window_and_label(raw([0.5, 2.0, 5.0]), 1.0, 100.0)
    assert c.label == 2


def test_window_time_scale():
    c = window_and_label(raw([1800.0, 7200.0]), 3600.0, 86400.0, time_scale=3600.0)
    assert c.observation_time == 1.0 and c.prediction_time == 24.0
    assert c.triplets[0].time == 0.5 and c.label == 1


@given(st.lists(st.floats(0, 10, allow_nan=False), max_size=30),
       st.floats(0.1, 5), st.floats(0.1, 5))
def test_window_invariants(times, t_s, extra):
    t_p = t_s + extra
    c = window_and_label(raw(sorted(times)), t_s, t_p)
    assert all(tr.time <= t_s for tr in c.triplets)
    assert c.label == sum(1 for t in times if t_s < t <= t_p)


def test_filter_threshold():
    nine = cascade([("u0", f"v{k}", 1.0) for k in range(9)])
    ten = cascade([("u0", f"v{k}", 1.0) for k in range(10)])
    assert filter_cascades([nine, ten], 10) == [ten]
    empty = cascade([])
    assert filter_cascades([nine, empty], 1) == [nine]


def test_truncate_prefix_and_identity():
    c = cascade([("u0", f"v{k}", float(k)) for k in range(150)], t_s=200)
    t = truncate_triplets(c, 100)
    assert [tr.time for tr in t.triplets] == [float(k) for k in range(100)]
    small = cascade([("u0", f"v{k}", float(k)) for k in range(50)], t_s=200)
    assert truncate_triplets(small, 100) is small


def test_truncate_ties_follow_file_order():
    c = cascade([("u0", "a", 1.0), ("u0", "b", 2.0), ("u0", "c", 2.0), ("u0", "d", 2.0)])
    assert [tr.target for tr in truncate_triplets(c, 2).triplets] == ["a", "b"]
    assert [tr.target for tr in truncate_triplets(c, 3).triplets] == ["a", "b", "c"]


@pytest.mark.parametrize("n,sizes", [(100, (70, 15, 15)), (101, (71, 15, 15))])
def test_split_sizes(n, sizes):
    parts = split_dataset(list(range(n)), seed=1)
    assert tuple(len(p) for p in parts) == sizes


@given(st.integers(0, 200), st.integers(0, 2**31))
def test_split_partition_and_determinism(n, seed):
    items = list(range(n))
    a = split_dataset(items, seed=seed)
    b = split_dataset(items, seed=seed)
    assert a == b
    flat = sorted(x for part in a for x in part)
    assert flat == items


# --- graphs -----------------------------------------------------------------

def test_cascade_graph_reference_example():
    g = build_cascade_graph(cascade([("u0", "u1", 10.0), ("u0", "u2", 20.0)]), t_s=30.0)
    assert g.num_nodes == 3
    assert g.edges == [(0, 1), (0, 2)]
    assert g.edge_weights == [20.0, 10.0]


def test_cascade_graph_zero_weight_at_observation_time():
    g = build_cascade_graph(cascade([("u0", "u1", 30.0)]), t_s=30.0)
    assert g.edge_weights == [0.0]


def test_repeat_retweeter_gets_occurrence_node():
    c = cascade([("u0", "u1", 1.0), ("u1", "u2", 2.0), ("u0", "u2", 3.0), ("u2", "u3", 4.0)])
    g = build_cascade_graph(c)
    assert g.nodes == ["u0", "u1", "u2", "u2#1", "u3"]
    # the later reshare hangs off the most recent occurrence of its source
    assert g.edges[-1] == (3, 4)
    assert g.num_nodes == 1 + len(c.triplets)


def test_unseen_parent_is_structural_error():
    with pytest.raises(CascadeDataError, match="unseen parent"):
        build_cascade_graph(cascade([("zz", "u1", 1.0)]))


@given(st.integers(0, 40), st.integers(0, 1000))
def test_cascade_graph_counts(n, seed):
    rng = np.random.default_rng(seed)
    users = ["u0"]
    trips = []
    for k in range(n):
        src = users[rng.integers(len(users))]
        dst = f"v{rng.integers(10)}"
        if dst == src:
            continue
        trips.append((src, dst, float(k)))
        users.append(dst)
    g = build_cascade_graph(cascade(trips, t_s=100.0))
    assert g.num_nodes == 1 + len(trips)
    assert len(g.edges) == len(trips)
    assert len(set(g.nodes)) == g.num_nodes


def test_global_graph_dedup_leakage_and_empty():
    a = cascade([("u0", "a", 1.0), ("a", "b", 2.0)], cid="1")
    b = cascade([("b", "a", 1.0), ("b", "z", 40.0)], origin="b", cid="2")
    g = build_global_graph([a, b], t_s=30.0)
    assert g.edges == {("a", "u0"), ("a", "b")}
    assert "z" not in g.nodes
    empty = build_global_graph([])
    assert empty.nodes == [] and empty.edges == set()
    assert empty.adjacency().shape == (0, 0)


def test_global_edge_list_round_trip(tmp_path):
    g = build_global_graph([cascade([("u0", "a", 1.0), ("a", "b", 2.0)]), cascade([], origin="lonely")])
    g.write_edge_list(tmp_path / "g.edges")
    back = GlobalGraph.read_edge_list(tmp_path / "g.edges")
    assert back.nodes == g.nodes and back.edges == g.edges


def test_cascade_jsonl_round_trip(tmp_path):
    cs = [cascade([("u0", "a", 1.5)], label=4), cascade([], cid="x")]
    write_cascades(tmp_path / "c.jsonl", cs)
    assert read_cascades(tmp_path / "c.jsonl") == cs


def test_dataset_stats():
    cs = [cascade([("u0", "a", 1.0), ("a", "b", 2.0)], label=3), cascade([("u0", "a", 1.0)], label=1)]
    s = dataset_stats(cs)
    assert s["cascades"] == 2
    assert s["avg_popularity"] == 2.0
    assert s["avg_observed_triplets"] == 1.5
    assert math.isclose(s["avg_sequence_length"], (1.5 + 1.0) / 2)
