"""Cascade records: parsing, windowing, filtering, truncation, splitting and graphs.

The canonical input holds one cascade per line::

    <cascade_id> <origin_user> <publish_unixtime> <num_paths> <path_1> ... <path_k>

where each path is ``u0/u1/.../um:t``, meaning user ``um`` joined at relative
time ``t`` by resharing from ``u(m-1)``. A single-user path is the root post.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class CascadeDataError(Exception):
    """Raised for malformed input or structurally invalid cascades."""


class CascadeParseError(CascadeDataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message


@dataclass(frozen=True)
class EventTriplet:
    source: str
    target: str
    time: float

    def __post_init__(self):
        if self.time < 0:
            raise CascadeDataError(f"negative event time {self.time}")
        if self.source == self.target and self.time != 0:
            raise CascadeDataError(f"self-loop triplet ({self.source}, {self.target}, {self.time})")


@dataclass
class RawCascade:
    cascade_id: str
    origin_user: str
    publish_time: float
    triplets: list[EventTriplet]


@dataclass
class Cascade:
    cascade_id: str
    origin_user: str
    publish_time: float
    triplets: list[EventTriplet]
    observation_time: float
    prediction_time: float
    label: int

    @property
    def times(self) -> np.ndarray:
        """Event times including the root post at 0."""
        return np.array([0.0] + [t.time for t in self.triplets])

    def to_json(self) -> str:
        return json.dumps({
            "cascade_id": self.cascade_id,
            "origin_user": self.origin_user,
            "publish_time": self.publish_time,
            "observation_time": self.observation_time,
            "prediction_time": self.prediction_time,
            "label": self.label,
            "triplets": [[t.source, t.target, t.time] for t in self.triplets],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Cascade":
        d = json.loads(line)
        return cls(
            cascade_id=d["cascade_id"],
            origin_user=d["origin_user"],
            publish_time=d["publish_time"],
            triplets=[EventTriplet(s, u, float(t)) for s, u, t in d["triplets"]],
            observation_time=d["observation_time"],
            prediction_time=d["prediction_time"],
            label=int(d["label"]),
        )


@dataclass
class ParseIssue:
    line_no: int
    message: str
    severity: str  # "error" or "warning"


# ---------------------------------------------------------------------------
# parsing


def _parse_line(line: str, line_no: int) -> RawCascade:
    tokens = line.split()
    if len(tokens) < 4:
        raise CascadeParseError(line_no, f"expected at least 4 fields, got {len(tokens)}")
    cascade_id, origin, publish, num = tokens[:4]
    try:
        publish_time = float(publish)
        num_paths = int(num)
    except ValueError as exc:
        raise CascadeParseError(line_no, f"bad header field: {exc}") from None
    paths = tokens[4:]
    if num_paths != len(paths):
        raise CascadeParseError(line_no, f"declared {num_paths} paths, found {len(paths)}")

    parsed = []
    for pos, path in enumerate(paths):
        chain, sep, stamp = path.rpartition(":")
        if not sep or not chain:
            raise CascadeParseError(line_no, f"path {pos + 1} has no ':<time>' suffix: {path!r}")
        try:
            t = float(stamp)
        except ValueError:
            raise CascadeParseError(line_no, f"path {pos + 1} has non-numeric time {stamp!r}") from None
        if not math.isfinite(t):
            raise CascadeParseError(line_no, f"path {pos + 1} has non-finite time")
        users = chain.split("/")
        if any(not u for u in users):
            raise CascadeParseError(line_no, f"path {pos + 1} has an empty user id: {path!r}")
        if users[0] != origin:
            raise CascadeParseError(line_no, f"path {pos + 1} does not start at origin {origin!r}")
        parsed.append((users, t))

    root_times = [t for users, t in parsed if len(users) == 1]
    t0 = min(root_times) if root_times else 0.0

    joined = {origin: t0}
    for users, t in parsed:
        if len(users) > 1:
            joined[users[-1]] = min(t, joined.get(users[-1], math.inf))

    order = sorted(range(len(parsed)), key=lambda k: parsed[k][1])  # stable: file order on ties
    triplets = []
    for k in order:
        users, t = parsed[k]
        if len(users) == 1:
            continue
        src, dst = users[-2], users[-1]
        if src == dst:
            raise CascadeParseError(line_no, f"path {k + 1} reshares from itself")
        if t < t0 or t < joined.get(src, -math.inf):
            raise _NonMonotone(f"path {k + 1} at t={t} precedes its parent {src!r}")
        triplets.append(EventTriplet(src, dst, t - t0))
    return RawCascade(cascade_id, origin, publish_time, triplets)


class _NonMonotone(Exception):
    pass


def parse_lines(lines: Iterable[str]) -> tuple[list[RawCascade], list[ParseIssue]]:
    records, issues = [], []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(_parse_line(line, line_no))
        except CascadeParseError as exc:
            issues.append(ParseIssue(line_no, exc.message, "error"))
            logger.error("parse error at line %d: %s", line_no, exc.message)
        except (_NonMonotone, CascadeDataError) as exc:
            issues.append(ParseIssue(line_no, f"record skipped: {exc}", "warning"))
            logger.warning("line %d: record skipped: %s", line_no, exc)
    return records, issues


def parse_dataset(path, format: str = "canonical") -> tuple[list[RawCascade], list[ParseIssue]]:
    """Read a cascade file.

    Returns the parsed records together with the per-line issues. Malformed
    lines are reported as errors; records whose path times run backwards are
    skipped with a warning.
    """
    if format != "canonical":
        raise ValueError(f"unsupported dataset format {format!r}")
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh)


def format_record(record: RawCascade) -> str:
    """Inverse of parsing for records whose reshare chains are resolvable."""
    chains = {record.origin_user: record.origin_user}
    paths = [f"{record.origin_user}:0"]
    for tr in record.triplets:
        chain = f"{chains[tr.source]}/{tr.target}"
        chains[tr.target] = chain
        paths.append(f"{chain}:{tr.time:g}")
    return " ".join([record.cascade_id, record.origin_user, f"{record.publish_time:g}",
                     str(len(paths)), *paths])


# ---------------------------------------------------------------------------
# windowing and dataset shaping


def window_and_label(record: RawCascade, t_s: float, t_p: float, time_scale: float = 1.0) -> Cascade:
    """Keep events up to ``t_s`` and count the increment in ``(t_s, t_p]``.

    All times (events, ``t_s`` and ``t_p``) are divided by ``time_scale`` in the
    returned cascade.
    """
    if not t_s < t_p:
        raise ValueError(f"observation time {t_s} must precede prediction time {t_p}")
    if time_scale <= 0:
        raise ValueError("time_scale must be positive")
    kept = [EventTriplet(tr.source, tr.target, tr.time / time_scale)
            for tr in record.triplets if tr.time <= t_s]
    label = sum(1 for tr in record.triplets if t_s < tr.time <= t_p)
    return Cascade(record.cascade_id, record.origin_user, record.publish_time, kept,
                   t_s / time_scale, t_p / time_scale, label)


def filter_cascades(cascades: Sequence[Cascade], min_size: int = 10) -> list[Cascade]:
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    return [c for c in cascades if len(c.triplets) >= min_size]


def truncate_triplets(cascade: Cascade, max_triplets: int = 100) -> Cascade:
    if max_triplets < 1:
        raise ValueError("max_triplets must be positive")
    if len(cascade.triplets) <= max_triplets:
        return cascade
    order = sorted(range(len(cascade.triplets)), key=lambda k: cascade.triplets[k].time)
    keep = sorted(order[:max_triplets])
    return Cascade(cascade.cascade_id, cascade.origin_user, cascade.publish_time,
                   [cascade.triplets[k] for k in keep], cascade.observation_time,
                   cascade.prediction_time, cascade.label)


def split_dataset(cascades: Sequence, ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Shuffle under ``seed`` and cut into (train, val, test).

    Validation and test sizes are floored; the remainder goes to train.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(cascades)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    pick = lambda idx: [cascades[i] for i in idx]  # noqa: E731
    return (pick(perm[:n_train]), pick(perm[n_train:n_train + n_val]),
            pick(perm[n_train + n_val:]))


# ---------------------------------------------------------------------------
# graphs


def event_key(user: str, occurrence: int) -> str:
    return user if occurrence == 0 else f"{user}#{occurrence}"


@dataclass
class CascadeGraph:
    """Cascade tree over event nodes.

    Node 0 is the root post; node ``i`` (i >= 1) is the target of triplet
    ``i - 1``. Users that reshare more than once get one node per occurrence.
    """
    nodes: list[str]
    users: list[str]
    edges: list[tuple[int, int]]
    edge_weights: list[float]

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def adjacency(self, min_weight: float = 0.0) -> sp.csr_matrix:
        n = self.num_nodes
        if not self.edges:
            return sp.csr_matrix((n, n))
        rows, cols = zip(*self.edges)
        w = np.maximum(np.asarray(self.edge_weights, dtype=float), min_weight)
        a = sp.coo_matrix((w, (rows, cols)), shape=(n, n))
        return (a + a.T).tocsr()

    def degrees(self, min_weight: float = 0.0) -> np.ndarray:
        return np.asarray(self.adjacency(min_weight).sum(axis=1)).ravel()


def build_cascade_graph(cascade: Cascade, t_s: float | None = None) -> CascadeGraph:
    """Edges run parent -> child with weight ``t_s - child time``.

    A triplet's parent is the most recent node of its source user; a source
    that has not appeared yet is a structural error.
    """
    if t_s is None:
        t_s = cascade.observation_time
    occurrences = {cascade.origin_user: 0}
    latest = {cascade.origin_user: 0}
    nodes, users = [event_key(cascade.origin_user, 0)], [cascade.origin_user]
    edges, weights = [], []
    for i, tr in enumerate(cascade.triplets, start=1):
        if tr.source not in latest:
            raise CascadeDataError(
                f"cascade {cascade.cascade_id}: triplet {i} references unseen parent {tr.source!r}")
        if tr.time > t_s:
            raise CascadeDataError(
                f"cascade {cascade.cascade_id}: triplet {i} at {tr.time} is after t_s={t_s}")
        occ = occurrences.get(tr.target, -1) + 1
        occurrences[tr.target] = occ
        nodes.append(event_key(tr.target, occ))
        users.append(tr.target)
        edges.append((latest[tr.source], i))
        weights.append(t_s - tr.time)
        latest[tr.target] = i
    return CascadeGraph(nodes, users, edges, weights)


@dataclass
class GlobalGraph:
    nodes: list[str]
    edges: set[tuple[str, str]] = field(default_factory=set)

    def index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.nodes)}

    def adjacency(self) -> sp.csr_matrix:
        n = len(self.nodes)
        if not self.edges:
            return sp.csr_matrix((n, n))
        idx = self.index()
        rows = [idx[a] for a, b in self.edges]
        cols = [idx[b] for a, b in self.edges]
        a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return (a + a.T).tocsr()

    def write_edge_list(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for u in self.nodes:
                fh.write(f"# node {u}\n")
            for a, b in sorted(self.edges):
                fh.write(f"{a} {b}\n")

    @classmethod
    def read_edge_list(cls, path) -> "GlobalGraph":
        nodes, seen, edges = [], set(), set()

        def add(u):
            if u not in seen:
                seen.add(u)
                nodes.append(u)

        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("# node "):
                    add(line[len("# node "):])
                    continue
                if line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise CascadeParseError(line_no, "edge line must have two node ids")
                a, b = parts
                add(a)
                add(b)
                if a != b:
                    edges.add((min(a, b), max(a, b)))
        return cls(nodes, edges)


def build_global_graph(cascades: Iterable[Cascade], t_s: float | None = None) -> GlobalGraph:
    """Undirected, unweighted user graph from resharing pairs seen up to ``t_s``.

    ``t_s`` defaults to each cascade's own observation time.
    """
    nodes, seen, edges = [], set(), set()

    def add(u):
        if u not in seen:
            seen.add(u)
            nodes.append(u)

    for c in cascades:
        horizon = c.observation_time if t_s is None else t_s
        add(c.origin_user)
        for tr in c.triplets:
            if tr.time > horizon:
                continue
            add(tr.source)
            add(tr.target)
            if tr.source != tr.target:
                edges.add((min(tr.source, tr.target), max(tr.source, tr.target)))
    return GlobalGraph(nodes, edges)


# ---------------------------------------------------------------------------
# prepared files


def write_cascades(path, cascades: Iterable[Cascade]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cascades:
            fh.write(c.to_json() + "\n")


def read_cascades(path) -> list[Cascade]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return [Cascade.from_json(line) for line in fh if line.strip()]


def dataset_stats(cascades: Sequence[Cascade]) -> dict:
    """Counts and averages comparable to the usual dataset summary table."""
    if not cascades:
        return {"cascades": 0}
    sizes = np.array([len(c.triplets) for c in cascades], dtype=float)
    labels = np.array([c.label for c in cascades], dtype=float)
    depths = []
    for c in cascades:
        g = build_cascade_graph(c)
        depth = [0] * g.num_nodes
        for parent, child in g.edges:
            depth[child] = depth[parent] + 1
        depths.append(np.mean(depth[1:]) if len(depth) > 1 else 0.0)
    return {
        "cascades": len(cascades),
        "avg_popularity": float(labels.mean()),
        "avg_observed_triplets": float(sizes.mean()),
        "avg_sequence_length": float(np.mean(depths)),
    }
