"""Signed leader-follower digraphs and the structural conditions on them.

Followers are indexed 0..n-1 internally. ``adj[i, j]`` is the weight on the
edge carrying follower j's state to follower i, and ``leader[i]`` is the
weight on the leader's edge into follower i. Graph files use 1-based indices.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SignedDigraph:
    adj: np.ndarray
    leader: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adj, dtype=float)
        leader = np.array(self.leader, dtype=float).reshape(-1)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if adj.shape[0] < 1:
            raise ValueError("need at least one follower")
        if leader.shape[0] != adj.shape[0]:
            raise ValueError("leader weights must have one entry per follower")
        if not (np.isfinite(adj).all() and np.isfinite(leader).all()):
            raise ValueError("weights must be finite")
        if np.any(np.diag(adj) != 0.0):
            raise ValueError("self-loops are not allowed")
        adj.setflags(write=False)
        leader.setflags(write=False)
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "leader", leader)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def degree_matrix(self) -> np.ndarray:
        return np.diag(np.abs(self.adj).sum(axis=1))

    def pinning_matrix(self) -> np.ndarray:
        return np.diag(np.abs(self.leader))

    def laplacian(self) -> np.ndarray:
        """D + B - |A|, the signed-gauge Laplacian with leader pinning."""
        return self.degree_matrix() + self.pinning_matrix() - np.abs(self.adj)

    def edge_count(self) -> int:
        return int(np.count_nonzero(self.adj) + np.count_nonzero(self.leader))

    def with_weights(self, adj=None, leader=None) -> "SignedDigraph":
        return SignedDigraph(self.adj if adj is None else adj,
                             self.leader if leader is None else leader)

    def masked(self, active: np.ndarray) -> "SignedDigraph":
        """Keep only the in-edges of followers flagged active."""
        rows = np.asarray(active, dtype=bool)
        return SignedDigraph(self.adj * rows[:, None], self.leader * rows)

    # serialization

    def to_json(self) -> dict:
        edges = [[int(i) + 1, int(j) + 1, float(self.adj[i, j])]
                 for i, j in zip(*np.nonzero(self.adj))]
        leader = [[int(i) + 1, float(self.leader[i])]
                  for i in np.nonzero(self.leader)[0]]
        return {"n": self.n, "edges": edges, "leader": leader}

    @classmethod
    def from_json(cls, data: dict) -> "SignedDigraph":
        unknown = set(data) - {"n", "edges", "leader", "asserted"}
        if unknown:
            raise ValueError(f"unknown graph keys: {sorted(unknown)}")
        n = int(data["n"])
        adj = np.zeros((n, n))
        leader = np.zeros(n)
        for i, j, w in data.get("edges", []):
            _check_index(i, n)
            _check_index(j, n)
            adj[int(i) - 1, int(j) - 1] = float(w)
        for i, w in data.get("leader", []):
            _check_index(i, n)
            leader[int(i) - 1] = float(w)
        return cls(adj, leader)


def _check_index(i, n):
    if not (1 <= int(i) <= n) or int(i) != i:
        raise ValueError(f"vertex index {i} outside 1..{n}")


def load_graph(path) -> SignedDigraph:
    data = json.loads(Path(path).read_text())
    g = SignedDigraph.from_json(data)
    if "asserted" in data:
        assert_constants(g, data["asserted"])
    return g


@dataclass(frozen=True)
class GaugePartition:
    sigma: np.ndarray

    @property
    def group_one(self) -> list[int]:
        return [i for i, s in enumerate(self.sigma) if s > 0]

    @property
    def group_two(self) -> list[int]:
        return [i for i, s in enumerate(self.sigma) if s < 0]


@dataclass(frozen=True)
class Unbalanced:
    # cycle of vertex labels (-1 is the leader) whose edge signs multiply to -1
    cycle: list[int]


def gauge_partition(g: SignedDigraph) -> GaugePartition | Unbalanced:
    """Find sigma with sign(a_ij) = sigma_i sigma_j and sign(a_i0) = sigma_i.

    Signed BFS over the undirected support, the leader being vertex -1 with
    sigma fixed to +1. Followers with no constraint at all keep +1.
    """
    n = g.n
    nbrs: dict[int, list[tuple[int, int]]] = {v: [] for v in range(-1, n)}
    for i, j in zip(*np.nonzero(g.adj)):
        s = 1 if g.adj[i, j] > 0 else -1
        nbrs[int(i)].append((int(j), s))
        nbrs[int(j)].append((int(i), s))
    for i in np.nonzero(g.leader)[0]:
        s = 1 if g.leader[i] > 0 else -1
        nbrs[int(i)].append((-1, s))
        nbrs[-1].append((int(i), s))

    sign: dict[int, int] = {}
    parent: dict[int, int | None] = {}
    for start in [-1] + list(range(n)):
        if start in sign:
            continue
        sign[start] = 1
        parent[start] = None
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v, s in nbrs[u]:
                want = sign[u] * s
                if v not in sign:
                    sign[v] = want
                    parent[v] = u
                    queue.append(v)
                elif sign[v] != want:
                    return Unbalanced(_witness_cycle(parent, u, v))
    sigma = np.array([sign[i] for i in range(n)], dtype=float)
    return GaugePartition(sigma)


def _witness_cycle(parent, u, v) -> list[int]:
    def path_to_root(x):
        out = [x]
        while parent[x] is not None:
            x = parent[x]
            out.append(x)
        return out

    pu, pv = path_to_root(u), path_to_root(v)
    common = set(pu) & set(pv)
    meet = next(x for x in pu if x in common)
    # u .. meet, then back down to v; the conflicting edge (v, u) closes it
    left = pu[:pu.index(meet) + 1]
    right = pv[:pv.index(meet)]
    return left + right[::-1]


@dataclass(frozen=True)
class Reachability:
    holds: bool
    P: int
    unreachable: frozenset


def leader_reaches_all(g: SignedDigraph) -> Reachability:
    n = g.n
    dist = np.full(n, -1)
    queue = deque()
    for i in np.nonzero(g.leader)[0]:
        dist[i] = 1
        queue.append(int(i))
    while queue:
        j = queue.popleft()
        for i in np.nonzero(g.adj[:, j])[0]:
            if dist[i] < 0:
                dist[i] = dist[j] + 1
                queue.append(int(i))
    unreachable = frozenset(int(i) for i in np.nonzero(dist < 0)[0])
    P = int(dist.max()) if dist.max() > 0 else 0
    return Reachability(not unreachable, P, unreachable)


@dataclass(frozen=True)
class GraphConstants:
    d_M: float
    b_m: float | None
    P: int
    rho_lower: float | None
    rho_upper: float | None


def graph_constants(g: SignedDigraph) -> GraphConstants:
    rowsum = np.abs(g.adj).sum(axis=1) + np.abs(g.leader)
    pins = np.abs(g.leader[g.leader != 0])
    weights = np.concatenate([np.abs(g.adj[g.adj != 0]), pins])
    return GraphConstants(
        d_M=float(rowsum.max()),
        b_m=float(pins.min()) if pins.size else None,
        P=leader_reaches_all(g).P,
        rho_lower=float(weights.min()) if weights.size else None,
        rho_upper=float(weights.max()) if weights.size else None,
    )


def assert_constants(g: SignedDigraph, asserted: dict, tol: float = 1e-12):
    """Fail loudly when a transcribed graph disagrees with its stated constants."""
    c = graph_constants(g)
    for key, want in asserted.items():
        if key == "balanced":
            got = isinstance(gauge_partition(g), GaugePartition)
        elif key == "leader_reaches_all":
            got = leader_reaches_all(g).holds
        elif key in ("d_M", "b_m", "P", "rho_lower", "rho_upper"):
            got = getattr(c, key)
        else:
            raise ValueError(f"unknown asserted constant {key!r}")
        if isinstance(want, bool) or got is None:
            ok = got == want
        else:
            ok = abs(float(got) - float(want)) <= tol
        if not ok:
            raise ValueError(f"graph constant {key}: expected {want}, got {got}")


@dataclass
class SwitchingSequence:
    """Graphs indexed by a switching signal over consecutive intervals."""

    graphs: list[SignedDigraph]
    signal: list[int]
    bounds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        ns = {g.n for g in self.graphs}
        if len(ns) != 1:
            raise ValueError("all graphs must share the follower count")
        if any(not 0 <= s < len(self.graphs) for s in self.signal):
            raise ValueError("signal refers to a missing graph")
        b = list(self.bounds)
        if not b or b[0] != 0 or any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("interval bounds must start at 0 and increase")

    @property
    def n(self) -> int:
        return self.graphs[0].n

    def graph_at(self, k: int) -> SignedDigraph:
        return self.graphs[self.signal[k % len(self.signal)]]

    def interval(self, j: int) -> tuple[int, int]:
        """Steps [s_j, s_{j+1}), with bounds extended periodically past the list."""
        if j < 0:
            raise IndexError("interval index must be nonnegative")
        period = self.bounds[-1]
        inner = len(self.bounds) - 1
        if inner < 1:
            raise IndexError("sequence has no complete interval")
        q, r = divmod(j, inner)
        return q * period + self.bounds[r], q * period + self.bounds[r + 1]

    @property
    def varsigma(self) -> int:
        return max(y - x for x, y in zip(self.bounds, self.bounds[1:]))


def periodic_sequence(graphs, pattern, interval_len) -> SwitchingSequence:
    """Signal cycling through ``pattern``; intervals of ``interval_len`` steps."""
    period = len(pattern)
    if period % interval_len:
        raise ValueError("interval length must divide the pattern length")
    bounds = list(range(0, period + 1, interval_len))
    return SwitchingSequence(list(graphs), list(pattern), bounds)


def union_graph(seq: SwitchingSequence, j: int) -> SignedDigraph:
    start, stop = seq.interval(j)
    adj = np.zeros((seq.n, seq.n))
    leader = np.zeros(seq.n)
    for k in range(start, stop):
        g = seq.graph_at(k)
        adj = np.where(adj == 0, g.adj, adj)
        leader = np.where(leader == 0, g.leader, leader)
    return SignedDigraph(adj, leader)
