"""Seeded temporal processes: asynchronous instants, delays, losses and
random edge realizations.

Every process draws from a PCG64 stream keyed by (seed, process tag, agent
or edge). Steps consume their stream in order, so a process is a pure
function of its parameters and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signed_graph import SignedDigraph

_ASYNC, _DELAY, _LOSS, _NET, _NOISE = 1, 2, 3, 4, 5


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def replicate_seeds(seed: int, count: int) -> list[int]:
    """Independent child seeds for Monte Carlo replicates."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


@dataclass(frozen=True)
class AsyncSchedule:
    instants: tuple[tuple[int, ...], ...]
    h: int
    horizon: int

    @property
    def n(self) -> int:
        return len(self.instants)

    def active_matrix(self) -> np.ndarray:
        """Boolean (horizon, n): follower i updates at step k."""
        act = np.zeros((self.horizon, self.n), dtype=bool)
        for i, s in enumerate(self.instants):
            s = np.asarray(s, dtype=int)
            act[s[s < self.horizon], i] = True
        return act

    def active(self, k: int) -> np.ndarray:
        return np.array([k in set(s) for s in self.instants])

    def to_json(self) -> dict:
        return {"h": self.h, "horizon": self.horizon, "instants": [list(s) for s in self.instants]}

    @classmethod
    def from_json(cls, data: dict) -> "AsyncSchedule":
        return cls(tuple(tuple(int(x) for x in s) for s in data["instants"]), int(data["h"]), int(data["horizon"]))


def synchronous(n: int, horizon: int) -> AsyncSchedule:
    return AsyncSchedule(tuple(tuple(range(horizon)) for _ in range(n)), 1, horizon)


def generate_async(n: int, horizon: int, h: int, seed: int) -> AsyncSchedule:
    """Gaps drawn uniformly from {1..h}, starting at instant 0."""
    if h < 1:
        raise ValueError("h must be at least 1")
    out = []
    for i in range(n):
        rng = stream(seed, _ASYNC, i)
        gaps = rng.integers(1, h + 1, size=horizon + 1)
        s = np.concatenate([[0], np.cumsum(gaps)])
        out.append(tuple(int(x) for x in s[s < horizon]))
    return AsyncSchedule(tuple(out), h, horizon)


def validate_async(s: AsyncSchedule) -> bool:
    for inst in s.instants:
        if not inst or inst[0] != 0:
            return False
        gaps = np.diff(inst)
        if np.any(gaps <= 0) or np.any(gaps > s.h):
            return False
        # the trailing gap up to the horizon must not exceed h either
        if s.horizon - inst[-1] > s.h:
            return False
    return True


@dataclass(frozen=True)
class DelayProcess:
    follower: np.ndarray  # (horizon, n, n) delay on edge j -> i
    leader: np.ndarray  # (horizon, n)
    sigma_max: int

    @property
    def horizon(self) -> int:
        return self.follower.shape[0]

    def to_json(self) -> dict:
        return {"sigma_max": self.sigma_max, "follower": self.follower.tolist(), "leader": self.leader.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "DelayProcess":
        d = cls(np.array(data["follower"], dtype=int), np.array(data["leader"], dtype=int), int(data["sigma_max"]))
        if d.follower.min(initial=0) < 0 or d.follower.max(initial=0) > d.sigma_max \
                or d.leader.min(initial=0) < 0 or d.leader.max(initial=0) > d.sigma_max:
            raise ValueError("delay outside 0..sigma_max")
        return d


def sample_delays(g: SignedDigraph, horizon: int, sigma_max: int, seed: int) -> DelayProcess:
    """i.i.d. uniform delays in {0..sigma_max}, one stream per edge."""
    if sigma_max < 0:
        raise ValueError("sigma_max must be nonnegative")
    n = g.n
    follower = np.zeros((horizon, n, n), dtype=int)
    leader = np.zeros((horizon, n), dtype=int)
    for i, j in zip(*np.nonzero(g.adj)):
        follower[:, i, j] = stream(seed, _DELAY, i, j).integers(0, sigma_max + 1, size=horizon)
    for i in np.nonzero(g.leader)[0]:
        leader[:, i] = stream(seed, _DELAY, i, n).integers(0, sigma_max + 1, size=horizon)
    return DelayProcess(follower, leader, sigma_max)


@dataclass(frozen=True)
class LossProcess:
    theta: np.ndarray
    theta_bar: float
    seed: int


def _check_prob(p, name):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return p


def sample_losses(horizon: int, theta_bar: float, seed: int) -> LossProcess:
    _check_prob(theta_bar, "theta_bar")
    theta = (stream(seed, _LOSS).random(horizon) < theta_bar).astype(int)
    return LossProcess(theta, float(theta_bar), seed)


@dataclass(frozen=True)
class RandomSignedNetwork:
    """Edge j -> i present with probability probs[i, j], leader edge with leader_probs[i]."""

    weights: SignedDigraph
    probs: np.ndarray
    leader_probs: np.ndarray
    seed: int = 0

    def __post_init__(self):
        n = self.weights.n
        p = _check_prob(self.probs, "edge probability")
        p0 = _check_prob(self.leader_probs, "leader edge probability")
        if p.shape != (n, n) or p0.shape != (n,):
            raise ValueError("probability shapes must match the weight graph")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "leader_probs", p0)

    @property
    def n(self) -> int:
        return self.weights.n

    def expected_graph(self) -> SignedDigraph:
        return SignedDigraph(self.probs * self.weights.adj, self.leader_probs * self.weights.leader)

    def masks(self, horizon: int, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Edge-presence draws for steps 0..horizon-1: (horizon, n, n) and (horizon, n)."""
        rng = stream(self.seed if seed is None else seed, _NET)
        u = rng.random((horizon, self.n, self.n + 1))
        return u[:, :, :self.n] < self.probs, u[:, :, self.n] < self.leader_probs


def realize_network(r: RandomSignedNetwork, k: int) -> SignedDigraph:
    edges, pins = r.masks(k + 1)
    return SignedDigraph(r.weights.adj * edges[k], r.weights.leader * pins[k])


def noise_stream(seed: int) -> np.random.Generator:
    return stream(seed, _NOISE)
