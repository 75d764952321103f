"""Scenario protocols: agent update laws, error-system matrices and gain gates.

Every scenario kind reduces, step by step, to an effective signed graph (the
edges that actually act at that step) plus one of five protocol families:

* ``first``: single integrators, x_i += tau psi (coupling)
* ``static``: double integrators chasing a static leader with damping -gamma v
* ``active``: double integrators chasing a constant-velocity leader
* ``linear``: x_i <- A x_i + B K (coupling)
* ``estimation``: followers that estimate the leader velocity and acceleration

The error matrices are built from the effective graph alone, while the agent
laws work on raw states, so comparing the two is a genuine cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import schedule as sch
from .signed_graph import (GaugePartition, SignedDigraph, SwitchingSequence, assert_constants,
                           gauge_partition, graph_constants, leader_reaches_all, load_graph, union_graph)
from .stochastic_matrix import min_positive, spectral_radius

FAMILY = {
    "first_order_async": "first",
    "second_order_static_async": "static",
    "second_order_active_async": "active",
    "general_linear_async": "linear",
    "second_order_delay": "static",
    "switch_static": "static",
    "switch_active": "active",
    "packet_loss": "active",
    "random_network": "active",
    "disturb_static": "static",
    "disturb_active": "active",
    "noise": "active",
    "unmeasurable_leader": "estimation",
}
ASYNC_KINDS = {"first_order_async", "second_order_static_async", "second_order_active_async",
               "general_linear_async"}
STOCHASTIC_KINDS = {"packet_loss", "random_network"}
BOUNDED_KINDS = {"noise", "unmeasurable_leader"}
REQUIRED_GAINS = {
    "first": ("tau", "psi"),
    "static": ("tau", "gamma"),
    "active": ("tau", "beta", "alpha"),
    "linear": ("tau", "psi_star"),
    "estimation": ("tau", "phi1", "phi2"),
}


@dataclass(frozen=True)
class GainParameters:
    tau: float
    psi: float | None = None
    gamma: float | None = None
    beta: float | None = None
    alpha: float | None = None
    psi_star: float | None = None
    phi1: float | None = None
    phi2: float | None = None

    def require(self, *names):
        for name in names:
            v = getattr(self, name)
            if v is None:
                raise ValueError(f"gain {name} is required")
            if not v > 0:
                raise ValueError(f"gain {name} must be positive")
        if "alpha" in names and not self.alpha > 1:
            raise ValueError("alpha must exceed 1")


@dataclass(frozen=True)
class Signal:
    """Scalar disturbance shared by all agents (sine) or i.i.d. per agent (uniform)."""

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "sine", "uniform"):
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("signal amplitude must be nonnegative")

    @property
    def bound(self) -> float:
        return 0.0 if self.kind == "zero" else float(self.amplitude)

    def values(self, horizon: int, shape: tuple) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros((horizon, *shape))
        if self.kind == "sine":
            k = np.arange(horizon, dtype=float)
            base = self.amplitude * np.sin(self.frequency * k)
            return np.broadcast_to(base.reshape(-1, *([1] * len(shape))), (horizon, *shape)).copy()
        rng = sch.noise_stream(self.seed)
        return rng.uniform(-self.amplitude, self.amplitude, size=(horizon, *shape))


@dataclass
class ScenarioSpec:
    kind: str
    gains: GainParameters
    horizon: int
    x: np.ndarray
    v: np.ndarray | None = None
    leader_x: np.ndarray | None = None
    leader_v: np.ndarray | None = None
    graph: SignedDigraph | None = None
    switching: SwitchingSequence | None = None
    h: int = 1
    seed: int = 0
    sigma_max: int = 0
    theta_bar: float = 1.0
    edge_prob: np.ndarray | None = None
    leader_prob: np.ndarray | None = None
    delta: SignedDigraph | None = None
    noise: Signal = field(default_factory=Signal)
    accel_estimate: float = 0.0
    accel_error: Signal = field(default_factory=Signal)
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    schedule: sch.AsyncSchedule | None = None
    delays: sch.DelayProcess | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in FAMILY:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        # the noise error map never uses alpha
        self.gains.require(*(("tau", "beta") if self.kind == "noise" else REQUIRED_GAINS[self.family]))
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.kind in ("switch_static", "switch_active"):
            if self.switching is None:
                raise ValueError("switching scenarios need a switching sequence")
        elif self.graph is None:
            raise ValueError("scenario needs a graph")
        n = self.n
        self.x = np.array(self.x, dtype=float).reshape(n, -1)
        p = self.x.shape[1]
        self.v = np.zeros((n, p)) if self.v is None else np.array(self.v, dtype=float).reshape(n, p)
        if self.leader_x is None:
            self.leader_x = np.zeros(p)
        self.leader_x = np.array(self.leader_x, dtype=float).reshape(p)
        self.leader_v = np.zeros(p) if self.leader_v is None else np.array(self.leader_v, dtype=float).reshape(p)
        if self.family in ("first", "static") and np.any(self.leader_v != 0):
            raise ValueError("this scenario has a static leader; leader_v must be zero")
        if self.family == "linear":
            if self.A is None or self.B is None:
                raise ValueError("general linear scenarios need A and B")
            self.A = np.array(self.A, dtype=float)
            self.B = np.array(self.B, dtype=float)
            if self.A.shape != (p, p) or self.B.shape[0] != p:
                raise ValueError("A must be p x p and B must have p rows")
        if self.kind == "random_network":
            self.edge_prob = np.broadcast_to(np.asarray(self.edge_prob if self.edge_prob is not None else 1.0, float), (n, n)).copy()
            self.leader_prob = np.broadcast_to(np.asarray(self.leader_prob if self.leader_prob is not None else 1.0, float), (n,)).copy()
        if self.kind in ("disturb_static", "disturb_active"):
            if self.delta is None:
                raise ValueError("disturbance scenarios need delta weights")
            check_same_type(self.graph, self.delta)
        if not 0 <= self.theta_bar <= 1:
            raise ValueError("theta_bar must lie in [0, 1]")
        if self.h < 1 or self.sigma_max < 0:
            raise ValueError("h must be >= 1 and sigma_max >= 0")

    @property
    def family(self) -> str:
        return FAMILY[self.kind]

    @property
    def n(self) -> int:
        return (self.graph or (self.switching.graphs[0] if self.switching else None)).n

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def base_graph(self) -> SignedDigraph:
        """The graph the gauge and the gates are computed on."""
        if self.switching is not None:
            seq = self.switching
            return union_graph(SwitchingSequence(seq.graphs, seq.signal, [0, len(seq.signal)]), 0)
        if self.kind in ("disturb_static", "disturb_active"):
            return disturbed_graph(self.graph, self.delta)
        return self.graph

    def network(self) -> sch.RandomSignedNetwork:
        return sch.RandomSignedNetwork(self.graph, self.edge_prob, self.leader_prob, self.seed)


def check_same_type(g: SignedDigraph, delta: SignedDigraph):
    """Disturbances may only touch existing edges and must not flip signs."""
    for a, d in ((g.adj, delta.adj), (g.leader, delta.leader)):
        if np.any((a == 0) & (d != 0)) or np.any(a * d < 0):
            raise ValueError("disturbance must share the sign pattern of the weights")


def disturbed_graph(g: SignedDigraph, delta: SignedDigraph) -> SignedDigraph:
    return SignedDigraph(g.adj + delta.adj, g.leader + delta.leader)


def gauge(spec: ScenarioSpec) -> np.ndarray:
    part = gauge_partition(spec.base_graph())
    if not isinstance(part, GaugePartition):
        raise ValueError(f"graph is not structurally balanced; witness cycle {part.cycle}")
    return part.sigma


# per-step processes


@dataclass
class Realization:
    active: np.ndarray
    theta: np.ndarray | None = None
    edges: np.ndarray | None = None
    pins: np.ndarray | None = None
    delays: sch.DelayProcess | None = None
    noise: np.ndarray | None = None
    accel_error: np.ndarray | None = None
    schedule: sch.AsyncSchedule | None = None


def realize(spec: ScenarioSpec, horizon: int | None = None, seed: int | None = None) -> Realization:
    H = spec.horizon if horizon is None else horizon
    seed = spec.seed if seed is None else seed
    n, p = spec.n, spec.p
    real = Realization(active=np.ones((H, n), dtype=bool))
    if spec.kind in ASYNC_KINDS:
        s = spec.schedule
        if s is None or s.horizon < H:
            s = sch.generate_async(n, H, spec.h, seed)
        real.schedule = s
        real.active = s.active_matrix()[:H]
    if spec.kind == "second_order_delay":
        d = spec.delays
        if d is None or d.horizon < H:
            d = sch.sample_delays(spec.graph, H, spec.sigma_max, seed)
        real.delays = d
    if spec.kind == "packet_loss":
        real.theta = sch.sample_losses(H, spec.theta_bar, seed).theta
    if spec.kind == "random_network":
        real.edges, real.pins = spec.network().masks(H, seed)
    if spec.kind == "noise":
        real.noise = spec.noise.values(H, (n, p))
    if spec.kind == "unmeasurable_leader":
        real.accel_error = spec.accel_error.values(H, (p,))
    return real


def effective_graph(spec: ScenarioSpec, real: Realization, k: int) -> SignedDigraph:
    """Edges acting at step k, after asynchrony, switching, loss or sampling."""
    kind = spec.kind
    if kind in ASYNC_KINDS:
        return spec.graph.masked(real.active[k])
    if kind in ("switch_static", "switch_active"):
        return spec.switching.graph_at(k)
    if kind == "packet_loss":
        return spec.graph if real.theta[k] else spec.graph.masked(np.zeros(spec.n, dtype=bool))
    if kind == "random_network":
        return SignedDigraph(spec.graph.adj * real.edges[k], spec.graph.leader * real.pins[k])
    if kind in ("disturb_static", "disturb_active"):
        return disturbed_graph(spec.graph, spec.delta)
    return spec.graph


# matrix builders


def _laplacian(g: SignedDigraph) -> np.ndarray:
    return g.laplacian()


def m_matrix(g: SignedDigraph, gains: GainParameters) -> np.ndarray:
    return np.eye(g.n) - gains.tau * gains.psi * _laplacian(g)


def c_matrix(g: SignedDigraph, gains: GainParameters) -> np.ndarray:
    n, t, y = g.n, gains.tau, gains.gamma
    eye = np.eye(n)
    return np.block([
        [(1 - y * t / 2) * eye, (y * t / 2) * eye],
        [(y * t / 2) * eye - (2 * t / y) * _laplacian(g), (1 - y * t / 2) * eye],
    ])


def h_matrices(g: SignedDigraph, gains: GainParameters) -> tuple[np.ndarray, np.ndarray]:
    """Active-leader error matrix and its entrywise-absolute companion."""
    n, t, b, a = g.n, gains.tau, gains.beta, gains.alpha
    eye = np.eye(n)
    lower_right = (1 + t / b) * eye - b * t * _laplacian(g)
    H = np.block([[(1 - t / b) * eye, t / (a * b) * eye], [-(a * t / b) * eye, lower_right]])
    Psi = np.block([[(1 - t / b) * eye, t / (a * b) * eye], [(a * t / b) * eye, lower_right]])
    return H, Psi


def q_matrix(g: SignedDigraph, psi_star: float) -> np.ndarray:
    return np.eye(g.n) - psi_star * _laplacian(g)


def feedback_gain(A: np.ndarray, B: np.ndarray, psi_star: float) -> np.ndarray:
    """K = psi* B^T (B B^T)^-1 A, so that B K = psi* A."""
    if np.linalg.matrix_rank(B, tol=1e-10) != B.shape[0]:
        raise ValueError("B must have full row rank")
    return psi_star * B.T @ np.linalg.solve(B @ B.T, A)


def _active_rows(schedule, k, n):
    if schedule is None:
        return np.ones(n, dtype=bool)
    if isinstance(schedule, sch.AsyncSchedule):
        return schedule.active(k)
    return np.asarray(schedule, dtype=bool)


def build_M(g: SignedDigraph, schedule, k: int, gains: GainParameters) -> np.ndarray:
    return m_matrix(g.masked(_active_rows(schedule, k, g.n)), gains)


def build_C(g: SignedDigraph, schedule, k: int, gains: GainParameters) -> np.ndarray:
    return c_matrix(g.masked(_active_rows(schedule, k, g.n)), gains)


def build_H_and_Psi(g: SignedDigraph, schedule, k: int, gains: GainParameters):
    return h_matrices(g.masked(_active_rows(schedule, k, g.n)), gains)


def build_lifted(Psi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """[[1, 0], [q, Psi]] with q_j = 1 - row sum j on deficient rows."""
    s = Psi.sum(axis=1)
    q = np.where(s < 1 - tol, 1 - s, 0.0)
    m = Psi.shape[0]
    out = np.zeros((m + 1, m + 1))
    out[0, 0] = 1.0
    out[1:, 0] = q
    out[1:, 1:] = Psi
    return out


def build_lifted_digraph(Psi: np.ndarray):
    from .stochastic_matrix import EdgeSet
    return EdgeSet.from_matrix(build_lifted(Psi))


def split_delayed(g: SignedDigraph, delays: sch.DelayProcess, k: int) -> list[np.ndarray]:
    """|A_s(k)|: the entries of |A| whose edge carries delay s at step k."""
    d = delays.follower[k]
    if d.max(initial=0) > delays.sigma_max:
        raise ValueError("delay exceeds sigma_max")
    absA = np.abs(g.adj)
    return [np.where(d == s, absA, 0.0) for s in range(delays.sigma_max + 1)]


def build_E_delay(g: SignedDigraph, delays: sch.DelayProcess, k: int, gains: GainParameters) -> np.ndarray:
    n, t, y = g.n, gains.tau, gains.gamma
    smax = delays.sigma_max
    eye = np.eye(n)
    zero = np.zeros((n, n))
    pinned = g.degree_matrix() + g.pinning_matrix()
    base = np.block([
        [(1 - y * t / 2) * eye, (y * t / 2) * eye],
        [(y * t / 2) * eye - (2 * t / y) * pinned, (1 - y * t / 2) * eye],
    ])
    blocks = [np.block([[zero, zero], [(2 * t / y) * As, zero]]) for As in split_delayed(g, delays, k)]
    m = 2 * n
    E = np.zeros((m * (smax + 1), m * (smax + 1)))
    E[:m, :m] = base + blocks[0]
    for s in range(1, smax + 1):
        E[:m, s * m:(s + 1) * m] = blocks[s]
        E[s * m:(s + 1) * m, (s - 1) * m:s * m] = np.eye(m)
    return E


def build_switch(kind: str, seq: SwitchingSequence, k: int, gains: GainParameters):
    g = seq.graph_at(k)
    if kind == "switch_static":
        return c_matrix(g, gains)
    if kind == "switch_active":
        return h_matrices(g, gains)
    raise ValueError(f"not a switching kind: {kind}")


def build_loss(g: SignedDigraph, theta_k: int, gains: GainParameters) -> np.ndarray:
    return h_matrices(g if theta_k else g.masked(np.zeros(g.n, dtype=bool)), gains)[0]


def build_expected(r: sch.RandomSignedNetwork, gains: GainParameters) -> np.ndarray:
    return h_matrices(r.expected_graph(), gains)[0]


def expected_loss_matrix(g: SignedDigraph, theta_bar: float, gains: GainParameters) -> np.ndarray:
    """theta_bar H + (1 - theta_bar) H*, the exact mean map since theta_k is independent of the state."""
    return theta_bar * build_loss(g, 1, gains) + (1 - theta_bar) * build_loss(g, 0, gains)


def build_disturbed(kind: str, g: SignedDigraph, delta: SignedDigraph, gains: GainParameters):
    check_same_type(g, delta)
    gd = disturbed_graph(g, delta)
    if kind == "disturb_static":
        return c_matrix(gd, gains)
    if kind == "disturb_active":
        return h_matrices(gd, gains)
    raise ValueError(f"not a disturbance kind: {kind}")


def build_noise_system(g: SignedDigraph, gains: GainParameters) -> tuple[np.ndarray, np.ndarray]:
    n, t, b = g.n, gains.tau, gains.beta
    L = _laplacian(g)
    eye = np.eye(n)
    omega1 = np.block([[eye, t * eye], [-t * L, eye - b * t * L]])
    omega2 = np.vstack([np.zeros((n, n)), t * eye])
    return omega1, omega2


def build_estimation_system(g: SignedDigraph, gains: GainParameters) -> tuple[np.ndarray, np.ndarray]:
    """Error map for followers estimating the leader's velocity and acceleration.

    The input column multiplies zeta = a - a0. Substituting the follower law
    gives -[tau^2/2; tau] here, the negative of the commonly printed column;
    the sign has no effect on any norm bound.
    """
    n, t, f1, f2 = g.n, gains.tau, gains.phi1, gains.phi2
    L = _laplacian(g)
    eye = np.eye(n)
    ups1 = np.block([[eye - (f1 * t + 0.5 * f1 * f2 * t * t) * L, t * eye], [-f1 * f2 * t * L, eye]])
    ups2 = -np.concatenate([np.full(n, t * t / 2), np.full(n, t)]).reshape(-1, 1)
    return ups1, ups2


# agent-level protocol


@dataclass
class AgentState:
    x: np.ndarray
    v: np.ndarray
    x0: np.ndarray
    v0: np.ndarray
    history: list = field(default_factory=list)  # past (x, v), most recent first

    def copy(self) -> "AgentState":
        return AgentState(self.x.copy(), self.v.copy(), self.x0.copy(), self.v0.copy(),
                          [(a.copy(), b.copy()) for a, b in self.history])


def initial_state(spec: ScenarioSpec) -> AgentState:
    return AgentState(spec.x.copy(), spec.v.copy(), spec.leader_x.copy(), spec.leader_v.copy())


def coupling(g: SignedDigraph, x: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """sum_j |a_ij| (sgn(a_ij) x_j - x_i) + |a_i0| (sgn(a_i0) x0 - x_i), per follower."""
    deg = np.abs(g.adj).sum(axis=1) + np.abs(g.leader)
    return g.adj @ x + np.outer(g.leader, x0) - deg[:, None] * x


def delayed_coupling(g: SignedDigraph, state: AgentState, delays: sch.DelayProcess, k: int) -> np.ndarray:
    x = state.x
    past = [x] + [hx for hx, _ in state.history]
    d = delays.follower[k]
    out = np.outer(g.leader, state.x0) - (np.abs(g.adj).sum(axis=1) + np.abs(g.leader))[:, None] * x
    for i, j in zip(*np.nonzero(g.adj)):
        s = int(d[i, j])
        # constant prehistory: states before step 0 equal the initial state
        out[i] += g.adj[i, j] * past[min(s, len(past) - 1)][j]
    return out


def step_agents(spec: ScenarioSpec, state: AgentState, k: int, real: Realization,
                sigma: np.ndarray | None = None) -> AgentState:
    g = effective_graph(spec, real, k)
    t = spec.gains.tau
    gn = spec.gains
    x, v, x0, v0 = state.x, state.v, state.x0, state.v0
    fam = spec.family
    hist = state.history
    if fam == "first":
        return AgentState(x + t * gn.psi * coupling(g, x, x0), v, x0, v0)
    if fam == "static":
        if spec.kind == "second_order_delay":
            c = delayed_coupling(g, state, real.delays, k)
            hist = ([(x, v)] + hist)[:spec.sigma_max]
        else:
            c = coupling(g, x, x0)
        # damping acts every step; neighbour and leader terms only on active edges
        u = -gn.gamma * v + c
        return AgentState(x + t * v, v + t * u, x0, v0, hist)
    if fam == "active":
        u = coupling(g, x, x0) + gn.beta * coupling(g, v, v0)
        if spec.kind == "noise":
            u = u + real.noise[k]
        return AgentState(x + t * v, v + t * u, x0 + t * v0, v0)
    if fam == "linear":
        K = feedback_gain(spec.A, spec.B, gn.psi_star)
        u = coupling(g, x, x0) @ K.T
        return AgentState(x @ spec.A.T + u @ spec.B.T, v, spec.A @ x0, v0)
    if fam == "estimation":
        kappa = gauge(spec) if sigma is None else sigma
        c = gn.phi1 * coupling(g, x, x0)
        a0 = spec.accel_estimate
        acc_est = kappa[:, None] * a0 + gn.phi2 * c
        # the acceleration estimate already carries kappa_i, so it enters u unscaled
        u = v + (t / 2) * acc_est + c
        a = a0 + real.accel_error[k]
        return AgentState(x + t * u, v + t * acc_est, x0 + t * v0 + (t * t / 2) * a, v0 + t * a)
    raise AssertionError(fam)


# error coordinates


@dataclass
class ErrorState:
    e_x: np.ndarray
    e_v: np.ndarray
    stacked: np.ndarray  # the vector the matrix recursion acts on, shape (rows, p)


def error_coordinates(spec: ScenarioSpec, state: AgentState, sigma: np.ndarray) -> ErrorState:
    s = sigma[:, None]
    e_x = s * state.x - state.x0
    e_v = s * state.v - state.v0
    fam = spec.family
    gn = spec.gains
    if fam in ("first", "linear"):
        stacked = e_x
    elif fam == "static":
        y = np.vstack([e_x, e_x + (2 / gn.gamma) * e_v])
        if spec.kind == "second_order_delay":
            past = [np.vstack([s * hx - state.x0, s * hx - state.x0 + (2 / gn.gamma) * s * hv])
                    for hx, hv in state.history]
            while len(past) < spec.sigma_max:
                past.append(past[-1] if past else y)
            y = np.vstack([y] + past)
        stacked = y
    elif fam == "active" and spec.kind != "noise":
        stacked = np.vstack([e_x, gn.alpha * e_x + gn.alpha * gn.beta * e_v])
    else:
        stacked = np.vstack([e_x, e_v])
    return ErrorState(e_x, e_v, stacked)


def recover_positions(e_x: np.ndarray, x0: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return sigma[:, None] * (e_x + x0)


def error_step(spec: ScenarioSpec, real: Realization, k: int, stacked: np.ndarray,
               sigma: np.ndarray) -> np.ndarray:
    """One step of the matrix recursion on the stacked error vector."""
    g = effective_graph(spec, real, k)
    gn = spec.gains
    fam = spec.family
    if fam == "first":
        return m_matrix(g, gn) @ stacked
    if fam == "linear":
        return q_matrix(g, gn.psi_star) @ stacked @ spec.A.T
    if spec.kind == "second_order_delay":
        return build_E_delay(g, real.delays, k, gn) @ stacked
    if fam == "static":
        return c_matrix(g, gn) @ stacked
    if spec.kind == "noise":
        o1, o2 = build_noise_system(g, gn)
        return o1 @ stacked + o2 @ (sigma[:, None] * real.noise[k])
    if fam == "active":
        return h_matrices(g, gn)[0] @ stacked
    u1, u2 = build_estimation_system(g, gn)
    return u1 @ stacked + u2 @ real.accel_error[k].reshape(1, -1)


def error_matrix(spec: ScenarioSpec, real: Realization, k: int) -> np.ndarray:
    """Homogeneous part of the error recursion at step k (p = 1 view)."""
    g = effective_graph(spec, real, k)
    gn = spec.gains
    fam = spec.family
    if fam == "first":
        return m_matrix(g, gn)
    if fam == "linear":
        return np.kron(q_matrix(g, gn.psi_star), spec.A)
    if spec.kind == "second_order_delay":
        return build_E_delay(g, real.delays, k, gn)
    if fam == "static":
        return c_matrix(g, gn)
    if spec.kind == "noise":
        return build_noise_system(g, gn)[0]
    if fam == "active":
        return h_matrices(g, gn)[0]
    return build_estimation_system(g, gn)[0]


def contraction_matrix(spec: ScenarioSpec, real: Realization, k: int) -> np.ndarray:
    """The nonnegative matrix whose window products certify contraction."""
    g = effective_graph(spec, real, k)
    fam = spec.family
    if fam == "active" and spec.kind != "noise":
        return h_matrices(g, spec.gains)[1]
    if fam == "linear":
        return q_matrix(g, spec.gains.psi_star)
    return error_matrix(spec, real, k)


# gates


@dataclass
class Condition:
    name: str
    holds: bool
    lhs: float | None = None
    rhs: float | None = None
    relation: str = ""
    reason: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "holds": bool(self.holds), "lhs": _num(self.lhs),
                "relation": self.relation, "rhs": _num(self.rhs), "reason": self.reason}


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class GateReport:
    kind: str
    conditions: list
    notes: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    @property
    def overall(self) -> bool:
        return all(c.holds for c in self.conditions)

    def to_json(self) -> dict:
        return {"kind": self.kind, "overall": self.overall,
                "conditions": [c.to_json() for c in self.conditions],
                "constants": {k: _num(v) if not isinstance(v, (list, str)) else v
                              for k, v in self.constants.items()},
                "notes": self.notes}


_OPS = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b, ">": lambda a, b: a > b}


def _cmp(name, lhs, rel, rhs, reason=""):
    if lhs is None or rhs is None or not (np.isfinite(lhs) and np.isfinite(rhs)):
        return Condition(name, False, lhs, rhs, rel, reason or "undefined quantity")
    return Condition(name, bool(_OPS[rel](lhs, rhs)), float(lhs), float(rhs), rel, reason)


def _structure(g: SignedDigraph, label="") -> list:
    bal = gauge_partition(g)
    reach = leader_reaches_all(g)
    out = [Condition(f"structurally balanced{label}", isinstance(bal, GaugePartition),
                     reason="" if isinstance(bal, GaugePartition) else f"negative cycle {bal.cycle}"),
           Condition(f"leader reaches every follower{label}", reach.holds,
                     reason="" if reach.holds else f"unreachable {sorted(i + 1 for i in reach.unreachable)}")]
    return out


def _damping_window(name_d, d, gains):
    return [_cmp(f"2 sqrt({name_d}) <= gamma", 2 * math.sqrt(d), "<=", gains.gamma),
            _cmp("gamma < 2 / tau", gains.gamma, "<", 2 / gains.tau)]


def phi_star(g: SignedDigraph, gains: GainParameters) -> np.ndarray:
    """(1 + tau/beta) I - beta tau (D + B - |A|)."""
    return (1 + gains.tau / gains.beta) * np.eye(g.n) - gains.beta * gains.tau * _laplacian(g)


def _active_leader_conditions(g: SignedDigraph, gains: GainParameters, steps: int, label: str,
                              b_m=None, d_M=None, phi=None, with_lemma=True) -> tuple[list, dict]:
    c = graph_constants(g)
    b_m = c.b_m if b_m is None else b_m
    d_M = c.d_M if d_M is None else d_M
    phi = min_positive(phi_star(g, gains)) if phi is None else phi
    t, b, a = gains.tau, gains.beta, gains.alpha
    conds = [_cmp("sqrt((1 + alpha) / b_m) < beta", math.sqrt((1 + a) / b_m) if b_m else None, "<", b,
                  reason="" if b_m else "no leader edge"),
             _cmp("beta <= 1 / (tau d_M)", b, "<=", 1 / (t * d_M))]
    if steps < 2 or not b_m or not phi:
        conds.append(Condition(f"beta > (alpha^({label}/({label}-1)) - 1) / (tau b_m phi^({label}-1))", False,
                               reason=f"{label} = {steps} < 2 makes the bound undefined" if steps < 2 else "b_m or phi undefined"))
    else:
        need = (a ** (steps / (steps - 1)) - 1) / (t * b_m * phi ** (steps - 1))
        conds.append(_cmp(f"beta > (alpha^({label}/({label}-1)) - 1) / (tau b_m phi^({label}-1))", b, ">", need))
    g_up = 1 + t / b + a * t / b
    if with_lemma:
        conds.append(_cmp(f"alpha > (1 + tau/beta + alpha tau/beta)^({label}-1)", a, ">", g_up ** (steps - 1)))
    return conds, {"b_m": b_m, "d_M": d_M, "phi": phi, "g": g_up, label: steps}


def gate(spec: ScenarioSpec) -> GateReport:
    kind = spec.kind
    gn = spec.gains
    notes = ["sufficient condition only: a failed gate does not preclude convergence"]
    if kind in ("switch_static", "switch_active"):
        return _switch_gate(spec, notes)
    g = spec.base_graph()
    c = graph_constants(g)
    consts = {"d_M": c.d_M, "b_m": c.b_m, "P": c.P}
    conds = _structure(g)
    if kind == "first_order_async":
        conds.append(_cmp("psi < 1 / (tau d_M)", gn.psi, "<", 1 / (gn.tau * c.d_M)))
    elif kind in ("second_order_static_async", "second_order_delay"):
        conds += _damping_window("d_M", c.d_M, gn)
    elif kind == "disturb_static":
        consts["d_M_disturbed"] = c.d_M
        conds += _damping_window("d_M_disturbed", c.d_M, gn)
    elif kind == "second_order_active_async":
        more, extra = _active_leader_conditions(g, gn, c.P * spec.h, "Ph")
        conds += more
        consts.update(extra)
    elif kind == "packet_loss":
        more, extra = _active_leader_conditions(g, gn, c.P, "P")
        conds += more + [_cmp("theta_bar > 0", spec.theta_bar, ">", 0.0)]
        consts.update(extra)
    elif kind == "random_network":
        eg = spec.network().expected_graph()
        ce = graph_constants(eg)
        conds = _structure(eg, " (expected graph)")
        more, extra = _active_leader_conditions(eg, gn, ce.P, "P")
        conds += more
        consts = {"d_M_expected": ce.d_M, "b_m_expected": ce.b_m, "P": ce.P, **extra}
    elif kind == "disturb_active":
        more, extra = _active_leader_conditions(g, gn, c.P, "P", with_lemma=False)
        conds += more
        consts.update(extra)
    elif kind == "general_linear_async":
        conds += _linear_conditions(spec, g, c, consts)
    elif kind == "noise":
        conds += _noise_conditions(g, gn, consts)
    elif kind == "unmeasurable_leader":
        conds += _estimation_conditions(g, gn, consts)
    return GateReport(kind, conds, notes, consts)


def _linear_conditions(spec, g, c, consts):
    gn = spec.gains
    out = []
    rank = int(np.linalg.matrix_rank(spec.B, tol=1e-10))
    out.append(Condition("B has full row rank", rank == spec.B.shape[0], rank, spec.B.shape[0], "=="))
    out.append(_cmp("psi* < 1 / d_M", gn.psi_star, "<", 1 / c.d_M))
    Q = q_matrix(g, gn.psi_star)
    sums = Q.sum(axis=1)
    deficient = sums[sums < 1 - 1e-12]
    off = Q - np.diag(np.diag(Q))
    zeta = float(deficient.max()) if deficient.size else None
    kappa = min_positive(off)
    Ph = c.P * spec.h
    rho_A = spectral_radius(spec.A)
    thr = None
    if zeta is not None and kappa is not None and Ph >= 1:
        thr = (1 - (1 - zeta) * kappa ** (Ph - 1)) ** (-1 / Ph)
    out.append(_cmp("rho(A) < (1 - (1 - zeta) kappa^(Ph-1))^(-1/Ph)", rho_A, "<", thr))
    consts.update({"zeta": zeta, "kappa": kappa, "Ph": Ph, "rho_A": rho_A, "rho_A_threshold": thr})
    return out


def _real(mu, tol=1e-9):
    return abs(mu.imag) <= tol


def _noise_conditions(g, gn, consts):
    t, b = gn.tau, gn.beta
    mus = np.linalg.eigvals(_laplacian(g))
    out = [_cmp("beta > tau", b, ">", t)]
    for idx, mu in enumerate(mus):
        r, m = mu.real, abs(mu)
        if _real(mu):
            out.append(_cmp(f"4 Re(mu_{idx + 1}) + tau^2 |mu| - 2 beta tau |mu| > 0",
                            4 * r + t * t * m - 2 * b * t * m, ">", 0.0))
        else:
            den = 4 * r - t * m * (2 * b - t)
            rhs = 4 * abs(mu.imag) / den if den > 0 else None
            out.append(_cmp(f"(beta - tau)^2 > 4 |Im(mu_{idx + 1})| / (4 Re(mu) - tau |mu| (2 beta - tau))",
                            (b - t) ** 2, ">", rhs, reason="" if den > 0 else "denominator not positive"))
    consts["laplacian_eigenvalues"] = [str(complex(m)) for m in mus]
    return out


def _estimation_conditions(g, gn, consts):
    t, f1, f2 = gn.tau, gn.phi1, gn.phi2
    mus = np.linalg.eigvals(_laplacian(g))
    out = []
    for idx, mu in enumerate(mus):
        r, m = mu.real, abs(mu)
        if _real(mu):
            out.append(_cmp(f"phi1 < 2 Re(mu_{idx + 1}) / (tau |mu|^2)", f1, "<", 2 * r / (t * m * m)))
            out.append(_cmp("phi2 < 2 / tau", f2, "<", 2 / t))
        else:
            out.append(_cmp(f"phi1 < 2 Re(mu_{idx + 1}) / |mu|^2", f1, "<", 2 * r / (m * m)))
            inner = t * t * f1 * (2 * r - f1 * t * m * m)
            rhs = 2 / t - math.sqrt(8 * f2 / inner) if inner > 0 else None
            # phi2 appears on both sides; evaluated at the supplied phi2
            out.append(_cmp(f"phi2 < 2/tau - sqrt(8 phi2 / (tau^2 phi1 (2 Re(mu_{idx + 1}) - phi1 tau |mu|^2)))",
                            f2, "<", rhs, reason="" if inner > 0 else "radicand not positive"))
    consts["laplacian_eigenvalues"] = [str(complex(m)) for m in mus]
    return out


def _switch_gate(spec, notes):
    seq = spec.switching
    gn = spec.gains
    n = seq.n
    u = spec.base_graph()
    bal = gauge_partition(u)
    conds = [Condition("all graphs balanced under one partition", isinstance(bal, GaugePartition))]
    intervals = len(seq.bounds) - 1
    ok = all(leader_reaches_all(union_graph(seq, j)).holds for j in range(intervals))
    conds.append(Condition("leader reaches every follower in each interval union", ok))
    weights = np.concatenate([np.abs(np.r_[g.adj[g.adj != 0], g.leader[g.leader != 0]]) for g in seq.graphs])
    rho_up, rho_lo = float(weights.max()), float(weights.min())
    consts = {"rho_upper": rho_up, "rho_lower": rho_lo, "varsigma": seq.varsigma, "n": n}
    t = gn.tau
    if spec.kind == "switch_static":
        conds += _damping_window("n rho_upper", n * rho_up, gn)
    else:
        b, a = gn.beta, gn.alpha
        ns = n * seq.varsigma
        conds.append(_cmp("sqrt((1 + alpha) / rho_lower) < beta", math.sqrt((1 + a) / rho_lo), "<", b))
        conds.append(_cmp("beta < 1 / (tau n rho_upper)", b, "<", 1 / (t * n * rho_up)))
        conds.append(_cmp("tau/beta < (alpha^(1/(n varsigma - 1)) - 1) / (1 + alpha)", t / b, "<",
                          (a ** (1 / (ns - 1)) - 1) / (1 + a) if ns > 1 else None))
        g_up = 1 + t / b + a * t / b
        varpi = min(b * t * rho_lo, 1 + t / b - b * t * n * rho_up)
        conds.append(_cmp("g^(n varsigma) - beta tau rho_lower varpi^(n varsigma - 1) < 1",
                          g_up ** ns - b * t * rho_lo * varpi ** (ns - 1), "<", 1.0))
        conds.append(_cmp("alpha > g^(n varsigma - 1)", a, ">", g_up ** (ns - 1)))
        consts.update({"g": g_up, "varpi": varpi})
    return GateReport(spec.kind, conds, notes, consts)


# config schema

_SPEC_KEYS = {f.name for f in fields(ScenarioSpec)} | {"p"}
_GAIN_KEYS = {f.name for f in fields(GainParameters)}


def _signal(d):
    if d is None:
        return Signal()
    unknown = set(d) - {"kind", "amplitude", "frequency", "seed"}
    if unknown:
        raise ValueError(f"unknown signal keys: {sorted(unknown)}")
    return Signal(**d)


def _initial(value, n, p, seed, tag):
    """Explicit list, or {"uniform": [lo, hi]} drawn from the scenario seed."""
    if isinstance(value, dict):
        lo, hi = value["uniform"]
        return sch.stream(seed, 100 + tag).uniform(lo, hi, size=(n, p))
    return np.array(value, dtype=float).reshape(n, p)


def graph_loader(base_dir=None):
    """Graphs given inline as dicts or as file names relative to base_dir."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def load(ref):
        if isinstance(ref, str):
            return load_graph(base / ref)
        g = SignedDigraph.from_json(ref)
        if "asserted" in ref:
            assert_constants(g, ref["asserted"])
        return g

    return load


def spec_from_json(data: dict, base_dir=None) -> ScenarioSpec:
    """Build a ScenarioSpec from a config dict. Unknown keys are rejected."""
    unknown = set(data) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    load = graph_loader(base_dir)
    gains_d = dict(data["gains"])
    bad = set(gains_d) - _GAIN_KEYS
    if bad:
        raise ValueError(f"unknown gain keys: {sorted(bad)}")
    gains = GainParameters(**gains_d)
    graph = load(data["graph"]) if data.get("graph") is not None else None
    switching = None
    if data.get("switching") is not None:
        sw = data["switching"]
        extra = set(sw) - {"graphs", "signal", "bounds"}
        if extra:
            raise ValueError(f"unknown switching keys: {sorted(extra)}")
        switching = SwitchingSequence([load(gr) for gr in sw["graphs"]], list(sw["signal"]), list(sw["bounds"]))
    n = (graph or switching.graphs[0]).n
    p = int(data.get("p", 1))
    seed = int(data.get("seed", 0))
    delta = load(data["delta"]) if data.get("delta") is not None else None
    kw = dict(
        kind=data["kind"], gains=gains, horizon=int(data["horizon"]),
        x=_initial(data["x"], n, p, seed, 0),
        v=_initial(data["v"], n, p, seed, 1) if data.get("v") is not None else None,
        leader_x=data.get("leader_x"), leader_v=data.get("leader_v"),
        graph=graph, switching=switching, h=int(data.get("h", 1)), seed=seed,
        sigma_max=int(data.get("sigma_max", 0)), theta_bar=float(data.get("theta_bar", 1.0)),
        edge_prob=data.get("edge_prob"), leader_prob=data.get("leader_prob"), delta=delta,
        noise=_signal(data.get("noise")), accel_estimate=float(data.get("accel_estimate", 0.0)),
        accel_error=_signal(data.get("accel_error")),
        A=data.get("A"), B=data.get("B"), name=str(data.get("name", "")),
    )
    if data.get("schedule") is not None:
        kw["schedule"] = sch.AsyncSchedule.from_json(data["schedule"])
    if data.get("delays") is not None:
        kw["delays"] = sch.DelayProcess.from_json(data["delays"])
    return ScenarioSpec(**kw)


def with_overrides(spec: ScenarioSpec, **changes) -> ScenarioSpec:
    """Copy with gain or top-level fields replaced (gain names go to gains)."""
    gains = {k: v for k, v in changes.items() if k in _GAIN_KEYS}
    rest = {k: v for k, v in changes.items() if k not in _GAIN_KEYS}
    new_gains = replace(spec.gains, **gains) if gains else spec.gains
    return replace(spec, gains=new_gains, **rest)


def spec_to_json(spec: ScenarioSpec) -> dict:
    """Fully expanded config; spec_from_json(spec_to_json(s)) rebuilds s."""
    out = {"kind": spec.kind, "name": spec.name, "horizon": spec.horizon, "seed": spec.seed,
           "p": spec.p, "h": spec.h, "sigma_max": spec.sigma_max, "theta_bar": spec.theta_bar,
           "gains": {k: v for k, v in vars(spec.gains).items() if v is not None},
           "x": spec.x.tolist(), "v": spec.v.tolist(),
           "leader_x": spec.leader_x.tolist(), "leader_v": spec.leader_v.tolist(),
           "accel_estimate": spec.accel_estimate}
    if spec.graph is not None:
        out["graph"] = spec.graph.to_json()
    if spec.switching is not None:
        sw = spec.switching
        out["switching"] = {"graphs": [g.to_json() for g in sw.graphs], "signal": list(sw.signal),
                            "bounds": list(sw.bounds)}
    if spec.delta is not None:
        out["delta"] = spec.delta.to_json()
    for key in ("edge_prob", "leader_prob", "A", "B"):
        val = getattr(spec, key)
        if val is not None:
            out[key] = np.asarray(val).tolist()
    for key in ("noise", "accel_error"):
        sig = getattr(spec, key)
        if sig.kind != "zero":
            out[key] = dict(vars(sig))
    if spec.schedule is not None:
        out["schedule"] = spec.schedule.to_json()
    if spec.delays is not None:
        out["delays"] = spec.delays.to_json()
    return out
