"""Run scenarios, judge convergence and sweep Monte Carlo replicates."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import schedule as sch


def spec_digest(spec: dyn.ScenarioSpec) -> str:
    text = json.dumps(dyn.spec_to_json(spec), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class SimulationTrace:
    leader_x: np.ndarray  # (H+1, p)
    leader_v: np.ndarray
    x: np.ndarray  # (H+1, n, p)
    v: np.ndarray
    err_pos: np.ndarray  # (H+1,) infinity norms of the signed errors
    err_vel: np.ndarray
    tau: float
    seed: int
    digest: str
    divergence: float | None = None  # max |agent-level - matrix recursion| over the run
    window_norms: list | None = None

    @property
    def horizon(self) -> int:
        return len(self.err_pos) - 1

    @property
    def err(self) -> np.ndarray:
        return np.maximum(self.err_pos, self.err_vel)


def run(spec: dyn.ScenarioSpec, horizon: int | None = None, seed: int | None = None,
        dual: bool = True, real: dyn.Realization | None = None) -> SimulationTrace:
    """Step the agent laws, optionally alongside the matrix recursion."""
    H = spec.horizon if horizon is None else int(horizon)
    seed = spec.seed if seed is None else int(seed)
    sigma = dyn.gauge(spec)
    real = dyn.realize(spec, H, seed) if real is None else real
    n, p = spec.n, spec.p
    xs = np.empty((H + 1, n, p))
    vs = np.empty((H + 1, n, p))
    lx = np.empty((H + 1, p))
    lv = np.empty((H + 1, p))
    state = dyn.initial_state(spec)
    E = dyn.error_coordinates(spec, state, sigma).stacked if dual else None
    divergence = 0.0 if dual else None
    # diverging runs may overflow; the verdict reports them as not tracked
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(H + 1):
            xs[k], vs[k], lx[k], lv[k] = state.x, state.v, state.x0, state.v0
            if k == H:
                break
            state = dyn.step_agents(spec, state, k, real, sigma)
            if dual:
                E = dyn.error_step(spec, real, k, E, sigma)
                got = dyn.error_coordinates(spec, state, sigma).stacked
                divergence = max(divergence, float(np.max(np.abs(got - E))))
    s = sigma[None, :, None]
    ex = s * xs - lx[:, None, :]
    ev = s * vs - lv[:, None, :]
    return SimulationTrace(lx, lv, xs, vs, np.abs(ex).max(axis=(1, 2)), np.abs(ev).max(axis=(1, 2)),
                           spec.gains.tau, seed, spec_digest(spec), divergence)


# residual bounds for the bounded-tracking kinds


def _rational_matrix(M):
    import sympy
    return sympy.Matrix([[sympy.Rational(repr(float(x))) for x in row] for row in M])


@lru_cache(maxsize=16)
def _jordan(key):
    import sympy
    M = _rational_matrix(np.array(key))
    P, J = M.jordan_form()
    to_np = lambda A: np.array(A.evalf(30).tolist(), dtype=complex)
    return to_np(P), to_np(J)


def decompose(M: np.ndarray, cond_limit: float = 1e8):
    """M = P K P^-1 with K diagonal when M is well diagonalizable, else exact Jordan form."""
    w, V = np.linalg.eig(M)
    if np.linalg.cond(V) < cond_limit:
        return V, np.diag(w), "eig"
    P, K = _jordan(tuple(map(tuple, np.asarray(M, dtype=float))))
    return P, K, "jordan"


@dataclass
class ResidualBound:
    bound: float
    rho: float
    input_gain: float  # ||input matrix||_inf
    signal_bound: float
    p_norm: float
    p_inv_norm: float
    resolvent_norm: float  # ||(I - |K|)^-1||_inf
    method: str

    def to_json(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in vars(self).items()}


def _block_starts(K, tol=1e-12):
    """Index of each Jordan chain member within its block (0 at the block head)."""
    pos = np.zeros(len(K), dtype=int)
    for i in range(1, len(K)):
        pos[i] = pos[i - 1] + 1 if abs(K[i - 1, i]) > tol else 0
    return pos


def _jordan_constant(P, K, eps):
    d = eps ** _block_starts(K).astype(float)
    Ps = P * d[None, :]
    Ks = K * (d[None, :] / d[:, None])
    pn = float(np.abs(Ps).sum(axis=1).max())
    pin = float(np.abs(np.linalg.inv(Ps)).sum(axis=1).max())
    res = float(np.abs(np.linalg.inv(np.eye(len(K)) - np.abs(Ks))).sum(axis=1).max())
    return pn, pin, res


def residual_bound(spec: dyn.ScenarioSpec) -> ResidualBound:
    """omega_bar ||Omega_2|| ||P|| ||P^-1|| ||(I - |K|)^-1||, with Omega_1 = P K P^-1.

    For diagonalizable Omega_1 the resolvent factor is (1 - rho)^-1. A
    defective Omega_1 is put in Jordan form; rescaling every chain by
    eps^r keeps K upper bidiagonal, and the eps giving the smallest bound is
    kept. Since the summed powers of |K| peak in the head row of the longest
    block whenever all eigenvalues share one modulus, the resolvent factor
    still bounds the accumulated input in that case.
    """
    g = spec.base_graph()
    if spec.kind == "noise":
        M, G = dyn.build_noise_system(g, spec.gains)
        wbar = spec.noise.bound
    elif spec.kind == "unmeasurable_leader":
        M, G = dyn.build_estimation_system(g, spec.gains)
        wbar = spec.accel_error.bound
    else:
        raise ValueError(f"no residual bound for kind {spec.kind}")
    rho = float(max(abs(np.linalg.eigvals(M))))
    gain = float(np.abs(G).sum(axis=1).max())
    P, K, method = decompose(M)
    if rho >= 1:
        pn = float(np.abs(P).sum(axis=1).max())
        pin = float(np.abs(np.linalg.inv(P)).sum(axis=1).max())
        return ResidualBound(math.inf, rho, gain, wbar, pn, pin, math.inf, method)
    eps_grid = [1.0] if method == "eig" else np.logspace(-4, 1, 51)
    best = None
    for eps in eps_grid:
        pn, pin, res = _jordan_constant(P, K, eps)
        if best is None or pn * pin * res < best[0] * best[1] * best[2]:
            best = (pn, pin, res)
    pn, pin, res = best
    return ResidualBound(wbar * gain * pn * pin * res, rho, gain, wbar, pn, pin, res, method)


@dataclass
class ConvergenceVerdict:
    kind: str
    tracked: bool
    k_converged: int | None
    tail_max: float
    threshold: float
    tail_fraction: float
    bounded: bool | None = None
    residual: ResidualBound | None = None

    @property
    def ok(self) -> bool:
        return self.tracked or bool(self.bounded)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "tracked": self.tracked, "k_converged": self.k_converged,
               "tail_max": self.tail_max, "threshold": self.threshold,
               "tail_fraction": self.tail_fraction}
        if self.bounded is not None:
            out["bounded"] = self.bounded
            out["empirical_limsup"] = self.tail_max
            out["residual_bound"] = self.residual.to_json()
        return out


def verdict(trace: SimulationTrace, spec: dyn.ScenarioSpec, tail_fraction: float = 0.2,
            threshold: float = 1e-3) -> ConvergenceVerdict:
    err = trace.err
    start = min(len(err) - 1, int(math.floor((1 - tail_fraction) * len(err))))
    tail_max = float(err[start:].max())
    tracked = bool(np.isfinite(tail_max) and tail_max < threshold)
    k_conv = None
    if tracked:
        # first step after which the error stays below threshold
        suffix = np.maximum.accumulate(err[::-1])[::-1]
        k_conv = int(np.argmax(suffix < threshold))
    out = ConvergenceVerdict(spec.kind, tracked, k_conv, tail_max, threshold, tail_fraction)
    if spec.kind in dyn.BOUNDED_KINDS:
        rb = residual_bound(spec)
        out.residual = rb
        out.bounded = bool(tail_max <= rb.bound)
    return out


def window_contraction_scan(spec: dyn.ScenarioSpec, window_len: int, num_windows: int,
                            stride: int | None = None, seed: int | None = None) -> list[float]:
    """||prod of the window's contraction matrices||_inf for consecutive window starts."""
    stride = window_len if stride is None else stride
    H = stride * (num_windows - 1) + window_len
    real = dyn.realize(spec, H, seed)
    mats = [dyn.contraction_matrix(spec, real, k) for k in range(H)]
    out = []
    for w in range(num_windows):
        prod = np.eye(mats[0].shape[0])
        for k in range(w * stride, w * stride + window_len):
            prod = mats[k] @ prod
        out.append(float(np.abs(prod).sum(axis=1).max()))
    return out


# Monte Carlo


@dataclass
class MonteCarloResult:
    mean: np.ndarray  # (H+1, m) mean stacked error (p = 1 view, first coordinate)
    std: np.ndarray
    expected: np.ndarray | None  # expectation recursion, same shape
    norm_mean: np.ndarray  # mean of ||e(k)||_inf across replicates
    tracked_fraction: float
    seeds: list = field(default_factory=list)
    replicates: int = 0

    def zscores(self, steps) -> np.ndarray:
        out = []
        for k in steps:
            diff = np.abs(self.mean[k] - self.expected[k])
            se = self.std[k] / math.sqrt(self.replicates)
            z = np.where(se > 0, diff / np.where(se > 0, se, 1), np.where(diff > 1e-12, np.inf, 0.0))
            out.append(z)
        return np.array(out)

    def tail_mean(self, tail_fraction: float = 0.2) -> float:
        start = int(math.floor((1 - tail_fraction) * len(self.norm_mean)))
        return float(self.norm_mean[start:].mean())


def _batched_h(spec, adj, leader):
    """H matrices for a batch of graphs: adj (R, n, n), leader (R, n)."""
    n = spec.n
    t, b, a = spec.gains.tau, spec.gains.beta, spec.gains.alpha
    absA = np.abs(adj)
    lap = -absA
    idx = np.arange(n)
    lap[:, idx, idx] += absA.sum(axis=2) + np.abs(leader)
    R = adj.shape[0]
    eye = np.eye(n)
    H = np.zeros((R, 2 * n, 2 * n))
    H[:, :n, :n] = (1 - t / b) * eye
    H[:, :n, n:] = t / (a * b) * eye
    H[:, n:, :n] = -(a * t / b) * eye
    H[:, n:, n:] = (1 + t / b) * eye - b * t * lap
    return H


def expected_matrix(spec: dyn.ScenarioSpec) -> np.ndarray:
    if spec.kind == "packet_loss":
        return dyn.expected_loss_matrix(spec.graph, spec.theta_bar, spec.gains)
    if spec.kind == "random_network":
        return dyn.build_expected(spec.network(), spec.gains)
    raise ValueError("expectation recursion is defined for packet_loss and random_network")


def monte_carlo(spec: dyn.ScenarioSpec, replicates: int, seed: int | None = None,
                horizon: int | None = None, threshold: float = 1e-3,
                tail_fraction: float = 0.2) -> MonteCarloResult:
    """Replicates use independent child seeds; stochastic kinds run batched."""
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    H = spec.horizon if horizon is None else int(horizon)
    seeds = sch.replicate_seeds(spec.seed if seed is None else seed, replicates)
    sigma = dyn.gauge(spec)
    e0 = dyn.error_coordinates(spec, dyn.initial_state(spec), sigma).stacked[:, 0]
    if spec.kind in dyn.STOCHASTIC_KINDS:
        traj = _batched_errors(spec, seeds, H, e0)
        expected = np.empty_like(traj[0])
        Hbar = expected_matrix(spec)
        expected[0] = e0
        for k in range(H):
            expected[k + 1] = Hbar @ expected[k]
        norms = np.array([_error_norms(spec, traj[r]) for r in range(replicates)])
    else:
        traj, norms = [], []
        for s in seeds:
            real = dyn.realize(spec, H, s)
            E = dyn.error_coordinates(spec, dyn.initial_state(spec), sigma).stacked
            rows = [E[:, 0]]
            for k in range(H):
                E = dyn.error_step(spec, real, k, E, sigma)
                rows.append(E[:, 0])
            traj.append(np.array(rows))
            tr = run(spec, H, s, dual=False, real=real)
            norms.append(tr.err)
        traj, norms = np.array(traj), np.array(norms)
        expected = None
    start = min(H, int(math.floor((1 - tail_fraction) * (H + 1))))
    tracked = float(np.mean(norms[:, start:].max(axis=1) < threshold))
    return MonteCarloResult(traj.mean(axis=0), traj.std(axis=0, ddof=1) if replicates > 1 else np.zeros_like(traj[0]),
                            expected, norms.mean(axis=0), tracked, seeds, replicates)


def _error_norms(spec, traj):
    """max(||e_x||, ||e_v||) recovered from the active-leader coordinates."""
    n = spec.n
    ex = traj[:, :n]
    ev = (traj[:, n:] - spec.gains.alpha * ex) / (spec.gains.alpha * spec.gains.beta)
    return np.maximum(np.abs(ex).max(axis=1), np.abs(ev).max(axis=1))


def _batched_errors(spec, seeds, H, e0) -> np.ndarray:
    """(R, H+1, 2n) error trajectories, replicate r identical to run(spec, seed=seeds[r])."""
    R, n = len(seeds), spec.n
    out = np.empty((R, H + 1, 2 * n))
    E = np.tile(e0, (R, 1))
    out[:, 0] = E
    if spec.kind == "packet_loss":
        theta = np.array([sch.sample_losses(H, spec.theta_bar, s).theta for s in seeds], dtype=bool)
        Hon = dyn.build_loss(spec.graph, 1, spec.gains)
        Hoff = dyn.build_loss(spec.graph, 0, spec.gains)
        for k in range(H):
            E = np.where(theta[:, k, None], E @ Hon.T, E @ Hoff.T)
            out[:, k + 1] = E
        return out
    net = spec.network()
    masks = [net.masks(H, s) for s in seeds]
    edges = np.stack([m[0] for m in masks])
    pins = np.stack([m[1] for m in masks])
    adj, lead = spec.graph.adj, spec.graph.leader
    for k in range(H):
        Hk = _batched_h(spec, adj * edges[:, k], lead * pins[:, k])
        E = np.einsum("rij,rj->ri", Hk, E)
        out[:, k + 1] = E
    return out


# output


def _atomic_write(path: Path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_header(n: int, p: int) -> list[str]:
    cols = ["k", "t"] + [f"x0_{d + 1}" for d in range(p)] + [f"v0_{d + 1}" for d in range(p)]
    for i in range(n):
        cols += [f"x_{i + 1}_{d + 1}" for d in range(p)] + [f"v_{i + 1}_{d + 1}" for d in range(p)]
    return cols + ["err_pos_inf", "err_vel_inf"]


def write_trace_csv(trace: SimulationTrace, path, chunk: int = 1000):
    H1, n, p = trace.x.shape

    def write(fh):
        w = csv.writer(fh)
        w.writerow(trace_header(n, p))
        for lo in range(0, H1, chunk):
            rows = []
            for k in range(lo, min(H1, lo + chunk)):
                row = [k, repr(k * trace.tau)] + [repr(float(z)) for z in trace.leader_x[k]]
                row += [repr(float(z)) for z in trace.leader_v[k]]
                for i in range(n):
                    row += [repr(float(z)) for z in trace.x[k, i]] + [repr(float(z)) for z in trace.v[k, i]]
                row += [repr(float(trace.err_pos[k])), repr(float(trace.err_vel[k]))]
                rows.append(row)
            w.writerows(rows)
            fh.flush()

    _atomic_write(path, write)


def write_json(obj, path):
    _atomic_write(path, lambda fh: fh.write(json.dumps(obj, indent=2, default=_json_default) + "\n"))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def write_plot_data(trace: SimulationTrace, path, stride: int = 1):
    """Whitespace text: a time column, then one column per series, '#' header."""
    H1, n, p = trace.x.shape
    t = np.arange(H1) * trace.tau
    cols = [t, trace.leader_x[:, 0]] + [trace.x[:, i, 0] for i in range(n)]
    cols += [trace.leader_v[:, 0]] + [trace.v[:, i, 0] for i in range(n)] + [trace.err_pos, trace.err_vel]
    names = ["t", "x0"] + [f"x{i + 1}" for i in range(n)] + ["v0"] + [f"v{i + 1}" for i in range(n)]
    names += ["err_pos", "err_vel"]
    data = np.column_stack(cols)[::stride]

    def write(fh):
        fh.write("# " + " ".join(names) + "\n")
        np.savetxt(fh, data, fmt="%.10g")

    _atomic_write(path, write)
    return names
