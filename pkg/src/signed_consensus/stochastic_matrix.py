"""Sub- and super-stochastic matrices: row classes, spectral-radius bounds,
product contraction certificates and directed edge-set composition.

Row and column indices are 0-based. ``F[a, b] > 0`` is read as an edge b -> a,
so a chain from a deficient row i to a row k is a path i -> ... -> k.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

TOL = 1e-9


def row_sums(F) -> np.ndarray:
    return np.asarray(F, dtype=float).sum(axis=1)


def inf_norm(F) -> float:
    return float(np.abs(np.asarray(F, dtype=float)).sum(axis=1).max())


def spectral_radius(F) -> float:
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError("matrix must be square")
    return float(np.abs(np.linalg.eigvals(F)).max())


@dataclass(frozen=True)
class RowClassification:
    sums: np.ndarray
    below: frozenset
    at_one: frozenset
    above: frozenset
    tol: float = TOL


@dataclass(frozen=True)
class Classified:
    kind: str  # "sub", "super" or "neither"
    rows: RowClassification | None = None
    reason: str = ""

    @property
    def is_sub(self) -> bool:
        return self.kind == "sub"

    @property
    def is_super(self) -> bool:
        return self.kind == "super"


def classify(F, tol: float = TOL) -> Classified:
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(F < -tol):
        i, j = np.argwhere(F < -tol)[0]
        return Classified("neither", reason=f"negative entry at ({i}, {j})")
    s = F.sum(axis=1)
    rows = RowClassification(
        sums=s,
        below=frozenset(np.nonzero(s < 1 - tol)[0].tolist()),
        at_one=frozenset(np.nonzero(np.abs(s - 1) <= tol)[0].tolist()),
        above=frozenset(np.nonzero(s > 1 + tol)[0].tolist()),
        tol=tol,
    )
    return Classified("super" if rows.above else "sub", rows)


def min_positive(F, tol: float = 0.0) -> float | None:
    F = np.asarray(F, dtype=float)
    pos = F[F > tol]
    return float(pos.min()) if pos.size else None


def shortest_chains(F, sources, targets, tol: float = 0.0) -> dict[int, list[int]]:
    """Shortest paths over positive off-diagonal entries from any source.

    Returns target -> [i, i1, ..., k] vertex path. Ties between sources are
    resolved toward the smallest source index because sources enter the
    queue in ascending order and BFS preserves that order level by level.
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    parent = {}
    queue = deque()
    for s in sorted(sources):
        parent[s] = None
        queue.append(s)
    while queue:
        b = queue.popleft()
        for a in range(n):
            if a != b and F[a, b] > tol and a not in parent:
                parent[a] = b
                queue.append(a)
    chains = {}
    for k in sorted(targets):
        if k not in parent:
            continue
        path = [k]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        chains[k] = path[::-1]
    return chains


@dataclass
class SpectralBoundReport:
    rule: str
    applicable: bool
    bound: float | None = None
    certified: bool = False
    alpha1: float | None = None
    alpha2: float | None = None
    alpha3: float | None = None
    chain_len_max: int | None = None
    chains: dict = field(default_factory=dict)
    numeric_rho: float | None = None
    reason: str = ""
    inequality_value: float | None = None  # left side of the certifying inequality

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "applicable": self.applicable,
            "bound": self.bound,
            "certified": self.certified,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "alpha3": self.alpha3,
            "chain_len_max": self.chain_len_max,
            "chains": {str(k + 1): [v + 1 for v in path] for k, path in self.chains.items()},
            "numeric_rho": self.numeric_rho,
            "inequality_value": self.inequality_value,
            "reason": self.reason,
        }


def _expect(F, kind, tol):
    c = classify(F, tol)
    if c.kind != kind:
        raise ValueError(f"expected a {kind}-stochastic matrix, got {c.kind}")
    return c.rows


def bound_sub_chain(F, rows: RowClassification | None = None, tol: float = TOL) -> SpectralBoundReport:
    """Chain bound for a sub-stochastic matrix with deficient rows."""
    F = np.asarray(F, dtype=float)
    rows = rows or _expect(F, "sub", tol)
    rep = SpectralBoundReport("sub_chain", False, numeric_rho=spectral_radius(F))
    if not rows.below:
        rep.reason = "no deficient row"
        return rep
    rep.alpha1 = float(max(rows.sums[i] for i in rows.below))
    rep.alpha2 = min_positive(F)
    chains = shortest_chains(F, rows.below, rows.at_one)
    rep.chains = chains
    missing = sorted(set(rows.at_one) - set(chains))
    if missing:
        rep.reason = f"no chain reaches rows {[m + 1 for m in missing]}"
        return rep
    depth = max((len(p) - 1 for p in chains.values()), default=0)
    rep.chain_len_max = depth
    rep.bound = float((1 - (1 - rep.alpha1) * rep.alpha2 ** depth) ** (1 / (depth + 1)))
    rep.applicable = True
    rep.certified = rep.bound < 1
    return rep


def bound_sub_zero_diag(F, rows: RowClassification | None = None, tol: float = TOL) -> SpectralBoundReport:
    F = np.asarray(F, dtype=float)
    rows = rows or _expect(F, "sub", tol)
    rep = SpectralBoundReport("sub_zero_diag", False, numeric_rho=spectral_radius(F))
    if np.any(np.diag(F) != 0):
        rep.reason = "diagonal is not zero"
    elif len(rows.at_one) != 1:
        rep.reason = f"{len(rows.at_one)} rows sum to one, need exactly 1"
    else:
        rep.alpha1 = float(max(rows.sums[i] for i in rows.below))
        rep.bound = float(np.sqrt(rep.alpha1))
        rep.applicable = True
        rep.certified = rep.bound < 1
    return rep


def bound_super_chain(F, rows: RowClassification | None = None, tol: float = TOL) -> SpectralBoundReport:
    """Chain bound for a super-stochastic matrix; certified only when < 1."""
    F = np.asarray(F, dtype=float)
    rows = rows or _expect(F, "super", tol)
    rep = SpectralBoundReport("super_chain", False, numeric_rho=spectral_radius(F))
    heavy = rows.at_one | rows.above
    if not rows.below:
        rep.reason = "no deficient row"
        return rep
    rep.alpha1 = float(max(rows.sums[i] for i in rows.below))
    rep.alpha2 = min_positive(F)
    rep.alpha3 = float(max(rows.sums[i] for i in heavy))
    chains = shortest_chains(F, rows.below, heavy)
    rep.chains = chains
    missing = sorted(heavy - set(chains))
    if missing:
        rep.reason = f"no chain reaches rows {[m + 1 for m in missing]}"
        return rep
    depth = max(len(p) - 1 for p in chains.values())
    rep.chain_len_max = depth
    inner = rep.alpha3 ** (depth + 1) - (rep.alpha3 - rep.alpha1) * rep.alpha2 ** depth
    # inner bounds ||F^(depth+1)||_inf, so the spectral bound is its (depth+1)-th
    # root; the depth-th root is the classic test value, below 1 exactly when inner is
    rep.inequality_value = float(max(inner, 0.0) ** (1 / depth))
    rep.bound = float(max(inner, 0.0) ** (1 / (depth + 1)))
    rep.applicable = True
    rep.certified = 0 <= inner < 1
    if not rep.certified:
        rep.reason = "chain inequality does not hold"
    return rep


def bound_super_zero_diag(F, rows: RowClassification | None = None, tol: float = TOL) -> SpectralBoundReport:
    """sqrt(alpha1 * alpha3); reported even when >= 1, certified only below 1."""
    F = np.asarray(F, dtype=float)
    rows = rows or _expect(F, "super", tol)
    rep = SpectralBoundReport("super_zero_diag", False, numeric_rho=spectral_radius(F))
    heavy = rows.at_one | rows.above
    if np.any(np.diag(F) != 0):
        rep.reason = "diagonal is not zero"
    elif len(heavy) != 1:
        rep.reason = f"{len(heavy)} rows have sum >= 1, need exactly 1"
    elif not rows.below:
        rep.reason = "no deficient row"
    else:
        rep.alpha1 = float(max(rows.sums[i] for i in rows.below))
        rep.alpha3 = float(max(rows.sums[i] for i in heavy))
        rep.bound = float(np.sqrt(rep.alpha1 * rep.alpha3))
        rep.applicable = True
        rep.certified = rep.bound < 1
    return rep


def analyze(F, tol: float = TOL) -> dict:
    """Classify and run every bound whose hypotheses the matrix meets."""
    F = np.asarray(F, dtype=float)
    c = classify(F, tol)
    out = {"classification": c.kind, "numeric_rho": spectral_radius(F), "bounds": []}
    if c.kind == "neither":
        out["reason"] = c.reason
        return out
    r = c.rows
    out["below"] = sorted(i + 1 for i in r.below)
    out["at_one"] = sorted(i + 1 for i in r.at_one)
    out["above"] = sorted(i + 1 for i in r.above)
    builders = (bound_sub_chain, bound_sub_zero_diag) if c.is_sub else (bound_super_chain, bound_super_zero_diag)
    for build in builders:
        rep = build(F, r, tol)
        out["bounds"].append(rep.to_json())
    return out


# products


def ordered_product(Fs) -> np.ndarray:
    """F_q ... F_1 for the list [F_1, ..., F_q]."""
    Fs = [np.asarray(F, dtype=float) for F in Fs]
    return reduce(lambda acc, F: F @ acc, Fs[1:], Fs[0])


@dataclass
class ProductContractionReport:
    window_norm: float
    certified: bool
    witness: dict = field(default_factory=dict)
    g: float | None = None
    c: float | None = None
    varphi: float | None = None
    reason: str = ""


def _find_witnesses(Fs, tol):
    """For every row i2, some s1 < s2 with a deficient row i1 of F_{s1} feeding
    i2 through a positive entry of F_{s2}. Returns (witnesses, missing rows)."""
    n = Fs[0].shape[0]
    sums = [F.sum(axis=1) for F in Fs]
    witness, missing = {}, []
    for i2 in range(n):
        found = None
        for s2 in range(1, len(Fs)):
            for s1 in range(s2):
                for i1 in np.nonzero(sums[s1] < 1 - tol)[0]:
                    if Fs[s2][i2, i1] > 0:
                        found = (s1, int(i1), s2, i2)
                        break
                if found:
                    break
            if found:
                break
        if found:
            witness[i2] = found
        else:
            missing.append(i2)
    return witness, missing


def product_sub(Fs, tol: float = TOL) -> tuple[np.ndarray, ProductContractionReport]:
    Fs = [np.asarray(F, dtype=float) for F in Fs]
    for s, F in enumerate(Fs):
        if not classify(F, tol).is_sub:
            raise ValueError(f"factor {s + 1} is not sub-stochastic")
    prod = ordered_product(Fs)
    rep = ProductContractionReport(inf_norm(prod), False)
    if any(np.any(np.diag(F) <= 0) for F in Fs):
        rep.reason = "some factor has a non-positive diagonal entry"
        return prod, rep
    witness, missing = _find_witnesses(Fs, tol)
    rep.witness = witness
    if missing:
        rep.reason = f"rows {[m + 1 for m in missing]} have no witness pair"
    else:
        rep.certified = True
    return prod, rep


def product_constants(Fs, tol: float = TOL) -> tuple[float | None, float | None, float | None]:
    sums = np.concatenate([np.asarray(F, dtype=float).sum(axis=1) for F in Fs])
    over = sums[sums > 1 + tol]
    under = sums[sums < 1 - tol]
    pos = [min_positive(F) for F in Fs]
    pos = [p for p in pos if p is not None]
    return (float(over.max()) if over.size else None,
            float(under.max()) if under.size else None,
            float(min(pos)) if pos else None)


def product_super(Fs, g=None, c=None, varphi=None, tol: float = TOL) -> ProductContractionReport:
    Fs = [np.asarray(F, dtype=float) for F in Fs]
    for s, F in enumerate(Fs):
        if classify(F, tol).kind == "neither":
            raise ValueError(f"factor {s + 1} has a negative entry")
    g0, c0, v0 = product_constants(Fs, tol)
    g = g0 if g is None else g
    c = c0 if c is None else c
    varphi = v0 if varphi is None else varphi
    rep = ProductContractionReport(inf_norm(ordered_product(Fs)), False, g=g, c=c, varphi=varphi)
    if any(np.any(np.diag(F) <= 0) for F in Fs):
        rep.reason = "some factor has a non-positive diagonal entry"
        return rep
    if c is None or varphi is None:
        rep.reason = "no deficient row in any factor"
        return rep
    gg = 1.0 if g is None else g
    q = len(Fs)
    lhs = gg ** q - (gg - c) * varphi ** (q - 1)
    witness, missing = _find_witnesses(Fs, tol)
    rep.witness = witness
    if missing:
        rep.reason = f"rows {[m + 1 for m in missing]} have no witness pair"
    elif lhs >= 1:
        rep.reason = f"g^q - (g - c) varphi^(q-1) = {lhs:.6g} >= 1"
    else:
        rep.certified = True
    return rep


# edge sets


@dataclass(frozen=True)
class EdgeSet:
    vertex_count: int
    pairs: frozenset

    def __post_init__(self):
        pairs = frozenset((int(a), int(b)) for a, b in self.pairs)
        for a, b in pairs:
            if not (0 <= a < self.vertex_count and 0 <= b < self.vertex_count):
                raise ValueError(f"edge ({a}, {b}) outside the vertex range")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_matrix(cls, F, tol: float = 0.0) -> "EdgeSet":
        """Edge (j, i) for every positive entry F[i, j]."""
        F = np.asarray(F, dtype=float)
        return cls(F.shape[0], frozenset((int(j), int(i)) for i, j in np.argwhere(F > tol)))

    def __or__(self, other: "EdgeSet") -> "EdgeSet":
        _same_size(self, other)
        return EdgeSet(self.vertex_count, self.pairs | other.pairs)


def _same_size(a, b):
    if a.vertex_count != b.vertex_count:
        raise ValueError("edge sets have different vertex counts")


def compose(e1: EdgeSet, e2: EdgeSet) -> EdgeSet:
    """(i, j) in e1 o e2 iff (i, k) in e1 and (k, j) in e2 for some k."""
    _same_size(e1, e2)
    out_of = {}
    for k, j in e2.pairs:
        out_of.setdefault(k, []).append(j)
    return EdgeSet(e1.vertex_count,
                   frozenset((i, j) for i, k in e1.pairs for j in out_of.get(k, ())))


@dataclass
class Rootedness:
    rooted: bool
    witnesses: dict
    missing: frozenset


def rooted_composition(es, root: int, targets) -> Rootedness:
    """Is every target reachable by a stepwise chain through es[0], es[1], ...?"""
    es = list(es)
    frontier = {root: [root]}
    for e in es:
        _same_size(e, es[0])
        nxt = {}
        for a, b in sorted(e.pairs):
            if a in frontier and b not in nxt:
                nxt[b] = frontier[a] + [b]
        frontier = nxt
    targets = set(targets)
    missing = frozenset(targets - set(frontier))
    return Rootedness(not missing, {t: frontier[t] for t in targets if t in frontier}, missing)
