import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signed_consensus import acceptance
from signed_consensus import stochastic_matrix as sm
from signed_consensus.presets import matrix_fixture

F_SUB = matrix_fixture("sub-chain")
F_SUB_ZD = matrix_fixture("sub-zero-diagonal")
F_SUPER = matrix_fixture("super-chain")
F_SUPER_ZD = matrix_fixture("super-zero-diagonal")

# frozen from direct evaluation outside the package (plain formulas and sympy)
SUB_CHAIN_BOUND = 0.9986648849277057  # (1 - 0.1 * 0.2**2) ** (1/3)


def test_classification_of_fixtures():
    c = sm.classify(F_SUB)
    assert c.kind == "sub"
    assert c.rows.below == {1} and c.rows.at_one == {0, 2}
    c = sm.classify(F_SUPER_ZD)
    assert c.kind == "super" and c.rows.above == {0}
    assert sm.classify(np.eye(3)).rows.at_one == {0, 1, 2}
    assert sm.classify([[0.5, -0.1], [0, 1]]).kind == "neither"
    with pytest.raises(ValueError):
        sm.classify(np.ones((2, 3)))


def test_sub_chain_on_fixture():
    rep = sm.bound_sub_chain(F_SUB)
    assert rep.applicable and rep.certified
    assert rep.alpha1 == pytest.approx(0.9) and rep.alpha2 == pytest.approx(0.2)
    assert rep.chain_len_max == 2
    assert rep.bound == pytest.approx(SUB_CHAIN_BOUND, abs=1e-15)
    assert rep.numeric_rho < 1


def test_sub_chain_isolated_block_not_applicable():
    F = np.array([[0.5, 0.2, 0], [0.1, 0.5, 0], [0, 0, 1.0]])
    assert not sm.bound_sub_chain(F).applicable


def test_sub_zero_diag():
    assert sm.bound_sub_zero_diag(F_SUB_ZD).bound == pytest.approx(math.sqrt(0.9), abs=1e-12)
    b = 0.36
    rep = sm.bound_sub_zero_diag([[0, 1.0], [b, 0]])
    assert rep.bound == pytest.approx(math.sqrt(b))
    assert rep.numeric_rho <= rep.bound + 1e-12


def test_super_chain_on_fixture():
    rep = sm.bound_super_chain(F_SUPER)
    assert (rep.alpha1, rep.alpha2, rep.alpha3, rep.chain_len_max) == pytest.approx((0.6, 0.5, 1.05, 1))
    assert rep.inequality_value == pytest.approx(0.8775, abs=1e-12)
    assert rep.bound == pytest.approx(math.sqrt(0.8775), abs=1e-12)
    assert rep.certified
    # characteristic polynomial (5l - 3)(40l^2 - 11) gives rho = 0.6
    assert rep.numeric_rho == pytest.approx(0.6, abs=1e-9)


def test_super_chain_root_choice_counterexample():
    # the depth-th root of the inequality underestimates rho here; the (depth+1)-th root does not
    F = np.array([[0, 1.01], [0.79, 0]])
    rep = sm.bound_super_chain(F)
    rho = math.sqrt(1.01 * 0.79)
    assert rep.certified
    assert rep.inequality_value < rho <= rep.bound


def test_super_chain_without_chain():
    F = np.array([[0.5, 0.2, 0], [0.1, 0.5, 0], [0, 0, 1.2]])
    rep = sm.bound_super_chain(F)
    assert not rep.applicable


def test_super_zero_diag():
    rep = sm.bound_super_zero_diag(F_SUPER_ZD)
    assert rep.bound == pytest.approx(math.sqrt(0.96), abs=1e-12)
    rep = sm.bound_super_zero_diag([[0, 1.1], [0.5, 0]])
    assert rep.bound == pytest.approx(math.sqrt(0.55))
    assert rep.numeric_rho == pytest.approx(math.sqrt(0.55))


def test_spectral_radius():
    assert sm.spectral_radius(np.eye(4)) == pytest.approx(1.0)
    assert sm.spectral_radius(F_SUPER) == pytest.approx(0.6, abs=1e-9)


def test_product_fixtures():
    sub = matrix_fixture("sub-product")
    prod, rep = sm.product_sub(sub)
    assert rep.certified and sm.inf_norm(prod) == pytest.approx(0.95, abs=1e-12)
    sup = matrix_fixture("super-product")
    assert sm.product_super(sup).window_norm == pytest.approx(0.885, abs=1e-12)


def test_identity_product_not_certified():
    prod, rep = sm.product_sub([np.eye(3)] * 3)
    assert not rep.certified
    assert sm.classify(prod).kind == "sub"


def test_single_deficient_factor_norm():
    F = np.array([[0.3, 0.2], [0.1, 0.6]])
    assert sm.product_super([F]).window_norm == pytest.approx(0.7)


def _random_sub(rng, n):
    F = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    s = F.sum(axis=1)
    s[s == 0] = 1
    return F / s[:, None] * rng.uniform(0.5, 1.0, n)[:, None]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sub_products_stay_sub(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    prod, _ = sm.product_sub([_random_sub(rng, n) for _ in range(int(rng.integers(1, 5)))])
    assert np.all(prod.sum(axis=1) <= 1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_certified_super_products_contract(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    Fs = []
    for _ in range(3):
        F = rng.uniform(0.0, 1.0, (n, n)) * (rng.random((n, n)) < 0.6)
        np.fill_diagonal(F, rng.uniform(0.3, 1.0, n))
        sums = rng.uniform(0.5, 1.05, n)
        Fs.append(F / F.sum(axis=1)[:, None] * sums[:, None])
    rep = sm.product_super(Fs)
    if rep.certified:
        assert rep.window_norm < 1


@pytest.mark.parametrize("name", sorted(acceptance.GENERATORS))
def test_bound_soundness(name):
    gen = acceptance.GENERATORS[name]
    rng = np.random.default_rng([7, len(name)])
    for _ in range(100):
        F, rep = gen(rng)
        assert rep.applicable
        assert rep.bound + 1e-9 >= sm.spectral_radius(F)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_super_chain_certificate_implies_stability(seed):
    F, rep = acceptance.random_super_chain(np.random.default_rng(seed))
    assert rep.certified and sm.spectral_radius(F) < 1


def test_inf_norm_matches_abs_row_sums():
    F = np.random.default_rng(3).normal(size=(5, 5))
    assert sm.inf_norm(F) == pytest.approx(float((np.abs(F) @ np.ones(5)).max()))


# edge sets

edge_sets = st.sets(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=10).map(
    lambda p: sm.EdgeSet(5, frozenset(p)))


def test_compose_basic():
    e = sm.compose(sm.EdgeSet(3, {(0, 1)}), sm.EdgeSet(3, {(1, 2)}))
    assert e.pairs == {(0, 2)}
    loops = sm.EdgeSet(3, {(i, i) for i in range(3)})
    E = sm.EdgeSet(3, {(0, 1), (2, 0)})
    assert E.pairs <= sm.compose(loops, E).pairs
    with pytest.raises(ValueError):
        sm.compose(sm.EdgeSet(2, set()), sm.EdgeSet(3, set()))


@settings(max_examples=100, deadline=None)
@given(edge_sets, edge_sets, edge_sets)
def test_compose_associative_and_distributive(a, b, c):
    assert sm.compose(sm.compose(a, b), c) == sm.compose(a, sm.compose(b, c))
    assert sm.compose(a | b, c) == sm.compose(a, c) | sm.compose(b, c)


@settings(max_examples=100, deadline=None)
@given(st.lists(edge_sets, min_size=1, max_size=5), st.integers(0, 4))
def test_rooted_composition_matches_materialized(es, root):
    composed = es[0]
    for e in es[1:]:
        composed = sm.compose(composed, e)
    reach = {b for a, b in composed.pairs if a == root}
    for t in range(5):
        r = sm.rooted_composition(es, root, {t})
        assert r.rooted == (t in reach)
        if r.rooted:
            path = r.witnesses[t]
            assert path[0] == root and path[-1] == t
            assert all((u, v) in e.pairs for (u, v), e in zip(zip(path, path[1:]), es))


def test_rooted_with_self_loops_and_waiting():
    e = sm.EdgeSet(2, {(0, 0), (0, 1), (1, 1)})
    assert sm.rooted_composition([e] * 3, 0, {1}).rooted
    no_loops = [sm.EdgeSet(3, {(0, 1)}), sm.EdgeSet(3, set()), sm.EdgeSet(3, {(1, 2)})]
    assert not sm.rooted_composition(no_loops, 0, {2}).rooted


def test_analyze_report():
    out = sm.analyze(F_SUB_ZD)
    assert out["classification"] == "sub"
    rules = {b["rule"]: b for b in out["bounds"]}
    assert rules["sub_zero_diag"]["bound"] == pytest.approx(math.sqrt(0.9))
    out = sm.analyze(np.eye(3))
    assert out["numeric_rho"] == pytest.approx(1.0)
    assert not any(b["applicable"] for b in out["bounds"])
