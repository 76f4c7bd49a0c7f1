import numpy as np
import pytest
from hypothesis import given, strategies as st

from cmcert.interval import Interval
from cmcert.poly import (PolyBatch, PolyMap4, Polynomial4, monomials, poisson_bracket, poly_compose, poly_diff,
                         poly_eval, poly_second_derivative_enclosure, random_polynomial)

X0, X1, X2, X3 = (Polynomial4.variable(i, 6) for i in range(4))


def _coeff_close(P, Q, tol):
    keys = set(P.terms) | set(Q.terms)
    return all(abs(P.coeff(k) - Q.coeff(k)) <= tol for k in keys)


def _point_box(p):
    return Interval(np.asarray(p, dtype=float))


def test_monomial_order_is_graded_and_complete():
    for d in range(6):
        ms = monomials(d)
        assert len(ms) == len(set(ms)) == (d + 1) * (d + 2) * (d + 3) // 6
        assert all(sum(k) == d for k in ms)
    P = random_polynomial(np.random.default_rng(0), 3)
    degs = [sum(k) for k in P.terms]
    assert degs == sorted(degs)


def test_zero_coefficients_are_pruned():
    P = X0 - X0
    assert len(P) == 0
    Q = Polynomial4({(1, 0, 0, 0): 0.0, (0, 1, 0, 0): 2.0})
    assert list(Q.terms) == [(0, 1, 0, 0)]
    I = Polynomial4({(1, 0, 0, 0): Interval(0.0), (0, 1, 0, 0): Interval(-1e-20, 0.0)}, mode="interval")
    assert list(I.terms) == [(0, 1, 0, 0)]


def test_truncation_drops_high_terms():
    P = (X0 + 1).power(5, trunc=3)
    assert P.degree == 3 and P.max_degree == 3
    assert P.coeff((3, 0, 0, 0)) == 10.0


def test_point_evaluation_of_x2_plus_y2():
    P = X2 * X2 + X3 * X3
    v = poly_eval(P, _point_box([0, 0, 1, 2]))
    assert v.lo <= 5 <= v.hi and v.width() <= 4 * np.spacing(5.0)


def test_constant_evaluation():
    v = poly_eval(Polynomial4.constant(7.0), Interval([-3, -1, 0, 2], [4, 1, 0, 5]))
    assert v.lo <= 7 <= v.hi and v.width() <= 2 * np.spacing(7.0)


def test_theta1_x_enclosure_contains_grid():
    P = X0 * X2
    box = Interval([-1, 0, -1, 0], [1, 0, 1, 0])
    v = poly_eval(P, box)
    g = np.linspace(-1, 1, 100)
    a, b = np.meshgrid(g, g)
    vals = (a * b).ravel()
    assert v.lo <= vals.min() and vals.max() <= v.hi
    assert v.lo <= -1 and v.hi >= 1


def test_diff_examples():
    assert poly_diff(X2 * X2, 2) == 2.0 * X2
    assert len(poly_diff(Polynomial4.constant(3.0), 0)) == 0


def test_diff_matches_finite_differences(rng):
    lam = 2.53265917405296
    P = (X2 * X3).scale(lam)
    dP = poly_diff(P, 3)
    assert _coeff_close(dP, X2.scale(lam), 0.0)
    Q = random_polynomial(rng, 4)
    pts = rng.uniform(-0.5, 0.5, (100, 4))
    h = 1e-6
    for var in range(4):
        e = np.zeros(4)
        e[var] = h
        fd = (Q(pts + e) - Q(pts - e)) / (2 * h)
        exact = Q.diff(var)(pts)
        assert np.all(np.abs(fd - exact) <= 1e-6 * np.maximum(1.0, np.abs(exact)))


def test_compose_identity_and_zero():
    ident = PolyMap4.identity(6)
    assert poly_compose(X2, ident, 6) == X2
    zero = PolyMap4([Polynomial4.zero(6)] * 4)
    assert len(poly_compose(X2 * X2, zero, 6)) == 0


@given(st.integers(0, 2 ** 31 - 1))
def test_ring_axioms(seed):
    rng = np.random.default_rng(seed)
    P, Q, R = (random_polynomial(rng, 3, density=0.5, max_degree=6) for _ in range(3))
    assert _coeff_close((P + Q).mul(R), P.mul(R) + Q.mul(R), 1e-12)
    assert _coeff_close(P.mul(Q), Q.mul(P), 1e-12)
    assert _coeff_close(P + Q, Q + P, 0.0)


@given(st.integers(0, 2 ** 31 - 1))
def test_compose_eval_consistency(seed):
    rng = np.random.default_rng(seed)
    P = random_polynomial(rng, 3, max_degree=9)
    M = PolyMap4([random_polynomial(rng, 3, max_degree=9, scale=0.5) for _ in range(4)])
    C = poly_compose(P, M, 9)
    pt = rng.uniform(-0.7, 0.7, 4)
    direct = P(M(pt))
    assert abs(C(pt) - direct) <= 1e-9 * max(1.0, abs(direct))
    enc = poly_eval(C, _point_box(pt))
    assert enc.lo - 1e-9 <= direct <= enc.hi + 1e-9


def test_poisson_canonical_pairs():
    one = poisson_bracket(X0, X2)
    assert one.terms == {(0, 0, 0, 0): 1.0}
    assert len(poisson_bracket(X0, X1)) == 0
    assert poisson_bracket(X1, X3).terms == {(0, 0, 0, 0): 1.0}


def test_poisson_action_is_first_integral():
    lam, nu = 2.5, 2.1
    q1, q2, p1, p2 = (Polynomial4.variable(i, 4, "complex") for i in range(4))
    H2 = (q1 * p1).scale(lam) + (q2 * p2).scale(1j * nu)
    assert len(poisson_bracket(H2, q1 * p1)) == 0
    assert len(poisson_bracket(H2, q2 * p2)) == 0


@given(st.integers(0, 2 ** 31 - 1))
def test_poisson_antisymmetry_and_jacobi(seed):
    rng = np.random.default_rng(seed)
    F, G, H = (random_polynomial(rng, 3, max_degree=9) for _ in range(3))
    FG, GF = poisson_bracket(F, G), poisson_bracket(G, F)
    assert FG == -GF
    jac = (poisson_bracket(poisson_bracket(F, G), H) + poisson_bracket(poisson_bracket(G, H), F)
           + poisson_bracket(poisson_bracket(H, F), G))
    scale = max(1.0, max(abs(c) for c in FG.terms.values()) if FG.terms else 1.0)
    assert jac.max_abs_coeff() <= 1e-10 * scale ** 2


@given(st.integers(0, 2 ** 31 - 1))
def test_interval_eval_contains_members(seed):
    rng = np.random.default_rng(seed)
    P = random_polynomial(rng, 4)
    c = rng.uniform(-1, 1, 4)
    w = rng.uniform(0, 0.3, 4)
    box = Interval(c - w, c + w)
    enc = poly_eval(P, box)
    pts = c + w * rng.uniform(-1, 1, (200, 4))
    vals = P(pts)
    assert np.all((enc.lo <= vals) & (vals <= enc.hi))
    Pi = P.to_interval()
    enc_i = poly_eval(Pi, box)
    assert np.all((enc_i.lo <= vals) & (vals <= enc_i.hi))


def test_second_derivative_examples():
    box = Interval(-np.ones(4), np.ones(4))
    lin = PolyMap4.linear(np.arange(16.0).reshape(4, 4))
    H = poly_second_derivative_enclosure(lin, box)
    assert np.all(H.lo == 0) and np.all(H.hi == 0)
    sq = PolyMap4([X2 * X2, Polynomial4.zero(6), Polynomial4.zero(6), Polynomial4.zero(6)])
    H = poly_second_derivative_enclosure(sq, box)
    assert H.lo[0, 2, 2] == 2 and H.hi[0, 2, 2] == 2
    mask = np.ones((4, 4, 4), bool)
    mask[0, 2, 2] = False
    assert np.all(H.lo[mask] == 0) and np.all(H.hi[mask] == 0)


def test_second_derivative_of_phi_matches_fd(phi, rng):
    M = phi.as_polymap
    c = np.array([0.0, 0.0, 0.0, 0.0])
    half = np.array([0.17, 0.17, 5e-4, 5e-4])
    box = Interval(c - half, c + half)
    H = poly_second_derivative_enclosure(M, box)
    assert np.array_equal(H.lo, np.swapaxes(H.lo, -1, -2)) and np.array_equal(H.hi, np.swapaxes(H.hi, -1, -2))
    h = 1e-5
    for _ in range(20):
        p = c + half * rng.uniform(-1, 1, 4)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            fd = (M.jacobian(p + e) - M.jacobian(p - e)) / (2 * h)    # fd[i, j] ~ d2 M_i / dz_j dz_k
            assert np.all(H.lo[:, :, k] - 1e-5 * (1 + np.abs(fd)) <= fd)
            assert np.all(fd <= H.hi[:, :, k] + 1e-5 * (1 + np.abs(fd)))


def test_polybatch_matches_individual(rng):
    polys = [random_polynomial(rng, 3) for _ in range(3)]
    box = Interval(np.full(4, -0.3), np.full(4, 0.4))
    batch = PolyBatch(polys).eval_interval(box)
    for i, p in enumerate(polys):
        single = poly_eval(p, box)
        assert batch.lo[i] <= single.hi and single.lo <= batch.hi[i]
        v = p(rng.uniform(-0.3, 0.4, (50, 4)))
        assert np.all((batch.lo[i] <= v) & (v <= batch.hi[i]))


@pytest.mark.parametrize("mode", ["real", "complex", "interval"])
def test_text_roundtrip_is_bit_exact(mode, rng):
    P = random_polynomial(rng, 4, mode="complex" if mode == "complex" else "real")
    if mode == "interval":
        P = P.to_interval() + Interval(-1e-3, 2e-3)
    Q = Polynomial4.from_text(P.to_text())
    assert Q == P and Q.mode == P.mode and Q.max_degree == P.max_degree
    M = PolyMap4([P] * 4)
    assert all(a == b for a, b in zip(PolyMap4.from_text(M.to_text()), M))


def test_from_text_rejects_garbage():
    with pytest.raises(ValueError):
        Polynomial4.from_text("hello\n1 2 3 4 0x1p0\n")


def test_mode_mixing_rules():
    with pytest.raises(TypeError):
        Polynomial4({(0, 0, 0, 0): 1j})
    with pytest.raises(TypeError):
        Polynomial4.variable(0, 4, "complex") + Polynomial4.variable(0, 4, "interval")
    P = Polynomial4({(1, 0, 0, 0): 1 + 1e-14j}, 4, "complex")
    assert P.real_part(tol=1e-12).mode == "real"
    with pytest.raises(ValueError):
        P.real_part(tol=1e-16)
