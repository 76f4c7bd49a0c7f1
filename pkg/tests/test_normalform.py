import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmcert.normalform import (CoordinateChange, ResonanceError, build_phi, complexify, is_resonant, lie_normalize,
                               linear_normalize, normal_form_hamiltonian, quadratic_part, symplectic_J,
                               truncated_energy, truncated_frequency)
from cmcert.poly import PolyMap4, Polynomial4, poisson_bracket, random_polynomial
from cmcert.rtbp import c_coefficient, jacobian, vector_field


@pytest.fixture(scope="module")
def lin(params):
    return linear_normalize(float(c_coefficient(2, params.mu, params.gamma_hat)))


def _H2_real(lin, N=4):
    """``lam x1 y1 + nu/2 (x2^2 + y2^2)`` in slots ``(x1, x2, y1, y2)``."""
    return Polynomial4({(1, 0, 1, 0): lin.lam, (0, 2, 0, 0): lin.nu / 2, (0, 0, 0, 2): lin.nu / 2}, N)


def _close(P, Q, tol):
    return (P - Q).max_abs_coeff() <= tol


# linear stage ----------------------------------------------------------------

def test_h2_in_normal_form(lin):
    H2 = quadratic_part(lin.c2).compose(PolyMap4.linear(lin.C_slots), 4)
    assert _close(H2, _H2_real(lin), 1e-10)


def test_linear_change_is_symplectic(lin):
    J = symplectic_J()
    C = lin.C_slots
    assert np.max(np.abs(C.T @ J @ C - J)) <= 1e-10
    assert np.max(np.abs(lin.C @ lin.C_inv - np.eye(4))) <= 1e-12
    assert lin.lam > 0 and lin.nu > 0


def test_eigenvalues_match_eigensolver(lin):
    c2 = lin.c2
    # linear field of H2 in (x, y, px, py)
    A = np.array([[0, 1, 1, 0], [-1, 0, 0, 1], [2 * c2, 0, 0, 1], [0, -c2, -1, 0]], dtype=float)
    ev = np.linalg.eigvals(A)
    real = np.sort(ev[np.abs(ev.imag) < 1e-9].real)
    imag = np.sort(ev[np.abs(ev.imag) >= 1e-9].imag)
    assert np.allclose(real, [-lin.lam, lin.lam], atol=1e-10)
    assert np.allclose(imag, [-lin.nu, lin.nu], atol=1e-10)


def test_linear_normalize_rejects_non_saddle_centre():
    with pytest.raises(ValueError):
        linear_normalize(0.9)


# complexification -----------------------------------------------------------

def test_complexify_examples():
    T, T_inv = complexify(4)
    q = T_inv(np.array([0.0, 1.0, 0.0, 0.0]))
    assert q[1] == pytest.approx(1 / np.sqrt(2)) and q[3] == pytest.approx(-1j / np.sqrt(2))
    z = T_inv(np.array([0.3, 0.0, -0.7, 0.0]))
    assert np.allclose(z, [0.3, 0, -0.7, 0], atol=0)
    comp = T.compose(T_inv, 4)
    ident = PolyMap4.identity(4, "complex")
    # 1/sqrt(2) squared is 1/2 up to one rounding
    assert all((c - e).max_abs_coeff() <= 4e-16 for c, e in zip(comp, ident))


def test_complex_h2_has_two_monomials(params, lin):
    Hc = normal_form_hamiltonian(params, 4, lin)
    H2 = Hc.homogeneous(2)
    assert set(H2.terms) == {(1, 0, 1, 0), (0, 1, 0, 1)}
    assert H2.coeff((1, 0, 1, 0)) == pytest.approx(lin.lam, abs=1e-12)
    assert H2.coeff((0, 1, 0, 1)) == pytest.approx(1j * lin.nu, abs=1e-12)


# Lie normalisation ------------------------------------------------------------

def test_normalized_hamiltonian_is_resonant_only(phi):
    H = phi.normal_form.H_normalized
    bad = [abs(c) for k, c in H.terms.items() if sum(k) <= 4 and not is_resonant(k)]
    assert max(bad, default=0.0) <= 1e-10


def test_z_commutes_with_h2(phi, lin):
    nf = phi.normal_form
    assert poisson_bracket(nf.Z, _H2_real(lin)).max_abs_coeff() <= 1e-10
    H2c = Polynomial4({(1, 0, 1, 0): lin.lam, (0, 1, 0, 1): 1j * lin.nu}, 4, "complex")
    assert poisson_bracket(nf.Z_complex, H2c).max_abs_coeff() <= 1e-10


def test_transform_is_near_identity(phi):
    T = phi.normal_form.T_N
    for i, c in enumerate(T):
        e = Polynomial4.variable(i, 4)
        # realification leaves a roundoff of a few ulps on the identity part
        assert _close(c.homogeneous(1), e, 1e-15)
        assert len(c.homogeneous(0)) == 0


def test_order_two_is_trivial(params):
    phi2 = build_phi(params, 2)
    nf = phi2.normal_form
    assert len(nf.Z) == 0
    assert all(c == e for c, e in zip(nf.T_N, PolyMap4.identity(2)))


def test_small_divisor_raises(params, lin):
    Hc = normal_form_hamiltonian(params, 4, lin)
    with pytest.raises(ResonanceError, match="multi-index"):
        lie_normalize(Hc, 4, lam=0.0, nu=lin.nu)


def test_degree_graded_consistency(params):
    nf4 = build_phi(params, 4).normal_form
    nf6 = build_phi(params, 6).normal_form
    assert _close(nf6.Z.up_to(4).truncate(4), nf4.Z, 1e-10)
    for a, b in zip(nf6.T_N, nf4.T_N):
        assert _close(a.up_to(3).truncate(4), b.up_to(3), 1e-10)


@settings(max_examples=15)
@given(st.integers(0, 2 ** 31 - 1))
def test_transform_is_canonical(phi, seed):
    rng = np.random.default_rng(seed)
    T = phi.normal_form.T_N
    F = random_polynomial(rng, 3, max_degree=4).homogeneous(3)
    G = random_polynomial(rng, 3, max_degree=4).homogeneous(3)
    lhs = poisson_bracket(F.compose(T, 4), G.compose(T, 4), trunc=4)
    rhs = poisson_bracket(F, G, trunc=4).compose(T, 4)
    assert (lhs - rhs).max_abs_coeff() <= 1e-8


def test_realification_soundness(phi, rng):
    nf = phi.normal_form
    _, T_inv = complexify(4)
    pts = rng.uniform(-0.3, 0.3, (100, 4))
    zc = nf.Z_complex(T_inv(pts))
    zr = nf.Z(pts)
    assert np.max(np.abs(zc.real - zr)) <= 1e-10
    assert np.max(np.abs(zc.imag)) <= 1e-10
    assert nf.imag_residue <= 1e-12


# composite change ------------------------------------------------------------

def test_l1_maps_to_origin(phi, params):
    assert np.max(np.abs(phi(params.l1))) <= 1e-12


def test_roundtrip_residual(phi):
    assert phi.roundtrip_residual() <= 1e-9


def test_derivative_at_l1_has_block_form(phi, params):
    D = phi.jacobian(params.l1)
    A = D @ jacobian(params.mu, params.l1) @ np.linalg.inv(D)
    lam, nu = phi.linear.lam, phi.linear.nu
    want = np.array([[0, nu, 0, 0], [-nu, 0, 0, 0], [0, 0, lam, 0], [0, 0, 0, -lam]])
    assert np.max(np.abs(A - want)) <= 1e-8


def test_jacobian_matches_finite_differences(phi, params, rng):
    X = params.l1 + rng.uniform(-1, 1, 4) * 1e-4
    h = 1e-8
    D = phi.jacobian(X)
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (phi(X + e) - phi(X - e)) / (2 * h)
        assert np.allclose(D[:, k], fd, rtol=1e-6, atol=1e-4)


def test_flattened_map_matches_stages(phi, rng):
    u = rng.uniform(-0.05, 0.05, (20, 4))
    X = phi.from_linear(u)
    # phi o R evaluated on scaled coordinates
    z = (X - phi.offset) / (-phi.g)
    assert np.max(np.abs(phi.as_polymap(z) - phi(X))) <= 1e-12
    assert np.allclose(phi.as_polymap.linear_part(), phi.M_inv, atol=1e-12)


def test_inverse_newton_roundtrip(phi, rng):
    p = rng.uniform(-1, 1, (200, 4)) * np.array([0.17, 0.17, 5e-4, 5e-4])
    X = phi.inverse_newton(p)
    assert np.max(np.abs(phi(X) - p)) <= 1e-12
    assert np.max(np.abs(phi.approx_inverse(p) - X)) <= 1e-5


def test_field_is_tangent_to_linear_flow(phi, params):
    F = phi.field(np.array([1e-3, 0.0, 0.0, 0.0]))
    assert F[1] == pytest.approx(-phi.linear.nu * 1e-3, rel=1e-2)
    assert np.allclose(vector_field(params.mu, params.l1), 0, atol=1e-10)


def test_truncated_frequency_and_energy(phi):
    nf = phi.normal_form
    assert truncated_frequency(nf, 0.0) == pytest.approx(nf.nu, abs=1e-15)
    Is = np.linspace(0, 0.0155, 40)
    E = [truncated_energy(nf, I) for I in Is]
    assert np.all(np.diff(E) > 0)


def test_save_load_is_bit_identical(phi, tmp_path, rng):
    path = tmp_path / "phi.txt"
    phi.save(path)
    back = CoordinateChange.load(path)
    assert back.to_text() == phi.to_text()
    X = phi.offset + rng.uniform(-1, 1, (10, 4)) * 1e-3
    assert np.array_equal(back(X), phi(X))
    with pytest.raises(ValueError):
        CoordinateChange.from_text("garbage")
