import json
import math
import warnings
from fractions import Fraction

import numpy as np
import pytest

from cmcert.interval import Interval
from cmcert.verifier import (EXIT_CODES, STAGES, Certificate, ConeCoefficients, DerivativeBounds, Inequality,
                             KappaBounds, _grid_boxes, _meets_disc, central_field_bounds, certify_fixed_point,
                             check_cone_hypotheses, check_covering_hypotheses, check_energy_alignment,
                             check_rho_condition, circle_cover, derivative_block_bounds, derivative_hull,
                             disc_cover, interval_newton, kappa_constants, lipschitz_constants)

DEFAULT_CC = ConeCoefficients()

# published values of the reference computation
PAPER_DB = dict(delta_u=2.434904529896616, delta_s=2.434911565550947, c_u=0.08050236551044671,
                c_s=-0.08046115109310353, eps_c=0.09796031906285504, eps_m=0.09656707906887786,
                eps_u=0.09737656524499766, eps_s=0.09735689577043023)
PAPER_E = (1.909815022732472, 1.909823931307315)
PAPER_KAPPA = KappaBounds(0.3233133031766185, 2.289103404031357, -2.191592853354867,
                          -0.3232720887592754, 2.191595652437820, -2.289115357054329)


def _db(**kw):
    vals = dict(PAPER_DB)
    vals.update(kw)
    return DerivativeBounds(M=Interval(np.zeros((4, 4))), **vals)


def _kappa_exact(db, cc):
    """The six constants in exact rational arithmetic on the float inputs."""
    F = Fraction
    dU, dS, cU, cS = F(db.delta_u), F(db.delta_s), F(db.c_u), F(db.c_s)
    ec, em, eu, es = F(db.eps_c), F(db.eps_m), F(db.eps_u), F(db.eps_s)
    g, ah, av, bh, bv = (F(x) for x in (cc.gamma, cc.alpha_h, cc.alpha_v, cc.beta_h, cc.beta_v))
    h = F(1, 2)
    return dict(
        kc_forw=cU + h * (ah / g * em + bh / g * em + 2 * ec),
        ku_forw=dU - h * (em + eu + g / ah * ec + bh / ah * es),
        ks_forw=-dS + h * (em + ah / bh * eu + g / bh * ec + es),
        kc_back=cS - h * (em * av / g + em * bv / g + 2 * ec),
        ku_back=dU - h * (em + eu + g / av * ec + bv / av * es),
        ks_back=-dS + h * (em + av / bv * eu + g / bv * ec + es),
    )


# block bounds -------------------------------------------------------------------

def test_decoupled_block_bounds():
    db = derivative_block_bounds(Interval(np.diag([0.0, 0.0, 2.0, -2.0])))
    assert db.delta_u == 2 and db.delta_s == 2
    assert db.eps_c == db.eps_m == db.eps_u == db.eps_s == 0
    assert db.c_s == 0 and db.c_u == 0


def test_block_bounds_layout_and_norms(rng):
    c = rng.uniform(-1, 1, (4, 4))
    M = Interval(c - 0.01, c + 0.01)
    db = derivative_block_bounds(M)
    assert db.delta_u == M.lo[2, 2] and db.delta_s == -M.hi[3, 3]
    assert db.c_s <= db.c_u
    # eps bounds every member of its blocks in the 2-norm
    for _ in range(200):
        A = M.lo + rng.random((4, 4)) * (M.hi - M.lo)
        assert np.linalg.norm(A[0:2, 2:3], 2) <= db.eps_c and np.linalg.norm(A[0:2, 3:4], 2) <= db.eps_c
        assert np.linalg.norm(A[2:3, 0:2], 2) <= db.eps_m and np.linalg.norm(A[3:4, 0:2], 2) <= db.eps_m
        assert abs(A[2, 3]) <= db.eps_u and abs(A[3, 2]) <= db.eps_s
        w, _ = np.linalg.eigh(0.5 * (A[:2, :2] + A[:2, :2].T))
        assert db.c_s <= w[0] and w[1] <= db.c_u
    # a permuted layout reads the same blocks
    perm = (2, 3, 0, 1)
    Mp = Interval(M.lo[np.ix_(np.argsort(perm), np.argsort(perm))], M.hi[np.ix_(np.argsort(perm), np.argsort(perm))])
    dbp = derivative_block_bounds(Mp, layout=perm)
    assert dbp.scalars() == db.scalars()
    with pytest.raises(ValueError):
        derivative_block_bounds(Interval(np.zeros((3, 3))))


# kappa ------------------------------------------------------------------------------

def test_kappa_aligned_case():
    db = _db(eps_c=0.0, eps_m=0.0, eps_u=0.0, eps_s=0.0)
    kb = kappa_constants(db, DEFAULT_CC)
    assert kb.ks_forw == kb.ks_back == -db.delta_s
    assert kb.kc_back == db.c_s and kb.kc_forw == db.c_u
    assert kb.ku_forw == kb.ku_back == db.delta_u


def test_kappa_reproduces_reference_values():
    kb = kappa_constants(_db(), DEFAULT_CC)
    for k, v in PAPER_KAPPA.to_dict().items():
        assert getattr(kb, k) == pytest.approx(v, abs=1e-12), k


def test_kappa_hand_evaluation():
    d = PAPER_DB
    kc_f = d["c_u"] + 0.5 * (2 * d["eps_m"] + d["eps_m"] + 2 * d["eps_c"])
    assert kappa_constants(_db(), DEFAULT_CC).kc_forw == pytest.approx(kc_f, abs=1e-12)


@pytest.mark.parametrize("cc", [DEFAULT_CC, ConeCoefficients(0.7, 3.0, 0.5, 0.25, 1.5)])
def test_kappa_matches_exact_rationals(cc):
    db = _db()
    kb = kappa_constants(db, cc).to_dict()
    exact = _kappa_exact(db, cc)
    # rounded in the pessimistic direction, and only by a few ulps
    for k in ("kc_forw", "ks_forw", "ks_back"):
        assert Fraction(kb[k]) >= exact[k]
    for k in ("ku_forw", "kc_back", "ku_back"):
        assert Fraction(kb[k]) <= exact[k]
    for k, v in exact.items():
        assert abs(Fraction(kb[k]) - v) <= Fraction(1, 2 ** 48) * max(1, abs(v))


def test_cone_coefficients_validation():
    with pytest.raises(ValueError):
        ConeCoefficients(alpha_h=1.0, alpha_v=1.0)
    with pytest.raises(ValueError):
        ConeCoefficients(beta_h=2.0, beta_v=2.0)
    with pytest.raises(ValueError):
        ConeCoefficients(gamma=0.0)


# hypothesis checks ----------------------------------------------------------------------

def test_cone_check_on_reference_kappa():
    v = check_cone_hypotheses(PAPER_KAPPA)
    assert v.passed and len(v.checks) == 6
    forw = [c for c in v.checks if "forw" in c.name and "0 <" not in c.name]
    assert all(c.margin >= 1.9 for c in forw)


def test_cone_check_fails_at_zero_expansion():
    kb = KappaBounds(**{**PAPER_KAPPA.to_dict(), "ku_forw": 0.0})
    v = check_cone_hypotheses(kb)
    assert not v.passed
    failed = [c.name for c in v.checks if not c.passed]
    assert "0 < ku_forw" in failed


def test_cone_check_aligned_rates():
    db = _db(delta_u=2.0, delta_s=2.0, c_u=0.1, c_s=-0.1, eps_c=0.0, eps_m=0.0, eps_u=0.0, eps_s=0.0)
    assert check_cone_hypotheses(kappa_constants(db, DEFAULT_CC)).passed


def test_covering_check():
    db = _db()
    v = check_covering_hypotheses(*PAPER_E, db)
    assert v.passed
    assert v.checks[0].margin == pytest.approx(0.4277, abs=5e-5)
    assert not check_covering_hypotheses(db.delta_u, PAPER_E[1], db).passed
    doubled = _db(eps_u=2 * PAPER_DB["eps_u"])
    v2 = check_covering_hypotheses(*PAPER_E, doubled)
    assert v2.passed and v2.checks[0].margin == pytest.approx(0.330, abs=5e-4)


def test_strict_ties_fail():
    assert not Inequality("tie", 1.0, 1.0).passed
    assert Inequality("ok", 1.0, np.nextafter(1.0, 2.0)).passed


def test_rho_condition():
    R = math.sqrt(2 * 155e-4)
    assert check_rho_condition(DEFAULT_CC, R, 5e-4).passed
    assert not check_rho_condition(DEFAULT_CC, 5e-4, 5e-4).passed
    # thresholds r sqrt(2) sit just above rho = 1.2 r for the defaults, and halve with gamma x 4
    assert not check_rho_condition(DEFAULT_CC, 1.2 * 5e-4, 5e-4).passed
    cc4 = ConeCoefficients(gamma=4.0, alpha_h=2.0, alpha_v=1.0, beta_h=1.0, beta_v=2.0)
    v = check_rho_condition(cc4, 1.2 * 5e-4, 5e-4)
    assert v.passed
    assert v.checks[0].lhs == pytest.approx(0.5 * check_rho_condition(DEFAULT_CC, R, 5e-4).checks[0].lhs)


def test_lipschitz_constants():
    L_s, L_u, L_c = lipschitz_constants(DEFAULT_CC)
    assert L_s == math.sqrt(0.5) and L_u == math.sqrt(0.5) and L_c == math.sqrt(2.0)
    small = [lipschitz_constants(ConeCoefficients(gamma=g))[2] for g in (1e-2, 1e-4, 1e-8)]
    assert small == sorted(small, reverse=True) and small[-1] < 1e-3
    with pytest.warns(RuntimeWarning, match="unbounded"):
        lipschitz_constants(ConeCoefficients(alpha_h=1.0 + 1e-14, alpha_v=1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lipschitz_constants(DEFAULT_CC)


# interval Newton ---------------------------------------------------------------------------

def test_newton_one_dimensional_sqrt2():
    I = Interval(1.0, 2.0)
    f = lambda x: Interval(x) * Interval(x) - 2.0  # noqa: E731
    df = lambda J: 2.0 * J  # noqa: E731
    N, ok = interval_newton(f, df, I)
    assert ok
    for _ in range(6):
        assert N.contains(math.sqrt(2))
        I = N.intersect(I)
        N, _ = interval_newton(f, df, I)
    assert float(I.width()) <= 1e-15


def test_newton_singular_derivative():
    N, ok = interval_newton(lambda x: Interval(x) ** 2 - 2.0, lambda J: 2.0 * J, Interval(-1.0, 2.0))
    assert not ok and not np.isfinite(N.hi)


def test_fixed_point_at_l1(phi):
    s = 25e-5
    fp = certify_fixed_point(phi, Interval(-s * np.ones(4), s * np.ones(4)))
    assert fp.passed
    assert np.all(np.abs(fp.newton.lo) <= 1.3e-4) and np.all(np.abs(fp.newton.hi) <= 1.3e-4)
    assert np.all(fp.newton.contains(0.0)) or np.all(np.abs(fp.newton.mid()) <= 1e-12)


def test_fixed_point_far_seed_fails(phi):
    s = 25e-5
    fp = certify_fixed_point(phi, Interval(np.full(4, 0.1) - s, np.full(4, 0.1) + s))
    assert not fp.passed and "not" in fp.message


# covers ------------------------------------------------------------------------------------

def test_disc_cover_covers_disc(rng):
    R = 0.17
    lo, hi, n = disc_cover(R, 500)
    assert len(lo) >= 500
    r = R * np.sqrt(rng.random(20000))
    t = rng.uniform(0, 2 * np.pi, 20000)
    pts = np.stack([r * np.cos(t), r * np.sin(t)], -1)
    inside = np.any(np.all((pts[:, None] >= lo[None]) & (pts[:, None] <= hi[None]), -1), 1)
    assert inside.all()
    # every kept box meets the disc and n is minimal
    assert np.all(_meets_disc(lo, hi, R))
    glo, ghi = _grid_boxes(-R, R, n - 1)
    assert _meets_disc(glo, ghi, R).sum() < 500


@pytest.mark.parametrize("n", [8, 100, 500])
def test_circle_cover_covers_circle(n):
    R = 0.176
    lo, hi = circle_cover(R, n)
    t = np.linspace(0, 2 * np.pi, 50001)
    pts = np.stack([R * np.cos(t), R * np.sin(t)], -1)
    inside = np.zeros(len(pts), bool)
    for a, b in zip(lo, hi):
        inside |= np.all((pts >= a) & (pts <= b), -1)
    assert inside.all()


# hulls on small configurations ----------------------------------------------------------------

def _grid_cover(R, n):
    lo, hi = _grid_boxes(-R, R, n)
    keep = _meets_disc(lo, hi, R)
    return lo[keep], hi[keep]


def test_hull_tightens_under_refinement(phi):
    R, r = 0.05, 5e-4
    coarse, _, _ = derivative_hull(phi, *_grid_cover(R, 4), r)
    fine, _, _ = derivative_hull(phi, *_grid_cover(R, 8), r)
    tol = 1e-12
    assert np.all(fine.lo >= coarse.lo - tol) and np.all(fine.hi <= coarse.hi + tol)
    assert np.sum(fine.width()) < np.sum(coarse.width())


def test_parallel_hull_is_identical(phi):
    clo, chi = _grid_cover(0.05, 6)
    a, pa, na = derivative_hull(phi, clo, chi, 5e-4, chunk_size=5, workers=1)
    b, pb, nb = derivative_hull(phi, clo, chi, 5e-4, chunk_size=5, workers=2)
    assert np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi)
    assert np.array_equal(pa.lo, pb.lo) and na == nb


def test_central_field_collapses_near_l1(phi):
    R, r = 1e-3, 5e-4
    clo, chi, _ = disc_cover(R, 50)
    M, per_box, _ = derivative_hull(phi, clo, chi, r)
    cf_ = central_field_bounds(phi, clo, chi, r, per_box_derivative=per_box)
    # |pi_x F| <= |DF row| * distance to the fixed point
    row_x = float(np.hypot(*np.maximum(np.abs(M.lo[2, :2]), np.abs(M.hi[2, :2]))))
    row_y = float(np.hypot(*np.maximum(np.abs(M.lo[3, :2]), np.abs(M.hi[3, :2]))))
    d = R * math.sqrt(2) * 1.5
    assert cf_.E_u <= row_x * d / r + 1e-9 and cf_.E_s <= row_y * d / r + 1e-9
    assert cf_.E_u < 0.05 and cf_.E_s < 0.05
    with pytest.raises(ValueError):
        central_field_bounds(phi, clo, chi, r, sub_refine=8)


def test_energy_needs_positive_v(phi):
    ea = check_energy_alignment(phi, 0.05, 5e-4, 0.0)
    assert not ea.passed
    with pytest.raises(ValueError):
        check_energy_alignment(phi, 0.05, 5e-4, 0.01, fiber_subdiv=8)


@pytest.mark.slow
def test_energy_window_at_half_radius(phi):
    R = 0.5 * math.sqrt(2 * 155e-4)
    v = 0.5 * (math.sqrt(2 * 155e-4) - math.sqrt(2 * 150e-4))
    ea = check_energy_alignment(phi, R, 5e-4, v, boundary_subdiv=250, max_boxes=20000)
    assert ea.passed
    lo, hi = ea.h_window
    assert lo < hi


# certificate --------------------------------------------------------------------------------

def _fake_certificate(passed=True):
    cert = Certificate(config={"mu": 3.0e-6, "R": 0.1})
    for s in STAGES:
        checks = [Inequality(f"{s} check", 0.5, 1.0 if passed or s != "covering" else 0.25).to_dict()]
        cert.stages[s] = {"passed": passed or s != "covering", "seconds": 0.1,
                          "verdict": {"passed": passed or s != "covering", "checks": checks}}
    if not passed:
        cert.failed_stage = "covering"
    cert.quantities = {"E_u": 0.45, "L_s": math.sqrt(0.5), "derivative_hull": [[[1.0, 2.0]] * 4] * 4}
    return cert


def test_certificate_roundtrip(tmp_path):
    cert = _fake_certificate()
    path = tmp_path / "c.json"
    cert.save(path)
    back = Certificate.load(path)
    assert back.to_dict() == cert.to_dict()
    assert back.passed and back.exit_code == 0 and back.consistent()
    d = json.loads(path.read_text())
    assert d["format"] == "cmcert-certificate-1" and d["passed"] is True
    assert back.derivative_hull().shape == (4, 4)
    assert "PASS" in back.summary()


def test_certificate_failure_codes():
    cert = _fake_certificate(passed=False)
    assert not cert.passed and cert.exit_code == EXIT_CODES["covering"]
    missing = Certificate(config={})
    assert not missing.passed and missing.exit_code == EXIT_CODES[STAGES[0]]


def test_certificate_consistency_detects_bad_margin():
    cert = _fake_certificate()
    cert.stages["rho"]["verdict"]["checks"][0].update(lhs=1.0, rhs=1.0, margin=0.0)
    assert cert.passed and not cert.consistent()
