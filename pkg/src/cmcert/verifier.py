"""Hypothesis checks for the center manifold theorem and the run certificate.

The rigorous work happens in :mod:`cmcert.enclosure`; this module turns the
enclosures into the scalar rate bounds, evaluates the cone, covering, energy
and radius conditions, certifies the fixed point, and records everything in
a :class:`Certificate`.

A single set ``N_p = D_phi`` is used, so every bound is a hull over the
whole domain and the central radius is ``rho = R``.
"""

from __future__ import annotations

import concurrent.futures as cf
import dataclasses
import heapq
import json
import logging
import math
import platform
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .enclosure import certified_preimage, dFphi_enclosure, energy_enclosure, field_enclosure, \
    preimage_enclosure
from .interval import Interval, _down, _up, as_interval, gauss_solve_batch, hull, matrix_apply, \
    matrix_norm_upper, quad_form_range_2x2

log = logging.getLogger(__name__)

# stage names in execution order, with the exit code of a failure in that stage
STAGES = ("normalform", "fixed_point", "derivative", "cone", "central_field", "covering",
          "energy", "rho", "lipschitz")
EXIT_CODES = {name: 10 + i for i, name in enumerate(STAGES)}
EXIT_PASS = 0
EXIT_CONFIG = 2


# ----------------------------------------------------------------------
# constants of the theorem


@dataclass(frozen=True)
class ConeCoefficients:
    """Weights of the quadratic forms; defaults are ``alpha_h = beta_v = 2``, the rest 1."""

    gamma: float = 1.0
    alpha_h: float = 2.0
    alpha_v: float = 1.0
    beta_h: float = 1.0
    beta_v: float = 2.0

    def __post_init__(self):
        for k, v in dataclasses.asdict(self).items():
            if not v > 0:
                raise ValueError(f"cone coefficient {k} must be positive, got {v}")
        if not self.alpha_h > self.alpha_v:
            raise ValueError("need alpha_h > alpha_v")
        if not self.beta_v > self.beta_h:
            raise ValueError("need beta_v > beta_h")

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "ConeCoefficients":
        return cls(cfg.gamma, cfg.alpha_h, cfg.alpha_v, cfg.beta_h, cfg.beta_v)


@dataclass
class DerivativeBounds:
    """Block decomposition of a derivative enclosure in ``(theta1, theta2, x, y)`` layout.

    The scalars are rigorous: ``delta_u <= inf A``, ``-delta_s >= sup B``,
    ``c_s``/``c_u`` bound the central quadratic form, and every ``eps_*``
    bounds the norm of all members of the blocks sharing its name.
    """

    M: Interval
    delta_u: float
    delta_s: float
    c_u: float
    c_s: float
    eps_c: float
    eps_m: float
    eps_u: float
    eps_s: float
    norm: str = "frobenius"

    @property
    def A(self) -> Interval:
        return self.M[2:3, 2:3]

    @property
    def B(self) -> Interval:
        return self.M[3:4, 3:4]

    @property
    def C(self) -> Interval:
        return self.M[0:2, 0:2]

    @property
    def eps_c_blocks(self):
        return self.M[0:2, 2:3], self.M[0:2, 3:4]

    @property
    def eps_m_blocks(self):
        return self.M[2:3, 0:2], self.M[3:4, 0:2]

    @property
    def eps_u_block(self) -> Interval:
        return self.M[2:3, 3:4]

    @property
    def eps_s_block(self) -> Interval:
        return self.M[3:4, 2:3]

    def scalars(self) -> dict:
        return {k: getattr(self, k) for k in ("delta_u", "delta_s", "c_u", "c_s",
                                              "eps_c", "eps_m", "eps_u", "eps_s")}


def derivative_block_bounds(M, layout=(0, 1, 2, 3)) -> DerivativeBounds:
    """Read the rate bounds off a 4x4 enclosure.

    ``layout`` lists the row/column of ``M`` holding ``theta1, theta2, x, y``.
    """
    M = as_interval(M)
    if M.shape != (4, 4):
        raise ValueError(f"expected a 4x4 interval matrix, got {M.shape}")
    idx = np.asarray(layout)
    M = Interval._raw(M.lo[np.ix_(idx, idx)], M.hi[np.ix_(idx, idx)])
    c_s, c_u = quad_form_range_2x2(M[0:2, 0:2])
    return DerivativeBounds(
        M=M,
        delta_u=float(M.lo[2, 2]),
        delta_s=float(-M.hi[3, 3]),
        c_u=c_u,
        c_s=c_s,
        eps_c=max(matrix_norm_upper(M[0:2, 2:3]), matrix_norm_upper(M[0:2, 3:4])),
        eps_m=max(matrix_norm_upper(M[2:3, 0:2]), matrix_norm_upper(M[3:4, 0:2])),
        eps_u=matrix_norm_upper(M[2:3, 3:4]),
        eps_s=matrix_norm_upper(M[3:4, 2:3]),
    )


@dataclass
class KappaBounds:
    kc_forw: float
    ku_forw: float
    ks_forw: float
    kc_back: float
    ku_back: float
    ks_back: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def kappa_constants(db: DerivativeBounds, cc: ConeCoefficients) -> KappaBounds:
    """Effective rates corrected by the misalignment errors.

    Evaluated in interval arithmetic; each constant is then rounded in the
    direction that makes the cone hypotheses harder to satisfy.
    """
    I = Interval
    dU, dS, cU, cS = I(db.delta_u), I(db.delta_s), I(db.c_u), I(db.c_s)
    ec, em, eu, es = I(db.eps_c), I(db.eps_m), I(db.eps_u), I(db.eps_s)
    g, ah, av, bh, bv = (I(x) for x in (cc.gamma, cc.alpha_h, cc.alpha_v, cc.beta_h, cc.beta_v))
    kc_f = cU + 0.5 * (ah / g * em + bh / g * em + 2.0 * ec)
    ku_f = dU - 0.5 * (em + eu + g / ah * ec + bh / ah * es)
    ks_f = -dS + 0.5 * (em + ah / bh * eu + g / bh * ec + es)
    kc_b = cS - 0.5 * (em * av / g + em * bv / g + 2.0 * ec)
    ku_b = dU - 0.5 * (em + eu + g / av * ec + bv / av * es)
    ks_b = -dS + 0.5 * (em + av / bv * eu + g / bv * ec + es)
    hi = lambda x: float(x.hi)  # noqa: E731
    lo = lambda x: float(x.lo)  # noqa: E731
    return KappaBounds(hi(kc_f), lo(ku_f), hi(ks_f), lo(kc_b), lo(ku_b), hi(ks_b))


# ----------------------------------------------------------------------
# verdicts


@dataclass
class Inequality:
    """A strict inequality ``lhs < rhs``; ties fail."""

    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return bool(self.lhs < self.rhs)

    @property
    def margin(self) -> float:
        return float(_down(self.rhs - self.lhs))

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                "passed": self.passed}


@dataclass
class Verdict:
    checks: list = field(default_factory=list)
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        d = {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}
        if self.note:
            d["note"] = self.note
        return d


def check_cone_hypotheses(kb: KappaBounds) -> Verdict:
    return Verdict([
        Inequality("kc_forw < ku_forw", kb.kc_forw, kb.ku_forw),
        Inequality("ks_forw < ku_forw", kb.ks_forw, kb.ku_forw),
        Inequality("0 < ku_forw", 0.0, kb.ku_forw),
        Inequality("ks_back < 0", kb.ks_back, 0.0),
        Inequality("ks_back < kc_back", kb.ks_back, kb.kc_back),
        Inequality("ks_back < ku_back", kb.ks_back, kb.ku_back),
    ])


def check_covering_hypotheses(E_u: float, E_s: float, db: DerivativeBounds) -> Verdict:
    return Verdict([
        Inequality("E_u + eps_u < delta_u", float(_up(E_u + db.eps_u)), db.delta_u),
        Inequality("E_s + eps_s < delta_s", float(_up(E_s + db.eps_s)), db.delta_s),
    ])


def check_rho_condition(cc: ConeCoefficients, rho: float, r: float) -> Verdict:
    t_h = float(_up(r * _up(math.sqrt(_up(cc.alpha_h / cc.gamma)))))
    t_v = float(_up(r * _up(math.sqrt(_up(cc.beta_v / cc.gamma)))))
    return Verdict([
        Inequality("r sqrt(alpha_h/gamma) < rho", t_h, rho),
        Inequality("r sqrt(beta_v/gamma) < rho", t_v, rho),
    ])


def lipschitz_constants(cc: ConeCoefficients):
    """``(L_s, L_u, L_c)`` for the stable, unstable and center graphs."""
    L_s = math.sqrt(max(cc.gamma, cc.beta_h) / cc.alpha_h)
    L_u = math.sqrt(max(cc.gamma, cc.alpha_v) / cc.beta_v)
    gap = min(cc.alpha_h - cc.alpha_v, cc.beta_v - cc.beta_h)
    L_c = math.sqrt(2.0 * cc.gamma / gap) if gap > 0 else math.inf
    if not L_c < 1e6:
        warnings.warn(f"center Lipschitz bound is effectively unbounded (L_c = {L_c:g}); "
                      "the cone is nearly degenerate", RuntimeWarning)
    return L_s, L_u, L_c


# ----------------------------------------------------------------------
# covers


def disc_cover(R: float, target: int):
    """Smallest uniform ``n x n`` grid on ``[-R, R]^2`` keeping at least ``target``
    boxes that meet the closed disc of radius ``R``.

    Returns ``(lo, hi, n)`` with ``lo``, ``hi`` of shape ``(m, 2)``.
    """
    n = max(1, int(math.sqrt(target)))
    while True:
        lo, hi = _grid_boxes(-R, R, n)
        keep = _meets_disc(lo, hi, R)
        if keep.sum() >= target:
            return lo[keep], hi[keep], n
        n += 1


def _grid_boxes(a, b, n):
    e = np.linspace(a, b, n + 1)
    e[0], e[-1] = a, b
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    lo = np.stack([e[i], e[j]], -1)
    hi = np.stack([e[i + 1], e[j + 1]], -1)
    return lo, hi


def _meets_disc(lo, hi, rho):
    # nearest point of each box to the origin; kept generously in floating point
    near = np.maximum(0.0, np.maximum(lo, -hi))
    return np.hypot(near[:, 0], near[:, 1]) <= rho * (1 + 1e-12)


def circle_cover(R: float, n: int):
    """``n`` axis-aligned squares covering the circle of radius ``R``.

    Square ``k`` is centred at angle ``2 pi k / n``; a half width of ``pi R / n``
    (the half arc length between centres) bounds both coordinate offsets of
    the arc it must cover.
    """
    th = 2.0 * np.pi * np.arange(n) / n
    c = np.stack([R * np.cos(th), R * np.sin(th)], -1)
    d = np.pi * R / n * (1 + 1e-9) + 4 * np.finfo(float).eps * R
    return c - d, c + d


def _split_interval(a, b, k):
    e = np.linspace(a, b, k + 1)
    e[0], e[-1] = a, b
    return e[:-1], e[1:]


def _fiber_pieces(r, k):
    """``k x k`` pieces of ``[-r, r]^2`` as ``(lo, hi)`` of shape ``(k*k, 2)``."""
    l1, h1 = _split_interval(-r, r, k)
    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    i, j = i.ravel(), j.ravel()
    return np.stack([l1[i], l1[j]], -1), np.stack([h1[i], h1[j]], -1)


def _product(clo, chi, flo, fhi):
    """All products of central boxes with fiber boxes, shape ``(nc, nf, 4)``."""
    nc, nf = clo.shape[0], flo.shape[0]
    lo = np.concatenate([np.repeat(clo[:, None], nf, 1), np.repeat(flo[None], nc, 0)], -1)
    hi = np.concatenate([np.repeat(chi[:, None], nf, 1), np.repeat(fhi[None], nc, 0)], -1)
    return lo, hi


def _chunks(n, size):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


# worker pool plumbing: each process receives the coordinate change once
_WORKER_PHI = None


def _init_worker(phi):
    global _WORKER_PHI
    _WORKER_PHI = phi


def _call(args):
    fn, payload = args
    return fn(_WORKER_PHI, *payload)


def _map(fn, payloads, phi, workers=1):
    """Apply ``fn(phi, *payload)`` to every payload, in order."""
    if workers <= 1 or len(payloads) <= 1:
        return [fn(phi, *p) for p in payloads]
    with cf.ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(phi,)) as ex:
        return list(ex.map(_call, [(fn, p) for p in payloads]))


# ----------------------------------------------------------------------
# derivative hull


def _dfphi_chunk(phi, clo, chi, r, lambda_scale, frame):
    n = clo.shape[0]
    lo = np.concatenate([clo, np.full((n, 2), -r)], -1)
    hi = np.concatenate([chi, np.full((n, 2), r)], -1)
    t = Interval._raw(lo, hi)
    pre = certified_preimage(phi, t, lambda_scale)
    D = dFphi_enclosure(phi, t, pre, frame=frame)
    return D.lo, D.hi, pre.boundary_pieces_checked


def derivative_hull(phi, clo, chi, r, lambda_scale=3.0, frame="linear", chunk_size=2000, workers=1):
    """Per-box enclosures of ``DF^phi`` on ``I_c x B_u^r x B_s^r`` and their hull.

    Returns ``(hull (4,4), per_box (n,4,4), pieces_checked)``.
    """
    parts = _map(_dfphi_chunk, [(clo[s], chi[s], r, lambda_scale, frame) for s in _chunks(len(clo), chunk_size)],
                 phi, workers)
    D = Interval._raw(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    return hull(D, 0), D, int(sum(p[2] for p in parts))


# ----------------------------------------------------------------------
# central field


@dataclass
class CentralField:
    E_u: float
    E_s: float
    hull: Interval
    boxes: int
    pieces: int

    def to_dict(self) -> dict:
        return {"E_u": self.E_u, "E_s": self.E_s, "hull_x": _iv(self.hull[0]), "hull_y": _iv(self.hull[1]),
                "boxes": self.boxes, "pieces": self.pieces}


def _central_chunk(phi, clo, chi, Dlo, Dhi, split, lambda_scale, frame):
    n = clo.shape[0]
    zeros = np.zeros((n, 2))
    if Dlo is None:
        t = Interval._raw(np.concatenate([clo, zeros], -1), np.concatenate([chi, zeros], -1))
        D = dFphi_enclosure(phi, t, certified_preimage(phi, t, lambda_scale), frame=frame)
    else:
        D = Interval._raw(Dlo, Dhi)
    # split every box into split x split pieces; mean value form about each piece centre
    k = split
    f = np.arange(k)
    i, j = np.meshgrid(f, f, indexing="ij")
    i, j = i.ravel(), j.ravel()
    w = (chi - clo) / k
    plo = np.stack([clo[:, None, 0] + i * w[:, None, 0], clo[:, None, 1] + j * w[:, None, 1]], -1)
    p_hi = np.stack([clo[:, None, 0] + (i + 1) * w[:, None, 0], clo[:, None, 1] + (j + 1) * w[:, None, 1]], -1)
    p_hi[:, i == k - 1, 0] = chi[:, None, 0]
    p_hi[:, j == k - 1, 1] = chi[:, None, 1]
    plo[:, i == 0, 0] = clo[:, None, 0]
    plo[:, j == 0, 1] = clo[:, None, 1]
    m = k * k
    pc = 0.5 * (plo + p_hi)
    pts = np.concatenate([pc, np.zeros((n, m, 2))], -1).reshape(-1, 4)
    thin = Interval(pts)
    pre = preimage_enclosure(phi, thin, lambda_scale)
    Fc = field_enclosure(phi, thin, pre).reshape(n, m, 4)
    piece = Interval._raw(np.concatenate([plo, np.zeros((n, m, 2))], -1),
                          np.concatenate([p_hi, np.zeros((n, m, 2))], -1))
    dev = piece - Interval(np.concatenate([pc, np.zeros((n, m, 2))], -1))
    Dn = Interval._raw(np.repeat(D.lo[:, None], m, 1), np.repeat(D.hi[:, None], m, 1))
    F = Fc + matrix_apply(Dn, dev)
    H = hull(F.reshape(-1, 4), 0)
    return H.lo, H.hi, n * m


def central_field_bounds(phi, clo, chi, r, sub_refine=9, per_box_derivative=None, lambda_scale=3.0,
                         frame="linear", chunk_size=2000, workers=1) -> CentralField:
    """``E_u, E_s`` with ``|pi_x F^phi| <= r E_u`` and ``|pi_y F^phi| <= r E_s`` on the central slice.

    Every box ``I_c x {0} x {0}`` is split into ``sub_refine`` pieces; on each
    piece ``F^phi`` is enclosed by ``F^phi(centre) + [DF^phi(box)] (piece - centre)``
    with the field at the centre taken on a certified thin preimage.
    ``per_box_derivative`` may supply enclosures on supersets of the boxes
    (the derivative hull's per-box matrices); otherwise they are computed
    on the flat boxes.
    """
    split = math.isqrt(sub_refine)
    if split * split != sub_refine:
        raise ValueError("sub_refine must be a perfect square")
    payloads = []
    for s in _chunks(len(clo), chunk_size):
        if per_box_derivative is None:
            payloads.append((clo[s], chi[s], None, None, split, lambda_scale, frame))
        else:
            payloads.append((clo[s], chi[s], per_box_derivative.lo[s], per_box_derivative.hi[s], split,
                             lambda_scale, frame))
    parts = _map(_central_chunk, payloads, phi, workers)
    lo = np.min([p[0] for p in parts], axis=0)
    hi = np.max([p[1] for p in parts], axis=0)
    H = Interval._raw(lo[2:], hi[2:])
    E = [float(_up(max(-H.lo[k], H.hi[k]) / r)) for k in range(2)]
    return CentralField(E[0], E[1], H, len(clo), int(sum(p[2] for p in parts)))


# ----------------------------------------------------------------------
# energy


@dataclass
class EnergyAlignment:
    verdict: Verdict
    boundary_inf: float
    interior_sup: float
    boundary_boxes: int
    interior_boxes: int
    boundary_gap: float
    interior_gap: float

    @property
    def passed(self) -> bool:
        return self.verdict.passed

    @property
    def h_window(self):
        """Admissible energy levels ``(sup interior, inf boundary)``; empty when not ordered."""
        return (self.interior_sup, self.boundary_inf)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "boundary_inf": self.boundary_inf, "interior_sup": self.interior_sup,
                "h_window": list(self.h_window), "boundary_boxes": self.boundary_boxes,
                "interior_boxes": self.interior_boxes, "boundary_gap": self.boundary_gap,
                "interior_gap": self.interior_gap,
                "verdict": self.verdict.to_dict()}


def _energy_chunk(phi, clo, chi, flo, fhi, lambda_scale):
    """Per central box: lower and upper energy bounds over all fiber pieces.

    Returns ``(min lo, max hi, max lo, min hi)``.
    """
    lo, hi = _product(clo, chi, flo, fhi)
    n, m = lo.shape[:2]
    t = Interval._raw(lo.reshape(-1, 4), hi.reshape(-1, 4))
    pre = certified_preimage(phi, t, lambda_scale)
    E = energy_enclosure(phi, t, preimage=pre)
    elo = E.lo.reshape(n, m)
    ehi = E.hi.reshape(n, m)
    return elo.min(1), ehi.max(1), elo.max(1), ehi.min(1)


def _energy_boxes(phi, clo, chi, flo, fhi, lambda_scale, chunk_size, workers):
    per = max(1, chunk_size // flo.shape[0])
    parts = _map(_energy_chunk, [(clo[s], chi[s], flo, fhi, lambda_scale) for s in _chunks(len(clo), per)],
                 phi, workers)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def _meets_circle(lo, hi, rho):
    near = np.maximum(0.0, np.maximum(lo, -hi))
    far = np.maximum(np.abs(lo), np.abs(hi))
    tol = 1e-12 * rho
    return (np.hypot(near[:, 0], near[:, 1]) <= rho + tol) & (np.hypot(far[:, 0], far[:, 1]) >= rho - tol)


def _quarter(clo, chi):
    mid = 0.5 * (clo + chi)
    qlo, qhi = [], []
    for a in (0, 1):
        for b in (0, 1):
            qlo.append(np.stack([np.where(a, mid[:, 0], clo[:, 0]), np.where(b, mid[:, 1], clo[:, 1])], -1))
            qhi.append(np.stack([np.where(a, chi[:, 0], mid[:, 0]), np.where(b, chi[:, 1], mid[:, 1])], -1))
    return np.concatenate(qlo), np.concatenate(qhi)


def energy_extremum(phi, lo, hi, meets, r, fiber_split=3, maximize=True, tol=1e-8, max_boxes=40000,
                    lambda_scale=3.0, chunk_size=2000, workers=1):
    """Rigorous bound of the extreme energy over central boxes times the fiber.

    ``lo``, ``hi`` are initial central boxes covering the set of interest
    and ``meets(lo, hi)`` tells which boxes intersect it.  Branch and bound:
    the box with the worst bound is quartered (quarters meeting the set are
    kept) until that bound is within ``tol`` of the best bound certified to
    be attained, or ``max_boxes`` evaluations are spent.  Whatever the
    stopping point, the worst bound over the final partition is rigorous.

    Returns ``(bound, boxes_evaluated, gap)``: an upper bound of ``sup H``
    when maximizing, a lower bound of ``inf H`` otherwise.
    """
    flo, fhi = _fiber_pieces(r, fiber_split)
    sgn = 1.0 if maximize else -1.0

    def evaluate(l, h):
        e_lo, e_hi, e_maxlo, e_minhi = _energy_boxes(phi, l, h, flo, fhi, lambda_scale, chunk_size, workers)
        # worst: bound over the box; attained: a value some point of the set reaches or beats
        if maximize:
            return e_hi, e_maxlo
        return -e_lo, -e_minhi

    worst, att = evaluate(lo, hi)
    count = len(lo)
    best = float(att.max())
    boxes = {k: (lo[k], hi[k]) for k in range(len(lo))}
    heap = [(-float(w), k) for k, w in enumerate(worst)]
    heapq.heapify(heap)
    nxt = len(lo)
    batch = max(16, chunk_size // (4 * fiber_split ** 2))
    while heap and -heap[0][0] - best > tol and count < max_boxes:
        take = []
        while heap and len(take) < batch and -heap[0][0] - best > tol:
            take.append(heapq.heappop(heap)[1])
        clo = np.array([boxes[k][0] for k in take])
        chi = np.array([boxes[k][1] for k in take])
        for k in take:
            del boxes[k]
        qlo, qhi = _quarter(clo, chi)
        keep = meets(qlo, qhi)
        qlo, qhi = qlo[keep], qhi[keep]
        w, a = evaluate(qlo, qhi)
        count += len(qlo)
        best = max(best, float(a.max()))
        for l, h, v in zip(qlo, qhi, w):
            boxes[nxt] = (l, h)
            heapq.heappush(heap, (-float(v), nxt))
            nxt += 1
    bound = -heap[0][0]
    return sgn * float(bound), count, float(bound - best)


def energy_sup_disc(phi, rho, r, fiber_split=3, grid=24, tol=1e-8, max_boxes=40000, lambda_scale=3.0,
                    chunk_size=2000, workers=1):
    """Upper bound of ``H`` over ``phi^-1(B_c^rho x B_u^r x B_s^r)``, starting from a ``grid x grid`` cover."""
    lo, hi = _grid_boxes(-rho, rho, grid)
    keep = _meets_disc(lo, hi, rho)
    return energy_extremum(phi, lo[keep], hi[keep], lambda l, h: _meets_disc(l, h, rho), r, fiber_split,
                           True, tol, max_boxes, lambda_scale, chunk_size, workers)


def energy_inf_circle(phi, R, r, n=500, fiber_split=3, tol=1e-8, max_boxes=40000, lambda_scale=3.0,
                      chunk_size=2000, workers=1):
    """Lower bound of ``H`` over ``phi^-1(boundary circle of radius R x B_u^r x B_s^r)``,
    starting from ``n`` squares along the circle."""
    lo, hi = circle_cover(R, n)
    return energy_extremum(phi, lo, hi, lambda l, h: _meets_circle(l, h, R), r, fiber_split, False, tol,
                           max_boxes, lambda_scale, chunk_size, workers)


def check_energy_alignment(phi, R, r, v, boundary_subdiv=500, fiber_subdiv=9, interior_grid=24,
                           tol=1e-8, max_boxes=40000, lambda_scale=3.0, chunk_size=2000,
                           workers=1) -> EnergyAlignment:
    """``sup H`` on the shrunk disc product must lie below ``inf H`` on the boundary product."""
    k = math.isqrt(fiber_subdiv)
    if k * k != fiber_subdiv:
        raise ValueError("fiber_subdiv must be a perfect square")
    if not v > 0:
        # the interior product then contains the boundary circle; no window can exist
        return EnergyAlignment(Verdict([Inequality("v > 0", 0.0, float(v))], note="v must be positive"),
                               math.nan, math.nan, 0, 0, math.nan, math.nan)
    inf_b, n_b, gap_b = energy_inf_circle(phi, R, r, boundary_subdiv, k, tol, max_boxes, lambda_scale,
                                          chunk_size, workers)
    rho = float(_up(R - v))
    sup_i, n_i, gap_i = energy_sup_disc(phi, rho, r, k, interior_grid, tol, max_boxes, lambda_scale,
                                        chunk_size, workers)
    verdict = Verdict([Inequality("sup H(interior) < inf H(boundary)", sup_i, inf_b)])
    return EnergyAlignment(verdict, inf_b, sup_i, n_b * fiber_subdiv, n_i * fiber_subdiv, gap_b, gap_i)


# ----------------------------------------------------------------------
# fixed point


@dataclass
class FixedPoint:
    passed: bool
    seed: Interval
    newton: Interval
    message: str = ""

    def to_dict(self) -> dict:
        return {"passed": self.passed, "seed": _iv(self.seed), "newton": _iv(self.newton), "message": self.message}


def interval_newton(f, df, I, x0=None):
    """One interval Newton step ``x0 - [df(I)]^-1 f(x0)``.

    ``f(x0)`` returns an enclosure at the point, ``df(I)`` an enclosure of the
    derivative on ``I`` (a matrix, or a scalar interval in one dimension).
    Returns ``(N, contained)`` where ``contained`` states ``N`` inside the
    interior of ``I``, which proves a unique zero in ``I``.
    """
    I = as_interval(I)
    x0 = I.mid() if x0 is None else np.asarray(x0, dtype=float)
    fx = as_interval(f(x0))
    D = as_interval(df(I))
    if I.ndim == 0:
        if D.contains_zero():
            return Interval(-np.inf, np.inf), False
        N = Interval(x0) - fx / D
    else:
        step, ok = gauss_solve_batch(D, fx)
        if not np.all(ok):
            n = I.shape[-1]
            return Interval._raw(np.full(n, -np.inf), np.full(n, np.inf)), False
        N = Interval(x0) - step
    return N, bool(np.all(N.interior_subset(I)))


def certify_fixed_point(phi, seed_box, lambda_scale=3.0, frame="linear") -> FixedPoint:
    """Interval Newton for ``F^phi`` about the centre of ``seed_box``."""
    seed_box = as_interval(seed_box)

    def f(x0):
        t = Interval(x0)
        return field_enclosure(phi, t, preimage_enclosure(phi, t, lambda_scale))

    def df(I):
        return dFphi_enclosure(phi, I, certified_preimage(phi, I, lambda_scale), frame=frame)

    N, ok = interval_newton(f, df, seed_box)
    msg = "N(F, x0, I) lies in the interior of I" if ok else "N(F, x0, I) is not inside the interior of I"
    if not np.all(np.isfinite(N.lo)):
        msg = "derivative enclosure not verifiably invertible"
    return FixedPoint(ok, seed_box, N, msg)


# ----------------------------------------------------------------------
# certificate


def _iv(x):
    x = as_interval(x)
    if x.ndim == 0:
        return [float(x.lo), float(x.hi)]
    return [_iv(x[i]) for i in range(x.shape[0])]


def _from_iv(v):
    a = np.asarray(v, dtype=float)
    return Interval._raw(a[..., 0], a[..., 1])


@dataclass
class Certificate:
    """Record of one verification run.

    ``stages`` maps a stage name to its verdict and timing, ``quantities``
    holds every computed bound.  ``passed`` is true iff every stage passed.
    """

    config: dict
    stages: dict = field(default_factory=dict)
    quantities: dict = field(default_factory=dict)
    failed_stage: str | None = None
    diagnostic: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.failed_stage is None and all(s in self.stages for s in STAGES)
                and all(self.stages[s]["passed"] for s in STAGES))

    @property
    def exit_code(self) -> int:
        if self.passed:
            return EXIT_PASS
        stage = self.failed_stage or next((s for s in STAGES if not self.stages.get(s, {}).get("passed")), STAGES[0])
        return EXIT_CODES[stage]

    def margins(self) -> list:
        out = []
        for name in STAGES:
            for c in self.stages.get(name, {}).get("verdict", {}).get("checks", []):
                out.append((name, c["name"], c["margin"]))
        return out

    def consistent(self) -> bool:
        """A PASS must come with a strictly positive margin on every recorded inequality."""
        if not self.passed:
            return True
        for _, _, m in self.margins():
            if not m > 0:
                return False
        for name in STAGES:
            for c in self.stages[name].get("verdict", {}).get("checks", []):
                if not c["lhs"] < c["rhs"]:
                    return False
        return True

    # serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        return {"format": "cmcert-certificate-1", "passed": self.passed, "exit_code": self.exit_code,
                "failed_stage": self.failed_stage, "diagnostic": self.diagnostic, "config": self.config,
                "stages": self.stages, "quantities": self.quantities, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Certificate":
        d = json.loads(text)
        return cls(d["config"], d["stages"], d["quantities"], d["failed_stage"], d.get("diagnostic", ""),
                   d.get("meta", {}))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Certificate":
        return cls.from_json(Path(path).read_text())

    def derivative_hull(self) -> Interval | None:
        M = self.quantities.get("derivative_hull")
        return None if M is None else _from_iv(M)

    def summary(self) -> str:
        """Plain text table of the constants and verdicts."""
        q = self.quantities
        lines = []
        add = lines.append

        def pair(a, b):
            va, vb = q.get(a), q.get(b)
            if va is None and vb is None:
                return
            fa = f"{va:.16g}" if isinstance(va, (int, float)) else "-"
            fb = f"{vb:.16g}" if isinstance(vb, (int, float)) else "-"
            add(f"  {a:<9} = {fa:>22}    {b:<9} = {fb:>22}")

        add(f"verdict: {'PASS' if self.passed else 'FAIL'}"
            + ("" if self.failed_stage is None else f" (stage {self.failed_stage}: {self.diagnostic})"))
        add("rate bounds")
        for a, b in (("E_u", "E_s"), ("delta_u", "delta_s"), ("eps_c", "eps_m"), ("eps_u", "eps_s"),
                     ("c_u", "c_s")):
            pair(a, b)
        add("kappa")
        for a, b in (("kc_forw", "kc_back"), ("ku_forw", "ku_back"), ("ks_forw", "ks_back")):
            pair(a, b)
        add("energy")
        pair("h_boundary_inf", "h_interior_sup")
        add("lipschitz")
        pair("L_s", "L_u")
        pair("L_c", "rho")
        add("stages")
        for s in STAGES:
            st = self.stages.get(s)
            if st is None:
                add(f"  {s:<14} not run")
                continue
            add(f"  {s:<14} {'PASS' if st['passed'] else 'FAIL'}  {st.get('seconds', 0.0):8.2f} s")
        return "\n".join(lines)


def run_verification(cfg: RunConfig, phi=None, progress=None) -> Certificate:
    """Execute every stage in order and assemble the certificate.

    A stage that raises, or whose verdict fails, stops the run; later
    stages are recorded as not run.  ``progress(stage, message)`` is called
    as stages start and finish.
    """
    from .normalform import build_phi
    from .rtbp import RtbpParams

    cert = Certificate(config=cfg.to_dict())
    cert.meta = {"version": __version__, "python": platform.python_version(), "numpy": np.__version__,
                 "norm_bound": "frobenius of entrywise magnitudes", "frame": cfg.frame,
                 "boundary_cover": "axis-aligned squares centred on the circle, half width pi R / n",
                 "central_cover": "uniform grid on [-R, R]^2, boxes meeting the disc kept"}
    q = cert.quantities
    say = progress or (lambda stage, msg: log.info("[%s] %s", stage, msg))
    cc = ConeCoefficients.from_config(cfg)
    t_run = time.perf_counter()

    def record(stage, passed, t0, verdict=None, **extra):
        d = {"passed": bool(passed), "seconds": time.perf_counter() - t0}
        if verdict is not None:
            d["verdict"] = verdict.to_dict()
        d.update(extra)
        cert.stages[stage] = d
        say(stage, f"{'PASS' if passed else 'FAIL'} in {d['seconds']:.1f} s")
        if not passed and cert.failed_stage is None:
            cert.failed_stage = stage
        return passed

    stage = STAGES[0]
    try:
        # normal form
        t0 = time.perf_counter()
        say(stage, "building the coordinate change")
        if phi is None:
            params = RtbpParams.certified(cfg.mu)
            phi = build_phi(params, cfg.nf_order)
        q["gamma_hat"] = phi.g
        q["roundtrip_residual"] = float(phi.roundtrip_residual())
        if phi.linear is not None:
            q.update(c2=phi.linear.c2, lam=phi.linear.lam, nu=phi.linear.nu)
        if not record(stage, True, t0):
            return cert

        # fixed point
        stage = "fixed_point"
        t0 = time.perf_counter()
        s = cfg.newton_seed_radius
        fp = certify_fixed_point(phi, Interval(-s * np.ones(4), s * np.ones(4)), cfg.lambda_scale, cfg.frame)
        q["fixed_point"] = fp.to_dict()
        if not record(stage, fp.passed, t0, diagnostic=fp.message):
            cert.diagnostic = fp.message
            return cert

        # derivative hull
        stage = "derivative"
        t0 = time.perf_counter()
        clo, chi, n_grid = disc_cover(cfg.R, cfg.cover_boxes)
        say(stage, f"{len(clo)} boxes ({n_grid} x {n_grid} grid)")
        M, per_box, pieces = derivative_hull(phi, clo, chi, cfg.r, cfg.lambda_scale, cfg.frame, cfg.chunk_size,
                                             cfg.workers)
        db = derivative_block_bounds(M)
        q["derivative_hull"] = _iv(M)
        q.update(db.scalars())
        q["cover_boxes"] = int(len(clo))
        q["cover_grid"] = int(n_grid)
        q["boundary_pieces_checked"] = pieces
        finite = bool(np.all(np.isfinite(M.lo)) and np.all(np.isfinite(M.hi)))
        if not record(stage, finite, t0):
            cert.diagnostic = "derivative enclosure is unbounded"
            return cert

        # cone conditions
        stage = "cone"
        t0 = time.perf_counter()
        kb = kappa_constants(db, cc)
        q.update(kb.to_dict())
        v = check_cone_hypotheses(kb)
        if not record(stage, v.passed, t0, v):
            cert.diagnostic = "cone inequalities violated"
            return cert

        # central field
        stage = "central_field"
        t0 = time.perf_counter()
        cf_ = central_field_bounds(phi, clo, chi, cfg.r, cfg.central_refine, per_box, cfg.lambda_scale,
                                   cfg.frame, cfg.chunk_size, cfg.workers)
        q.update(E_u=cf_.E_u, E_s=cf_.E_s)
        q["central_field"] = cf_.to_dict()
        if not record(stage, bool(np.isfinite(cf_.E_u) and np.isfinite(cf_.E_s)), t0):
            cert.diagnostic = "central field enclosure is unbounded"
            return cert

        # covering
        stage = "covering"
        t0 = time.perf_counter()
        v = check_covering_hypotheses(cf_.E_u, cf_.E_s, db)
        if not record(stage, v.passed, t0, v):
            cert.diagnostic = "covering inequalities violated"
            return cert

        # energy
        stage = "energy"
        t0 = time.perf_counter()
        ea = check_energy_alignment(phi, cfg.R, cfg.r, cfg.v, cfg.boundary_boxes, cfg.fiber_subdiv,
                                    cfg.interior_grid, cfg.energy_tol, cfg.energy_max_boxes,
                                    cfg.lambda_scale, cfg.chunk_size, cfg.workers)
        q.update(h_boundary_inf=ea.boundary_inf, h_interior_sup=ea.interior_sup)
        q["energy"] = ea.to_dict()
        if not record(stage, ea.passed, t0, ea.verdict):
            cert.diagnostic = "energy window is empty"
            return cert

        # radius condition
        stage = "rho"
        t0 = time.perf_counter()
        v = check_rho_condition(cc, cfg.R, cfg.r)
        q["rho"] = cfg.R
        if not record(stage, v.passed, t0, v):
            cert.diagnostic = "central radius too small for the cone weights"
            return cert

        stage = "lipschitz"
        t0 = time.perf_counter()
        L_s, L_u, L_c = lipschitz_constants(cc)
        q.update(L_s=L_s, L_u=L_u, L_c=L_c)
        record(stage, bool(np.isfinite(L_c)), t0)
    except Exception as exc:  # any failure becomes a FAIL certificate naming the stage
        log.exception("stage %s failed", stage)
        cert.failed_stage = stage
        cert.diagnostic = f"{type(exc).__name__}: {exc}"
        cert.stages.setdefault(stage, {"passed": False, "seconds": 0.0})
        cert.stages[stage]["passed"] = False
    finally:
        cert.meta["seconds"] = time.perf_counter() - t_run
    return cert
