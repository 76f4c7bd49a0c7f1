"""Rigorous enclosures in aligned coordinates without inverting ``phi``.

All functions work on batches: a target is an :class:`Interval` of shape
``(n, 4)`` (or ``(4,)``) in aligned coordinates ``(theta1, theta2, x, y)``.

Preimages are certified for the nonlinear stage ``N`` in linear normal form
coordinates ``u`` (``phi = N o L`` with ``L`` affine), which keeps the
linear and the nonlinear part of the change separate.  The box in original
coordinates is the rigorous image of the ``u``-box under ``L^-1``.
"""

from __future__ import annotations

import csv
import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .interval import Interval, IntervalError, as_interval, gauss_solve_batch, interval_inverse, matmul, \
    matrix_apply, stack
from .normalform import CoordinateChange
from .rtbp import gradient, hamiltonian, jacobian, vector_field

log = logging.getLogger(__name__)

FLAT_RADIUS = 1e-13
SEED_RADIUS = 1e-6


class PreimageError(ArithmeticError):
    """Lemma hypotheses could not be verified for some target box."""

    def __init__(self, msg, indices=None):
        super().__init__(msg)
        self.indices = indices


@dataclass
class PreimageEnclosure:
    """Certified ``phi^-1(target)`` enclosures.

    ``linear_enclosure`` holds the box in linear normal form coordinates,
    ``enclosure`` its image in original coordinates.
    """

    target: Interval
    linear_enclosure: Interval
    method: str
    boundary_pieces_checked: int
    refined: np.ndarray | None = None

    _phi: CoordinateChange | None = None

    @property
    def enclosure(self) -> Interval:
        return self._phi.from_linear(self.linear_enclosure)


def _as_batch(target):
    t = as_interval(target)
    single = t.ndim == 1
    if single:
        t = t[None]
    return t, single


def _fatten(box: Interval, rad=FLAT_RADIUS) -> Interval:
    flat = box.width() < 2 * rad
    m = box.mid()
    return Interval._raw(np.where(flat, np.nextafter(m - rad, -np.inf), box.lo),
                         np.where(flat, np.nextafter(m + rad, np.inf), box.hi))


def _face_pieces(B: Interval, dim: int, side: int, s: int) -> Interval:
    """The face ``u_dim = B_dim.{lo,hi}`` split into ``s^3`` pieces, shape ``(n, s^3, 4)``."""
    n = B.shape[0]
    others = [d for d in range(4) if d != dim]
    lo = np.empty((n, s ** 3, 4))
    hi = np.empty_like(lo)
    edge = B.lo[:, dim] if side == 0 else B.hi[:, dim]
    lo[:, :, dim] = edge[:, None]
    hi[:, :, dim] = edge[:, None]
    t = np.linspace(0.0, 1.0, s + 1)
    for pos, idx in enumerate(itertools.product(range(s), repeat=3)):
        for d, i in zip(others, idx):
            w = B.hi[:, d] - B.lo[:, d]
            a = B.lo[:, d] + t[i] * w if i > 0 else B.lo[:, d]
            b = B.lo[:, d] + t[i + 1] * w if i + 1 < s else B.hi[:, d]
            lo[:, pos, d] = a
            hi[:, pos, d] = b
    # neighbouring pieces share float endpoints, so the pieces cover the face
    return Interval._raw(lo, hi)


def _lemma_check(phi: CoordinateChange, B: Interval, target: Interval, start: int, cap: int):
    """Verify boundary disjointness and the midpoint condition for each box.

    Returns ``(ok, pieces)``; each face is refined separately by doubling.
    """
    n = B.shape[0]
    c = B.mid()
    img_c = phi.N_interval(as_interval(c))
    ok = np.all(img_c.subset(target), axis=-1)
    pieces = 0
    for dim in range(4):
        for side in (0, 1):
            todo = np.arange(n)
            s = start
            while todo.size and s <= cap:
                P = _face_pieces(B[todo], dim, side, s)
                img = phi.N_interval(P)
                sep = np.any(img.disjoint(target[todo][:, None, :]), axis=-1)
                pieces += todo.size * s ** 3
                good = np.all(sep, axis=1)
                todo = todo[~good]
                s *= 2
            ok[todo] = False
    return ok, pieces


def newton_preimage(phi: CoordinateChange, p, iters: int = 4) -> np.ndarray:
    """Float solution of ``N(u) = p`` started from the approximate inverse."""
    p = np.asarray(p, dtype=float)
    return phi.newton_linear(p, iters)


def preimage_enclosure(phi: CoordinateChange, target, lambda_scale: float = 3.0,
                       boundary_subdiv: int | None = None, max_subdiv: int = 64,
                       strict: bool = True) -> PreimageEnclosure:
    """Certified box containing ``phi^-1(target)`` by the boundary lemma.

    ``B`` is the approximate-inverse image of the target scaled by
    ``lambda_scale`` about its centre.  Every face of ``B`` is split into
    ``boundary_subdiv^3`` pieces (adaptively doubled up to ``max_subdiv``
    when ``boundary_subdiv`` is None) whose images must miss the target,
    and the image of the centre must lie inside it.
    """
    if not lambda_scale > 1.0:
        raise ValueError("lambda_scale must exceed 1")
    t, single = _as_batch(target)
    t = _fatten(t)
    # centre from the approximate inverse polished by Newton steps on N
    # (non-rigorous guess; the lemma checks below carry the rigor)
    c = newton_preimage(phi, t.mid())
    guess = phi.N_inv_interval(t)
    rad = np.maximum(guess.rad() * lambda_scale, FLAT_RADIUS * lambda_scale)
    B = Interval._raw(np.nextafter(c - rad, -np.inf), np.nextafter(c + rad, np.inf))
    start = boundary_subdiv or 1
    cap = boundary_subdiv or max_subdiv
    ok, pieces = _lemma_check(phi, B, t, start, cap)
    if strict and not np.all(ok):
        bad = np.flatnonzero(~ok)
        raise PreimageError(f"enclosure unverified for {bad.size} box(es); "
                            "increase lambda_scale or the boundary subdivision", bad)
    if not np.all(ok):
        B = Interval._raw(np.where(ok[:, None], B.lo, -np.inf), np.where(ok[:, None], B.hi, np.inf))
    res = PreimageEnclosure(t[0] if single else t, B[0] if single else B, "boundary-lemma", pieces, None, phi)
    res.ok = ok
    return res


def _seed(t: Interval, seed_radius: float) -> Interval:
    m = t.mid()
    r = np.minimum(seed_radius, 0.5 * t.rad())
    return Interval._raw(np.maximum(t.lo, np.nextafter(m - r, -np.inf)),
                         np.minimum(t.hi, np.nextafter(m + r, np.inf)))


def preimage_refine(phi: CoordinateChange, B, target, seed=None, seed_preimage=None,
                    iterations: int = 2, seed_radius: float = SEED_RADIUS):
    """``B0 + [DN(B)^-1] (target - seed)`` intersected with ``B``.

    ``B`` and the result are boxes in linear normal form coordinates.
    Returns ``(box, refined_mask)``; members whose derivative could not be
    verified invertible keep ``B`` and are flagged.
    """
    Bb, single = _as_batch(B)
    t, _ = _as_batch(target)
    t = _fatten(t)
    I0 = _seed(t, seed_radius) if seed is None else _as_batch(seed)[0]
    if seed_preimage is None:
        seed_preimage = preimage_enclosure(phi, I0).linear_enclosure
    B0 = _as_batch(seed_preimage)[0]
    refined = np.zeros(Bb.shape[0], dtype=bool)
    cur = Bb
    for _ in range(iterations):
        DN = phi.DN_interval(cur)
        step, ok = gauss_solve_batch(DN, t - I0)
        if not np.all(ok):
            warnings.warn(f"{np.count_nonzero(~ok)} derivative enclosure(s) not verifiably invertible; "
                          "keeping the unrefined box", RuntimeWarning)
        cand = B0 + Interval._raw(np.where(ok[:, None], step.lo, -np.inf),
                                  np.where(ok[:, None], step.hi, np.inf))
        lo = np.maximum(cur.lo, cand.lo)
        hi = np.minimum(cur.hi, cand.hi)
        if np.any(lo > hi):
            raise PreimageError("refinement produced an empty box (inconsistent enclosures)")
        cur = Interval._raw(lo, hi)
        refined |= ok
    return (cur[0] if single else cur), (refined[0] if single else refined)


def certified_preimage(phi: CoordinateChange, target, lambda_scale: float = 3.0,
                       boundary_subdiv: int | None = None, refine: bool = True,
                       seed_radius: float = SEED_RADIUS) -> PreimageEnclosure:
    """Boundary-lemma enclosure followed by the mean value refinement."""
    pre = preimage_enclosure(phi, target, lambda_scale, boundary_subdiv)
    if not refine:
        return pre
    t, single = _as_batch(pre.target)
    I0 = _seed(t, seed_radius)
    seed_pre = preimage_enclosure(phi, I0, lambda_scale, boundary_subdiv)
    box, flags = preimage_refine(phi, pre.linear_enclosure, t, I0, seed_pre.linear_enclosure)
    out = PreimageEnclosure(pre.target, box, "refined",
                            pre.boundary_pieces_checked + seed_pre.boundary_pieces_checked, flags, phi)
    out.seed = I0[0] if single else I0
    out.seed_enclosure = seed_pre.linear_enclosure
    return out


# ----------------------------------------------------------------------
# fields and derivatives in aligned coordinates


def _G_enclosure(phi: CoordinateChange, B: Interval, DG: Interval | None = None) -> Interval:
    """Field in ``u`` coordinates over ``B``: naive form intersected with the mean value form."""
    naive = phi.field_linear(B)
    if DG is None:
        DG = phi.field_linear_jacobian(B)
    c = B.mid()
    Gc = phi.field_linear(as_interval(c))
    mv = Gc + matrix_apply(DG, B - c)
    return Interval._raw(np.maximum(naive.lo, mv.lo), np.minimum(naive.hi, mv.hi))


def field_enclosure(phi: CoordinateChange, target, preimage: PreimageEnclosure | None = None) -> Interval:
    """Enclosure of ``F^phi = DN(u) G(u)`` over ``target``."""
    if preimage is None:
        preimage = certified_preimage(phi, target)
    B, single = _as_batch(preimage.linear_enclosure)
    tab = phi.table(B)
    F = matrix_apply(phi.DN_interval(B, tab), _G_enclosure(phi, B))
    return F[0] if single else F


def dFphi_enclosure(phi: CoordinateChange, target, preimage: PreimageEnclosure | None = None,
                    frame: str = "linear") -> Interval:
    """Enclosure of ``DF^phi`` over ``target``, shape ``(..., 4, 4)``.

    ``frame='linear'`` differentiates ``DN(u) G(u)`` in linear normal form
    coordinates and multiplies by ``DN^-1``.  ``frame='original'`` uses the
    two-term formula with ``D phi``, ``D^2 phi``, ``F`` and ``DF`` evaluated on
    the preimage box in original coordinates.  Inverses come from interval
    elimination in both cases.
    """
    if preimage is None:
        preimage = certified_preimage(phi, target)
    B, single = _as_batch(preimage.linear_enclosure)
    if frame == "linear":
        out = _dfphi_linear(phi, B)
    elif frame == "original":
        out = _dfphi_original(phi, B)
    else:
        raise ValueError(f"unknown frame {frame!r}")
    return out[0] if single else out


def _dfphi_linear(phi, B):
    tab = phi.table(B)
    DN = phi.DN_interval(B, tab)
    D2 = phi.D2N_interval(B, tab)
    DG = phi.field_linear_jacobian(B)
    G = _G_enclosure(phi, B, DG)
    K = matmul(DN, DG)
    for k in range(4):
        K = K + D2[..., :, k, :] * G[..., None, k:k + 1]
    inv, ok = interval_inverse(DN)
    if not np.all(ok):
        raise IntervalError("DN not verifiably invertible on some preimage box")
    return matmul(K, inv)


def _dfphi_original(phi, B):
    X = phi.from_linear(B)
    u = phi.to_linear(X)
    tab = phi.table(u)
    DN = phi.DN_interval(u, tab)
    D2 = phi.D2N_interval(u, tab)
    L = phi.M_inv_interval / (-phi.g)
    Dphi = matmul(DN, L)
    mu = Interval(phi.mu)
    F = vector_field(mu, X)
    DF = jacobian(mu, X)
    inv, ok = interval_inverse(Dphi)
    if not np.all(ok):
        raise IntervalError("D phi not verifiably invertible on some preimage box")
    # D^2 phi (v, F) with v = Dphi^-1 e_l:  (sum_b D2N_iab (L F)_b) L
    w = matrix_apply(L, F)
    Q = D2[..., :, :, 0] * w[..., None, None, 0]
    for b in range(1, 4):
        Q = Q + D2[..., :, :, b] * w[..., None, None, b]
    T1 = matmul(matmul(Q, L), inv)
    T2 = matmul(matmul(Dphi, DF), inv)
    return T1 + T2


# ----------------------------------------------------------------------
# energy


def _energy_gradient_linear(phi: CoordinateChange, B: Interval) -> Interval:
    """``grad_u H(L^-1 u) = (-g M)^T grad H(X)``."""
    X = phi.from_linear(B)
    gH = gradient(Interval(phi.mu), X)
    Mt = phi.M_interval.T * (-phi.g)
    return matrix_apply(Mt, gH)


def energy_enclosure(phi: CoordinateChange, target, seed=None, preimage: PreimageEnclosure | None = None,
                     seed_radius: float = SEED_RADIUS) -> Interval:
    """Enclosure of ``H(phi^-1(target))``.

    The mean value form about the seed preimage is taken both in linear
    normal form coordinates, ``H(B0) + grad H(B) . (B - B0)``, and in aligned
    coordinates, ``H(B0) + [grad H(B) DN(B)^-1] (target - seed)``; the result
    is their intersection.
    """
    if preimage is None:
        preimage = certified_preimage(phi, target, seed_radius=seed_radius)
    B, single = _as_batch(preimage.linear_enclosure)
    t, _ = _as_batch(preimage.target)
    if seed is not None:
        I0 = _as_batch(seed)[0]
        B0 = preimage_enclosure(phi, I0).linear_enclosure
        B0 = _as_batch(B0)[0]
    elif getattr(preimage, "seed", None) is not None:
        I0 = _as_batch(preimage.seed)[0]
        B0 = _as_batch(preimage.seed_enclosure)[0]
    else:
        I0 = _seed(t, seed_radius)
        B0 = _as_batch(preimage_enclosure(phi, I0).linear_enclosure)[0]
    mu = Interval(phi.mu)
    # naive H over B0 suffers from cancellation; use the mean value form about mid(B0)
    c0 = B0.mid()
    H0 = hamiltonian(mu, phi.from_linear(Interval(c0)))
    H0 = H0 + (_energy_gradient_linear(phi, B0) * (B0 - c0)).sum(axis=-1)
    # segments from B0 to B stay in the hull of both boxes
    gu_hull = _energy_gradient_linear(phi, B.hull_with(B0))
    form_u = H0 + (gu_hull * (B - B0)).sum(axis=-1)
    gu = _energy_gradient_linear(phi, B)
    DN = phi.DN_interval(B)
    # row vector g^T DN^-1 solves DN^T w = g
    w, ok = gauss_solve_batch(DN.T, gu)
    if np.all(ok):
        form_p = H0 + (w * (t - I0)).sum(axis=-1)
        lo = np.maximum(form_u.lo, form_p.lo)
        hi = np.minimum(form_u.hi, form_p.hi)
        if np.any(lo > hi):
            raise IntervalError("inconsistent energy enclosures")
        out = Interval._raw(lo, hi)
    else:
        out = form_u
    return out[0] if single else out


# ----------------------------------------------------------------------
# audit dump

CSV_COLUMNS = (
    [f"target_{c}_{e}" for c in ("theta1", "theta2", "x", "y") for e in ("lo", "hi")]
    + [f"enclosure_{c}_{e}" for c in ("X", "Y", "PX", "PY") for e in ("lo", "hi")]
)


def dump_enclosures_csv(path, pre: PreimageEnclosure, extra: dict | None = None):
    """Write one row per box: target bounds then original-coordinate enclosure bounds."""
    t, _ = _as_batch(pre.target)
    X, _ = _as_batch(pre.enclosure)
    extra = extra or {}
    cols = list(CSV_COLUMNS) + list(extra)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(t.shape[0]):
            row = []
            for d in range(4):
                row += [repr(float(t.lo[i, d])), repr(float(t.hi[i, d]))]
            for d in range(4):
                row += [repr(float(X.lo[i, d])), repr(float(X.hi[i, d]))]
            row += [repr(float(np.asarray(v)[i])) for v in extra.values()]
            w.writerow(row)
