"""Planar circular restricted three body problem in rotating coordinates.

State vectors are ``(X, Y, PX, PY)`` with the large primary (mass ``1 - mu``)
at ``(mu, 0)`` and the small primary (mass ``mu``) at ``(mu - 1, 0)``.  All
functions accept either float arrays of shape ``(..., 4)`` or
:class:`~cmcert.interval.Interval` boxes of the same shape; in the latter case
the result is a rigorous enclosure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .interval import Interval, IntervalError, as_interval, stack
from .poly import Polynomial4

log = logging.getLogger(__name__)

SUN_EARTH_MU = 3.040423398444176e-6


class CollisionError(ValueError):
    """State (or box) reaches one of the primaries."""


class NewtonError(ArithmeticError):
    """Interval Newton iteration did not contract."""


def _is_iv(s):
    return isinstance(s, Interval)


def _sqrt(x):
    return x.sqrt() if _is_iv(x) else np.sqrt(x)


def _sq(x):
    return x ** 2 if _is_iv(x) else x * x


def _components(s):
    return s[..., 0], s[..., 1], s[..., 2], s[..., 3]


def _pack(parts, like):
    return stack(parts, axis=-1) if _is_iv(like) else np.stack(np.broadcast_arrays(*parts), axis=-1)


def _distances2(mu, X, Y):
    d1 = X - mu
    d2 = X - mu + 1.0
    Y2 = _sq(Y)
    r1s = _sq(d1) + Y2
    r2s = _sq(d2) + Y2
    if _is_iv(r1s):
        if np.any(r1s.lo <= 0) or np.any(r2s.lo <= 0):
            raise CollisionError("box reaches a primary")
    elif np.any(r1s <= 0) or np.any(r2s <= 0):
        raise CollisionError("state at a primary")
    return d1, d2, Y2, r1s, r2s


@dataclass(frozen=True)
class RtbpParams:
    """Mass ratio together with the certified L1 distance to the small primary."""

    mu: float
    gamma: Interval = field(repr=False)

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mass ratio must lie in (0, 1/2), got {self.mu}")

    @classmethod
    def certified(cls, mu: float) -> "RtbpParams":
        return cls(mu, locate_l1(mu))

    @property
    def gamma_hat(self) -> float:
        return float(self.gamma.mid())

    @property
    def l1(self) -> np.ndarray:
        x = self.mu - 1.0 + self.gamma_hat
        return np.array([x, 0.0, 0.0, x])

    def l1_enclosure(self) -> Interval:
        x = self.mu - 1.0 + self.gamma
        z = Interval(0.0)
        return stack([x, z, z, x])


def hamiltonian(mu, s):
    """``H = (PX^2 + PY^2)/2 + Y PX - X PY - (1-mu)/r1 - mu/r2``."""
    X, Y, PX, PY = _components(s)
    _, _, _, r1s, r2s = _distances2(mu, X, Y)
    kinetic = 0.5 * (_sq(PX) + _sq(PY)) + Y * PX - X * PY
    return kinetic - (1.0 - mu) / _sqrt(r1s) - mu / _sqrt(r2s)


def jacobi(mu, s):
    """Jacobi constant ``C = 2 Omega - (Xdot^2 + Ydot^2)`` from the same state."""
    X, Y, PX, PY = _components(s)
    Xd = PX + Y
    Yd = PY - X
    _, _, _, r1s, r2s = _distances2(mu, X, Y)
    omega = 0.5 * (_sq(X) + _sq(Y)) + (1.0 - mu) / _sqrt(r1s) + mu / _sqrt(r2s)
    return 2.0 * omega - (_sq(Xd) + _sq(Yd))


def gradient(mu, s):
    """``(dH/dX, dH/dY, dH/dPX, dH/dPY)``."""
    X, Y, PX, PY = _components(s)
    d1, d2, _, r1s, r2s = _distances2(mu, X, Y)
    k1 = (1.0 - mu) / (r1s * _sqrt(r1s))
    k2 = mu / (r2s * _sqrt(r2s))
    return _pack([k1 * d1 + k2 * d2 - PY, k1 * Y + k2 * Y + PX, PX + Y, PY - X], s)


def vector_field(mu, s):
    """``F = J grad H`` with ``J = [[0, I], [-I, 0]]``."""
    g = gradient(mu, s)
    return _pack([g[..., 2], g[..., 3], -g[..., 0], -g[..., 1]], s)


def potential_hessian(mu, s):
    """``(H_XX, H_XY, H_YY)`` of the gravitational part of ``H``."""
    X, Y, _, _ = _components(s)
    d1, d2, Y2, r1s, r2s = _distances2(mu, X, Y)
    r15 = r1s * r1s * _sqrt(r1s)
    r25 = r2s * r2s * _sqrt(r2s)
    m1 = 1.0 - mu
    # 3 dx^2 - r^2 = 2 dx^2 - dy^2 keeps the interval dependency low
    hxx = -(m1 * (2.0 * _sq(d1) - Y2) / r15 + mu * (2.0 * _sq(d2) - Y2) / r25)
    hyy = -(m1 * (2.0 * Y2 - _sq(d1)) / r15 + mu * (2.0 * Y2 - _sq(d2)) / r25)
    hxy = -(3.0 * m1 * d1 * Y / r15 + 3.0 * mu * d2 * Y / r25)
    return hxx, hxy, hyy


def jacobian(mu, s):
    """Derivative ``DF`` of the vector field, shape ``(..., 4, 4)``."""
    hxx, hxy, hyy = potential_hessian(mu, s)
    shape = s.shape[:-1]
    one = np.ones(shape)
    zero = np.zeros(shape)
    if _is_iv(s):
        one, zero = as_interval(one), as_interval(zero)
    rows = [
        [zero, one, one, zero],
        [-one, zero, zero, one],
        [-hxx, -hxy, zero, one],
        [-hxy, -hyy, -one, zero],
    ]
    if _is_iv(s):
        return stack([stack(r, axis=-1) for r in rows], axis=-2)
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


# ----------------------------------------------------------------------
# L1


def l1_equation(mu, g):
    """On-axis force balance at ``X = mu - 1 + g`` (zero at L1)."""
    return (mu - 1.0 + g) + (1.0 - mu) / (1.0 - g) ** 2 - mu / g ** 2


def l1_equation_derivative(mu, g):
    return 1.0 + 2.0 * (1.0 - mu) / (1.0 - g) ** 3 + 2.0 * mu / g ** 3


@dataclass
class NewtonTrace:
    widths: list = field(default_factory=list)

    @property
    def contraction_ratios(self):
        w = self.widths
        return [w[i + 1] / w[i] for i in range(len(w) - 1) if w[i] > 0]


def locate_l1(mu: float, tol: float = 1e-12, trace: NewtonTrace | None = None,
              polish: bool = True) -> Interval:
    """Certified enclosure of the Earth--L1 distance ``gamma``.

    A float Newton iteration from the Hill estimate gives a candidate; a box
    around it is then contracted by the interval Newton operator, whose first
    step must map into the interior of the starting box (existence and
    uniqueness).  With ``polish=False`` the interval iteration starts from a
    wide box around the Hill estimate itself, which exposes its quadratic
    contraction in ``trace``.
    """
    if not 0.0 < mu < 0.5:
        raise ValueError(f"mass ratio must lie in (0, 1/2), got {mu}")
    g = (mu / 3.0) ** (1.0 / 3.0)
    for _ in range(100 if polish else 0):
        step = l1_equation(mu, g) / l1_equation_derivative(mu, g)
        g -= step
        if abs(step) < 1e-17:
            break
    if not 0.0 < g < 1.0:
        raise NewtonError(f"float Newton left (0, 1): {g}")
    rad = max((1e-3 if polish else 0.1) * g, 1e-15)
    box = Interval(g - rad, g + rad)
    trace = trace if trace is not None else NewtonTrace()
    trace.widths.append(float(box.width()))
    muI = Interval(mu)
    for it in range(60):
        m = Interval(float(box.mid()))
        try:
            N = m - l1_equation(muI, m) / l1_equation_derivative(muI, box)
        except IntervalError as exc:
            raise NewtonError(f"interval Newton failed: {exc}") from exc
        if it == 0 and not bool(N.interior_subset(box)):
            raise NewtonError(f"Newton operator {N} not inside {box}")
        try:
            new = N.intersect(box)
        except IntervalError as exc:
            raise NewtonError("Newton operator left the box") from exc
        trace.widths.append(float(new.width()))
        done = float(new.width()) <= tol or float(new.width()) >= float(box.width())
        box = new
        if done:
            break
    if float(box.width()) > tol:
        raise NewtonError(f"enclosure width {float(box.width()):.3e} above {tol:.1e}")
    log.debug("gamma enclosure %r after %d widths", box, len(trace.widths))
    return box


# ----------------------------------------------------------------------
# scaled coordinates


@dataclass(frozen=True)
class ScalingChange:
    """Affine map ``(X, Y, PX, PY) = R(x, y, px, py)`` centred at L1.

    ``R(z) = -g z + (a, 0, 0, a)`` with ``a = mu - 1 + g``; ``g`` is a float
    (the midpoint of the certified ``gamma``) and defines the map exactly.
    """

    mu: float
    g: float

    @property
    def offset(self) -> np.ndarray:
        a = self.mu - 1.0 + self.g
        return np.array([a, 0.0, 0.0, a])

    def forward(self, z):
        if _is_iv(z):
            return z * (-self.g) + self.offset
        return -self.g * np.asarray(z) + self.offset

    def inverse(self, X):
        if _is_iv(X):
            return (X - self.offset) / (-self.g)
        return (np.asarray(X) - self.offset) / (-self.g)

    def linear_matrix(self) -> np.ndarray:
        return -self.g * np.eye(4)


def scaling_change(params: RtbpParams) -> ScalingChange:
    return ScalingChange(params.mu, params.gamma_hat)


def c_coefficient(n: int, mu, g):
    """``c_n = (mu + (-1)^n (1-mu) g^(n+1) / (1-g)^(n+1)) / g^3``."""
    return (mu + (-1) ** n * (1.0 - mu) * g ** (n + 1) / (1.0 - g) ** (n + 1)) / g ** 3


def scaled_hamiltonian(mu, g, z):
    """Hamiltonian in scaled coordinates, evaluated directly (not expanded)."""
    x, y, px, py = _components(np.asarray(z, dtype=float))
    a = mu - 1.0 + g
    r1 = np.sqrt((x + (1.0 - g) / g) ** 2 + y ** 2)
    r2 = np.sqrt((x - 1.0) ** 2 + y ** 2)
    return (0.5 * (px ** 2 + py ** 2) + y * px - x * py + a / g * x
            - ((1.0 - mu) / r1 + mu / r2) / g ** 3)


def legendre_solid_terms(n_max: int, max_degree: int | None = None):
    """``T_n = rho^n P_n(x / rho)`` with ``rho^2 = x^2 + y^2``, ``n = 0..n_max``."""
    deg = n_max if max_degree is None else max_degree
    x = Polynomial4.variable(0, deg)
    rho2 = Polynomial4({(2, 0, 0, 0): 1.0, (0, 2, 0, 0): 1.0}, deg)
    T = [Polynomial4.constant(1.0, deg), x]
    for n in range(2, n_max + 1):
        T.append(x.mul(T[n - 1]).scale((2 * n - 1) / n) - rho2.mul(T[n - 2]).scale((n - 1) / n))
    return T[: n_max + 1]


def expand_hamiltonian(params: RtbpParams, N: int = 4) -> Polynomial4:
    """Taylor polynomial of degree ``N`` of the scaled Hamiltonian at the origin.

    The constant term is dropped; the linear terms vanish at L1.
    """
    if N < 2:
        raise ValueError("expansion order must be at least 2")
    mu, g = params.mu, params.gamma_hat
    H = Polynomial4({(0, 0, 2, 0): 0.5, (0, 0, 0, 2): 0.5, (0, 1, 1, 0): 1.0, (1, 0, 0, 1): -1.0}, N)
    T = legendre_solid_terms(N)
    for n in range(2, N + 1):
        H = H - T[n].scale(float(c_coefficient(n, mu, g)))
    return H


def energy_at_l1(params: RtbpParams) -> Interval:
    return hamiltonian(Interval(params.mu), params.l1_enclosure())
