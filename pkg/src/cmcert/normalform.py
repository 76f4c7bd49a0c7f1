"""Normal form coordinates around L1.

The change to well-aligned coordinates is ``phi = P o Tr o Tn^-1 o Tr^-1 o C^-1 o R^-1``:

* ``R`` rescales and translates so that L1 sits at the origin,
* ``C`` is the linear symplectic change diagonalising the saddle and centre,
* ``Tr`` passes between the complex and the real form of the centre pair,
* ``Tn`` is the near-identity Lie transform removing non-resonant terms,
* ``P`` reorders ``(x1, x2, y1, y2)`` into aligned ``(theta1, theta2, x, y)``.

Polynomial slots are ordered ``(x1, x2, y1, y2)`` (positions first), so the
canonical pairs are slots ``(0, 2)`` and ``(1, 3)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .interval import Interval, as_interval, interval_inverse, matmul, matrix_apply
from .poly import NVARS, PolyBatch, PolyMap4, Polynomial4, PowerTable, poisson_bracket
from .rtbp import RtbpParams, c_coefficient, expand_hamiltonian, gradient, hamiltonian, jacobian

log = logging.getLogger(__name__)

CENTER_PERM = (1, 3, 0, 2)   # aligned slot j holds normal form slot CENTER_PERM[j]
PAPER_TO_SLOTS = (0, 2, 1, 3)  # (x1, y1, x2, y2) -> (x1, x2, y1, y2)
RESONANCE_THRESHOLD = 1e-8
REAL_TOL = 1e-12


class ResonanceError(ArithmeticError):
    pass


class RealificationError(ValueError):
    pass


def symplectic_J(n: int = 2) -> np.ndarray:
    I = np.eye(n)
    Z = np.zeros((n, n))
    return np.block([[Z, I], [-I, Z]])


@dataclass(frozen=True)
class LinearData:
    """Linear normalisation data.

    ``C`` maps ``(x1, y1, x2, y2)`` to scaled ``(x, y, px, py)``; ``C_slots``
    is the same matrix with columns in polynomial slot order.
    """

    c2: float
    lam: float
    nu: float
    s1: float
    s2: float
    C: np.ndarray = field(repr=False)
    C_inv: np.ndarray = field(repr=False)

    @property
    def C_slots(self) -> np.ndarray:
        return self.C[:, list(PAPER_TO_SLOTS)]

    @property
    def C_slots_inv(self) -> np.ndarray:
        return self.C_inv[list(PAPER_TO_SLOTS), :]


def linear_normalize(c2: float) -> LinearData:
    """Symplectic change bringing ``H2`` to ``lam x1 y1 + nu/2 (x2^2 + y2^2)``."""
    c2 = float(c2)
    if not c2 > 1.0:
        raise ValueError(f"c2 = {c2} is outside the saddle x centre regime (c2 > 1)")
    disc = math.sqrt(9.0 * c2 * c2 - 8.0 * c2)
    lam = math.sqrt((c2 - 2.0 + disc) / 2.0)
    nu = math.sqrt((2.0 - c2 + disc) / 2.0)
    s1 = math.sqrt(2.0 * lam * ((4.0 + 3.0 * c2) * lam ** 2 + 4.0 + 5.0 * c2 - 6.0 * c2 ** 2))
    s2 = math.sqrt(nu * ((4.0 + 3.0 * c2) * nu ** 2 - 4.0 - 5.0 * c2 + 6.0 * c2 ** 2))
    a = 1.0 - 2.0 * c2
    C = np.array([
        [2 * lam / s1, -2 * lam / s1, 0.0, 2 * nu / s2],
        [(lam ** 2 - 2 * c2 - 1) / s1, (lam ** 2 - 2 * c2 - 1) / s1, (-nu ** 2 - 2 * c2 - 1) / s2, 0.0],
        [(lam ** 2 + 2 * c2 + 1) / s1, (lam ** 2 + 2 * c2 + 1) / s1, (-nu ** 2 + 2 * c2 + 1) / s2, 0.0],
        [(lam ** 3 + a * lam) / s1, (-lam ** 3 - a * lam) / s1, 0.0, (-nu ** 3 + a * nu) / s2],
    ])
    # C is symplectic, so C^-1 = -J C^T J in the (x1, y1, x2, y2) pairing
    Jp = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float)
    J = symplectic_J()
    C_inv = -Jp @ C.T @ J
    return LinearData(c2, lam, nu, s1, s2, C, C_inv)


def quadratic_part(c2: float, max_degree: int = 4) -> Polynomial4:
    """``H2 = (px^2 + py^2)/2 + y px - x py - c2 x^2 + c2/2 y^2`` in ``(x, y, px, py)``."""
    return Polynomial4({(0, 0, 2, 0): 0.5, (0, 0, 0, 2): 0.5, (0, 1, 1, 0): 1.0,
                        (1, 0, 0, 1): -1.0, (2, 0, 0, 0): -c2, (0, 2, 0, 0): 0.5 * c2}, max_degree)


def complexify(max_degree: int = 4):
    """Linear maps ``(T, T_inv)`` between complex ``(q1, q2, p1, p2)`` and real ``(x1, x2, y1, y2)``.

    ``T_inv`` sends ``(x2, y2)`` to ``q2 = (x2 - i y2)/sqrt2``, ``p2 = (-i x2 + y2)/sqrt2``;
    the hyperbolic pair passes unchanged.
    """
    s = 1.0 / math.sqrt(2.0)
    T_inv = np.eye(4, dtype=complex)
    T_inv[1, 1], T_inv[1, 3] = s, -1j * s
    T_inv[3, 1], T_inv[3, 3] = -1j * s, s
    T = np.eye(4, dtype=complex)
    T[1, 1], T[1, 3] = s, 1j * s
    T[3, 1], T[3, 3] = 1j * s, s
    return (PolyMap4.linear(T, max_degree=max_degree, mode="complex"),
            PolyMap4.linear(T_inv, max_degree=max_degree, mode="complex"))


def lie_transform(F: Polynomial4, G: Polynomial4, trunc: int) -> Polynomial4:
    """``exp(L_G) F = sum_k L_G^k F / k!`` with ``L_G F = {F, G}``, truncated."""
    out = F.truncate(trunc)
    term = out
    k = 0
    while True:
        k += 1
        term = poisson_bracket(term, G, trunc=trunc).scale(1.0 / k)
        if len(term) == 0:
            break
        out = out + term
        if k > 4 * trunc:
            raise RuntimeError("Lie series failed to terminate")
    return out


def _divisor(k, lam, nu):
    return complex(lam * (k[0] - k[2]), nu * (k[1] - k[3]))


def is_resonant(k) -> bool:
    return k[0] == k[2] and k[1] == k[3]


@dataclass
class NormalFormData:
    """Result of the Lie normalisation.

    ``T_N`` maps new real coordinates to old ones (``H o T_N = H2 + Z + R``)
    and ``T_N_inv_approx`` is its truncated inverse.  Both and ``Z`` are real
    polynomials in ``(x1, x2, y1, y2)``.
    """

    N: int
    lam: float
    nu: float
    Z: Polynomial4
    Z_complex: Polynomial4
    H_normalized: Polynomial4
    generators: list
    T_N: PolyMap4
    T_N_inv_approx: PolyMap4
    imag_residue: float = 0.0

    def action_coefficients(self) -> dict:
        """``{(a, b): c}`` with ``H2 + Z = sum c I1^a I2^b``."""
        out = {(1, 0): self.lam, (0, 1): self.nu}
        for k, c in self.Z_complex.terms.items():
            a, b = k[0], k[1]
            v = c * (-1j) ** b
            out[(a, b)] = out.get((a, b), 0.0) + v.real
        return out


def lie_normalize(H: Polynomial4, N: int = 4, lam: float | None = None, nu: float | None = None,
                  threshold: float = RESONANCE_THRESHOLD) -> NormalFormData:
    """Normalise a complex Hamiltonian whose quadratic part is ``lam q1 p1 + i nu q2 p2``."""
    if H.mode != "complex":
        H = H.to_complex()
    H = H.truncate(N)
    if lam is None:
        lam = complex(H.coeff((1, 0, 1, 0))).real
    if nu is None:
        nu = complex(H.coeff((0, 1, 0, 1))).imag
    gens = []
    for j in range(3, N + 1):
        terms = {}
        for k, h in H.homogeneous(j).terms.items():
            if is_resonant(k):
                continue
            d = _divisor(k, lam, nu)
            if abs(d) < threshold:
                raise ResonanceError(f"small divisor {abs(d):.3e} at multi-index {k}")
            terms[k] = h / d
        G = Polynomial4(terms, N, "complex")
        gens.append(G)
        if len(G):
            H = lie_transform(H, G, N)
    Zc = H - H.up_to(2)
    H2c = H.up_to(2)
    T, T_inv = complexify(N)
    ident = PolyMap4.identity(N, "complex")
    fwd = []
    bwd = []
    for i in range(NVARS):
        f = ident[i]
        for G in gens:
            f = lie_transform(f, G, N)
        fwd.append(f)
        b = ident[i]
        for G in reversed(gens):
            b = lie_transform(b, G.scale(-1.0), N)
        bwd.append(b)
    Tn = PolyMap4(fwd)
    Tn_inv = PolyMap4(bwd)
    real_fwd = T.compose(Tn.compose(T_inv, N), N)
    real_bwd = T.compose(Tn_inv.compose(T_inv, N), N)
    Zr = Zc.compose(T_inv, N)
    residue = max(max(c.imag_part().max_abs_coeff() for c in real_fwd),
                  max(c.imag_part().max_abs_coeff() for c in real_bwd),
                  Zr.imag_part().max_abs_coeff())
    if residue > 1e-10:
        raise RealificationError(f"imaginary residue {residue:.3e} after realification")
    del H2c
    return NormalFormData(
        N=N, lam=lam, nu=nu, Z=Zr.real_part(), Z_complex=Zc, H_normalized=H,
        generators=gens, T_N=real_fwd.real_part(), T_N_inv_approx=real_bwd.real_part(),
        imag_residue=residue,
    )


def truncated_frequency(Z, I: float, I1: float = 0.0) -> float:
    """Rotation frequency ``d(H2 + Z)/dI2`` of the truncated normal form.

    ``Z`` is a :class:`NormalFormData` (or anything with ``action_coefficients``).
    """
    coeffs = Z.action_coefficients()
    return float(sum(b * c * I1 ** a * I ** (b - 1) for (a, b), c in coeffs.items() if b > 0))


def truncated_energy(Z, I: float, I1: float = 0.0) -> float:
    coeffs = Z.action_coefficients()
    return float(sum(c * I1 ** a * I ** b for (a, b), c in coeffs.items()))


# ----------------------------------------------------------------------
# the composite change


STAGES = (
    ("R", "scaling", "inverse"),
    ("C", "linear", "inverse"),
    ("T", "complexification", "inverse"),
    ("TN", "lie transform", "inverse"),
)


class CoordinateChange:
    """Well-aligned coordinates ``p = phi(X)`` around L1.

    ``phi(X) = N(u)`` with ``u = M^-1 (X - off) / (-g)`` the linear normal
    form in aligned slot order and ``N`` the realified inverse Lie transform.
    The float coefficients stored here define ``phi`` exactly; rigorous
    evaluations enclose ``M^-1`` by interval elimination.
    """

    def __init__(self, mu: float, g: float, linear: LinearData, N_map: PolyMap4,
                 N_inv_approx: PolyMap4, order: int, normal_form: NormalFormData | None = None,
                 Z: Polynomial4 | None = None):
        self.mu = float(mu)
        self.g = float(g)
        self.linear = linear
        self.N_map = N_map
        self.N_inv_approx = N_inv_approx
        self.order = int(order)
        self.normal_form = normal_form
        self.Z = Z if Z is not None else (normal_form.Z if normal_form is not None else None)
        self.stages = STAGES
        perm = list(CENTER_PERM)
        self.M = linear.C_slots[:, perm]
        self.offset = np.array([mu - 1.0 + g, 0.0, 0.0, mu - 1.0 + g])

    # ------------------------------------------------------------------
    @cached_property
    def M_inv(self) -> np.ndarray:
        return np.linalg.inv(self.M)

    @cached_property
    def M_inv_interval(self) -> Interval:
        inv, ok = interval_inverse(Interval(self.M))
        if not bool(np.all(ok)):
            raise ArithmeticError("linear stage not verifiably invertible")
        return inv

    @cached_property
    def M_interval(self) -> Interval:
        return Interval(self.M)

    def to_linear(self, X):
        """``u = M^-1 (X - off)/(-g)``; rigorous for Interval input."""
        if isinstance(X, Interval):
            z = (X - self.offset) / (-self.g)
            return matrix_apply(self.M_inv_interval, z)
        z = (np.asarray(X, dtype=float) - self.offset) / (-self.g)
        return z @ self.M_inv.T

    def from_linear(self, u):
        """Inverse of :meth:`to_linear` (``X = off - g M u``)."""
        if isinstance(u, Interval):
            return matrix_apply(self.M_interval, u) * (-self.g) + self.offset
        return self.offset - self.g * (np.asarray(u, dtype=float) @ self.M.T)

    def __call__(self, X):
        u = self.to_linear(X)
        if isinstance(u, Interval):
            return self.N_map.eval_interval(u)
        return self.N_map(u)

    def approx_inverse(self, p):
        """Non-rigorous ``phi^-1`` through the truncated inverse Lie transform."""
        return self.from_linear(self.N_inv_approx(np.asarray(p, dtype=float)))

    def newton_linear(self, p, iters: int = 6):
        """Float solution ``u`` of ``N(u) = p``, started from the approximate inverse."""
        p = np.asarray(p, dtype=float)
        u = self._Ninv_batch(p)
        for _ in range(iters):
            r = self._N_batch(u) - p
            J = self._DN_batch(u).reshape(*u.shape[:-1], NVARS, NVARS)
            u = u - np.linalg.solve(J, r[..., None])[..., 0]
        return u

    def inverse_newton(self, p, iters: int = 6):
        """Numerical preimage: approximate inverse polished by Newton steps on ``N``."""
        return self.from_linear(self.newton_linear(p, iters))

    def jacobian(self, X):
        """Float ``D phi(X)``."""
        u = self.to_linear(X)
        return self.N_map.jacobian(u) @ (self.M_inv / (-self.g))

    # interval evaluation of the nonlinear stage -----------------------------
    @cached_property
    def _N_batch(self) -> PolyBatch:
        return PolyBatch(self.N_map.components)

    @cached_property
    def _DN_batch(self) -> PolyBatch:
        return PolyBatch([p for row in self.N_map.jacobian_polys for p in row])

    @cached_property
    def _D2N_batch(self) -> PolyBatch:
        H = self.N_map.hessian_polys
        return PolyBatch([H[i][j][k] for i in range(NVARS) for j in range(NVARS) for k in range(NVARS)])

    @cached_property
    def _Ninv_batch(self) -> PolyBatch:
        return PolyBatch(self.N_inv_approx.components)

    def table(self, u: Interval) -> PowerTable:
        return PowerTable(u, max(2, self.order))

    def N_interval(self, u: Interval, table=None) -> Interval:
        """Enclosure of ``N(u)`` (shape ``(..., 4)``)."""
        return self._N_batch.eval_interval(u, table)

    def DN_interval(self, u: Interval, table=None) -> Interval:
        v = self._DN_batch.eval_interval(u, table)
        return v.reshape(*v.shape[:-1], NVARS, NVARS)

    def D2N_interval(self, u: Interval, table=None) -> Interval:
        """Entry ``(..., i, j, k)`` encloses ``d^2 N_i / du_j du_k``."""
        v = self._D2N_batch.eval_interval(u, table)
        return v.reshape(*v.shape[:-1], NVARS, NVARS, NVARS)

    def N_inv_interval(self, p: Interval) -> Interval:
        return self._Ninv_batch.eval_interval(p)

    # vector fields ----------------------------------------------------------
    def field_linear(self, u):
        """RTBP field in linear normal form coordinates, ``G(u) = M^-1 F(X) / (-g)``."""
        X = self.from_linear(u)
        mu = Interval(self.mu) if isinstance(u, Interval) else self.mu
        F = _vector_field(mu, X)
        if isinstance(u, Interval):
            return matrix_apply(self.M_inv_interval, F / (-self.g))
        return (F / (-self.g)) @ self.M_inv.T

    def field_linear_jacobian(self, u):
        """``DG(u) = M^-1 DF(X) M``."""
        X = self.from_linear(u)
        if isinstance(u, Interval):
            DF = jacobian(Interval(self.mu), X)
            return matmul(matmul(self.M_inv_interval, DF), self.M_interval)
        DF = jacobian(self.mu, X)
        return self.M_inv @ DF @ self.M

    def field(self, p):
        """Non-rigorous ``F^phi(p) = D phi F`` at a numerically solved preimage."""
        X = self.inverse_newton(p)
        u = self.to_linear(X)
        return np.einsum("...ij,...j->...i", self.N_map.jacobian(u), self.field_linear(u))

    def energy(self, p):
        """Non-rigorous ``H(phi^-1(p))``."""
        return hamiltonian(self.mu, self.inverse_newton(p))

    # flattened maps -----------------------------------------------------
    @cached_property
    def as_polymap(self) -> PolyMap4:
        """``phi o R`` as a single polynomial in scaled coordinates ``(x, y, px, py)``."""
        return self.N_map.compose(PolyMap4.linear(self.M_inv, max_degree=self.order), self.order)

    @cached_property
    def approx_inverse_polymap(self) -> PolyMap4:
        return PolyMap4.linear(self.M, max_degree=self.order).compose(self.N_inv_approx, self.order)

    def roundtrip_residual(self) -> float:
        comp = self.approx_inverse_polymap.compose(self.as_polymap, self.order)
        ident = PolyMap4.identity(self.order)
        return max((c - e).max_abs_coeff() for c, e in zip(comp, ident))

    # serialization -----------------------------------------------------------
    def to_text(self) -> str:
        L = self.linear
        head = [
            "# CoordinateChange v1",
            f"mu {self.mu.hex()}",
            f"gamma_hat {self.g.hex()}",
            f"order {self.order}",
            "linear " + " ".join(float(v).hex() for v in (L.c2, L.lam, L.nu, L.s1, L.s2)),
            "C " + " ".join(float(v).hex() for v in L.C.ravel()),
            "C_inv " + " ".join(float(v).hex() for v in L.C_inv.ravel()),
            "stages " + " ".join(f"{n}:{d}" for n, _, d in self.stages),
        ]
        body = "### N_map\n" + self.N_map.to_text() + "### N_inv_approx\n" + self.N_inv_approx.to_text()
        if self.Z is not None:
            body += "### Z\n" + self.Z.to_text()
        return "\n".join(head) + "\n" + body

    @classmethod
    def from_text(cls, text: str) -> "CoordinateChange":
        head, _, rest = text.partition("### N_map\n")
        meta = {}
        for ln in head.strip().splitlines()[1:]:
            key, _, val = ln.partition(" ")
            meta[key] = val.split()
        if not text.startswith("# CoordinateChange"):
            raise ValueError("not a CoordinateChange file")
        mu = float.fromhex(meta["mu"][0])
        g = float.fromhex(meta["gamma_hat"][0])
        c2, lam, nu, s1, s2 = (float.fromhex(v) for v in meta["linear"])
        C = np.array([float.fromhex(v) for v in meta["C"]]).reshape(4, 4)
        C_inv = np.array([float.fromhex(v) for v in meta["C_inv"]]).reshape(4, 4)
        nmap, _, rest = rest.partition("### N_inv_approx\n")
        ninv, _, ztext = rest.partition("### Z\n")
        Z = Polynomial4.from_text(ztext) if ztext.strip() else None
        return cls(mu, g, LinearData(c2, lam, nu, s1, s2, C, C_inv), PolyMap4.from_text(nmap),
                   PolyMap4.from_text(ninv), int(meta["order"][0]), Z=Z)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "CoordinateChange":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def __repr__(self):
        return f"CoordinateChange(mu={self.mu!r}, order={self.order}, gamma_hat={self.g!r})"


def _vector_field(mu, X):
    g = gradient(mu, X)
    if isinstance(X, Interval):
        from .interval import stack
        return stack([g[..., 2], g[..., 3], -g[..., 0], -g[..., 1]], axis=-1)
    return np.stack([g[..., 2], g[..., 3], -g[..., 0], -g[..., 1]], axis=-1)


def normal_form_hamiltonian(params: RtbpParams, N: int, linear: LinearData) -> Polynomial4:
    """Expansion composed with ``C`` and ``T``: complex polynomial in ``(q1, q2, p1, p2)``."""
    H = expand_hamiltonian(params, N)
    Cmap = PolyMap4.linear(linear.C_slots, max_degree=N)
    T, _ = complexify(N)
    HC = H.compose(Cmap, N).to_complex().compose(T, N)
    # the quadratic part is lam q1 p1 + i nu q2 p2 up to roundoff; snap it to that
    # form so the homological equations below are solved against the exact H2
    H2 = Polynomial4({(1, 0, 1, 0): linear.lam, (0, 1, 0, 1): 1j * linear.nu}, N, "complex")
    resid = (HC.homogeneous(2) - H2).max_abs_coeff()
    if resid > 1e-10:
        raise RealificationError(f"linear stage leaves a quadratic residue {resid:.3e}")
    return HC - HC.homogeneous(2) + H2


def build_phi(params: RtbpParams, N: int = 4, threshold: float = RESONANCE_THRESHOLD) -> CoordinateChange:
    """Construct the aligned coordinate change of order ``N`` around L1."""
    if N < 2:
        raise ValueError("normal form order must be at least 2")
    c2 = float(c_coefficient(2, params.mu, params.gamma_hat))
    lin = linear_normalize(c2)
    Hc = normal_form_hamiltonian(params, N, lin)
    if N >= 3:
        nf = lie_normalize(Hc, N, lin.lam, lin.nu, threshold)
        Tn, Tn_inv = nf.T_N, nf.T_N_inv_approx
    else:
        nf = NormalFormData(N, lin.lam, lin.nu, Polynomial4.zero(N), Polynomial4.zero(N, mode="complex"),
                            Hc, [], PolyMap4.identity(N), PolyMap4.identity(N))
        Tn, Tn_inv = nf.T_N, nf.T_N_inv_approx
    perm = list(CENTER_PERM)
    # phi uses the inverse transform, its approximate inverse the forward one
    N_map = Tn_inv.permute(perm)
    N_inv = Tn.permute(perm)
    phi = CoordinateChange(params.mu, params.gamma_hat, lin, N_map, N_inv, N, normal_form=nf)
    log.info("phi built: N=%d lambda=%.15g nu=%.15g c2=%.15g", N, lin.lam, lin.nu, c2)
    return phi
