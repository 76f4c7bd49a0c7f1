"""Sparse polynomials in four variables, truncated by total degree.

A :class:`Polynomial4` maps exponent tuples ``(k1, k2, k3, k4)`` to
coefficients.  Three coefficient modes are supported:

``real``
    Python floats.
``complex``
    Python complex numbers (a pair of doubles).
``interval``
    :class:`~cmcert.interval.Interval` scalars, used when derivatives of a
    floating point polynomial have to be enclosed rigorously.

Canonical variables are ordered ``(q1, q2, p1, p2)``: slots 0 and 2 form the
first canonical pair, slots 1 and 3 the second.  :func:`poisson_bracket` uses
this convention unless other pairs are given.
"""

from __future__ import annotations

import itertools
import math
from functools import cached_property

import numpy as np

from .interval import Interval, as_interval, _down, _up

__all__ = [
    "NVARS",
    "CANONICAL_PAIRS",
    "Polynomial4",
    "PolyMap4",
    "monomials",
    "poisson_bracket",
    "poly_eval",
    "poly_diff",
    "poly_compose",
    "poly_second_derivative_enclosure",
    "rigorous_sum",
]

NVARS = 4
CANONICAL_PAIRS = ((0, 2), (1, 3))
MODES = ("real", "complex", "interval")


def monomials(degree: int):
    """Exponent tuples of total degree ``degree`` in graded-lex order."""
    out = []
    for k1 in range(degree, -1, -1):
        for k2 in range(degree - k1, -1, -1):
            for k3 in range(degree - k1 - k2, -1, -1):
                out.append((k1, k2, k3, degree - k1 - k2 - k3))
    return out


def _grlex_key(k):
    return (sum(k), tuple(-e for e in k))


def _is_zero(c, mode):
    if mode == "interval":
        return bool(c.lo == 0.0 and c.hi == 0.0)
    return c == 0


def _coerce(c, mode):
    if mode == "real":
        if isinstance(c, complex):
            raise TypeError("complex coefficient in a real polynomial")
        return float(c)
    if mode == "complex":
        return complex(c)
    return as_interval(c) if isinstance(c, Interval) else Interval(float(c))


def rigorous_sum(lo, hi, axis=0):
    """Rigorous enclosure of sums of float arrays along ``axis``.

    Endpoint sums are accumulated in order with an error-free transformation
    (TwoSum); the magnitudes of the rounding errors are summed separately,
    rounded up, and applied once.  Exact sums are therefore not widened.
    """
    lo = np.moveaxis(np.asarray(lo, dtype=float), axis, 0)
    hi = np.moveaxis(np.asarray(hi, dtype=float), axis, 0)
    n = lo.shape[0]
    if n == 0:
        z = np.zeros(lo.shape[1:])
        return z, z.copy()
    out = []
    with np.errstate(invalid="ignore"):
        for x in (lo, hi):
            s = x[0].copy()
            err = np.zeros_like(s)
            for k in range(1, n):
                t = s + x[k]
                bb = t - s
                e = (s - (t - bb)) + (x[k] - bb)
                err = _up(err + np.abs(e))
                s = t
            out.append((s, err))
    (slo, elo), (shi, ehi) = out
    # each TwoSum error is exact and err was rounded up, so it bounds the total
    rlo = np.where(elo == 0, slo, _down(slo - elo))
    rhi = np.where(ehi == 0, shi, _up(shi + ehi))
    # overflow or nan from infinite terms falls back to the safe side
    rlo = np.where(np.isnan(rlo), -np.inf, rlo)
    rhi = np.where(np.isnan(rhi), np.inf, rhi)
    return rlo, rhi


class Polynomial4:
    """Polynomial in four variables with terms of degree ``<= max_degree``."""

    def __init__(self, terms=None, max_degree: int = 4, mode: str = "real"):
        if mode not in MODES:
            raise ValueError(f"unknown coefficient mode {mode!r}")
        self.mode = mode
        self.max_degree = int(max_degree)
        clean = {}
        for k, c in (terms or {}).items():
            k = tuple(int(e) for e in k)
            if len(k) != NVARS or min(k) < 0:
                raise ValueError(f"bad exponent tuple {k}")
            if sum(k) > self.max_degree:
                continue
            c = _coerce(c, mode)
            if not _is_zero(c, mode):
                clean[k] = c
        self.terms = dict(sorted(clean.items(), key=lambda kv: _grlex_key(kv[0])))

    # constructors ------------------------------------------------------
    @classmethod
    def zero(cls, max_degree=4, mode="real"):
        return cls({}, max_degree, mode)

    @classmethod
    def constant(cls, c, max_degree=4, mode="real"):
        return cls({(0, 0, 0, 0): c}, max_degree, mode)

    @classmethod
    def variable(cls, i, max_degree=4, mode="real"):
        k = [0] * NVARS
        k[i] = 1
        return cls({tuple(k): 1.0}, max_degree, mode)

    def _new(self, terms, max_degree=None, mode=None):
        return Polynomial4(terms, self.max_degree if max_degree is None else max_degree,
                           self.mode if mode is None else mode)

    # basic info -------------------------------------------------------
    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms.items())

    def __repr__(self):
        body = " + ".join(f"{c!r}*{k}" for k, c in list(self.terms.items())[:6])
        more = " + ..." if len(self.terms) > 6 else ""
        return f"Polynomial4({self.mode}, deg<={self.max_degree}: {body or '0'}{more})"

    def __eq__(self, other):
        if not isinstance(other, Polynomial4):
            return NotImplemented
        if self.mode == "interval" or other.mode == "interval":
            return self.mode == other.mode and self.terms.keys() == other.terms.keys() and all(
                self.terms[k].lo == other.terms[k].lo and self.terms[k].hi == other.terms[k].hi
                for k in self.terms)
        return self.terms == other.terms

    __hash__ = None

    def coeff(self, k):
        k = tuple(k)
        if k in self.terms:
            return self.terms[k]
        return Interval(0.0) if self.mode == "interval" else (0.0 if self.mode == "real" else 0j)

    @property
    def degree(self):
        return max((sum(k) for k in self.terms), default=0)

    def homogeneous(self, d):
        return self._new({k: c for k, c in self.terms.items() if sum(k) == d})

    def up_to(self, d):
        return self._new({k: c for k, c in self.terms.items() if sum(k) <= d})

    def truncate(self, d):
        return self._new(self.terms, max_degree=d)

    def max_abs_coeff(self):
        if not self.terms:
            return 0.0
        if self.mode == "interval":
            return max(float(c.mag()) for c in self.terms.values())
        return max(abs(c) for c in self.terms.values())

    # mode conversion ----------------------------------------------------
    def to_complex(self):
        return self._new(self.terms, mode="complex")

    def to_interval(self):
        if self.mode == "complex":
            raise TypeError("complex polynomials have no interval mode")
        return self._new(self.terms, mode="interval")

    def real_part(self, tol=None):
        """Real polynomial of real parts; ``tol`` bounds the allowed imaginary residue."""
        if self.mode != "complex":
            return self
        if tol is not None:
            worst = max((abs(c.imag) for c in self.terms.values()), default=0.0)
            if worst > tol:
                raise ValueError(f"imaginary residue {worst:.3e} exceeds {tol:.1e}")
        return self._new({k: c.real for k, c in self.terms.items()}, mode="real")

    def imag_part(self):
        return self._new({k: complex(c).imag for k, c in self.terms.items()}, mode="real")

    # algebra ---------------------------------------------------------------
    def _result_mode(self, other):
        modes = {self.mode, other.mode}
        if "interval" in modes:
            if "complex" in modes:
                raise TypeError("cannot mix interval and complex coefficients")
            return "interval"
        return "complex" if "complex" in modes else "real"

    def _lift(self, other):
        if isinstance(other, Polynomial4):
            return other
        if isinstance(other, Interval):
            return Polynomial4({(0,) * NVARS: other}, self.max_degree, "interval")
        mode = "complex" if isinstance(other, complex) else "real"
        return Polynomial4({(0,) * NVARS: other}, self.max_degree, mode)

    def __add__(self, other):
        other = self._lift(other)
        mode = self._result_mode(other)
        terms = {k: _coerce(c, mode) for k, c in self.terms.items()}
        for k, c in other.terms.items():
            c = _coerce(c, mode)
            terms[k] = terms[k] + c if k in terms else c
        return Polynomial4(terms, min(self.max_degree, other.max_degree), mode)

    __radd__ = __add__

    def __neg__(self):
        return self._new({k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def scale(self, s):
        """Multiply every coefficient by a scalar (float, complex or Interval)."""
        if isinstance(s, Interval):
            mode = "interval"
        elif isinstance(s, complex) and self.mode != "interval":
            mode = "complex"
        else:
            mode = self.mode
        s = _coerce(s, mode)
        return Polynomial4({k: _coerce(c, mode) * s for k, c in self.terms.items()},
                           self.max_degree, mode)

    def __mul__(self, other):
        if not isinstance(other, Polynomial4):
            return self.scale(other)
        return self.mul(other)

    __rmul__ = __mul__

    def mul(self, other, trunc=None):
        """Product keeping only terms of degree ``<= trunc``.

        Real and complex coefficients are accumulated with ``math.fsum``, so
        the result is correctly rounded and independent of operand order.
        """
        mode = self._result_mode(other)
        trunc = min(self.max_degree, other.max_degree) if trunc is None else trunc
        parts = {}
        b_items = [(k, sum(k), _coerce(c, mode)) for k, c in other.terms.items()]
        for ka, ca in self.terms.items():
            da = sum(ka)
            ca = _coerce(ca, mode)
            for kb, db, cb in b_items:
                if da + db > trunc:
                    continue
                k = (ka[0] + kb[0], ka[1] + kb[1], ka[2] + kb[2], ka[3] + kb[3])
                parts.setdefault(k, []).append((ca, cb))
        terms = {}
        for k, pairs in parts.items():
            if mode == "real":
                terms[k] = math.fsum(a * b for a, b in pairs)
            elif mode == "complex":
                # real and imaginary parts as exact-product sums
                terms[k] = complex(math.fsum(x for a, b in pairs for x in (a.real * b.real, -(a.imag * b.imag))),
                                   math.fsum(x for a, b in pairs for x in (a.real * b.imag, a.imag * b.real)))
            else:
                acc = pairs[0][0] * pairs[0][1]
                for a, b in pairs[1:]:
                    acc = acc + a * b
                terms[k] = acc
        return Polynomial4(terms, trunc, mode)

    def power(self, n, trunc=None):
        trunc = self.max_degree if trunc is None else trunc
        result = Polynomial4.constant(1.0, trunc, self.mode)
        for _ in range(n):
            result = result.mul(self, trunc)
        return result

    def diff(self, var: int) -> "Polynomial4":
        """Formal partial derivative; in interval mode the factor is enclosed."""
        terms = {}
        for k, c in self.terms.items():
            e = k[var]
            if e == 0:
                continue
            nk = list(k)
            nk[var] -= 1
            terms[tuple(nk)] = c * e if self.mode != "interval" else c * Interval(float(e))
        return self._new(terms)

    def gradient(self):
        return [self.diff(v) for v in range(NVARS)]

    def compose(self, M: "PolyMap4", trunc=None) -> "Polynomial4":
        """``self(M(z))`` keeping only terms of degree ``<= trunc``."""
        trunc = min(self.max_degree, M.max_degree) if trunc is None else trunc
        mode = self.mode
        for comp in M.components:
            mode = Polynomial4({}, 0, mode)._result_mode(comp)
        maxexp = [max((k[v] for k in self.terms), default=0) for v in range(NVARS)]
        powers = []
        for v in range(NVARS):
            comp = M.components[v]
            table = [Polynomial4.constant(1.0, trunc, mode)]
            for _ in range(maxexp[v]):
                table.append(table[-1].mul(comp, trunc))
            powers.append(table)
        result = Polynomial4.zero(trunc, mode)
        for k, c in self.terms.items():
            term = Polynomial4.constant(c, trunc, mode)
            for v in range(NVARS):
                if k[v]:
                    term = term.mul(powers[v][k[v]], trunc)
            result = result + term
        return result.truncate(trunc)

    def permute(self, perm):
        """Rename variables: new variable ``j`` is old variable ``perm[j]``."""
        terms = {}
        for k, c in self.terms.items():
            terms[tuple(k[perm[j]] for j in range(NVARS))] = c
        return self._new(terms)

    # evaluation ----------------------------------------------------------
    @cached_property
    def _arrays(self):
        exps = np.array(list(self.terms.keys()), dtype=np.int64).reshape(-1, NVARS)
        vals = list(self.terms.values())
        if self.mode == "interval":
            lo = np.array([float(c.lo) for c in vals], dtype=float)
            hi = np.array([float(c.hi) for c in vals], dtype=float)
            return exps, (lo, hi)
        dtype = complex if self.mode == "complex" else float
        return exps, np.array(vals, dtype=dtype)

    def __call__(self, point):
        """Evaluate at float/complex points of shape ``(..., 4)``."""
        if self.mode == "interval":
            return self.eval_interval(point)
        z = np.asarray(point)
        exps, coef = self._arrays
        if len(exps) == 0:
            return np.zeros(z.shape[:-1], dtype=coef.dtype if coef.size else float)
        mono = np.prod(z[..., None, :] ** exps, axis=-1)
        return np.sum(mono * coef, axis=-1)

    def eval_interval(self, box, power_table=None) -> Interval:
        """Rigorous enclosure of the range over ``box`` (shape ``(..., 4)``)."""
        if self.mode == "complex":
            raise TypeError("interval evaluation needs real or interval coefficients")
        box = as_interval(box)
        exps, coef = self._arrays
        batch = box.shape[:-1]
        if len(exps) == 0:
            return Interval.zeros(batch)
        table = power_table if power_table is not None else PowerTable(box, int(exps.max()))
        plo, phi = table.monomials(exps)
        if self.mode == "interval":
            clo, chi = coef
        else:
            clo = chi = coef
        shape = (len(exps),) + (1,) * len(batch)
        m = Interval._raw(plo, phi) * Interval._raw(clo.reshape(shape), chi.reshape(shape))
        lo, hi = rigorous_sum(m.lo, m.hi, axis=0)
        return Interval._raw(lo, hi)

    # serialization ---------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"# Polynomial4 mode={self.mode} max_degree={self.max_degree} terms={len(self.terms)}"]
        for k, c in self.terms.items():
            exps = " ".join(str(e) for e in k)
            if self.mode == "real":
                lines.append(f"{exps} {float(c).hex()}")
            elif self.mode == "complex":
                lines.append(f"{exps} {c.real.hex()} {c.imag.hex()}")
            else:
                lines.append(f"{exps} {float(c.lo).hex()} {float(c.hi).hex()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Polynomial4":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        header = lines[0].split()
        if header[:2] != ["#", "Polynomial4"]:
            raise ValueError("not a Polynomial4 block")
        meta = dict(item.split("=") for item in header[2:])
        mode = meta["mode"]
        terms = {}
        for ln in lines[1:]:
            parts = ln.split()
            k = tuple(int(e) for e in parts[:NVARS])
            vals = [float.fromhex(v) for v in parts[NVARS:]]
            if mode == "real":
                terms[k] = vals[0]
            elif mode == "complex":
                terms[k] = complex(vals[0], vals[1])
            else:
                terms[k] = Interval(vals[0], vals[1])
        return cls(terms, int(meta["max_degree"]), mode)


class PowerTable:
    """Cached interval powers ``box[..., v] ** k`` for monomial evaluation."""

    def __init__(self, box: Interval, max_power: int):
        self.box = box
        self.max_power = max_power
        batch = box.shape[:-1]
        lo = np.empty((NVARS, max_power + 1) + batch)
        hi = np.empty_like(lo)
        for v in range(NVARS):
            x = box[..., v]
            lo[v, 0] = 1.0
            hi[v, 0] = 1.0
            for k in range(1, max_power + 1):
                p = x ** k
                lo[v, k] = p.lo
                hi[v, k] = p.hi
        self.lo = lo
        self.hi = hi

    def monomials(self, exps):
        """Enclosures of every monomial; arrays of shape ``(K,) + batch``."""
        acc = Interval._raw(self.lo[0, exps[:, 0]], self.hi[0, exps[:, 0]])
        for v in range(1, NVARS):
            acc = acc * Interval._raw(self.lo[v, exps[:, v]], self.hi[v, exps[:, v]])
        return acc.lo, acc.hi


class PolyMap4:
    """Polynomial map of R^4 (or C^4) given by four components."""

    def __init__(self, components):
        components = list(components)
        if len(components) != NVARS:
            raise ValueError("a PolyMap4 has exactly four components")
        modes = {c.mode for c in components}
        if len(modes) != 1:
            mode = "complex" if "complex" in modes else ("interval" if "interval" in modes else "real")
            components = [Polynomial4(c.terms, c.max_degree, mode) for c in components]
        degs = {c.max_degree for c in components}
        if len(degs) != 1:
            d = min(degs)
            components = [c.truncate(d) for c in components]
        self.components = components

    @property
    def mode(self):
        return self.components[0].mode

    @property
    def max_degree(self):
        return self.components[0].max_degree

    @classmethod
    def identity(cls, max_degree=4, mode="real"):
        return cls([Polynomial4.variable(i, max_degree, mode) for i in range(NVARS)])

    @classmethod
    def linear(cls, matrix, offset=None, max_degree=4, mode=None):
        """Affine map ``z -> matrix @ z + offset``."""
        A = np.asarray(matrix)
        if mode is None:
            mode = "complex" if np.iscomplexobj(A) or np.iscomplexobj(offset) else "real"
        comps = []
        for i in range(NVARS):
            terms = {}
            for j in range(NVARS):
                k = [0] * NVARS
                k[j] = 1
                terms[tuple(k)] = A[i, j].item()
            if offset is not None:
                terms[(0,) * NVARS] = np.asarray(offset)[i].item()
            comps.append(Polynomial4(terms, max_degree, mode))
        return cls(comps)

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __repr__(self):
        return f"PolyMap4({self.mode}, deg<={self.max_degree}, terms={[len(c) for c in self.components]})"

    def compose(self, inner: "PolyMap4", trunc=None) -> "PolyMap4":
        """``self(inner(z))``."""
        return PolyMap4([c.compose(inner, trunc) for c in self.components])

    def __call__(self, point):
        return np.stack([c(point) for c in self.components], axis=-1)

    def eval_interval(self, box, power_table=None) -> Interval:
        box = as_interval(box)
        if power_table is None:
            power_table = PowerTable(box, max(1, self.max_degree))
        from .interval import stack
        return stack([c.eval_interval(box, power_table) for c in self.components], axis=-1)

    def real_part(self, tol=None):
        return PolyMap4([c.real_part(tol) for c in self.components])

    def to_interval(self):
        return PolyMap4([c.to_interval() for c in self.components])

    def truncate(self, d):
        return PolyMap4([c.truncate(d) for c in self.components])

    def permute(self, perm):
        """Conjugate by a coordinate permutation: new slot ``j`` is old ``perm[j]``."""
        comps = [self.components[perm[j]].permute(perm) for j in range(NVARS)]
        return PolyMap4(comps)

    def linear_part(self):
        A = np.zeros((NVARS, NVARS), dtype=complex if self.mode == "complex" else float)
        for i, c in enumerate(self.components):
            for j in range(NVARS):
                k = [0] * NVARS
                k[j] = 1
                v = c.coeff(tuple(k))
                A[i, j] = v if not isinstance(v, Interval) else float(v.mid())
        return A

    @cached_property
    def jacobian_polys(self):
        """``[[d M_i / d z_j]]`` with interval coefficients (rigorous derivatives)."""
        comps = [c.to_interval() if c.mode == "real" else c for c in self.components]
        return [[c.diff(j) for j in range(NVARS)] for c in comps]

    @cached_property
    def hessian_polys(self):
        J = self.jacobian_polys
        return [[[J[i][j].diff(k) for k in range(NVARS)] for j in range(NVARS)] for i in range(NVARS)]

    def jacobian(self, point):
        """Floating point Jacobian at points ``(..., 4)``."""
        comps = self.components
        rows = []
        for c in comps:
            rows.append(np.stack([c.diff(j)(point) for j in range(NVARS)], axis=-1))
        return np.stack(rows, axis=-2)

    def jacobian_interval(self, box, power_table=None) -> Interval:
        box = as_interval(box)
        if power_table is None:
            power_table = PowerTable(box, max(1, self.max_degree))
        from .interval import stack
        return stack([stack([p.eval_interval(box, power_table) for p in row], axis=-1)
                      for row in self.jacobian_polys], axis=-2)

    def hessian_interval(self, box, power_table=None) -> Interval:
        box = as_interval(box)
        if power_table is None:
            power_table = PowerTable(box, max(1, self.max_degree))
        from .interval import stack
        H = self.hessian_polys
        out_lo = np.empty(box.shape[:-1] + (NVARS, NVARS, NVARS))
        out_hi = np.empty_like(out_lo)
        for i in range(NVARS):
            for j in range(NVARS):
                for k in range(j, NVARS):
                    v = H[i][j][k].eval_interval(box, power_table)
                    out_lo[..., i, j, k] = out_lo[..., i, k, j] = v.lo
                    out_hi[..., i, j, k] = out_hi[..., i, k, j] = v.hi
        return Interval._raw(out_lo, out_hi)

    def to_text(self) -> str:
        return "".join(f"## component {i}\n" + c.to_text() for i, c in enumerate(self.components))

    @classmethod
    def from_text(cls, text: str) -> "PolyMap4":
        blocks = text.split("## component ")[1:]
        comps = []
        for b in blocks:
            _, body = b.split("\n", 1)
            comps.append(Polynomial4.from_text(body))
        return cls(comps)


# ----------------------------------------------------------------------
# functional interface


def poly_eval(P: Polynomial4, box) -> Interval:
    """Interval enclosure of ``P`` over ``box``."""
    return P.eval_interval(box)


def poly_diff(P: Polynomial4, var: int) -> Polynomial4:
    return P.diff(var)


def poly_compose(P: Polynomial4, M: PolyMap4, trunc: int) -> Polynomial4:
    return P.compose(M, trunc)


def poisson_bracket(F: Polynomial4, G: Polynomial4, pairs=CANONICAL_PAIRS, trunc=None) -> Polynomial4:
    """``{F, G} = sum_i dF/dq_i dG/dp_i - dF/dp_i dG/dq_i``."""
    if trunc is None:
        trunc = max(F.max_degree, G.max_degree)
    out = None
    for q, p in pairs:
        term = F.diff(q).mul(G.diff(p), trunc) - F.diff(p).mul(G.diff(q), trunc)
        out = term if out is None else out + term
    return out.truncate(trunc)


def poly_second_derivative_enclosure(M: PolyMap4, box) -> Interval:
    """Entry ``(..., i, j, k)`` encloses ``d^2 M_i / dz_j dz_k`` over ``box``."""
    return M.hessian_interval(box)


def random_polynomial(rng, degree, mode="real", density=1.0, max_degree=None, scale=1.0):
    """Random dense-ish polynomial; used by property tests."""
    terms = {}
    for d in range(degree + 1):
        for k in monomials(d):
            if rng.random() <= density:
                c = scale * rng.standard_normal()
                if mode == "complex":
                    c = complex(c, scale * rng.standard_normal())
                terms[k] = c
    return Polynomial4(terms, degree if max_degree is None else max_degree, mode)


def all_monomials(max_degree):
    return list(itertools.chain.from_iterable(monomials(d) for d in range(max_degree + 1)))


class PolyBatch:
    """Several polynomials evaluated together over shared monomial tables.

    Coefficients are kept as interval endpoint matrices of shape ``(P, K)``
    over the union of the ``K`` monomials, so jacobians and hessians of a
    polynomial map are enclosed in one pass per box batch.
    """

    def __init__(self, polys):
        polys = list(polys)
        self.n = len(polys)
        keys = sorted({k for p in polys for k in p.terms}, key=_grlex_key)
        if not keys:
            keys = [(0,) * NVARS]
        index = {k: i for i, k in enumerate(keys)}
        self.exps = np.array(keys, dtype=np.int64).reshape(-1, NVARS)
        clo = np.zeros((self.n, len(keys)))
        chi = np.zeros((self.n, len(keys)))
        for i, p in enumerate(polys):
            if p.mode == "complex":
                raise TypeError("interval evaluation needs real or interval coefficients")
            for k, c in p.terms.items():
                if p.mode == "interval":
                    clo[i, index[k]], chi[i, index[k]] = float(c.lo), float(c.hi)
                else:
                    clo[i, index[k]] = chi[i, index[k]] = float(c)
        self.clo = clo
        self.chi = chi
        self.thin = bool(np.all(clo == chi))
        self.max_power = int(self.exps.max())

    def eval_interval(self, box, power_table=None) -> Interval:
        """Enclosures with shape ``batch + (P,)``."""
        box = as_interval(box)
        table = power_table if power_table is not None else PowerTable(box, max(1, self.max_power))
        mlo, mhi = table.monomials(self.exps)          # (K,) + batch
        nb = mlo.ndim - 1
        shape = (self.n, self.exps.shape[0]) + (1,) * nb
        a, b = mlo[None], mhi[None]
        c, d = self.clo.reshape(shape), self.chi.reshape(shape)
        if self.thin:
            pos = c >= 0
            lo = np.where(pos, a * c, b * c)
            hi = np.where(pos, b * c, a * c)
        else:
            p1, p2, p3, p4 = a * c, a * d, b * c, b * d
            lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
            hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
        lo, hi = rigorous_sum(_down(lo), _up(hi), axis=1)  # (P,) + batch
        return Interval._raw(np.moveaxis(lo, 0, -1), np.moveaxis(hi, 0, -1))

    def __call__(self, point):
        z = np.asarray(point, dtype=float)
        mono = np.prod(z[..., None, :] ** self.exps, axis=-1)  # batch + (K,)
        return mono @ (0.5 * (self.clo + self.chi)).T
