"""Array-valued interval arithmetic with outward rounding.

Every :class:`Interval` holds two float64 arrays ``lo`` and ``hi`` of the same
shape, so a scalar interval, an interval vector, an interval matrix and a batch
of thousands of boxes are all the same object with a different shape.
Operations broadcast like numpy.  Each computed endpoint is pushed one ulp
outward with ``nextafter``; since IEEE operations are correctly rounded this
keeps every exact result inside the returned interval.

Matrix helpers treat the last two axes as the matrix axes and all leading axes
as a batch.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Interval",
    "IntervalError",
    "IntervalDivisionError",
    "IntervalDomainError",
    "SingularIntervalMatrixError",
    "interval_arith",
    "interval_hull",
    "hull",
    "box4",
    "matmul",
    "matrix_apply",
    "interval_gauss_solve",
    "gauss_solve_batch",
    "interval_inverse",
    "matrix_norm_upper",
    "quad_form_range_2x2",
    "stack",
    "concatenate",
]

_INF = np.inf


class IntervalError(ArithmeticError):
    """Base class for interval arithmetic failures."""


class IntervalDivisionError(IntervalError, ZeroDivisionError):
    """Division by an interval that contains zero."""


class IntervalDomainError(IntervalError, ValueError):
    """Operand leaves the domain of the operation (e.g. sqrt of negatives)."""


class SingularIntervalMatrixError(IntervalError):
    """Interval matrix could not be verified invertible."""


_NORMAL_SAFE = 2.0 ** -1000


def _down(x):
    return np.nextafter(x, -_INF)


def _up(x):
    return np.nextafter(x, _INF)


def _thin_pow2(a, b, lo, hi):
    m, _ = np.frexp(a)
    return ((a == b) & (np.abs(m) == 0.5) & (np.abs(lo) >= _NORMAL_SAFE) & (np.abs(hi) >= _NORMAL_SAFE)
            & np.isfinite(lo) & np.isfinite(hi))


def _sum_down(a, b):
    """Lower bound of ``a + b``: the float sum, stepped down only when rounding lost something."""
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)  # TwoSum: a + b = s + err exactly (finite case)
    return np.where(err >= 0, s, _down(s))


def _sum_up(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return np.where(err <= 0, s, _up(s))


class Interval:
    """Closed interval ``[lo, hi]`` (elementwise over an array shape)."""

    __slots__ = ("lo", "hi")
    __array_priority__ = 1000  # make ndarray <op> Interval defer to us

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=np.float64)
        hi = lo if hi is None else np.asarray(hi, dtype=np.float64)
        if lo.shape != hi.shape:
            lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise IntervalError("NaN endpoint")
        if np.any(lo > hi):
            raise IntervalError("lower endpoint exceeds upper endpoint")
        self.lo = lo
        self.hi = hi

    @classmethod
    def _raw(cls, lo, hi):
        obj = cls.__new__(cls)
        obj.lo = lo
        obj.hi = hi
        return obj

    @classmethod
    def zeros(cls, shape):
        z = np.zeros(shape)
        return cls._raw(z, z.copy())

    @classmethod
    def from_mid_rad(cls, mid, rad):
        mid = np.asarray(mid, dtype=float)
        rad = np.asarray(rad, dtype=float)
        return cls._raw(_down(mid - rad), _up(mid + rad))

    # ------------------------------------------------------------------
    # array protocol
    @property
    def shape(self):
        return self.lo.shape

    @property
    def ndim(self):
        return self.lo.ndim

    def __len__(self):
        return len(self.lo)

    def __getitem__(self, idx):
        return Interval._raw(self.lo[idx], self.hi[idx])

    def __setitem__(self, idx, value):
        value = as_interval(value)
        self.lo[idx] = value.lo
        self.hi[idx] = value.hi

    def copy(self):
        return Interval._raw(self.lo.copy(), self.hi.copy())

    def reshape(self, *shape):
        return Interval._raw(self.lo.reshape(*shape), self.hi.reshape(*shape))

    @property
    def T(self):
        return Interval._raw(np.swapaxes(self.lo, -1, -2), np.swapaxes(self.hi, -1, -2))

    def swapaxes(self, a, b):
        return Interval._raw(np.swapaxes(self.lo, a, b), np.swapaxes(self.hi, a, b))

    def broadcast_to(self, shape):
        return Interval._raw(np.broadcast_to(self.lo, shape).copy(),
                             np.broadcast_to(self.hi, shape).copy())

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        if self.lo.ndim == 0:
            return f"Interval([{self.lo!r}, {self.hi!r}])"
        return f"Interval(shape={self.shape}, lo={self.lo!r}, hi={self.hi!r})"

    def tolist(self):
        """Nested lists of ``[lo, hi]`` pairs (floats)."""
        return np.stack([self.lo, self.hi], axis=-1).tolist()

    # ------------------------------------------------------------------
    # set-like queries
    def mid(self):
        m = 0.5 * self.lo + 0.5 * self.hi
        return np.where(np.isfinite(m), m, 0.5 * (self.lo + self.hi))

    def rad(self):
        """Upper bound on the radius about :meth:`mid`."""
        m = self.mid()
        return np.maximum(_up(self.hi - m), _up(m - self.lo))

    def width(self):
        return self.hi - self.lo

    def mag(self):
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def mig(self):
        return np.where((self.lo <= 0) & (self.hi >= 0), 0.0,
                        np.minimum(np.abs(self.lo), np.abs(self.hi)))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (self.lo <= x) & (x <= self.hi)

    def contains_zero(self):
        return (self.lo <= 0.0) & (self.hi >= 0.0)

    def subset(self, other):
        other = as_interval(other)
        return (other.lo <= self.lo) & (self.hi <= other.hi)

    def interior_subset(self, other):
        other = as_interval(other)
        return (other.lo < self.lo) & (self.hi < other.hi)

    def disjoint(self, other):
        other = as_interval(other)
        return (self.hi < other.lo) | (other.hi < self.lo)

    def intersect(self, other):
        """Elementwise intersection; raises if some pair is disjoint."""
        other = as_interval(other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            raise IntervalError("empty intersection")
        return Interval._raw(lo, hi)

    def hull_with(self, other):
        other = as_interval(other)
        return Interval._raw(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def widen(self, eps):
        return Interval._raw(_down(self.lo - eps), _up(self.hi + eps))

    # ------------------------------------------------------------------
    # arithmetic
    def __neg__(self):
        return Interval._raw(-self.hi, -self.lo)

    def __pos__(self):
        return self

    def __add__(self, other):
        other = as_interval(other)
        with np.errstate(invalid="ignore"):
            return Interval._raw(_sum_down(self.lo, other.lo), _sum_up(self.hi, other.hi))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_interval(other)
        with np.errstate(invalid="ignore"):
            return Interval._raw(_sum_down(self.lo, -other.hi), _sum_up(self.hi, -other.lo))

    def __rsub__(self, other):
        return as_interval(other) - self

    def __mul__(self, other):
        other = as_interval(other)
        a, b, c, d = self.lo, self.hi, other.lo, other.hi
        p1, p2, p3, p4 = a * c, a * d, b * c, b * d
        lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
        hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
        # a factor that is exactly [0, 0] makes every product an exact zero
        zero = ((a == 0) & (b == 0)) | ((c == 0) & (d == 0))
        # a thin power-of-two factor scales exactly (away from the subnormal range)
        exact = zero | _thin_pow2(a, b, lo, hi) | _thin_pow2(c, d, lo, hi)
        return Interval._raw(np.where(zero, 0.0, np.where(exact, lo, _down(lo))),
                             np.where(zero, 0.0, np.where(exact, hi, _up(hi))))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_interval(other)
        if np.any(other.contains_zero()):
            raise IntervalDivisionError("division by an interval containing zero")
        a, b, c, d = self.lo, self.hi, other.lo, other.hi
        p1, p2, p3, p4 = a / c, a / d, b / c, b / d
        lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
        hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
        zero = (a == 0) & (b == 0)
        exact = zero | _thin_pow2(c, d, lo, hi)
        return Interval._raw(np.where(zero, 0.0, np.where(exact, lo, _down(lo))),
                             np.where(zero, 0.0, np.where(exact, hi, _up(hi))))

    def __rtruediv__(self, other):
        return as_interval(other) / self

    def __pow__(self, n):
        if not float(n).is_integer():
            raise IntervalDomainError("only integer powers are supported")
        n = int(n)
        if n < 0:
            return 1.0 / (self ** (-n))
        if n == 0:
            return Interval._raw(np.ones(self.shape), np.ones(self.shape))
        if n == 1:
            return self
        pl = _thin_power(self.lo, n)
        ph = _thin_power(self.hi, n)
        if n % 2:
            return Interval._raw(pl.lo, ph.hi)
        pos = self.lo >= 0
        neg = self.hi <= 0
        lo = np.maximum(np.where(pos, pl.lo, np.where(neg, ph.lo, 0.0)), 0.0)
        hi = np.where(pos, ph.hi, np.where(neg, pl.hi, np.maximum(pl.hi, ph.hi)))
        return Interval._raw(lo, hi)

    def sqr(self):
        return self ** 2

    def sqrt(self):
        if np.any(self.lo < 0):
            raise IntervalDomainError("sqrt of an interval reaching below zero")
        return Interval._raw(np.maximum(_down(np.sqrt(self.lo)), 0.0), _up(np.sqrt(self.hi)))

    def abs(self):
        lo = self.mig()
        return Interval._raw(lo, self.mag())

    def sum(self, axis=None):
        """Sum along ``axis`` with every partial sum rounded outward."""
        if axis is None:
            flat = self.reshape(-1)
            axis = 0
        else:
            flat = self
        lo = np.moveaxis(flat.lo, axis, 0)
        hi = np.moveaxis(flat.hi, axis, 0)
        acc_lo = lo[0].copy()
        acc_hi = hi[0].copy()
        with np.errstate(invalid="ignore"):
            for k in range(1, lo.shape[0]):
                acc_lo = _sum_down(acc_lo, lo[k])
                acc_hi = _sum_up(acc_hi, hi[k])
        return Interval._raw(acc_lo, acc_hi)


def _thin_power(x, n):
    """Enclosure of ``x**n`` for a float array ``x`` by repeated squaring."""
    base = Interval._raw(x, x)
    result = None
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    return result


def as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    x = np.asarray(x, dtype=np.float64)
    return Interval._raw(x, x)


def stack(items, axis=0) -> Interval:
    items = [as_interval(v) for v in items]
    return Interval._raw(np.stack([v.lo for v in items], axis=axis),
                         np.stack([v.hi for v in items], axis=axis))


def concatenate(items, axis=0) -> Interval:
    items = [as_interval(v) for v in items]
    return Interval._raw(np.concatenate([v.lo for v in items], axis=axis),
                         np.concatenate([v.hi for v in items], axis=axis))


def box4(theta1, theta2, x, y) -> Interval:
    """Box in aligned coordinates ``(theta1, theta2, x, y)``.

    Each argument is an Interval, a ``(lo, hi)`` pair or a float.
    """
    parts = []
    for v in (theta1, theta2, x, y):
        if isinstance(v, tuple):
            v = Interval(*v)
        parts.append(as_interval(v))
    return stack(parts, axis=-1)


_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "sqrt": lambda a, b: a.sqrt(),
}


def interval_arith(op: str, a, b=None) -> Interval:
    """Apply ``op`` in {add, sub, mul, div, sqrt, pow} to intervals.

    For ``pow`` the exponent ``b`` is an integer.
    """
    a = as_interval(a)
    if op == "pow":
        return a ** b
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown interval operation {op!r}") from None
    if op != "sqrt":
        b = as_interval(b)
    return fn(a, b)


def interval_hull(items) -> Interval:
    """Smallest interval containing every interval in ``items``."""
    items = list(items)
    if not items:
        raise ValueError("hull of an empty list")
    return hull(stack(items), axis=0)


def hull(x: Interval, axis=0) -> Interval:
    """Hull along an array axis (order independent)."""
    return Interval._raw(np.min(x.lo, axis=axis), np.max(x.hi, axis=axis))


# ----------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Interval:
    """Interval matrix product over the last two axes (batched)."""
    a = as_interval(a)
    b = as_interval(b)
    m = a.shape[-1]
    if b.shape[-2] != m:
        raise ValueError(f"dimension mismatch {a.shape} @ {b.shape}")
    acc = a[..., :, 0:1] * b[..., 0:1, :]
    for k in range(1, m):
        acc = acc + a[..., :, k:k + 1] * b[..., k:k + 1, :]
    return acc


def matrix_apply(M, v) -> Interval:
    """Interval matrix times interval vector, batched over leading axes."""
    M = as_interval(M)
    v = as_interval(v)
    if M.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch {M.shape} . {v.shape}")
    acc = M[..., :, 0] * v[..., None, 0]
    for k in range(1, M.shape[-1]):
        acc = acc + M[..., :, k] * v[..., None, k]
    return acc


def _float_inverse(mid):
    out = np.empty_like(mid)
    flat = mid.reshape(-1, *mid.shape[-2:])
    of = out.reshape(flat.shape)
    for i in range(flat.shape[0]):
        try:
            of[i] = np.linalg.inv(flat[i])
        except np.linalg.LinAlgError:
            of[i] = np.eye(mid.shape[-1])
    bad = ~np.isfinite(of)
    if bad.any():
        of[np.any(bad, axis=(-1, -2))] = np.eye(mid.shape[-1])
    return out


def gauss_solve_batch(A, b, precondition=True):
    """Batched interval Gaussian elimination.

    ``A`` has shape ``(..., n, n)``; ``b`` has shape ``(..., n)`` or
    ``(..., n, k)``.  Returns ``(x, ok)`` where ``ok`` flags the batch members
    whose pivots all excluded zero; entries of ``x`` for failed members are
    set to ``[-inf, inf]``.

    With ``precondition`` the system is first multiplied by a floating point
    approximation of ``mid(A)^-1`` (the product is formed in interval
    arithmetic, so the enclosure stays rigorous).
    """
    A = as_interval(A)
    b = as_interval(b)
    n = A.shape[-1]
    vec = b.ndim == A.ndim - 1
    if vec:
        b = b[..., None]
    batch = np.broadcast_shapes(A.shape[:-2], b.shape[:-2])
    A = A.broadcast_to(batch + (n, n))
    b = b.broadcast_to(batch + b.shape[-2:])
    if precondition:
        P = as_interval(_float_inverse(A.mid()))
        A = matmul(P, A)
        b = matmul(P, b)
    k = b.shape[-1]
    Alo = A.lo.reshape(-1, n, n).copy()
    Ahi = A.hi.reshape(-1, n, n).copy()
    blo = b.lo.reshape(-1, n, k).copy()
    bhi = b.hi.reshape(-1, n, k).copy()
    nb = Alo.shape[0]
    ok = np.ones(nb, dtype=bool)
    rows = np.arange(nb)
    for c in range(n):
        mags = np.abs(0.5 * (Alo[:, c:, c] + Ahi[:, c:, c]))
        piv = np.argmax(mags, axis=1) + c
        for arr in (Alo, Ahi, blo, bhi):
            tmp = arr[rows, piv].copy()
            arr[rows, piv] = arr[:, c]
            arr[:, c] = tmp
        pivot = Interval._raw(Alo[:, c, c], Ahi[:, c, c])
        bad = pivot.contains_zero()
        ok &= ~bad
        safe = Interval._raw(np.where(bad, 1.0, pivot.lo), np.where(bad, 1.0, pivot.hi))
        for r in range(c + 1, n):
            f = Interval._raw(Alo[:, r, c], Ahi[:, r, c]) / safe
            row_c = Interval._raw(Alo[:, c, c:], Ahi[:, c, c:])
            row_r = Interval._raw(Alo[:, r, c:], Ahi[:, r, c:]) - f[:, None] * row_c
            Alo[:, r, c:], Ahi[:, r, c:] = row_r.lo, row_r.hi
            rb = Interval._raw(blo[:, r], bhi[:, r]) - f[:, None] * Interval._raw(blo[:, c], bhi[:, c])
            blo[:, r], bhi[:, r] = rb.lo, rb.hi
        Alo[:, c, c], Ahi[:, c, c] = safe.lo, safe.hi
    xlo = np.empty_like(blo)
    xhi = np.empty_like(bhi)
    for r in range(n - 1, -1, -1):
        acc = Interval._raw(blo[:, r], bhi[:, r])
        for j in range(r + 1, n):
            acc = acc - Interval._raw(Alo[:, r, j, None], Ahi[:, r, j, None]) * Interval._raw(xlo[:, j], xhi[:, j])
        x = acc / Interval._raw(Alo[:, r, r, None], Ahi[:, r, r, None])
        xlo[:, r], xhi[:, r] = x.lo, x.hi
    xlo[~ok] = -_INF
    xhi[~ok] = _INF
    x = Interval._raw(xlo.reshape(batch + (n, k)), xhi.reshape(batch + (n, k)))
    if vec:
        x = x[..., 0]
    return x, ok.reshape(batch)


def interval_gauss_solve(A, b, precondition=True) -> Interval:
    """Enclose ``{A^-1 b : A in A, b in b}``.

    Raises :class:`SingularIntervalMatrixError` when some pivot interval
    contains zero (``A`` is then not verifiably invertible).
    """
    A = as_interval(A)
    b = as_interval(b)
    if A.shape[-1] != A.shape[-2]:
        raise ValueError("matrix must be square")
    if A.shape[-1] != b.shape[-1 if b.ndim == A.ndim - 1 else -2]:
        raise ValueError(f"dimension mismatch {A.shape} \\ {b.shape}")
    x, ok = gauss_solve_batch(A, b, precondition=precondition)
    if not np.all(ok):
        raise SingularIntervalMatrixError("interval matrix is not verifiably invertible")
    return x


def interval_inverse(A, precondition=True):
    """Batched enclosure of the inverse; returns ``(Ainv, ok)``."""
    A = as_interval(A)
    n = A.shape[-1]
    eye = as_interval(np.broadcast_to(np.eye(n), A.shape).copy())
    return gauss_solve_batch(A, eye, precondition=precondition)


def matrix_norm_upper(M) -> float:
    """Upper bound on the Euclidean operator norm of every member of ``M``.

    A single entry gives its magnitude; larger blocks use the Frobenius norm
    of the entrywise magnitudes, rounded up.
    """
    M = as_interval(M)
    mag = M.mag()
    if mag.size == 1:
        return float(mag.reshape(()))
    if not np.any(mag):
        return 0.0
    sq = _up(mag * mag)
    acc = np.zeros(())
    for v in sq.ravel():
        acc = _up(acc + v)
    return float(_up(np.sqrt(acc)))


def quad_form_range_2x2(C):
    """Bounds ``(c_s, c_u)`` on ``theta^T C theta`` over unit ``theta``.

    Uses ``theta^T C theta = (r1 + r2) t1 t2 + e1 t1^2 + e2 t2^2`` with
    ``|t1 t2| <= 1/2``.
    """
    C = as_interval(C)
    if C.shape[-2:] != (2, 2):
        raise ValueError("quad_form_range_2x2 needs a 2x2 interval matrix")
    off = (C[..., 0, 1] + C[..., 1, 0]).mag()
    # halving is exact away from the subnormal range
    half = np.where((off == 0) | (off >= _NORMAL_SAFE), 0.5 * off, _up(0.5 * off))
    c_u = _sum_up(half, np.maximum(C[..., 0, 0].hi, C[..., 1, 1].hi))
    c_s = _sum_down(-half, np.minimum(C[..., 0, 0].lo, C[..., 1, 1].lo))
    if np.ndim(c_s) == 0:
        return float(c_s), float(c_u)
    return c_s, c_u
