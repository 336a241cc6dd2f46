"""Exact arithmetic over GF(p) and GF(2^m).

Elements are plain integers in ``[0, q)``.  Vectors and matrices are int64
numpy arrays holding canonical representatives, so every method below works
elementwise on scalars and arrays alike.  Binary extension fields multiply
through log/antilog tables; prime fields use int64 products, which is why
primes are capped below 2**31.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SingularMatrixError, ValidationError

MAX_BINARY_DEGREE = 16
PRIME_LIMIT = 2**31

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for every n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _prime_factors(n: int) -> list[int]:
    out, f = [], 2
    while f * f <= n:
        if n % f == 0:
            out.append(f)
            while n % f == 0:
                n //= f
        f += 1
    if n > 1:
        out.append(n)
    return out


def poly_mod(a: int, b: int) -> int:
    """Remainder of a modulo b, both GF(2)[x] polynomials as bitmasks."""
    db = b.bit_length()
    while a.bit_length() >= db:
        a ^= b << (a.bit_length() - db)
    return a


def poly_mulmod(a: int, b: int, poly: int) -> int:
    r = 0
    deg = poly.bit_length() - 1
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if (a >> deg) & 1:
            a ^= poly
    return r


def is_irreducible(poly: int) -> bool:
    deg = poly.bit_length() - 1
    if deg < 1:
        return False
    for d in range(1, deg // 2 + 1):
        for f in range(1 << d, 1 << (d + 1)):
            if poly_mod(poly, f) == 0:
                return False
    return True


@functools.lru_cache(maxsize=None)
def default_reduction(m: int) -> int:
    """Smallest irreducible polynomial of degree m (x^4+x+1 for m=4)."""
    for poly in range((1 << m) | 1, 1 << (m + 1), 2):
        if is_irreducible(poly):
            return poly
    raise ValidationError(f"no irreducible polynomial of degree {m}")  # pragma: no cover


@functools.lru_cache(maxsize=None)
def _log_tables(q: int, poly: int) -> tuple[np.ndarray, np.ndarray]:
    order = q - 1
    gen = 1
    if q > 2:
        factors = _prime_factors(order)

        def slow_pow(g: int, e: int) -> int:
            acc = 1
            while e:
                if e & 1:
                    acc = poly_mulmod(acc, g, poly)
                g = poly_mulmod(g, g, poly)
                e >>= 1
            return acc

        for gen in range(2, q):
            if all(slow_pow(gen, order // f) != 1 for f in factors):
                break
    # Indices >= 2*order land in the zero tail, so log[0] = 2*order turns any
    # product with 0 into a lookup of 0 without branching.
    exp = np.zeros(4 * order + 1, dtype=np.int64)
    log = np.zeros(q, dtype=np.int64)
    x = 1
    for i in range(order):
        exp[i] = x
        exp[i + order] = x
        log[x] = i
        x = poly_mulmod(x, gen, poly)
    log[0] = 2 * order
    exp.setflags(write=False)
    log.setflags(write=False)
    return exp, log


@dataclass(frozen=True)
class FieldSpec:
    """A finite field F_q.

    ``kind`` is ``"prime"`` or ``"binary"`` (binary extension GF(2^m));
    ``reduction`` is the irreducible polynomial bitmask for binary fields
    and 0 for prime fields.
    """

    kind: str
    q: int
    reduction: int = 0

    def __post_init__(self) -> None:
        if self.kind == "prime":
            if not (2 <= self.q < PRIME_LIMIT) or not is_prime(self.q):
                raise ValidationError(f"q={self.q} is not a prime below 2^31")
            if self.reduction:
                raise ValidationError("prime fields take no reduction polynomial")
        elif self.kind == "binary":
            m = self.q.bit_length() - 1
            if self.q < 2 or self.q != 1 << m or m > MAX_BINARY_DEGREE:
                raise ValidationError(f"q={self.q} is not 2^m with 1 <= m <= 16")
            if self.reduction == 0:
                object.__setattr__(self, "reduction", default_reduction(m))
            if self.reduction.bit_length() - 1 != m or not is_irreducible(self.reduction):
                raise ValidationError(
                    f"reduction {self.reduction:#x} is not irreducible of degree {m}"
                )
        else:
            raise ValidationError(f"unknown field kind {self.kind!r}")

    @classmethod
    def prime(cls, p: int) -> FieldSpec:
        return cls("prime", p)

    @classmethod
    def binary(cls, m: int, reduction: int = 0) -> FieldSpec:
        if not 1 <= m <= MAX_BINARY_DEGREE:
            raise ValidationError(f"binary extension degree {m} outside [1, 16]")
        return cls("binary", 1 << m, reduction)

    @classmethod
    def parse(cls, text: str) -> FieldSpec:
        """Accepts ``"2"``, ``"7"``, ``"16"``, ``"2^16"``, ``"GF(2^4)"``.

        Powers of two above 2 become binary extension fields; q = 2 is the
        prime field.
        """
        s = text.strip().lower().replace(" ", "")
        m = re.fullmatch(r"(?:gf\()?(\d+)(?:\^(\d+))?\)?", s)
        if not m or (s.startswith("gf(") != s.endswith(")")):
            raise ValidationError(f"cannot parse field {text!r}")
        base, exp = int(m.group(1)), m.group(2)
        q = base ** int(exp) if exp is not None else base
        if q == 2 or is_prime(q):
            return cls.prime(q)
        if q & (q - 1) == 0:
            return cls.binary(q.bit_length() - 1)
        raise ValidationError(f"q={q} is neither prime nor a power of two")

    def __str__(self) -> str:
        if self.kind == "prime":
            return f"GF({self.q})"
        return f"GF(2^{self.degree})"

    @property
    def degree(self) -> int:
        return 1 if self.kind == "prime" else self.q.bit_length() - 1

    @property
    def char2(self) -> bool:
        return self.q % 2 == 0

    @cached_property
    def _tables(self) -> tuple[np.ndarray, np.ndarray]:
        return _log_tables(self.q, self.reduction)

    @cached_property
    def _exact_matmul_limit(self) -> int:
        # longest inner dimension for which a plain int64 matmul cannot overflow
        if self.kind == "binary" and self.q > 2:
            return 0
        return (2**62) // max(1, (self.q - 1) ** 2)

    # -- validation -------------------------------------------------------

    def check(self, a, what: str = "element") -> np.ndarray:
        arr = np.asarray(a)
        if arr.dtype.kind not in "iu":
            raise ValidationError(f"{what} must be integers, got dtype {arr.dtype}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.q):
            raise ValidationError(f"{what} not canonical in [0, {self.q})")
        return arr.astype(np.int64, copy=False)

    # -- elementwise ------------------------------------------------------

    def add(self, a, b):
        if self.char2:
            return np.bitwise_xor(a, b)
        return np.add(a, b) % self.q

    def sub(self, a, b):
        if self.char2:
            return np.bitwise_xor(a, b)
        return np.subtract(a, b) % self.q

    def neg(self, a):
        if self.char2:
            return np.asarray(a, dtype=np.int64)
        return np.negative(a) % self.q

    def mul(self, a, b):
        if self.kind == "prime":
            return np.multiply(a, b, dtype=np.int64) % self.q
        if self.q == 2:
            return np.bitwise_and(a, b)
        exp, log = self._tables
        return exp[log[a] + log[b]]

    def inv(self, a):
        arr = np.asarray(a, dtype=np.int64)
        if np.any(arr == 0):
            raise ZeroDivisionError("0 has no multiplicative inverse")
        if self.kind == "binary":
            exp, log = self._tables
            return exp[(self.q - 1) - log[arr]]
        # Fermat: a^(p-2), squaring with int64 products < 2^62
        result = np.ones_like(arr)
        base = arr % self.q
        e = self.q - 2
        while e:
            if e & 1:
                result = result * base % self.q
            base = base * base % self.q
            e >>= 1
        return result

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    # -- reductions and products -----------------------------------------

    def sum(self, a, axis=None):
        if self.char2:
            return np.bitwise_xor.reduce(np.asarray(a, dtype=np.int64), axis=axis)
        return np.sum(a, axis=axis, dtype=np.int64) % self.q

    def dot(self, a, b):
        return self.sum(self.mul(a, b), axis=-1)

    def matmul(self, a, b) -> np.ndarray:
        """Field matrix product over the last two axes (batched like ``@``)."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if a.shape[-1] <= self._exact_matmul_limit:
            return (a @ b) % self.q
        return self.sum(self.mul(a[..., :, :, None], b[..., None, :, :]), axis=-2)

    def axpy(self, y, alpha, x):
        return self.add(y, self.mul(alpha, x))

    def random(self, rng: np.random.Generator, size=None):
        return rng.integers(0, self.q, size=size, dtype=np.int64)

    # -- row reduction ----------------------------------------------------

    def rref(self, m, ncols: int | None = None) -> tuple[np.ndarray, list[int]]:
        """Reduced row echelon form and pivot columns.

        Columns are scanned left to right; the pivot for each column is the
        lowest-index remaining row with a nonzero entry there.  Only the first
        ``ncols`` columns are eligible as pivots (for augmented systems).
        """
        r = np.array(m, dtype=np.int64, copy=True)
        if r.ndim != 2:
            raise ValidationError("rref expects a 2-D matrix")
        rows, cols = r.shape
        if ncols is None:
            ncols = cols
        pivots: list[int] = []
        row = 0
        for col in range(ncols):
            if row == rows:
                break
            nz = np.flatnonzero(r[row:, col])
            if nz.size == 0:
                continue
            p = row + int(nz[0])
            if p != row:
                r[[row, p]] = r[[p, row]]
            r[row] = self.mul(r[row], self.inv(r[row, col]))
            factors = r[:, col].copy()
            factors[row] = 0
            r = self.sub(r, self.mul(factors[:, None], r[row][None, :]))
            pivots.append(col)
            row += 1
        return r, pivots

    def rank(self, m) -> int:
        m = np.asarray(m)
        if m.size == 0:
            return 0
        return len(self.rref(m)[1])

    def solve(self, coeffs, rhs) -> np.ndarray:
        """Return X with coeffs @ X == rhs for square, full-rank coeffs."""
        coeffs = np.asarray(coeffs, dtype=np.int64)
        rhs = np.asarray(rhs, dtype=np.int64)
        k = coeffs.shape[0]
        if coeffs.shape != (k, k) or rhs.shape[0] != k:
            raise ValidationError("solve expects a k x k system with k right-hand rows")
        r, pivots = self.rref(np.hstack([coeffs, rhs.reshape(k, -1)]), ncols=k)
        if len(pivots) < k:
            raise SingularMatrixError(f"coefficient matrix has rank {len(pivots)} < {k}")
        return r[:, k:].reshape(rhs.shape)


# -- checked single-operation entry points -----------------------------------


def field_arith(spec: FieldSpec, op: str, a: int, b: int | None = None) -> int:
    spec.check(a)
    if op == "inv":
        if b is not None:
            raise ValidationError("inv takes a single operand")
        return int(spec.inv(a))
    if b is None:
        raise ValidationError(f"{op} needs two operands")
    spec.check(b)
    try:
        fn = {"add": spec.add, "sub": spec.sub, "mul": spec.mul}[op]
    except KeyError:
        raise ValidationError(f"unknown field operation {op!r}") from None
    return int(fn(a, b))


def _same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 1 or a.shape != b.shape:
        raise ValidationError(f"vector shapes differ: {a.shape} vs {b.shape}")


def vec_dot(a, b, spec: FieldSpec) -> int:
    a, b = spec.check(a, "vector"), spec.check(b, "vector")
    _same_length(a, b)
    return int(spec.dot(a, b))


def vec_axpy(y, alpha: int, x, spec: FieldSpec) -> np.ndarray:
    """y + alpha * x, componentwise."""
    y, x = spec.check(y, "vector"), spec.check(x, "vector")
    spec.check(alpha)
    _same_length(y, x)
    return spec.axpy(y, alpha, x)


def mat_rank(m, spec: FieldSpec) -> int:
    return spec.rank(spec.check(m, "matrix"))


def mat_solve(coeffs, payloads, spec: FieldSpec) -> np.ndarray:
    return spec.solve(spec.check(coeffs, "matrix"), spec.check(payloads, "matrix"))


def sample_element(spec: FieldSpec, rng: np.random.Generator) -> int:
    return int(spec.random(rng))
