"""Sparse multivariate polynomials and matrices of polynomials.

Polynomials are stored as a map from exponent tuples to float coefficients.
Terms are kept in graded-lexicographic order so printing and hashing are
deterministic. Everything here is immutable.
"""

from __future__ import annotations

import math
import re
from itertools import combinations_with_replacement
from typing import Mapping, Sequence

import numpy as np


def _grlex_key(exp: tuple[int, ...]) -> tuple:
    # higher total degree first, then lexicographically larger first
    return (-sum(exp), tuple(-e for e in exp))


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` real variables."""

    __slots__ = ("nvars", "_terms", "_compiled")

    def __init__(self, nvars: int, terms: Mapping[tuple[int, ...], float] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        self.nvars = int(nvars)
        clean: dict[tuple[int, ...], float] = {}
        for exp, c in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != self.nvars:
                raise ValueError(f"exponent {exp} has length {len(exp)}, expected {self.nvars}")
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent in {exp}")
            c = float(c)
            if not math.isfinite(c):
                raise ValueError("non-finite coefficient")
            if c != 0.0:
                clean[exp] = clean.get(exp, 0.0) + c
                if clean[exp] == 0.0:
                    del clean[exp]
        self._terms = dict(sorted(clean.items(), key=lambda kv: _grlex_key(kv[0])))
        self._compiled = None

    # -- constructors ---------------------------------------------------

    @classmethod
    def constant(cls, nvars: int, c: float) -> Polynomial:
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def zero(cls, nvars: int) -> Polynomial:
        return cls(nvars)

    @classmethod
    def var(cls, nvars: int, index: int) -> Polynomial:
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} variables")
        exp = [0] * nvars
        exp[index] = 1
        return cls(nvars, {tuple(exp): 1.0})

    @classmethod
    def monomial(cls, exp: Sequence[int], c: float = 1.0) -> Polynomial:
        return cls(len(exp), {tuple(exp): c})

    # -- basic accessors ------------------------------------------------

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        if not self._terms:
            return 0
        return max(sum(e) for e in self._terms)

    def coefficient(self, exp: Sequence[int]) -> float:
        return self._terms.get(tuple(exp), 0.0)

    def constant_term(self) -> float:
        return self._terms.get((0,) * self.nvars, 0.0)

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self._terms)

    def variables_used(self) -> set[int]:
        return {i for e in self._terms for i, k in enumerate(e) if k}

    # -- arithmetic -----------------------------------------------------

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(f"nvars mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for exp, c in other._terms.items():
            out[exp] = out.get(exp, 0.0) + c
        return Polynomial(self.nvars, {e: c for e, c in out.items() if c != 0.0})

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.nvars, {e: c * float(other) for e, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[tuple[int, ...], float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.nvars, {e: c for e, c in out.items() if c != 0.0})

    __rmul__ = __mul__

    def __pow__(self, k: int) -> Polynomial:
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __truediv__(self, c):
        if not isinstance(c, (int, float, np.floating, np.integer)):
            return NotImplemented
        return self * (1.0 / float(c))

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self.nvars, tuple(self._terms.items())))

    def allclose(self, other: Polynomial, atol: float = 1e-12) -> bool:
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.coefficient(k) - other.coefficient(k)) <= atol for k in keys)

    # -- calculus / substitution -----------------------------------------

    def diff(self, var_index: int) -> Polynomial:
        if not 0 <= var_index < self.nvars:
            raise IndexError(f"variable index {var_index} out of range for {self.nvars} variables")
        out = {}
        for exp, c in self._terms.items():
            k = exp[var_index]
            if k:
                e = list(exp)
                e[var_index] = k - 1
                out[tuple(e)] = c * k
        return Polynomial(self.nvars, out)

    def bind(self, var_index: int, value: float) -> Polynomial:
        """Substitute a constant for one variable and drop it (nvars shrinks by one)."""
        if not 0 <= var_index < self.nvars:
            raise IndexError(f"variable index {var_index} out of range")
        out: dict[tuple[int, ...], float] = {}
        for exp, c in self._terms.items():
            e = exp[:var_index] + exp[var_index + 1:]
            out[e] = out.get(e, 0.0) + c * float(value) ** exp[var_index]
        return Polynomial(self.nvars - 1, {e: c for e, c in out.items() if c != 0.0})

    def embed(self, nvars: int, positions: Sequence[int]) -> Polynomial:
        """Re-express in a larger variable space; variable i goes to ``positions[i]``."""
        if len(positions) != self.nvars:
            raise ValueError("positions must list one target index per variable")
        out = {}
        for exp, c in self._terms.items():
            e = [0] * nvars
            for i, k in enumerate(exp):
                e[positions[i]] += k
            out[tuple(e)] = c
        return Polynomial(nvars, out)

    # -- evaluation -----------------------------------------------------

    def _compile(self):
        if self._compiled is None:
            if self._terms:
                exps = np.array(list(self._terms.keys()), dtype=np.int64).reshape(len(self._terms), self.nvars)
                coeffs = np.array(list(self._terms.values()), dtype=float)
            else:
                exps = np.zeros((0, self.nvars), dtype=np.int64)
                coeffs = np.zeros(0)
            self._compiled = (exps, coeffs)
        return self._compiled

    def __call__(self, x) -> float:
        return poly_eval(self, x)

    def eval_many(self, X) -> np.ndarray:
        """Evaluate at each row of an (N, nvars) array."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.nvars:
            raise ValueError(f"expected points of shape (N, {self.nvars}), got {X.shape}")
        exps, coeffs = self._compile()
        if not len(coeffs):
            return np.zeros(X.shape[0])
        mono = np.ones((X.shape[0], len(coeffs)))
        for i in range(self.nvars):
            col = exps[:, i]
            if col.any():
                mono *= X[:, i:i + 1] ** col[None, :]
        return mono @ coeffs

    # -- printing -------------------------------------------------------

    def to_string(self, names: Sequence[str] | None = None) -> str:
        names = list(names) if names is not None else [f"x{i + 1}" for i in range(self.nvars)]
        if len(names) != self.nvars:
            raise ValueError("need one name per variable")
        if not self._terms:
            return "0"
        parts = []
        for exp, c in self._terms.items():
            factors = []
            for name, k in zip(names, exp):
                if k == 1:
                    factors.append(name)
                elif k > 1:
                    factors.append(f"{name}^{k}")
            mag = abs(c)
            if factors:
                body = "*".join(factors) if mag == 1.0 else repr(mag) + "*" + "*".join(factors)
            else:
                body = repr(mag)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            out += f" {sign} {body}"
        return out

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r})"


def poly_eval(p: Polynomial, x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != p.nvars:
        raise ValueError(f"point has dimension {x.shape[0]}, polynomial has {p.nvars} variables")
    exps, coeffs = p._compile()
    if not len(coeffs):
        return 0.0
    return float(coeffs @ np.prod(x[None, :] ** exps, axis=1))


def poly_diff(p: Polynomial, var_index: int) -> Polynomial:
    return p.diff(var_index)


def monomial_basis(nvars: int, max_degree: int) -> list[tuple[int, ...]]:
    """All exponent vectors of total degree <= max_degree, in graded-lex order."""
    out = []
    for d in range(max_degree + 1):
        for combo in combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return sorted(set(out), key=_grlex_key)


class PolyMatrix:
    """Matrix of polynomials sharing one variable space."""

    __slots__ = ("rows", "cols", "nvars", "symmetric", "_entries")

    def __init__(self, entries: Sequence[Sequence[Polynomial]], symmetric: bool = False):
        rows = len(entries)
        if rows == 0:
            raise ValueError("empty PolyMatrix")
        cols = len(entries[0])
        if any(len(r) != cols for r in entries):
            raise ValueError("ragged PolyMatrix")
        nvars = entries[0][0].nvars
        for r in entries:
            for p in r:
                if not isinstance(p, Polynomial) or p.nvars != nvars:
                    raise ValueError("all entries must be Polynomials with the same nvars")
        if symmetric:
            if rows != cols:
                raise ValueError("symmetric PolyMatrix must be square")
            for i in range(rows):
                for j in range(i + 1, cols):
                    if entries[i][j] != entries[j][i]:
                        raise ValueError(f"entries ({i},{j}) and ({j},{i}) differ")
        self.rows, self.cols, self.nvars = rows, cols, nvars
        self.symmetric = bool(symmetric)
        self._entries = tuple(tuple(r) for r in entries)

    @classmethod
    def from_upper(cls, n: int, upper: Mapping[tuple[int, int], Polynomial], nvars: int) -> PolyMatrix:
        grid = [[Polynomial.zero(nvars) for _ in range(n)] for _ in range(n)]
        for (i, j), p in upper.items():
            if i > j:
                i, j = j, i
            grid[i][j] = p
            grid[j][i] = p
        return cls(grid, symmetric=True)

    @classmethod
    def identity(cls, n: int, nvars: int) -> PolyMatrix:
        return cls.from_upper(n, {(i, i): Polynomial.constant(nvars, 1.0) for i in range(n)}, nvars)

    @classmethod
    def constant(cls, A, nvars: int) -> PolyMatrix:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        sym = A.shape[0] == A.shape[1] and np.array_equal(A, A.T)
        return cls([[Polynomial.constant(nvars, v) for v in row] for row in A], symmetric=sym)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __getitem__(self, ij) -> Polynomial:
        i, j = ij
        return self._entries[i][j]

    def entries(self) -> tuple[tuple[Polynomial, ...], ...]:
        return self._entries

    def map(self, fn, symmetric: bool | None = None) -> PolyMatrix:
        sym = self.symmetric if symmetric is None else symmetric
        return PolyMatrix([[fn(p) for p in row] for row in self._entries], symmetric=sym)

    def transpose(self) -> PolyMatrix:
        return PolyMatrix([[self._entries[i][j] for i in range(self.rows)] for j in range(self.cols)],
                          symmetric=self.symmetric)

    @property
    def T(self) -> PolyMatrix:
        return self.transpose()

    def __add__(self, other: PolyMatrix) -> PolyMatrix:
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        return PolyMatrix([[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self._entries, other._entries)],
                          symmetric=self.symmetric and other.symmetric)

    def __neg__(self) -> PolyMatrix:
        return self.map(lambda p: -p)

    def __sub__(self, other: PolyMatrix) -> PolyMatrix:
        return self + (-other)

    def scale(self, c) -> PolyMatrix:
        """Multiply every entry by a scalar or a Polynomial."""
        return self.map(lambda p: p * c)

    def __matmul__(self, other: PolyMatrix) -> PolyMatrix:
        if self.cols != other.rows:
            raise ValueError("shape mismatch in matmul")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = Polynomial.zero(self.nvars)
                for k in range(self.cols):
                    a, b = self._entries[i][k], other._entries[k][j]
                    if not a.is_zero() and not b.is_zero():
                        acc = acc + a * b
                row.append(acc)
            out.append(row)
        return PolyMatrix(out)

    def symmetrized(self) -> PolyMatrix:
        """Return (P + P')/2 flagged symmetric."""
        n = self.rows
        if n != self.cols:
            raise ValueError("not square")
        upper = {(i, j): (self._entries[i][j] + self._entries[j][i]) * 0.5
                 for i in range(n) for j in range(i, n)}
        return PolyMatrix.from_upper(n, upper, self.nvars)

    def diff(self, var_index: int) -> PolyMatrix:
        return self.map(lambda p: p.diff(var_index))

    def bind(self, var_index: int, value: float) -> PolyMatrix:
        return self.map(lambda p: p.bind(var_index, value))

    def __call__(self, x) -> np.ndarray:
        return polymatrix_eval(self, x)

    def eval_many(self, X) -> np.ndarray:
        """Evaluate at each row of X; returns an array of shape (N, rows, cols)."""
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], self.rows, self.cols))
        for i in range(self.rows):
            for j in range(self.cols):
                if self.symmetric and j < i:
                    out[:, i, j] = out[:, j, i]
                else:
                    out[:, i, j] = self._entries[i][j].eval_many(X)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        return self.shape == other.shape and self._entries == other._entries

    def __hash__(self) -> int:
        return hash(self._entries)

    def __repr__(self) -> str:
        return f"PolyMatrix({self.rows}x{self.cols}, nvars={self.nvars}, symmetric={self.symmetric})"


def polymatrix_eval(P: PolyMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != P.nvars:
        raise ValueError(f"point has dimension {x.shape[0]}, matrix has {P.nvars} variables")
    return P.eval_many(x[None, :])[0]


def lie_derivative(W: PolyMatrix, f: Sequence[Polynomial]) -> PolyMatrix:
    """Time derivative of W along x' = f(x): sum_i dW/dx_i * f_i.

    ``f`` may be shorter than ``W.nvars``; trailing variables are treated as
    constant parameters.
    """
    f = list(f)
    if not f or len(f) > W.nvars:
        raise ValueError(f"vector field of length {len(f)} does not fit {W.nvars} variables")
    if any(fi.nvars != W.nvars for fi in f):
        raise ValueError("vector field and matrix use different variable spaces")
    zero = Polynomial.zero(W.nvars)
    out = [[zero] * W.cols for _ in range(W.rows)]
    for i in range(W.rows):
        for j in range(W.cols):
            if W.symmetric and j < i:
                out[i][j] = out[j][i]
                continue
            acc = zero
            p = W[i, j]
            for k, fk in enumerate(f):
                d = p.diff(k)
                if not d.is_zero():
                    acc = acc + d * fk
            out[i][j] = acc
    return PolyMatrix(out, symmetric=W.symmetric)


# -- text syntax ----------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*^]))")


class PolySyntaxError(ValueError):
    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (column {column})")
        self.column = column


def _tokenize(text: str):
    pos = 0
    tokens = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise PolySyntaxError(f"unexpected character {text[pos]!r}", pos + 1)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    return tokens


def parse_polynomial(text: str, names: Sequence[str]) -> Polynomial:
    """Parse the sum-of-terms syntax, e.g. ``-psi - 1.5*phi^2 + delta``.

    Raises PolySyntaxError (with a 1-based column) or KeyError-like ValueError
    for identifiers not in ``names``.
    """
    index = {n: i for i, n in enumerate(names)}
    nv = len(names)
    toks = _tokenize(text)
    if not toks:
        raise PolySyntaxError("empty expression", 1)
    pos = 0
    result: dict[tuple[int, ...], float] = {}

    def peek():
        return toks[pos] if pos < len(toks) else (None, None, len(text) + 1)

    sign = 1.0
    first = True
    while True:
        kind, val, col = peek()
        if kind == "op" and val in "+-":
            sign = -1.0 if val == "-" else 1.0
            pos += 1
        elif not first:
            raise PolySyntaxError("expected '+' or '-'", col)
        coeff = sign
        exp = [0] * nv
        expect_factor = True
        had_factor = False
        while expect_factor:
            kind, val, col = peek()
            if kind == "num":
                coeff *= float(val)
                pos += 1
            elif kind == "ident":
                if val not in index:
                    raise UndeclaredIdentifier(val, col)
                pos += 1
                k = 1
                if peek()[0] == "op" and peek()[1] == "^":
                    pos += 1
                    kk, kv, kc = peek()
                    if kk != "num" or not kv.isdigit() or int(kv) < 1:
                        raise PolySyntaxError("exponent must be a positive integer", kc)
                    k = int(kv)
                    pos += 1
                exp[index[val]] += k
            else:
                raise PolySyntaxError("expected a number or identifier", col)
            had_factor = True
            if peek()[0] == "op" and peek()[1] == "*":
                pos += 1
            else:
                expect_factor = False
        assert had_factor
        e = tuple(exp)
        result[e] = result.get(e, 0.0) + coeff
        first = False
        sign = 1.0
        if pos >= len(toks):
            break
    return Polynomial(nv, {e: c for e, c in result.items() if c != 0.0})


class UndeclaredIdentifier(PolySyntaxError):
    def __init__(self, name: str, column: int):
        super().__init__(f"undeclared identifier {name!r}", column)
        self.name = name
