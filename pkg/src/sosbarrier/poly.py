"""Sparse multivariate polynomial arithmetic over exact rationals.

Every other layer of the toolkit consumes these types: dynamics entries,
set constraints, certificate multipliers and Gram expansions are all
``Polynomial`` instances.  Coefficients are ``fractions.Fraction`` so that
certificate identities can be replayed exactly; conversion to float happens
only when a semidefinite program is assembled.

Grammar accepted by :func:`parse_poly` (and emitted by ``Polynomial.__str__``)::

    expr     := ['-'] term ((' + ' | ' - ') term)*
    term     := factor ('*' factor)*
    factor   := base ['^' INT]
    base     := RATIONAL | NAME | '(' expr ')' | '-' factor
    RATIONAL := INT | INT '.' INT | INT '/' INT

The ``p/q`` rational literal is an extension over plain decimal input so the
printer can round-trip exact coefficients such as ``1/3``.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

Scalar = Union[int, float, Fraction]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:/\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^()]))"
)


def _coerce(value: Scalar) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    raise TypeError(f"cannot use {type(value).__name__} as a coefficient")


class Monomial:
    """Product of variable powers, e.g. ``x1^2*x2``.

    Stored as a tuple of ``(variable, exponent)`` pairs sorted by variable
    name with all exponents positive; the empty tuple is the unit monomial.
    """

    __slots__ = ("exps", "_hash")

    def __init__(self, exps: Mapping[str, int] | Iterable[tuple[str, int]] = ()):
        items = exps.items() if isinstance(exps, Mapping) else exps
        cleaned = []
        for var, e in items:
            if e < 0:
                raise ValueError(f"negative exponent {e} for {var}")
            if e > 0:
                cleaned.append((var, int(e)))
        self.exps: tuple[tuple[str, int], ...] = tuple(sorted(cleaned))
        self._hash = hash(self.exps)

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.exps)

    def exponent(self, var: str) -> int:
        for v, e in self.exps:
            if v == var:
                return e
        return 0

    def variables(self) -> set[str]:
        return {v for v, _ in self.exps}

    def __mul__(self, other: "Monomial") -> "Monomial":
        merged = dict(self.exps)
        for v, e in other.exps:
            merged[v] = merged.get(v, 0) + e
        return Monomial(merged)

    def diff(self, var: str) -> tuple[int, "Monomial"]:
        """Return ``(k, m)`` with d(self)/d(var) = k*m."""
        e = self.exponent(var)
        if e == 0:
            return 0, Monomial()
        rest = {v: x for v, x in self.exps if v != var}
        if e > 1:
            rest[var] = e - 1
        return e, Monomial(rest)

    def grlex_key(self, var_order: Sequence[str]) -> tuple:
        vec = tuple(self.exponent(v) for v in var_order)
        return (self.degree, vec)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return isinstance(other, Monomial) and self.exps == other.exps

    def __repr__(self) -> str:
        if not self.exps:
            return "1"
        return "*".join(v if e == 1 else f"{v}^{e}" for v, e in self.exps)


_UNIT = Monomial()


class Polynomial:
    """Sparse polynomial with exact rational coefficients.

    Immutable after construction: every operation returns a fresh instance
    in canonical form (zero coefficients stripped, terms iterated in
    descending graded-lex order relative to the declared variable order).
    """

    __slots__ = ("terms", "vars")

    def __init__(
        self,
        terms: Mapping[Monomial, Scalar] | None = None,
        vars: Sequence[str] = (),
    ):
        cleaned: dict[Monomial, Fraction] = {}
        for mono, coef in (terms or {}).items():
            c = _coerce(coef)
            if c != 0:
                cleaned[mono] = c
        declared = list(dict.fromkeys(vars))
        used = set()
        for mono in cleaned:
            used |= mono.variables()
        missing = used - set(declared)
        if missing:
            declared.extend(sorted(missing))
        self.terms: dict[Monomial, Fraction] = cleaned
        self.vars: tuple[str, ...] = tuple(declared)

    # -- constructors -------------------------------------------------

    @classmethod
    def constant(cls, value: Scalar, vars: Sequence[str] = ()) -> "Polynomial":
        return cls({_UNIT: value}, vars)

    @classmethod
    def variable(cls, name: str, vars: Sequence[str] = ()) -> "Polynomial":
        return cls({Monomial({name: 1}): 1}, vars or (name,))

    @classmethod
    def zero(cls, vars: Sequence[str] = ()) -> "Polynomial":
        return cls({}, vars)

    # -- canonical structure ------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree 0 by convention."""
        if not self.terms:
            return 0
        return max(m.degree for m in self.terms)

    def sorted_terms(self) -> list[tuple[Monomial, Fraction]]:
        """Terms in descending graded-lex order over ``self.vars``."""
        return sorted(
            self.terms.items(),
            key=lambda kv: kv[0].grlex_key(self.vars),
            reverse=True,
        )

    def coefficient(self, mono: Monomial) -> Fraction:
        return self.terms.get(mono, Fraction(0))

    def max_abs_coefficient(self) -> Fraction:
        if not self.terms:
            return Fraction(0)
        return max(abs(c) for c in self.terms.values())

    def _merge_vars(self, other: "Polynomial") -> tuple[str, ...]:
        if other.vars == self.vars:
            return self.vars
        return tuple(dict.fromkeys(self.vars + other.vars))

    # -- ring operations ----------------------------------------------

    def __add__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, Fraction)):
            other = Polynomial.constant(other, self.vars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        merged = dict(self.terms)
        for m, c in other.terms.items():
            merged[m] = merged.get(m, Fraction(0)) + c
        return Polynomial(merged, self._merge_vars(other))

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self.terms.items()}, self.vars)

    def __sub__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, Fraction)):
            other = Polynomial.constant(other, self.vars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, Fraction)):
            c = _coerce(other)
            return Polynomial({m: k * c for m, k in self.terms.items()}, self.vars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = m1 * m2
                out[m] = out.get(m, Fraction(0)) + c1 * c2
        return Polynomial(out, self._merge_vars(other))

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "Polynomial":
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        result = Polynomial.constant(1, self.vars)
        base = self
        e = exponent
        while e:
            if e & 1:
                result = result * base
            base = base * base if e > 1 else base
            e >>= 1
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float, Fraction)):
            other = Polynomial.constant(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self) -> int:
        return hash(frozenset(self.terms.items()))

    # -- calculus ------------------------------------------------------

    def diff(self, var: str) -> "Polynomial":
        out: dict[Monomial, Fraction] = {}
        for m, c in self.terms.items():
            k, dm = m.diff(var)
            if k:
                out[dm] = out.get(dm, Fraction(0)) + k * c
        return Polynomial(out, self.vars)

    def gradient(self) -> "PolyVector":
        """Partial derivatives in declared variable order."""
        return PolyVector([self.diff(v) for v in self.vars])

    def lie_derivative(self, field: "PolyVector | Sequence[Polynomial]") -> "Polynomial":
        """Gradient dotted with a vector field over the same variables."""
        entries = list(field)
        if len(entries) != len(self.vars):
            raise ValueError(
                f"field has {len(entries)} entries for {len(self.vars)} variables"
            )
        out = Polynomial.zero(self.vars)
        for v, f in zip(self.vars, entries):
            out = out + self.diff(v) * f
        return out

    # -- evaluation and substitution ------------------------------------

    def evaluate(self, point: Sequence[Scalar] | Mapping[str, Scalar]):
        """Horner-style evaluation; exact when given Fraction/int inputs."""
        if isinstance(point, Mapping):
            values = point
        else:
            if len(point) != len(self.vars):
                raise ValueError(
                    f"point has {len(point)} coordinates for {len(self.vars)} variables"
                )
            values = dict(zip(self.vars, point))
        return _horner(self.sorted_terms(), list(self.vars), values)

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        """Vectorized float evaluation on an ``(N, n)`` array of points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.shape[1] != len(self.vars):
            raise ValueError("point dimension mismatch")
        index = {v: i for i, v in enumerate(self.vars)}
        out = np.zeros(pts.shape[0])
        for m, c in self.terms.items():
            term = np.full(pts.shape[0], float(c))
            for v, e in m.exps:
                term = term * pts[:, index[v]] ** e
            out += term
        return out

    def substitute(self, bindings: Mapping[str, "Polynomial | Scalar"]) -> "Polynomial":
        """Exact composition; unbound variables pass through unchanged."""
        subs: dict[str, Polynomial] = {}
        for var, expr in bindings.items():
            if isinstance(expr, (int, float, Fraction)):
                expr = Polynomial.constant(expr)
            subs[var] = expr
        out = Polynomial.zero()
        for m, c in self.terms.items():
            term = Polynomial.constant(c)
            for v, e in m.exps:
                base = subs.get(v, Polynomial.variable(v))
                term = term * base**e
            out = out + term
        keep = [v for v in self.vars if v not in subs]
        return Polynomial(out.terms, tuple(keep) + out.vars)

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        return self.substitute(
            {old: Polynomial.variable(new) for old, new in mapping.items()}
        )

    def with_vars(self, vars: Sequence[str]) -> "Polynomial":
        """Re-declare the ambient variable list (must cover all used vars)."""
        return Polynomial(self.terms, vars)

    def to_float_terms(self) -> dict[Monomial, float]:
        return {m: float(c) for m, c in self.terms.items()}

    # -- printing --------------------------------------------------------

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts: list[str] = []
        for m, c in self.sorted_terms():
            mono = repr(m)
            if mono == "1":
                body = _format_coef(abs(c))
            elif abs(c) == 1:
                body = mono
            else:
                body = f"{_format_coef(abs(c))}*{mono}"
            if not parts:
                parts.append(body if c > 0 else f"-{body}")
            else:
                parts.append(f"+ {body}" if c > 0 else f"- {body}")
        return " ".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial({self})"


def _format_coef(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def _horner(terms, order: list[str], values: Mapping[str, Scalar]):
    """Evaluate recursively, factoring out powers of the first variable."""
    if not terms:
        return 0
    if not order:
        return sum(c for _, c in terms)
    var, rest = order[0], order[1:]
    groups: dict[int, list] = {}
    for m, c in terms:
        e = m.exponent(var)
        reduced = Monomial({v: x for v, x in m.exps if v != var})
        groups.setdefault(e, []).append((reduced, c))
    x = values[var]
    result = 0
    for e in sorted(groups, reverse=True):
        inner = _horner(groups[e], rest, values)
        if isinstance(result, int) and result == 0:
            result = inner
            prev = e
            continue
        result = result * x ** (prev - e) + inner
        prev = e
    return result * x**prev if groups else result


# -- parsing -------------------------------------------------------------


class PolyParseError(ValueError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise PolyParseError(f"unexpected character {text[pos]!r} at position {pos}")
        if m.lastgroup is not None:
            tokens.append((m.lastgroup, m.group(m.lastgroup)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]], vars: Sequence[str]):
        self.tokens = tokens
        self.pos = 0
        self.vars = tuple(vars)
        self.varset = set(vars)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise PolyParseError(f"expected {op!r}, found {val!r}")

    def parse_expr(self) -> Polynomial:
        result = self.parse_term()
        while True:
            kind, val = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                term = self.parse_term()
                result = result + term if val == "+" else result - term
            else:
                return result

    def parse_term(self) -> Polynomial:
        result = self.parse_factor()
        while True:
            kind, val = self.peek()
            if kind == "op" and val == "*":
                self.take()
                result = result * self.parse_factor()
            else:
                return result

    def parse_factor(self) -> Polynomial:
        kind, val = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return -self.parse_factor()
        base = self.parse_base()
        kind, val = self.peek()
        if kind == "op" and val == "^":
            self.take()
            kind, val = self.take()
            if kind != "num" or not val.isdigit():
                raise PolyParseError(f"exponent must be a nonnegative integer, got {val!r}")
            return base ** int(val)
        return base

    def parse_base(self) -> Polynomial:
        kind, val = self.take()
        if kind == "num":
            if "/" in val:
                num, den = val.split("/")
                return Polynomial.constant(Fraction(int(num), int(den)), self.vars)
            if "." in val:
                whole, frac = val.split(".")
                den = 10 ** len(frac)
                return Polynomial.constant(
                    Fraction(int(whole) * den + int(frac), den), self.vars
                )
            return Polynomial.constant(int(val), self.vars)
        if kind == "name":
            if val not in self.varset:
                raise PolyParseError(f"undeclared variable {val!r}")
            return Polynomial.variable(val, self.vars)
        if kind == "op" and val == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        raise PolyParseError(f"unexpected token {val!r}")


def parse_poly(text: str, vars: Sequence[str]) -> Polynomial:
    """Parse a polynomial expression over the declared variables."""
    tokens = _tokenize(text)
    if not tokens:
        raise PolyParseError("empty polynomial expression")
    parser = _Parser(tokens, vars)
    poly = parser.parse_expr()
    if parser.pos != len(tokens):
        raise PolyParseError(f"trailing input at token {parser.peek()[1]!r}")
    return poly.with_vars(tuple(vars) + poly.vars)


# -- vectors and matrices --------------------------------------------------


class PolyVector:
    """Column vector of polynomials."""

    def __init__(self, entries: Iterable[Polynomial]):
        self.entries = list(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> Polynomial:
        return self.entries[i]

    def dot(self, other: "PolyVector | Sequence") -> Polynomial:
        other = list(other)
        if len(other) != len(self.entries):
            raise ValueError("dimension mismatch in dot product")
        out = Polynomial.zero()
        for a, b in zip(self.entries, other):
            out = out + a * b
        return out

    def __add__(self, other: "PolyVector") -> "PolyVector":
        if len(other) != len(self):
            raise ValueError("dimension mismatch")
        return PolyVector([a + b for a, b in zip(self, other)])

    def __repr__(self) -> str:
        return "PolyVector([" + ", ".join(str(e) for e in self.entries) + "])"


class PolyMatrix:
    """Rectangular matrix of polynomials (rows of equal length)."""

    def __init__(self, rows: Iterable[Iterable[Polynomial]]):
        self.rows = [list(r) for r in rows]
        widths = {len(r) for r in self.rows}
        if len(widths) > 1:
            raise ValueError("ragged polynomial matrix")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.rows[0]) if self.rows else 0)

    def __getitem__(self, idx: tuple[int, int]) -> Polynomial:
        return self.rows[idx[0]][idx[1]]

    def column(self, j: int) -> PolyVector:
        return PolyVector([r[j] for r in self.rows])

    def matvec(self, vec: Sequence) -> PolyVector:
        n_rows, n_cols = self.shape
        if len(list(vec)) != n_cols:
            raise ValueError("dimension mismatch in matvec")
        return PolyVector([PolyVector(r).dot(vec) for r in self.rows])

    def left_mul(self, row: "PolyVector | Sequence") -> PolyVector:
        """Row vector times matrix: returns a vector of column dots."""
        row = list(row)
        if len(row) != self.shape[0]:
            raise ValueError("dimension mismatch in left multiplication")
        return PolyVector([self.column(j).dot(row) for j in range(self.shape[1])])

    def __repr__(self) -> str:
        return f"PolyMatrix({self.rows!r})"


def monomials_up_to(vars: Sequence[str], degree: int) -> list[Monomial]:
    """All monomials over ``vars`` of total degree at most ``degree``,
    ascending graded-lex."""
    vars = list(vars)
    out: list[Monomial] = []

    def rec(prefix: dict[str, int], remaining: list[str], budget: int):
        if not remaining:
            out.append(Monomial(prefix))
            return
        var = remaining[0]
        for e in range(budget + 1):
            nxt = dict(prefix)
            if e:
                nxt[var] = e
            rec(nxt, remaining[1:], budget - e)

    rec({}, vars, degree)
    out.sort(key=lambda m: m.grlex_key(vars))
    return out
