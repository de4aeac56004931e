"""Problem descriptions: control-affine dynamics, input polytopes,
semi-algebraic sets, HOCBF chains and trigonometric state lifting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .poly import Polynomial, PolyMatrix, PolyVector, parse_poly


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ControlAffineSystem:
    """Dynamics ``xdot = f(x) + g(x) u`` with polynomial ``f`` and ``g``."""

    f: PolyVector
    g: PolyMatrix
    state_vars: tuple[str, ...]

    def __post_init__(self):
        n = len(self.state_vars)
        if len(self.f) != n:
            raise ModelError(f"drift has {len(self.f)} entries for {n} states")
        if self.g.shape[0] != n:
            raise ModelError(f"input matrix has {self.g.shape[0]} rows for {n} states")

    @property
    def n(self) -> int:
        return len(self.state_vars)

    @property
    def input_count(self) -> int:
        return self.g.shape[1]

    def aligned(self, p: Polynomial) -> Polynomial:
        return p.with_vars(self.state_vars)

    def drift_at(self, x: np.ndarray) -> np.ndarray:
        return np.array([float(fi.with_vars(self.state_vars).evaluate(list(x))) for fi in self.f])

    def input_matrix_at(self, x: np.ndarray) -> np.ndarray:
        rows, cols = self.g.shape
        out = np.zeros((rows, cols))
        for i in range(rows):
            for j in range(cols):
                out[i, j] = float(self.g[i, j].with_vars(self.state_vars).evaluate(list(x)))
        return out


@dataclass(frozen=True)
class InputPolytope:
    """Input constraint set ``U = {u : A u <= c}``; empty ``A`` means all of R^m."""

    A: np.ndarray
    c: np.ndarray
    m: int

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.size == 0:
            A = np.zeros((0, self.m))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if A.shape != (len(c), self.m):
            raise ModelError(
                f"polytope shapes A{A.shape} c({len(c)},) inconsistent with m={self.m}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def is_unconstrained(self) -> bool:
        return self.A.shape[0] == 0

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    @classmethod
    def unconstrained(cls, m: int) -> "InputPolytope":
        return cls(np.zeros((0, m)), np.zeros(0), m)

    @classmethod
    def box(cls, m: int, bound: float) -> "InputPolytope":
        """Infinity-norm box ``|u_i| <= bound``."""
        A = np.vstack([np.eye(m), -np.eye(m)])
        return cls(A, np.full(2 * m, float(bound)), m)

    def contains(self, u: np.ndarray, tol: float = 1e-9) -> bool:
        if self.is_unconstrained:
            return True
        return bool(np.all(self.A @ np.asarray(u, dtype=float) <= self.c + tol))


@dataclass(frozen=True)
class SemiAlgebraicSet:
    """Union of intersections of polynomial super-level sets:
    ``C = U_i  /\\_j {x : b_ij(x) >= 0}``."""

    pieces: tuple[tuple[Polynomial, ...], ...]
    vars: tuple[str, ...]

    def __post_init__(self):
        if not self.pieces or any(not piece for piece in self.pieces):
            raise ModelError("semi-algebraic set needs at least one nonempty piece")
        aligned = tuple(
            tuple(b.with_vars(self.vars) for b in piece) for piece in self.pieces
        )
        object.__setattr__(self, "pieces", aligned)

    @classmethod
    def from_texts(cls, pieces: Sequence[Sequence[str]], vars: Sequence[str]) -> "SemiAlgebraicSet":
        return cls(
            tuple(tuple(parse_poly(t, vars) for t in piece) for piece in pieces),
            tuple(vars),
        )

    @classmethod
    def simple(cls, polys: Sequence[Polynomial], vars: Sequence[str]) -> "SemiAlgebraicSet":
        return cls((tuple(polys),), tuple(vars))

    @property
    def s(self) -> int:
        return len(self.pieces)

    @property
    def is_simple(self) -> bool:
        return self.s == 1

    def piece_sizes(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.pieces)

    def membership_margin(self, points: np.ndarray) -> np.ndarray:
        """max over pieces of (min over constraints) of b_ij; >= 0 inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best = np.full(pts.shape[0], -np.inf)
        for piece in self.pieces:
            margin = np.full(pts.shape[0], np.inf)
            for b in piece:
                margin = np.minimum(margin, b.evaluate_batch(pts))
            best = np.maximum(best, margin)
        return best


def build_system(
    f_texts: Sequence[str],
    g_texts: Sequence[Sequence[str]],
    A,
    c,
    vars: Sequence[str],
) -> tuple[ControlAffineSystem, InputPolytope]:
    """Parse and validate a control-affine system and its input polytope.

    ``g_texts`` is row-major ``n x m``; an unconstrained input is encoded by
    empty ``A`` and ``c``.
    """
    vars = tuple(vars)
    if len(f_texts) != len(vars):
        raise ModelError(f"{len(f_texts)} drift entries for {len(vars)} states")
    f = PolyVector([parse_poly(t, vars) for t in f_texts])
    rows = [[parse_poly(t, vars) for t in row] for row in g_texts]
    if len(rows) != len(vars):
        raise ModelError(f"{len(rows)} input-matrix rows for {len(vars)} states")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ModelError("ragged input matrix")
    g = PolyMatrix(rows)
    system = ControlAffineSystem(f, g, vars)
    polytope = InputPolytope(np.asarray(A, dtype=float), np.asarray(c, dtype=float), g.shape[1])
    return system, polytope


# -- HOCBF chains ----------------------------------------------------------


@dataclass(frozen=True)
class HocbfChain:
    """Chain ``b_0 = h``, ``b_i = L_f b_{i-1} + k_i * b_{i-1}`` for linear
    class-K functions ``kappa_i(s) = k_i s``."""

    b: tuple[Polynomial, ...]
    slopes: tuple[Fraction, ...]
    relative_degree: int

    def __post_init__(self):
        if len(self.b) != self.relative_degree:
            raise ModelError("chain length must equal the relative degree")
        if len(self.slopes) != self.relative_degree - 1:
            raise ModelError("need one slope per chain extension")
        if any(k <= 0 for k in self.slopes):
            raise ModelError("class-K slopes must be positive")


def build_hocbf_chain(
    system: ControlAffineSystem,
    h: Polynomial,
    kappa_slopes: Sequence[float | Fraction],
    max_degree: int = 10,
) -> HocbfChain:
    """Determine the relative degree symbolically and build the HOCBF chain.

    The relative degree d is the first index where ``L_g L_f^{d-1} h`` is not
    identically zero.  If that polynomial is nonconstant (so it may vanish
    somewhere) a warning is emitted: the textbook relative-degree assumption
    cannot be confirmed symbolically here.
    """
    h = system.aligned(h)
    slopes = [Fraction(k) if isinstance(k, (int, Fraction)) else Fraction(str(k)) for k in kappa_slopes]
    lf_power = h
    d = None
    for i in range(1, max_degree + 1):
        lg_row = [lf_power.lie_derivative(system.g.column(j)) for j in range(system.input_count)]
        if any(not p.is_zero for p in lg_row):
            d = i
            if any(not p.is_zero and p.degree > 0 for p in lg_row):
                warnings.warn(
                    "L_g L_f^{%d} h is not constant; relative degree may drop "
                    "where it vanishes" % (i - 1),
                    stacklevel=2,
                )
            break
        lf_power = lf_power.lie_derivative(system.f)
    if d is None:
        raise ModelError(f"relative degree exceeds the configured bound {max_degree}")
    if len(slopes) < d - 1:
        raise ModelError(f"need {d - 1} class-K slopes for relative degree {d}")
    slopes = slopes[: d - 1]

    chain = [h]
    for i in range(1, d):
        prev = chain[-1]
        chain.append(system.aligned(prev.lie_derivative(system.f) + slopes[i - 1] * prev))
    return HocbfChain(tuple(chain), tuple(slopes), d)


# -- trigonometric lifting -------------------------------------------------


@dataclass(frozen=True)
class LiftedSystem:
    """Polynomial system over ``(x_1..x_l, w_1..w_L)`` replacing trigonometric
    states, together with the circle invariants ``w_{2k-1}^2 + w_{2k}^2 = 1``."""

    system: ControlAffineSystem
    circle_constraints: tuple[Polynomial, ...]
    var_map: dict[str, tuple[str, str]] = field(default_factory=dict)

    @property
    def lifted_vars(self) -> tuple[str, ...]:
        return self.system.state_vars


def lift_trig(
    system: ControlAffineSystem,
    set_: SemiAlgebraicSet,
    trig_state_indices: Sequence[int],
) -> tuple[LiftedSystem, SemiAlgebraicSet]:
    """Lift angles into (sin, cos) pairs.

    ``system`` carries one drift entry and one input row per *original* state,
    already written as polynomials over the non-trig states and the lifted
    variables ``w1..wL`` (``w_{2k-1}`` = sin of the k-th angle, ``w_{2k}`` its
    cos).  The angle variables themselves must not appear.  The lifted system
    has state ``(x_nontrig, w)``; each ``w`` pair inherits the angle's rate
    (drift plus input terms) rotated onto the circle, so the circle polynomials
    are invariants of the lifted flow.
    """
    trig = sorted(set(trig_state_indices))
    n = system.n
    if any(i < 0 or i >= n for i in trig):
        raise ModelError("trig state index out of range")
    if not trig:
        return (
            LiftedSystem(system, ()),
            set_,
        )
    nontrig = [i for i in range(n) if i not in trig]
    angle_vars = [system.state_vars[i] for i in trig]
    keep_vars = [system.state_vars[i] for i in nontrig]

    L = 2 * len(trig)
    w_vars = [f"w{k}" for k in range(1, L + 1)]
    clash = set(w_vars) & set(system.state_vars)
    if clash:
        raise ModelError(f"lifted variable names already in use: {sorted(clash)}")
    lifted_vars = tuple(keep_vars) + tuple(w_vars)

    def check_no_angles(p: Polynomial, what: str) -> Polynomial:
        bad = {v for m in p.terms for v in m.variables()} & set(angle_vars)
        if bad:
            raise ModelError(
                f"{what} mentions trig state(s) {sorted(bad)} directly; supply "
                "polynomials over the lifted sin/cos variables instead"
            )
        return p.with_vars(lifted_vars)

    f_entries = [check_no_angles(system.f[i], f"drift entry {i}") for i in range(n)]
    g_rows = [
        [check_no_angles(system.g[i, j], f"input entry ({i},{j})") for j in range(system.input_count)]
        for i in range(n)
    ]

    new_f = [f_entries[i] for i in nontrig]
    new_g = [g_rows[i] for i in nontrig]
    circles = []
    var_map: dict[str, tuple[str, str]] = {}
    for k, idx in enumerate(trig):
        ws = Polynomial.variable(w_vars[2 * k], lifted_vars)
        wc = Polynomial.variable(w_vars[2 * k + 1], lifted_vars)
        rate = f_entries[idx]
        # sin' = cos * rate, cos' = -sin * rate; input terms rotate identically.
        new_f.append(wc * rate)
        new_g.append([wc * gj for gj in g_rows[idx]])
        new_f.append(-(ws * rate))
        new_g.append([-(ws * gj) for gj in g_rows[idx]])
        circles.append((ws * ws + wc * wc - 1).with_vars(lifted_vars))
        var_map[system.state_vars[idx]] = (w_vars[2 * k], w_vars[2 * k + 1])

    lifted = ControlAffineSystem(PolyVector(new_f), PolyMatrix(new_g), lifted_vars)
    lifted_pieces = tuple(
        tuple(check_no_angles(b, "set constraint") for b in piece) for piece in set_.pieces
    )
    lifted_set = SemiAlgebraicSet(lifted_pieces, lifted_vars)
    return LiftedSystem(lifted, tuple(circles), var_map), lifted_set
