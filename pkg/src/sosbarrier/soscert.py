"""Compile SOS feasibility templates into SDPs; decode and validate
certificates.

A template couples unknown polynomials (free or SOS-constrained, each with a
degree bound and variable set) through affine polynomial constraints of the
form ``sum_k coef_k * T_k(unknown_k) + constant`` that must be identically
zero or a sum of squares.  Compilation produces coefficient-matching equality
constraints over Gram-matrix entries and free coefficients; decoding inverts
a solver point back into polynomials with exact rational coefficients and a
symbolically replayed residual.  No certificate is ever trusted on solver
status alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .poly import Monomial, Polynomial, monomials_up_to
from .sdp import SdpConstraint, SdpProblem, SdpSolution

DEFAULT_CERT_TOL = 1e-6
DEFAULT_CLIP_TOL = 1e-8
_ROUND_DENOMS = (1, 6, 60, 420, 10**4, 10**5, 10**6)


class CompileInfeasible(ValueError):
    """The template is unsatisfiable for structural reasons (degree/parity)."""


class DecodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class UnknownPoly:
    name: str
    kind: str  # "sos" | "free"
    degree: int
    vars: tuple[str, ...]
    monomial_filter: Callable[[Monomial], bool] | None = None

    def __post_init__(self):
        if self.kind not in ("sos", "free"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "sos" and self.degree % 2:
            raise ValueError(f"SOS unknown {self.name} needs an even degree bound")
        if self.degree < 0:
            raise ValueError("degree bounds must be nonnegative")


Transform = Callable[[Monomial], Polynomial]


@dataclass
class TemplateTerm:
    coef: Polynomial
    unknown: str
    transform: Transform | None = None


@dataclass
class SosConstraint:
    """``sum_k coef_k * T_k(u_k) + constant``, required ``== 0`` or ``in SOS``."""

    terms: list[TemplateTerm]
    constant: Polynomial
    is_sos: bool
    label: str = ""


@dataclass
class SosTemplate:
    unknowns: list[UnknownPoly] = field(default_factory=list)
    constraints: list[SosConstraint] = field(default_factory=list)
    minimize: str | None = None  # name of a degree-0 free unknown
    trace_weight: float = 1.0

    def add_unknown(self, name, kind, degree, vars, monomial_filter=None) -> str:
        self.unknowns.append(UnknownPoly(name, kind, degree, tuple(vars), monomial_filter))
        return name

    def add_constraint(self, terms, constant, is_sos, label="") -> None:
        self.constraints.append(SosConstraint(list(terms), constant, is_sos, label))

    def unknown(self, name: str) -> UnknownPoly:
        for u in self.unknowns:
            if u.name == name:
                return u
        raise KeyError(name)

    def validate(self):
        names = [u.name for u in self.unknowns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate unknown names")
        referenced = {t.unknown for c in self.constraints for t in c.terms}
        if self.minimize:
            referenced.add(self.minimize)
        unused = set(names) - referenced
        if unused:
            raise ValueError(f"unreferenced unknowns: {sorted(unused)}")
        for c in self.constraints:
            for t in c.terms:
                if t.unknown not in names:
                    raise ValueError(f"constraint references unknown {t.unknown!r}")


def gram_basis(
    vars: Sequence[str],
    degree: int,
    parity_filter: Iterable[Monomial] | None = None,
) -> list[Monomial]:
    """Monomials of degree at most ``degree // 2`` over ``vars``.

    With ``parity_filter`` (the support of the target polynomial), the basis
    is trimmed by the Newton-polytope parity heuristic: keep ``u`` only when
    ``2u`` fits inside the per-variable exponent box and degree band of the
    support.  The box/band is an outer bound of the Newton polytope, so no
    monomial required by an SOS decomposition is ever removed.
    """
    if degree < 0 or degree % 2:
        raise ValueError("gram basis degree must be a nonnegative even integer")
    basis = monomials_up_to(vars, degree // 2)
    if parity_filter is None:
        return basis
    support = list(parity_filter)
    if not support:
        return [Monomial()]
    box: dict[str, int] = {}
    for m in support:
        for v, e in m.exps:
            box[v] = max(box.get(v, 0), e)
    dmax = max(m.degree for m in support)
    dmin = min(m.degree for m in support)
    lo, hi = dmin // 2, dmax // 2
    out = []
    for u in basis:
        if not (lo <= u.degree <= hi):
            continue
        if any(2 * e > box.get(v, 0) for v, e in u.exps):
            continue
        out.append(u)
    return out


@dataclass
class DecodingMap:
    template: SosTemplate
    unknown_blocks: dict[str, tuple[int, list[Monomial]]] = field(default_factory=dict)
    unknown_free: dict[str, tuple[list[int], list[Monomial]]] = field(default_factory=dict)
    slack_blocks: dict[str, tuple[int, list[Monomial]]] = field(default_factory=dict)


def _expand_entry(coef: Polynomial, base: Polynomial, transform: Transform | None) -> Polynomial:
    if transform is not None:
        base = sum((transform(m) * c for m, c in base.terms.items()), Polynomial.zero())
    return coef * base


def compile_sos_feasibility(template: SosTemplate) -> tuple[SdpProblem, DecodingMap]:
    """Coefficient-match every constraint; one PSD block per SOS unknown and
    per SOS constraint (its slack), free scalars for free unknowns.

    Raises :class:`CompileInfeasible` when a constant monomial cannot be
    matched by any unknown or slack at the given degree bounds.
    """
    template.validate()
    decoding = DecodingMap(template)
    blocks: list[int] = []
    n_free = 0
    free_slices: dict[str, tuple[list[int], list[Monomial]]] = {}
    obj_free_idx = None

    for u in template.unknowns:
        if u.kind == "sos":
            basis = gram_basis(u.vars, u.degree)
            if u.monomial_filter:
                basis = [m for m in basis if u.monomial_filter(m)]
            decoding.unknown_blocks[u.name] = (len(blocks), basis)
            blocks.append(len(basis))
        else:
            monos = monomials_up_to(u.vars, u.degree)
            if u.monomial_filter:
                monos = [m for m in monos if u.monomial_filter(m)]
            idxs = list(range(n_free, n_free + len(monos)))
            free_slices[u.name] = (idxs, monos)
            decoding.unknown_free[u.name] = (idxs, monos)
            if template.minimize == u.name:
                if monos != [Monomial()]:
                    raise ValueError("minimized unknown must be a degree-0 free scalar")
                obj_free_idx = idxs[0]
            n_free += len(monos)

    # rows[monomial] = (block entry coefs, free entry coefs); built per constraint.
    constraints: list[SdpConstraint] = []

    for ci, con in enumerate(template.constraints):
        label = con.label or f"c{ci}"
        rows: dict[Monomial, tuple[dict, dict]] = {}

        def row(mono: Monomial):
            if mono not in rows:
                rows[mono] = ({}, {})
            return rows[mono]

        const_coeffs: dict[Monomial, Fraction] = dict(con.constant.terms)

        for term in con.terms:
            if term.coef.is_zero:
                continue
            u = template.unknown(term.unknown)
            if u.kind == "free":
                idxs, monos = free_slices[u.name]
                for var_idx, m in zip(idxs, monos):
                    contrib = _expand_entry(term.coef, Polynomial({m: 1}), term.transform)
                    for mono, c in contrib.terms.items():
                        fr = row(mono)[1]
                        fr[var_idx] = fr.get(var_idx, Fraction(0)) + c
            else:
                blk, basis = decoding.unknown_blocks[u.name]
                if term.transform is not None:
                    raise ValueError("transforms are only supported on free unknowns")
                for a in range(len(basis)):
                    for b in range(a, len(basis)):
                        mult = 1 if a == b else 2
                        prod = Polynomial({basis[a] * basis[b]: mult})
                        contrib = term.coef * prod
                        for mono, c in contrib.terms.items():
                            br = row(mono)[0]
                            key = (blk, a, b)
                            br[key] = br.get(key, Fraction(0)) + c

        for mono, c in const_coeffs.items():
            row(mono)

        if con.is_sos:
            support = list(rows.keys()) or [Monomial()]
            deg = max(m.degree for m in support)
            deg += deg % 2
            svars = sorted({v for m in support for v in m.variables()})
            sbasis = gram_basis(svars, deg, parity_filter=support)
            if not sbasis:
                sbasis = [Monomial()]
            sblk = len(blocks)
            blocks.append(len(sbasis))
            decoding.slack_blocks[label] = (sblk, sbasis)
            for a in range(len(sbasis)):
                for b in range(a, len(sbasis)):
                    mono = sbasis[a] * sbasis[b]
                    br = row(mono)[0]
                    key = (sblk, a, b)
                    mult = 1 if a == b else 2
                    br[key] = br.get(key, Fraction(0)) - mult

        for mono in sorted(rows, key=lambda m: m.grlex_key(sorted(m.variables()))):
            br, fr = rows[mono]
            rhs = -const_coeffs.get(mono, Fraction(0))
            if not br and not fr:
                if rhs != 0:
                    raise CompileInfeasible(
                        f"{label}: monomial {mono!r} with coefficient {-rhs} cannot be "
                        "matched at the given degree bounds"
                    )
                continue
            constraints.append(
                SdpConstraint(
                    block_entries=[(blk, a, b, float(c)) for (blk, a, b), c in sorted(br.items())],
                    free_entries=[(idx, float(c)) for idx, c in sorted(fr.items())],
                    rhs=float(rhs),
                )
            )

    objective = SdpConstraint()
    for blk, d in enumerate(blocks):
        for i in range(d):
            objective.block_entries.append((blk, i, i, template.trace_weight))
    if obj_free_idx is not None:
        objective.free_entries.append((obj_free_idx, 1.0))

    problem = SdpProblem(
        psd_blocks=blocks,
        n_free=n_free,
        constraints=constraints,
        objective=objective,
    )
    problem.validate()
    return problem, decoding


# -- certificates -----------------------------------------------------------


@dataclass
class Certificate:
    """Decoded multipliers with exact-arithmetic replay data."""

    multipliers: dict[str, Polynomial]
    gram: dict[str, tuple[list[Monomial], list[list[Fraction]]]]
    residual: float
    exact: bool  # residual computed in exact rational arithmetic
    psd_ok: bool = True

    def to_dict(self) -> dict:
        return {
            "multipliers": {k: str(v) for k, v in self.multipliers.items()},
            "gram": {
                label: {
                    "basis": [repr(m) for m in basis],
                    "matrix": [[str(x) for x in row] for row in mat],
                }
                for label, (basis, mat) in self.gram.items()
            },
            "residual": float(self.residual),
            "exact": self.exact,
            "psd_ok": self.psd_ok,
        }


def _clip_gram(mat: np.ndarray, clip_tol: float) -> np.ndarray:
    if mat.size == 0:
        return mat
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -clip_tol:
        raise DecodeError(
            f"Gram eigenvalue {eigvals.min():.3e} below -clip_tol={clip_tol:.1e}; "
            "certificate numerically invalid"
        )
    clipped = np.clip(eigvals, 0.0, None)
    return (eigvecs * clipped) @ eigvecs.T


def _round_matrix(mat: np.ndarray, denom: int) -> list[list[Fraction]]:
    return [
        [Fraction(float(v)).limit_denominator(denom) for v in row]
        for row in mat
    ]


def _gram_poly(basis: list[Monomial], mat: Sequence[Sequence[Fraction]]) -> Polynomial:
    out: dict[Monomial, Fraction] = {}
    for a in range(len(basis)):
        for b in range(a, len(basis)):
            c = mat[a][b] * (1 if a == b else 2)
            if c:
                m = basis[a] * basis[b]
                out[m] = out.get(m, Fraction(0)) + c
    return Polynomial(out)


def _rational_psd(mat: list[list[Fraction]]) -> bool:
    """Exact PSD test by pivoted LDL^T elimination (small matrices)."""
    n = len(mat)
    work = [[Fraction(mat[i][j]) for j in range(n)] for i in range(n)]
    active = list(range(n))
    while active:
        pivot = max(active, key=lambda i: work[i][i])
        if work[pivot][pivot] < 0:
            return False
        if work[pivot][pivot] == 0:
            # remaining diagonal is <= 0; PSD iff the active submatrix vanishes
            return all(work[i][j] == 0 for i in active for j in active)
        active.remove(pivot)
        p = work[pivot][pivot]
        for i in active:
            if work[i][pivot] == 0:
                continue
            factor = work[i][pivot] / p
            for j in active:
                work[i][j] -= factor * work[pivot][j]
            work[i][pivot] = Fraction(0)
    return True


_EXACT_PSD_SIZE_CAP = 40


def _certificate_residual(
    template: SosTemplate,
    multipliers: Mapping[str, Polynomial],
    gram: Mapping[str, tuple[list[Monomial], list[list[Fraction]]]],
) -> Fraction:
    worst = Fraction(0)
    for ci, con in enumerate(template.constraints):
        label = con.label or f"c{ci}"
        expr = con.constant
        for term in con.terms:
            expr = expr + _expand_entry(term.coef, multipliers[term.unknown], term.transform)
        if con.is_sos:
            basis, mat = gram[label]
            expr = expr - _gram_poly(basis, mat)
        worst = max(worst, expr.max_abs_coefficient())
    return worst


def decode_certificate(
    solution: SdpSolution,
    decoding: DecodingMap,
    clip_tol: float = DEFAULT_CLIP_TOL,
    tol: float = DEFAULT_CERT_TOL,
) -> Certificate:
    """Reconstruct multipliers from Gram factors and free coefficients.

    Eigenvalues in ``[-clip_tol, 0)`` are clipped to zero; anything below
    fails the decode.  Coefficients are rounded to rationals through an
    escalating denominator schedule, keeping the first rounding whose exact
    symbolic residual meets ``tol``; if none does, the floating-point
    rounding is kept and the residual is reported as inexact.
    """
    if solution.status != "feasible":
        raise DecodeError(f"cannot decode a solution with status {solution.status!r}")
    template = decoding.template

    clipped_grams: dict[str, tuple[list[Monomial], np.ndarray]] = {}
    for name, (blk, basis) in decoding.unknown_blocks.items():
        clipped_grams[name] = (basis, _clip_gram(solution.block_matrices[blk], clip_tol))
    for label, (blk, basis) in decoding.slack_blocks.items():
        clipped_grams[label] = (basis, _clip_gram(solution.block_matrices[blk], clip_tol))

    free_vals = solution.free_values

    best: Certificate | None = None
    for denom in _ROUND_DENOMS:
        gram = {
            key: (basis, _round_matrix(mat, denom))
            for key, (basis, mat) in clipped_grams.items()
        }
        multipliers: dict[str, Polynomial] = {}
        for name, (idxs, monos) in decoding.unknown_free.items():
            terms = {}
            for idx, m in zip(idxs, monos):
                c = Fraction(float(free_vals[idx])).limit_denominator(denom)
                if c:
                    terms[m] = c
            multipliers[name] = Polynomial(terms)
        for name in decoding.unknown_blocks:
            basis, mat = gram[name]
            multipliers[name] = _gram_poly(basis, mat)
        residual = _certificate_residual(
            template,
            multipliers,
            {label: gram[label] for label in decoding.slack_blocks},
        )
        cert = Certificate(
            multipliers=multipliers,
            gram={
                label: gram[label]
                for label in list(decoding.slack_blocks) + list(decoding.unknown_blocks)
            },
            residual=float(residual),
            exact=True,
        )
        if residual <= Fraction(str(tol)):
            return cert
        if best is None or cert.residual < best.residual:
            best = cert

    # exact rounding failed; fall back to the float-residual certificate
    assert best is not None
    best.exact = False
    return best


@dataclass
class ValidationResult:
    valid: bool
    residual: float
    exact: bool
    reason: str = ""


def validate_certificate(
    cert: Certificate,
    template: SosTemplate,
    tol: float = DEFAULT_CERT_TOL,
) -> ValidationResult:
    """Replay every identity with the certificate's exact coefficients.

    Valid iff the worst residual coefficient is at most ``tol`` and every
    stored Gram matrix is PSD (exact LDL^T below the size cap, float
    eigenvalues above it).
    """
    slack_labels = {
        (con.label or f"c{ci}")
        for ci, con in enumerate(template.constraints)
        if con.is_sos
    }
    missing = slack_labels - set(cert.gram)
    if missing:
        return ValidationResult(False, float("inf"), True, f"missing Gram data: {sorted(missing)}")
    residual = _certificate_residual(template, cert.multipliers, cert.gram)
    for label, (basis, mat) in cert.gram.items():
        n = len(basis)
        if n <= _EXACT_PSD_SIZE_CAP:
            ok = _rational_psd(mat)
        else:
            arr = np.array([[float(x) for x in row] for row in mat])
            ok = bool(np.linalg.eigvalsh(0.5 * (arr + arr.T)).min() >= -1e-9)
        if not ok:
            return ValidationResult(False, float(residual), True, f"Gram for {label} is not PSD")
    if residual <= Fraction(str(tol)):
        return ValidationResult(True, float(residual), True)
    return ValidationResult(
        False, float(residual), True, f"residual {float(residual):.3e} exceeds {tol}"
    )
