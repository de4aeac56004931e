"""Positivstellensatz emptiness instances and their Farkas-dualized form.

``build_psatz_instance`` encodes emptiness of

    {x : f(x) >= 0 for f in F}  /\  {g = 0 for g in G}  /\  {h != 0 for h in H}

as the SOS feasibility problem

    sum_i eta_i * g_i  -  sum_S alpha_S * prod_{i in S} f_i  -  prod_k h_k^{2 a_k}
        in SOS,     alpha_S in SOS,

with cone products truncated to ``product_cap`` factors (the constant cone
member is absorbed by the constraint's SOS slack).  Feasibility of the
template certifies emptiness of the set.

``build_farkas_instance`` adjoins dual variables ``y`` and encodes the
control-elimination condition: the region described by strict positives
``P`` and equalities ``Q`` contains no point where every linear system
``Theta_i(x) u <= psi_i(x)`` is infeasible.  Strict inequalities contribute
their polynomial to both the cone and the monoid; equalities feed the ideal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

from .poly import Monomial, Polynomial, PolyMatrix, PolyVector
from .soscert import SosTemplate, TemplateTerm


class DegreeBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class PsatzInstance:
    F: tuple[Polynomial, ...]
    G: tuple[Polynomial, ...]
    H: tuple[Polynomial, ...]
    exponents: tuple[int, ...]
    degree: int

    def monoid(self) -> Polynomial:
        out = Polynomial.constant(1)
        for h, a in zip(self.H, self.exponents):
            out = out * h ** (2 * a)
        return out

    def __post_init__(self):
        if len(self.exponents) != len(self.H):
            raise ValueError("one monoid exponent per H member")
        if any(a < 1 for a in self.exponents):
            raise ValueError("monoid exponents must be positive integers")
        if self.degree < self.monoid().degree:
            raise DegreeBudgetError(
                f"degree budget {self.degree} below monoid degree {self.monoid().degree}"
            )


@dataclass(frozen=True)
class ConeIdealMonoid:
    """Which generating set each multiplier slot of a template belongs to."""

    cone_slots: dict[str, tuple[int, ...]] = field(default_factory=dict)
    ideal_slots: dict[str, int] = field(default_factory=dict)
    monoid: Polynomial = field(default_factory=lambda: Polynomial.constant(1))


def _y_degree(mono: Monomial, y_vars: frozenset[str]) -> int:
    return sum(e for v, e in mono.exps if v in y_vars)


def _cap_filter(y_vars: frozenset[str], cap: int):
    if not y_vars:
        return None
    return lambda m: _y_degree(m, y_vars) <= cap


def build_psatz_instance(
    F: Sequence[Polynomial],
    G: Sequence[Polynomial],
    H: Sequence[Polynomial],
    exponents: Sequence[int] | None = None,
    mult_degree: int = 2,
    product_cap: int = 2,
    identity_budget: int | None = None,
    y_vars: Sequence[str] = (),
    y_degree_cap: int | None = None,
    label: str = "psatz",
) -> tuple[SosTemplate, ConeIdealMonoid]:
    """Build the Psatz-SOS template for an emptiness instance.

    ``mult_degree`` bounds the multiplier polynomials (the SOS cone
    multipliers are rounded down to an even degree).  When ``y_vars`` and
    ``y_degree_cap`` are given, every multiplier is trimmed so the degree in
    the dual variables of its product stays within the cap, matching the
    conic structure of Farkas certificates.
    """
    F = [p for p in F]
    G = [p for p in G]
    H = [p for p in H]
    exps = tuple(exponents) if exponents is not None else tuple(1 for _ in H)
    monoid = Polynomial.constant(1)
    for h, a in zip(H, exps):
        monoid = monoid * h ** (2 * a)
    budget = identity_budget if identity_budget is not None else max(monoid.degree, mult_degree + 2)
    PsatzInstance(tuple(F), tuple(G), tuple(H), exps, budget)  # validates

    all_vars = sorted(
        {v for p in list(F) + list(G) + list(H) for m in p.terms for v in m.variables()}
    )
    yset = frozenset(y_vars)
    template = SosTemplate(trace_weight=1.0)
    skeleton_cone: dict[str, tuple[int, ...]] = {}
    skeleton_ideal: dict[str, int] = {}
    terms: list[TemplateTerm] = []

    even = mult_degree - (mult_degree % 2)
    for i, g in enumerate(G):
        if g.is_zero:
            continue
        name = f"{label}_eta{i}"
        cap = None
        if y_degree_cap is not None:
            cap = max(0, y_degree_cap - _max_y_degree(g, yset))
        template.add_unknown(name, "free", mult_degree, all_vars, _cap_filter(yset, cap) if cap is not None else None)
        skeleton_ideal[name] = i
        terms.append(TemplateTerm(g, name))

    for size in range(1, product_cap + 1):
        for subset in combinations(range(len(F)), size):
            prod = Polynomial.constant(1)
            for i in subset:
                prod = prod * F[i]
            if prod.is_zero:
                continue
            name = f"{label}_alpha_" + "_".join(str(i) for i in subset)
            cap = None
            if y_degree_cap is not None:
                cap = y_degree_cap - _max_y_degree(prod, yset)
                if cap < 0:
                    continue
            template.add_unknown(name, "sos", even, all_vars, _cap_filter(yset, cap) if cap is not None else None)
            skeleton_cone[name] = subset
            terms.append(TemplateTerm(-prod, name))

    template.add_constraint(terms, -monoid, is_sos=True, label=label)
    return template, ConeIdealMonoid(skeleton_cone, skeleton_ideal, monoid)


def _max_y_degree(p: Polynomial, y_vars: frozenset[str]) -> int:
    if p.is_zero or not y_vars:
        return 0
    return max(_y_degree(m, y_vars) for m in p.terms)


@dataclass(frozen=True)
class FarkasInstance:
    theta_list: tuple[PolyMatrix, ...]
    psi_list: tuple[PolyVector, ...]
    P: tuple[Polynomial, ...]
    Q: tuple[Polynomial, ...]
    y_names: tuple[tuple[str, ...], ...]

    @property
    def dual_var_count(self) -> int:
        return sum(len(names) for names in self.y_names)


def build_farkas_instance(
    theta_list: Sequence[PolyMatrix],
    psi_list: Sequence[PolyVector],
    P: Sequence[Polynomial],
    Q: Sequence[Polynomial],
    mult_degree: int = 2,
    product_cap: int = 2,
    extra_cone: Sequence[Polynomial] = (),
    y_degree_cap: int | str | None = "auto",
    label: str = "farkas",
) -> tuple[SosTemplate, FarkasInstance, ConeIdealMonoid]:
    """Encode nonemptiness of the dual certificate set B(Theta, psi, P, Q).

    Adjoins fresh dual variables per linear system, then delegates to
    :func:`build_psatz_instance` with

        F = {y_ij} u {-psi_i' y_i} u P u extra_cone
        G = {(Theta_i' y_i)_j} u Q
        H = {psi_i' y_i} u P

    ``extra_cone`` members are nonstrict side constraints that join only the
    cone (used by the HOCBF specialization for the lower chain members).
    Dual variables are conic directions, so multiplier degrees in ``y`` are
    capped at the monoid's y-degree (``2R`` by default).
    """
    if len(theta_list) != len(psi_list):
        raise ValueError("need one psi per Theta")
    R = len(theta_list)
    y_names: list[tuple[str, ...]] = []
    for i, (theta, psi) in enumerate(zip(theta_list, psi_list)):
        if theta.shape[0] != len(psi):
            raise ValueError(f"system {i}: {theta.shape[0]} rows vs {len(psi)} psi entries")
        if R == 1:
            names = tuple(f"y{j + 1}" for j in range(len(psi)))
        else:
            names = tuple(f"y{i + 1}_{j + 1}" for j in range(len(psi)))
        y_names.append(names)

    F: list[Polynomial] = []
    G: list[Polynomial] = []
    H: list[Polynomial] = []
    all_y: list[str] = []
    for i in range(R):
        theta, psi = theta_list[i], psi_list[i]
        y = [Polynomial.variable(name) for name in y_names[i]]
        all_y.extend(y_names[i])
        F.extend(y)
        psi_dot_y = PolyVector(list(psi)).dot(y)
        F.append(-psi_dot_y)
        H.append(psi_dot_y)
        for j in range(theta.shape[1]):
            G.append(theta.column(j).dot(y))
    F.extend(P)
    H.extend(P)
    F.extend(extra_cone)
    G.extend(Q)

    if y_degree_cap == "auto":
        y_degree_cap = 2 * R if R else None
    template, skeleton = build_psatz_instance(
        F, G, H,
        mult_degree=mult_degree,
        product_cap=product_cap,
        y_vars=all_y,
        y_degree_cap=y_degree_cap if R else None,
        label=label,
    )
    instance = FarkasInstance(
        tuple(theta_list), tuple(psi_list), tuple(P), tuple(Q), tuple(y_names)
    )
    return template, instance, skeleton
