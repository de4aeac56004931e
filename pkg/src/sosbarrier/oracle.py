"""Ground-truth brute-force checker.

Samples boundary strata of a semi-algebraic set (grid seeds plus Newton
projection onto the active varieties) and decides tangent-cone feasibility at
each sampled point by linear programming.  An infeasible LP yields a Farkas
dual ray, which is the counterexample certificate; a clean scan yields a
resolution-bounded "none found" verdict.  The LP is a dense two-phase simplex
implemented here so the oracle shares nothing with the SDP backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ControlAffineSystem, InputPolytope, SemiAlgebraicSet
from .poly import Polynomial

BOUNDARY_TOL = 1e-6
RAY_REPLAY_TOL = 1e-6
STRICT_DELTA = 1e-6
_PIVOT_EPS = 1e-9


# -- dense two-phase simplex -------------------------------------------------


class LpError(RuntimeError):
    pass


def _simplex_phase(tableau: np.ndarray, basis: list[int], n_cols: int, max_iter: int = 10000):
    """Minimize the bottom row over Ax = b, x >= 0 (Bland's rule)."""
    m = tableau.shape[0] - 1
    for _ in range(max_iter):
        costs = tableau[-1, :n_cols]
        entering = -1
        for j in range(n_cols):
            if costs[j] < -_PIVOT_EPS:
                entering = j
                break
        if entering < 0:
            return
        ratios = []
        for i in range(m):
            a = tableau[i, entering]
            if a > _PIVOT_EPS:
                ratios.append((tableau[i, -1] / a, basis[i], i))
        if not ratios:
            raise LpError("unbounded pivot column in simplex")
        _, _, leave = min(ratios, key=lambda t: (t[0], t[1]))
        pivot = tableau[leave, entering]
        tableau[leave] /= pivot
        for i in range(tableau.shape[0]):
            if i != leave and abs(tableau[i, entering]) > 0:
                tableau[i] -= tableau[i, entering] * tableau[leave]
        basis[leave] = entering
    raise LpError("simplex iteration cap reached")


def _solve_standard_form(c: np.ndarray, A: np.ndarray, b: np.ndarray):
    """min c'x s.t. Ax = b, x >= 0.

    Returns ``(status, x, pi)`` where ``pi`` are the phase-1 simplex
    multipliers when the problem is infeasible (``status='infeasible'``).
    """
    m, n = A.shape
    D = np.where(b < 0, -1.0, 1.0)
    A1 = A * D[:, None]
    b1 = b * D

    # phase 1 with artificial basis
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A1
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b1
    T[-1, n:n + m] = 1.0
    basis = list(range(n, n + m))
    for i in range(m):  # price out artificials
        T[-1] -= T[i]
    _simplex_phase(T, basis, n + m)
    art_value = -T[-1, -1]
    if art_value > 1e-7 * max(1.0, float(np.abs(b).max(initial=0.0))):
        # pi = c_B B^{-1}; recover from the transformed objective row over
        # artificial columns: reduced cost of a_i is 1 - pi_i.
        pi = 1.0 - T[-1, n:n + m]
        return "infeasible", None, pi * D
    # drive any residual artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= n:
            for j in range(n):
                if abs(T[i, j]) > _PIVOT_EPS:
                    pivot = T[i, j]
                    T[i] /= pivot
                    for k in range(m + 1):
                        if k != i and abs(T[k, j]) > 0:
                            T[k] -= T[k, j] * T[i]
                    basis[i] = j
                    break

    # phase 2
    T2 = np.zeros((m + 1, n + 1))
    T2[:m, :n] = T[:m, :n]
    T2[:m, -1] = T[:m, -1]
    T2[-1, :n] = c
    for i in range(m):
        if basis[i] < n:
            T2[-1] -= c[basis[i]] * T2[i]
    _simplex_phase(T2, basis, n)
    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = T2[i, -1]
    return "optimal", x, None


@dataclass
class TangentConeResult:
    feasible: bool
    u: np.ndarray | None = None
    ray: np.ndarray | None = None
    theta: np.ndarray | None = None
    psi: np.ndarray | None = None


def farkas_feasibility(theta: np.ndarray, psi: np.ndarray) -> TangentConeResult:
    """Feasibility of ``theta u <= psi`` over free ``u``.

    Infeasibility returns a dual ray ``y >= 0`` with ``theta' y = 0`` and
    ``psi' y < 0`` (normalized to unit max entry and replay-checked).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    psi = np.asarray(psi, dtype=float).reshape(-1)
    N, m = theta.shape
    if N == 0:
        return TangentConeResult(True, u=np.zeros(m))
    # variables: u+ (m), u- (m), slack (N); minimize l1 norm of u
    A = np.hstack([theta, -theta, np.eye(N)])
    c = np.concatenate([np.ones(2 * m), np.zeros(N)])
    status, x, pi = _solve_standard_form(c, A, psi)
    if status == "infeasible":
        y = -pi
        y = np.where(np.abs(y) < _PIVOT_EPS, 0.0, y)
        scale = np.abs(y).max()
        if scale > 0:
            y = y / scale
        if y.min() < -RAY_REPLAY_TOL or psi @ y >= 0 or np.abs(theta.T @ y).max() > RAY_REPLAY_TOL * max(1.0, np.abs(y).max()):
            raise LpError(f"Farkas ray failed replay: y={y}, theta'y={theta.T @ y}, psi'y={psi @ y}")
        return TangentConeResult(False, ray=y, theta=theta, psi=psi)
    u = x[:m] - x[m:2 * m]
    return TangentConeResult(True, u=u, theta=theta, psi=psi)


def tangent_cone_lp(
    x: Sequence[float],
    active: Sequence[tuple[int, int]] | Sequence[int],
    system: ControlAffineSystem,
    U: InputPolytope,
    set_: SemiAlgebraicSet | None = None,
    polys: Sequence[Polynomial] | None = None,
    strict: bool = False,
    delta: float = STRICT_DELTA,
    box_bound: float = 1e6,
) -> TangentConeResult:
    """Decide whether some admissible input keeps the flow in the tangent
    cone at ``x`` for the given active constraints.

    ``active`` indexes either ``polys`` (a flat list of active constraint
    polynomials) or, with ``set_``, pairs ``(piece, constraint)``.  In strict
    mode the tangent rows demand margin ``delta`` and an unconstrained input
    is box-bounded to keep the LP bounded.
    """
    x = np.asarray(x, dtype=float)
    if polys is not None:
        chosen = [polys[i] for i in active]
    elif set_ is not None:
        chosen = [set_.pieces[i][j] for (i, j) in active]
    else:
        raise ValueError("need either polys or set_")

    fx = system.drift_at(x)
    gx = system.input_matrix_at(x)
    rows = []
    rhs = []
    for b in chosen:
        b = b.with_vars(system.state_vars)
        grad = np.array([float(b.diff(v).evaluate(list(x))) for v in system.state_vars])
        rows.append(-grad @ gx)
        rhs.append(grad @ fx - (delta if strict else 0.0))
    m = system.input_count
    theta = np.array(rows).reshape(-1, m) if rows else np.zeros((0, m))
    psi = np.array(rhs)
    if not U.is_unconstrained:
        theta = np.vstack([theta, U.A])
        psi = np.concatenate([psi, U.c])
    elif strict:
        theta = np.vstack([theta, np.eye(m), -np.eye(m)])
        psi = np.concatenate([psi, np.full(2 * m, box_bound)])
    return farkas_feasibility(theta, psi)


# -- boundary sampling -------------------------------------------------------


@dataclass
class Counterexample:
    point: np.ndarray
    pieces: tuple[int, ...]  # pieces containing the point
    active: dict[int, tuple[int, ...]]  # piece -> active constraint indices
    rays: dict[int, np.ndarray]  # piece -> Farkas dual ray
    residuals: dict[tuple[int, int], float]  # |b_ij(point)| on active constraints

    def to_dict(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "pieces": list(self.pieces),
            "active": {str(k): list(v) for k, v in self.active.items()},
            "rays": {str(k): [float(v) for v in ray] for k, ray in self.rays.items()},
            "residuals": {f"{i},{j}": float(v) for (i, j), v in self.residuals.items()},
        }


@dataclass
class OracleOutcome:
    counterexample: Counterexample | None
    resolution: int
    samples_tested: int
    warning: str = ""

    @property
    def found(self) -> bool:
        return self.counterexample is not None


def _axis_counts(n: int, resolution: int) -> int:
    if n <= 2:
        return resolution
    return max(4, int(round((resolution ** 2) ** (1.0 / n))))


def _seed_grid(box: Sequence[tuple[float, float]], resolution: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, _axis_counts(len(box), resolution)) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _gn_step(J: np.ndarray, R: np.ndarray, damping: float = 1e-12) -> np.ndarray:
    """Minimum-norm Gauss-Newton step ``J^T (J J^T + damping I)^{-1} R``,
    batched over the leading axis with closed forms for one or two residuals."""
    N, k, n = J.shape
    if k == 1:
        denom = np.einsum("nij,nij->n", J, J) + damping
        return J[:, 0, :] * (R[:, 0] / denom)[:, None]
    JJt = J @ np.swapaxes(J, 1, 2)
    JJt += damping * np.eye(k)
    if k == 2:
        a, b = JJt[:, 0, 0], JJt[:, 0, 1]
        c, d = JJt[:, 1, 0], JJt[:, 1, 1]
        det = a * d - b * c
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        lam0 = (d * R[:, 0] - b * R[:, 1]) / det
        lam1 = (-c * R[:, 0] + a * R[:, 1]) / det
        lam = np.stack([lam0, lam1], axis=1)
    else:
        lam = np.linalg.solve(JJt, R[:, :, None])[:, :, 0]
    return np.einsum("nkj,nk->nj", J, lam)


def newton_project(
    polys: Sequence[Polynomial],
    vars: Sequence[str],
    seeds: np.ndarray,
    iters: int = 20,
    box: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """Gauss-Newton projection of seed points onto ``{p = 0 for p in polys}``."""
    X = np.array(seeds, dtype=float)
    polys = [p.with_vars(vars) for p in polys]
    grads = [[p.diff(v) for v in vars] for p in polys]
    for _ in range(iters):
        R = np.stack([p.evaluate_batch(X) for p in polys], axis=1)
        if np.nanmax(np.abs(R), initial=0.0) < 1e-12:
            break
        J = np.stack(
            [np.stack([g.evaluate_batch(X) for g in grow], axis=1) for grow in grads],
            axis=1,
        )  # (N, k, n)
        X = X - _gn_step(J, R)
        if box is not None:
            for d, (lo, hi) in enumerate(box):
                span = hi - lo
                X[:, d] = np.clip(X[:, d], lo - 0.5 * span, hi + 0.5 * span)
    ok = np.all(np.isfinite(X), axis=1)
    return X[ok]


def _active_combos(set_: SemiAlgebraicSet, n: int) -> list[list[tuple[int, int]]]:
    from itertools import combinations

    combos: list[list[tuple[int, int]]] = []
    for i, piece in enumerate(set_.pieces):
        idx = list(range(len(piece)))
        for size in range(1, min(len(idx), n) + 1):
            combos.extend([[(i, j) for j in subset] for subset in combinations(idx, size)])
    if set_.s > 1 and n >= 2:
        for i in range(set_.s):
            for l in range(i + 1, set_.s):
                for j in range(len(set_.pieces[i])):
                    for k in range(len(set_.pieces[l])):
                        combos.append([(i, j), (l, k)])
    return combos


def _projection_systems(
    set_: SemiAlgebraicSet,
    system: ControlAffineSystem | None,
    n: int,
) -> list[list[Polynomial]]:
    """Equality systems whose varieties carry potential counterexamples.

    Beyond the active-constraint varieties themselves, the control-degenerate
    loci (active gradients annihilating the input columns) are targeted: with
    an unconstrained input the tangent-cone condition can only fail there, and
    those loci are measure zero inside the boundary.
    """
    systems: list[list[Polynomial]] = []
    for combo in _active_combos(set_, n):
        base = [set_.pieces[i][j] for (i, j) in combo]
        systems.append(base)
        if system is None:
            continue
        lg: list[Polynomial] = []
        for b in base:
            ab = b.with_vars(system.state_vars)
            for col in range(system.input_count):
                p = ab.lie_derivative(system.g.column(col))
                if not p.is_zero and p.degree > 0:
                    lg.append(p)
        for extra in lg:
            systems.append(base + [extra])
        if len(lg) > 1:
            systems.append(base + lg)
    return systems


def _dedupe_sorted(points: np.ndarray, decimals: int = 6) -> np.ndarray:
    if points.size == 0:
        return points
    rounded = np.round(points, decimals)
    uniq = np.unique(rounded, axis=0)
    order = np.lexsort(tuple(uniq[:, d] for d in range(uniq.shape[1] - 1, -1, -1)))
    return uniq[order]


def boundary_samples(
    set_: SemiAlgebraicSet,
    box: Sequence[tuple[float, float]],
    resolution: int,
    equalities: Sequence[Polynomial] = (),
    tol: float = BOUNDARY_TOL,
    system: ControlAffineSystem | None = None,
) -> np.ndarray:
    """Sampled points of the topological boundary of the set (within ``tol``),
    restricted to the extra equality varieties (e.g. circle invariants)."""
    vars = set_.vars
    seeds = _seed_grid(box, resolution)
    collected = []
    for eqs in _projection_systems(set_, system, len(vars)):
        polys = list(eqs) + list(equalities)
        pts = newton_project(polys, vars, seeds, box=box)
        if pts.size == 0:
            continue
        res = np.max(np.abs(np.stack([p.with_vars(vars).evaluate_batch(pts) for p in polys], axis=1)), axis=1)
        collected.append(pts[res <= tol])
    if not collected:
        return np.zeros((0, len(vars)))
    pts = _dedupe_sorted(np.vstack(collected))
    if pts.size == 0:
        return pts

    # keep x in C and not interior to any piece
    margins = []
    for piece in set_.pieces:
        vals = np.stack([b.evaluate_batch(pts) for b in piece], axis=1)
        margins.append(vals.min(axis=1))
    margins = np.stack(margins, axis=1)
    inside = margins.max(axis=1) >= -tol
    on_boundary = np.all(margins <= tol, axis=1)
    return pts[inside & on_boundary]


def oracle_viability(
    system: ControlAffineSystem,
    U: InputPolytope,
    set_: SemiAlgebraicSet,
    resolution: int = 200,
    box: Sequence[tuple[float, float]] | None = None,
    equalities: Sequence[Polynomial] = (),
    strict: bool = False,
    delta: float = STRICT_DELTA,
    tol: float = BOUNDARY_TOL,
) -> OracleOutcome:
    """Scan the boundary for points violating the tangent-cone condition.

    Returns the lexicographically first counterexample found, or a
    resolution-bounded clean bill.  With ``strict`` the check demands a
    margin, matching the feedback-CPI conditions.
    """
    box = list(box) if box is not None else [(-4.0, 4.0)] * len(set_.vars)
    pts = boundary_samples(set_, box, resolution, equalities, tol, system=system)
    warning = "" if len(pts) else "no boundary points found at this resolution; set may be empty in box"

    tested = 0
    for x in pts:
        piece_vals = [
            np.array([float(b.evaluate_batch(x.reshape(1, -1))[0]) for b in piece])
            for piece in set_.pieces
        ]
        containing = [i for i, vals in enumerate(piece_vals) if vals.min() >= -tol]
        if not containing:
            continue
        active = {i: tuple(j for j, v in enumerate(piece_vals[i]) if abs(v) <= tol) for i in containing}
        if any(not active[i] for i in containing):
            continue  # interior through some piece: tangent cone is everything
        tested += 1
        rays = {}
        all_infeasible = True
        for i in containing:
            result = tangent_cone_lp(
                x, [(i, j) for j in active[i]], system, U, set_=set_, strict=strict, delta=delta
            )
            if result.feasible:
                all_infeasible = False
                break
            rays[i] = result.ray
        if all_infeasible:
            residuals = {
                (i, j): abs(float(piece_vals[i][j])) for i in containing for j in active[i]
            }
            return OracleOutcome(
                Counterexample(
                    point=x,
                    pieces=tuple(containing),
                    active={i: active[i] for i in containing},
                    rays=rays,
                    residuals=residuals,
                ),
                resolution,
                tested,
            )
    return OracleOutcome(None, resolution, tested, warning)


@dataclass
class ContainmentWitness:
    point: np.ndarray
    piece: int
    h_value: float


def oracle_containment(
    set_: SemiAlgebraicSet,
    h: Polynomial,
    resolution: int = 200,
    box: Sequence[tuple[float, float]] | None = None,
    tol: float = BOUNDARY_TOL,
) -> tuple[ContainmentWitness | None, int]:
    """Grid scan for a point of the set where ``h < -tol``."""
    box = list(box) if box is not None else [(-4.0, 4.0)] * len(set_.vars)
    pts = _seed_grid(box, resolution)
    hv = h.with_vars(set_.vars).evaluate_batch(pts)
    candidates = hv < -tol
    if not candidates.any():
        return None, len(pts)
    pts, hv = pts[candidates], hv[candidates]
    for i, piece in enumerate(set_.pieces):
        vals = np.stack([b.evaluate_batch(pts) for b in piece], axis=1)
        inside = vals.min(axis=1) >= -1e-9
        if inside.any():
            order = np.lexsort(tuple(pts[inside][:, d] for d in range(pts.shape[1] - 1, -1, -1)))
            k = order[0]
            return ContainmentWitness(pts[inside][k], i, float(hv[inside][k])), len(pts)
    return None, len(pts)
