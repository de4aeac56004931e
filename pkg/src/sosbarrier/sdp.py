"""Abstract semidefinite programs and pluggable conic backends.

An :class:`SdpProblem` stores symmetric PSD blocks (upper triangle only),
free scalar variables, sparse equality constraints and a sparse linear
objective.  Solving is delegated to a backend: the in-process backend wraps
``cvxopt.solvers.conelp``; the subprocess backend round-trips the problem
through the plain-text interchange format and a child interpreter, which
keeps the core usable when in-process solving is undesirable.

Interchange format (one problem per file)::

    line 1:  <n_psd_blocks> <n_free_vars>
    line 2:  <size_1> ... <size_nb>          (empty if no blocks)
    line 3:  <n_constraints>
    line 4:  <rhs_1> ... <rhs_m>             (empty if no constraints)
    then  :  <k> <blk> <row> <col> <value>   one line per nonzero

``k = 0`` addresses the objective, ``k = 1..m`` the constraints.  ``blk = 0``
addresses free variable ``row`` (1-based, ``col`` ignored); ``blk >= 1``
addresses entry ``(row, col)`` with ``row <= col`` of PSD block ``blk``.  The
stored coefficient is the full multiplier of that upper-triangle entry.
Floats are written with ``repr`` so import(export(p)) is bit-exact.
"""

from __future__ import annotations

import subprocess
import sys
from dataclasses import dataclass, field

import numpy as np

DEFAULT_FEAS_TOL = 1e-7


class SdpError(RuntimeError):
    pass


@dataclass
class SdpConstraint:
    """Sparse linear functional == rhs.

    ``block_entries``: (block index, row, col, coef) with row <= col;
    ``free_entries``: (free var index, coef).
    """

    block_entries: list[tuple[int, int, int, float]] = field(default_factory=list)
    free_entries: list[tuple[int, float]] = field(default_factory=list)
    rhs: float = 0.0


@dataclass
class SdpProblem:
    psd_blocks: list[int]
    n_free: int = 0
    constraints: list[SdpConstraint] = field(default_factory=list)
    objective: SdpConstraint = field(default_factory=SdpConstraint)

    def validate(self):
        for k, con in enumerate([self.objective] + self.constraints):
            for blk, i, j, _ in con.block_entries:
                if not (0 <= blk < len(self.psd_blocks)):
                    raise SdpError(f"constraint {k}: bad block index {blk}")
                d = self.psd_blocks[blk]
                if not (0 <= i <= j < d):
                    raise SdpError(f"constraint {k}: bad entry ({i},{j}) in {d}x{d} block")
            for idx, _ in con.free_entries:
                if not (0 <= idx < self.n_free):
                    raise SdpError(f"constraint {k}: bad free index {idx}")

    def n_vars(self) -> int:
        return self.n_free + sum(d * (d + 1) // 2 for d in self.psd_blocks)


@dataclass
class SdpSolution:
    status: str  # "feasible" | "infeasible" | "unknown"
    block_matrices: list[np.ndarray] = field(default_factory=list)
    free_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: dict[str, float] = field(default_factory=dict)
    diagnostic: str = ""


def _tri_offsets(blocks: list[int], n_free: int) -> list[int]:
    offsets = []
    base = n_free
    for d in blocks:
        offsets.append(base)
        base += d * (d + 1) // 2
    return offsets


def _tri_index(i: int, j: int, d: int) -> int:
    # upper triangle, row-major: (i, j) with i <= j
    return i * d - i * (i - 1) // 2 + (j - i)


def replay_residuals(problem: SdpProblem, solution: SdpSolution) -> dict[str, float]:
    """Re-check a solution against the raw constraint data."""
    eq = 0.0
    for con in problem.constraints:
        acc = -con.rhs
        for blk, i, j, coef in con.block_entries:
            acc += coef * solution.block_matrices[blk][i, j]
        for idx, coef in con.free_entries:
            acc += coef * solution.free_values[idx]
        eq = max(eq, abs(acc))
    min_eig = 0.0
    for mat in solution.block_matrices:
        if mat.size:
            min_eig = min(min_eig, float(np.linalg.eigvalsh(mat).min()))
    return {"equality": eq, "min_eig": -min_eig}


class CvxoptBackend:
    """In-process interior-point backend (cvxopt conelp).

    Free scalars are split into differences of two nonnegative LP-cone
    variables so that every column is pinned by a cone row (conelp requires
    full column rank of the stacked cone/equality system); a tiny cost on the
    split keeps the decomposition bounded.
    """

    name = "cvxopt"

    def __init__(
        self,
        feas_tol: float = DEFAULT_FEAS_TOL,
        max_iters: int = 200,
        free_reg: float = 1e-8,
    ):
        self.feas_tol = feas_tol
        self.max_iters = max_iters
        self.free_reg = free_reg

    def solve(self, problem: SdpProblem) -> SdpSolution:
        from cvxopt import matrix, solvers, spmatrix

        problem.validate()
        blocks = list(problem.psd_blocks)
        dummy_block = not blocks
        if dummy_block:
            blocks = [1]

        n_free = problem.n_free
        split = 2 * n_free  # columns 2i (plus part) and 2i+1 (minus part)
        offsets = [split + off for off in _tri_offsets(blocks, 0)]
        n_vars = split + sum(d * (d + 1) // 2 for d in blocks)

        # LP cone rows pin the split variables; PSD rows rebuild each block.
        g_vals, g_rows, g_cols = [], [], []
        for i in range(split):
            g_vals.append(-1.0)
            g_rows.append(i)
            g_cols.append(i)
        row_base = split
        for blk, d in enumerate(blocks):
            for i in range(d):
                for j in range(i, d):
                    var = offsets[blk] + _tri_index(i, j, d)
                    g_vals.append(-1.0)
                    g_rows.append(row_base + j * d + i)
                    g_cols.append(var)
                    if i != j:
                        g_vals.append(-1.0)
                        g_rows.append(row_base + i * d + j)
                        g_cols.append(var)
            row_base += d * d
        G = spmatrix(g_vals, g_rows, g_cols, (row_base, n_vars))
        h = matrix(np.zeros(row_base))

        # Equalities; structurally empty rows are resolved up front.
        use_rows = []
        for con in problem.constraints:
            if not con.block_entries and not con.free_entries:
                if abs(con.rhs) > 0:
                    return SdpSolution(
                        status="infeasible",
                        diagnostic=f"constraint 0 = {con.rhs} has no variables",
                    )
                continue
            use_rows.append(con)
        a_vals, a_rows, a_cols = [], [], []
        rhs = np.zeros(len(use_rows))
        for k, con in enumerate(use_rows):
            rhs[k] = con.rhs
            for blk, i, j, coef in con.block_entries:
                a_vals.append(float(coef))
                a_rows.append(k)
                a_cols.append(offsets[blk] + _tri_index(i, j, blocks[blk]))
            for idx, coef in con.free_entries:
                a_vals.extend([float(coef), -float(coef)])
                a_rows.extend([k, k])
                a_cols.extend([2 * idx, 2 * idx + 1])
        A = spmatrix(a_vals, a_rows, a_cols, (len(use_rows), n_vars))
        b = matrix(rhs)

        c = np.zeros(n_vars)
        c[:split] = self.free_reg
        for blk, i, j, coef in problem.objective.block_entries:
            c[offsets[blk] + _tri_index(i, j, blocks[blk])] += float(coef)
        for idx, coef in problem.objective.free_entries:
            c[2 * idx] += float(coef)
            c[2 * idx + 1] -= float(coef)

        opts = {
            "show_progress": False,
            "maxiters": self.max_iters,
            "abstol": 1e-8,
            "reltol": 1e-8,
            "feastol": self.feas_tol,
        }
        try:
            sol = solvers.conelp(
                matrix(c), G, h,
                dims={"l": split, "q": [], "s": blocks},
                A=A, b=b,
                options=opts,
            )
        except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
            return SdpSolution(status="unknown", diagnostic=f"backend failure: {exc}")

        status = sol.get("status", "unknown")
        if status == "primal infeasible":
            return SdpSolution(status="infeasible", diagnostic="conelp primal infeasibility certificate")
        if status not in ("optimal",):
            return SdpSolution(status="unknown", diagnostic=f"conelp status {status!r}")

        x = np.array(sol["x"]).reshape(-1)
        free_values = x[0:split:2] - x[1:split:2]
        mats = []
        for blk, d in enumerate(blocks):
            mat = np.zeros((d, d))
            for i in range(d):
                for j in range(i, d):
                    v = x[offsets[blk] + _tri_index(i, j, d)]
                    mat[i, j] = mat[j, i] = v
            mats.append(mat)
        if dummy_block:
            mats = []
        solution = SdpSolution(status="feasible", block_matrices=mats, free_values=free_values)
        solution.residuals = replay_residuals(problem, solution)
        scale = max(1.0, float(np.max(np.abs(rhs))) if rhs.size else 0.0)
        if solution.residuals["equality"] > 10 * self.feas_tol * scale or solution.residuals[
            "min_eig"
        ] > 10 * self.feas_tol:
            solution.status = "unknown"
            solution.diagnostic = f"replayed residuals too large: {solution.residuals}"
        return solution


class SubprocessBackend:
    """Portability fallback: solve through the interchange file in a child
    interpreter."""

    name = "subprocess"

    def __init__(self, feas_tol: float = DEFAULT_FEAS_TOL):
        self.feas_tol = feas_tol

    def solve(self, problem: SdpProblem) -> SdpSolution:
        import tempfile

        with tempfile.NamedTemporaryFile("w", suffix=".sdpx", delete=False) as fh:
            fh.write(export_sdp(problem))
            path = fh.name
        proc = subprocess.run(
            [sys.executable, "-m", "sosbarrier.sdp", path, repr(self.feas_tol)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            return SdpSolution(status="unknown", diagnostic=f"subprocess failed: {proc.stderr[-500:]}")
        return _parse_solution_text(proc.stdout, problem)


def get_backend(name: str = "cvxopt", feas_tol: float = DEFAULT_FEAS_TOL):
    if name == "cvxopt":
        return CvxoptBackend(feas_tol=feas_tol)
    if name == "subprocess":
        return SubprocessBackend(feas_tol=feas_tol)
    raise SdpError(f"unknown SDP backend {name!r}")


def solve_sdp(problem: SdpProblem, backend=None) -> SdpSolution:
    """Solve with the given backend (default: in-process cvxopt).

    ``feasible`` is only reported when the replayed residuals pass the
    tolerance; solver stalls surface as ``unknown`` with a diagnostic.
    """
    backend = backend or CvxoptBackend()
    return backend.solve(problem)


# -- interchange format ----------------------------------------------------


def export_sdp(problem: SdpProblem) -> str:
    lines = [f"{len(problem.psd_blocks)} {problem.n_free}"]
    lines.append(" ".join(str(d) for d in problem.psd_blocks))
    lines.append(str(len(problem.constraints)))
    lines.append(" ".join(repr(c.rhs) for c in problem.constraints))

    def entry_lines(k: int, con: SdpConstraint):
        for blk, i, j, coef in con.block_entries:
            yield f"{k} {blk + 1} {i + 1} {j + 1} {coef!r}"
        for idx, coef in con.free_entries:
            yield f"{k} 0 {idx + 1} 0 {coef!r}"

    lines.extend(entry_lines(0, problem.objective))
    for k, con in enumerate(problem.constraints, start=1):
        lines.extend(entry_lines(k, con))
    return "\n".join(lines) + "\n"


def import_sdp(text: str) -> SdpProblem:
    lines = text.splitlines()
    if len(lines) < 4:
        raise SdpError("interchange file too short")
    nb, n_free = (int(tok) for tok in lines[0].split())
    sizes = [int(tok) for tok in lines[1].split()]
    if len(sizes) != nb:
        raise SdpError(f"expected {nb} block sizes, found {len(sizes)}")
    m = int(lines[2])
    rhs = [float(tok) for tok in lines[3].split()]
    if len(rhs) != m:
        raise SdpError(f"expected {m} right-hand sides, found {len(rhs)}")
    problem = SdpProblem(
        psd_blocks=sizes,
        n_free=n_free,
        constraints=[SdpConstraint(rhs=r) for r in rhs],
    )
    for line in lines[4:]:
        if not line.strip():
            continue
        k_s, blk_s, i_s, j_s, v_s = line.split()
        k, blk, i, j = int(k_s), int(blk_s), int(i_s), int(j_s)
        target = problem.objective if k == 0 else problem.constraints[k - 1]
        if blk == 0:
            target.free_entries.append((i - 1, float(v_s)))
        else:
            target.block_entries.append((blk - 1, i - 1, j - 1, float(v_s)))
    problem.validate()
    return problem


def _format_solution_text(sol: SdpSolution) -> str:
    lines = [f"status {sol.status}"]
    lines.append("free " + " ".join(repr(v) for v in sol.free_values))
    for mat in sol.block_matrices:
        lines.append(f"block {mat.shape[0]}")
        for row in mat:
            lines.append(" ".join(repr(v) for v in row))
    lines.append(
        "residuals "
        + " ".join(f"{k}={v!r}" for k, v in sorted(sol.residuals.items()))
    )
    if sol.diagnostic:
        lines.append("diagnostic " + sol.diagnostic)
    return "\n".join(lines) + "\n"


def _parse_solution_text(text: str, problem: SdpProblem) -> SdpSolution:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("status "):
        return SdpSolution(status="unknown", diagnostic="unparseable subprocess output")
    sol = SdpSolution(status=lines[0].split()[1])
    idx = 1
    if idx < len(lines) and lines[idx].startswith("free"):
        sol.free_values = np.array([float(t) for t in lines[idx].split()[1:]])
        idx += 1
    while idx < len(lines) and lines[idx].startswith("block"):
        d = int(lines[idx].split()[1])
        rows = [[float(t) for t in lines[idx + 1 + r].split()] for r in range(d)]
        sol.block_matrices.append(np.array(rows))
        idx += 1 + d
    while idx < len(lines):
        if lines[idx].startswith("residuals"):
            for tok in lines[idx].split()[1:]:
                key, val = tok.split("=")
                sol.residuals[key] = float(val)
        elif lines[idx].startswith("diagnostic"):
            sol.diagnostic = lines[idx][len("diagnostic "):]
        idx += 1
    return sol


def _main(argv: list[str]) -> int:
    path = argv[0]
    feas_tol = float(argv[1]) if len(argv) > 1 else DEFAULT_FEAS_TOL
    with open(path) as fh:
        problem = import_sdp(fh.read())
    sol = CvxoptBackend(feas_tol=feas_tol).solve(problem)
    sys.stdout.write(_format_solution_text(sol))
    return 0


if __name__ == "__main__":
    raise SystemExit(_main(sys.argv[1:]))
