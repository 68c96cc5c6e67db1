"""Small dense SDP solver for moment problems.

Solves  max / min  <objective, y>  over moment assignments y whose moment
matrix  M(y) = F0 + sum_k y_k F_k  is positive semidefinite, subject to
extra affine equality/inequality constraints on y.

The in-tree engine is a primal-dual interior-point method with
Nesterov-Todd scaling and a Mehrotra-style adaptive centering step,
specialized to the dense linear-matrix-inequality form that moment
problems take after the equality constraints are eliminated exactly
through a nullspace parameterization (no inequality pairs, which keeps
the near-degenerate noise-constrained instances well conditioned).
Inequality constraints enter as 1x1 diagonal blocks of the PSD matrix.

Every solution is verified against the reconstruction contract before it
is reported optimal: the moment matrix must be PSD within ``psd_tol``,
every constraint must hold within ``feas_tol`` and the duality gap must
not exceed ``gap_tol`` (relative).
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space

from .errors import SolverError
from .npa import (
    LinearFunctional,
    MomentStructure,
    MonomialBasis,
    Word,
    word_from_str,
    word_str,
)
from .scenario import Scenario

__all__ = [
    "SDPProblem",
    "SDPSolution",
    "solve",
    "dump_problem",
    "load_problem",
    "DEFAULT_GAP_TOL",
    "DEFAULT_FEAS_TOL",
    "DEFAULT_PSD_TOL",
    "DEFAULT_MAX_DIMENSION",
]

DEFAULT_GAP_TOL = 1e-8
DEFAULT_FEAS_TOL = 1e-7
DEFAULT_PSD_TOL = 1e-7
DEFAULT_MAX_DIMENSION = 64

#: Constraint relations accepted by SDPProblem.
RELATIONS = ("=", ">=", "<=")

Constraint = Tuple[LinearFunctional, str, float]


@dataclass(frozen=True)
class SDPProblem:
    """A moment optimization problem over one moment structure."""

    structure: MomentStructure
    objective: LinearFunctional
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        n = self.structure.n_vars
        for k in self.objective.terms:
            if not (0 <= k < n):
                raise ValueError(f"objective references unknown variable {k}")
        for fn, rel, _rhs in self.constraints:
            if rel not in RELATIONS:
                raise ValueError(f"unknown constraint relation {rel!r}")
            for k in fn.terms:
                if not (0 <= k < n):
                    raise ValueError(f"constraint references unknown variable {k}")

    @property
    def dimension(self) -> int:
        return self.structure.dimension


@dataclass(frozen=True)
class SDPSolution:
    """Outcome of one solve.

    ``status`` is one of optimal / infeasible / unbounded /
    numerical_failure.  ``assignment`` maps variable ids to moment values
    (None unless a usable iterate exists).  ``gap`` is the achieved
    relative duality gap.
    """

    status: str
    value: float
    assignment: Optional[np.ndarray]
    gap: float
    iterations: int

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# Core LMI solver:  max  b.z  s.t.  G0 + sum_k z_k G_k  >= 0  (dense, small).
#
# Standard-form correspondence: C = G0, A_k = -G_k, so the LMI problem is the
# dual  max b.y  s.t.  sum y_k A_k + S = C,  S >= 0,  with primal
# min <C,X>  s.t.  <A_k,X> = b_k,  X >= 0.
# ---------------------------------------------------------------------------


def _psd_sqrt_pair(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mat^{1/2}, mat^{-1/2}) for a symmetric positive definite matrix."""
    w, q = np.linalg.eigh(mat)
    w = np.clip(w, 1e-300, None)
    root = np.sqrt(w)
    return (q * root) @ q.T, (q / root) @ q.T


def _max_step(mat: np.ndarray, direction: np.ndarray) -> float:
    """Largest t with mat + t*direction PSD, for mat positive definite."""
    try:
        lo = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        # Numerical dust pushed an eigenvalue slightly negative; repair.
        w, q = np.linalg.eigh(mat)
        lo = np.linalg.cholesky((q * np.clip(w, 1e-14 * max(w.max(), 1.0), None)) @ q.T)
    inv_lo = np.linalg.inv(lo)
    scaled = inv_lo @ direction @ inv_lo.T
    lam = float(np.linalg.eigvalsh((scaled + scaled.T) / 2.0)[0])
    if lam >= -1e-16:
        return np.inf
    return -1.0 / lam


@dataclass
class _LMIResult:
    status: str
    z: np.ndarray
    objective: float
    gap: float
    iterations: int


def _solve_lmi(
    g0: np.ndarray,
    gs: np.ndarray,
    b: np.ndarray,
    gap_tol: float,
    feas_tol: float,
    max_iterations: int,
) -> _LMIResult:
    """Maximize b.z subject to g0 + sum z_k gs[k] >= 0."""
    m, d, _ = gs.shape
    c_mat = np.ascontiguousarray(g0)
    a_tensor = np.ascontiguousarray(-gs)
    a_flat = a_tensor.reshape(m, d * d)

    # Gram factor of the constraint rows, used to project each primal step
    # exactly onto the affine manifold A(X) = b; without this the primal
    # residual drifts near degenerate faces and silently poisons the value.
    gram = cho_factor(a_flat @ a_flat.T + 1e-13 * np.eye(m))

    scale_b = 1.0 + float(np.linalg.norm(b))
    scale_c = 1.0 + float(np.linalg.norm(c_mat))

    x = np.eye(d)
    s = np.eye(d)
    y = np.zeros(m)

    best: Optional[tuple[float, np.ndarray, float]] = None  # (merit, z, gap)
    history: list[float] = []

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _iterate(
            x, s, y, a_tensor, a_flat, gram, c_mat, b, scale_b, scale_c,
            gap_tol, feas_tol, max_iterations, best, history,
        )


def _iterate(
    x, s, y, a_tensor, a_flat, gram, c_mat, b, scale_b, scale_c,
    gap_tol, feas_tol, max_iterations, best, history,
):
    m = a_tensor.shape[0]
    d = a_tensor.shape[1]
    it = 0
    for it in range(max_iterations):
        rp = b - a_flat @ x.ravel()
        rd = c_mat - (y @ a_flat).reshape(d, d) - s
        mu = float(np.vdot(x, s)) / d
        pobj = float(np.vdot(c_mat, x))
        dobj = float(y @ b)
        obj_scale = 1.0 + abs(pobj) + abs(dobj)
        # Exact identity: pobj - dobj = <S,X> + <Rd,X> - rp.y, so this
        # budget dominates the duality gap and, unlike the raw gap, it
        # keeps honest on degenerate faces where the multipliers (and
        # hence the value impact of tiny residuals) blow up.
        value_err = (
            d * mu + abs(float(rp @ y)) + float(np.linalg.norm(rd) * np.linalg.norm(x))
        ) / obj_scale
        rp_rel = float(np.linalg.norm(rp)) * (1.0 + float(np.linalg.norm(y))) / scale_b
        rd_rel = float(np.linalg.norm(rd)) / scale_c

        if best is None or value_err < best[0]:
            best = (value_err, y.copy(), value_err)
        history.append(value_err)

        if value_err <= gap_tol and rp_rel <= feas_tol and rd_rel <= feas_tol:
            return _LMIResult("optimal", y, dobj, value_err, it)

        # Divergence heuristics.  The LMI is infeasible when dual
        # feasibility cannot be reached while the iterates blow up;
        # the objective is unbounded when it grows without losing
        # dual feasibility.
        ynorm = float(np.linalg.norm(y))
        if dobj > 1e9 * scale_b and rd_rel < 1e-6:
            return _LMIResult("unbounded", y, dobj, value_err, it)
        if it > 20 and rd_rel > 1e-6 and ynorm > 1e9:
            return _LMIResult("infeasible", y, dobj, value_err, it)
        if not np.isfinite(mu) or not np.isfinite(dobj):
            break
        # Degenerate geometry: no measurable progress over a long window.
        if len(history) > 40 and value_err > 0.99 * min(history[:-40]):
            break
        if mu < 1e-16 * obj_scale:
            break

        # Nesterov-Todd scaling point: w s w = x.
        s_sqrt, s_isqrt = _psd_sqrt_pair(s)
        inner = s_sqrt @ x @ s_sqrt
        inner_sqrt, _ = _psd_sqrt_pair(inner)
        w = s_isqrt @ inner_sqrt @ s_isqrt
        if not np.isfinite(w).all() or np.abs(w).max() > 1e100:
            break  # cone boundary reached; report the best iterate

        # Schur complement M_ij = <A_i, W A_j W>.
        aw = a_tensor.reshape(m * d, d) @ w
        waw = np.matmul(w, aw.reshape(m, d, d))
        schur = a_flat @ waw.reshape(m, d * d).T
        schur = (schur + schur.T) / 2.0
        if not np.isfinite(schur).all():
            break
        try:
            factor = cho_factor(schur + (1e-13 * np.trace(schur) / max(m, 1)) * np.eye(m))
        except (np.linalg.LinAlgError, ValueError):
            factor = None

        s_inv = np.linalg.inv(s)
        w_rd_w = w @ rd @ w

        def solve_schur(rhs: np.ndarray) -> np.ndarray:
            # One round of iterative refinement fights the cancellation that
            # otherwise makes the primal residual drift near convergence.
            if factor is None:
                return np.linalg.lstsq(schur, rhs, rcond=None)[0]
            dy = cho_solve(factor, rhs)
            dy += cho_solve(factor, rhs - schur @ dy)
            return dy

        def direction(sigma_mu: float):
            r_mat = sigma_mu * s_inv - x - w_rd_w
            dy = solve_schur(rp - a_flat @ r_mat.ravel())
            ds = rd - (dy @ a_flat).reshape(d, d)
            dx = sigma_mu * s_inv - x - w @ ds @ w
            dx = (dx + dx.T) / 2.0
            # Exact projection of the primal step onto A(x + dx) = b.
            residual = rp - a_flat @ dx.ravel()
            corr = (cho_solve(gram, residual) @ a_flat).reshape(d, d)
            dx = dx + (corr + corr.T) / 2.0
            return dy, dx, (ds + ds.T) / 2.0

        # Predictor (affine) step fixes the centering parameter.
        dy_a, dx_a, ds_a = direction(0.0)
        ap = min(1.0, 0.99 * _max_step(x, dx_a))
        ad = min(1.0, 0.99 * _max_step(s, ds_a))
        mu_aff = float(np.vdot(x + ap * dx_a, s + ad * ds_a)) / d
        sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 1e-8, 0.999))

        dy, dx, ds = direction(sigma * mu)
        ap = min(1.0, 0.98 * _max_step(x, dx))
        ad = min(1.0, 0.98 * _max_step(s, ds))
        if ap < 1e-12 and ad < 1e-12:
            break  # steps collapsed; report the best iterate
        x = (x + ap * dx + (x + ap * dx).T) / 2.0
        s = (s + ad * ds + (s + ad * ds).T) / 2.0
        y = y + ad * dy

    # Classify the failure.  A dual residual that never closed while the
    # iteration otherwise settled is the signature of an empty LMI set
    # (the primal iterate grows along an improving ray); hard-but-feasible
    # degenerate instances instead settle with a tiny dual residual.
    rd_final = c_mat - (y @ a_flat).reshape(d, d) - s
    if it >= 10 and float(np.linalg.norm(rd_final)) / scale_c > 1e-3:
        return _LMIResult("infeasible", y, float(y @ b), np.inf, it + 1)
    merit, z_best, gap_best = best if best is not None else (np.inf, y, np.inf)
    return _LMIResult("numerical_failure", z_best, float(z_best @ b), gap_best, it + 1)


# ---------------------------------------------------------------------------
# Problem assembly and the public solve().
# ---------------------------------------------------------------------------


def _assemble(problem: SDPProblem):
    """Split constraints, eliminate equalities, fold inequalities into the
    PSD block as 1x1 diagonal entries.

    Returns (g0, gs, y_particular, nullbasis, ineq_rows) or a terminal
    status string when the equalities alone decide the problem.
    """
    structure = problem.structure
    n = structure.n_vars
    f0, f = structure.arrays()

    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []
    ineq: list[tuple[np.ndarray, float]] = []  # rows v, offsets c: v.y + c >= 0
    for fn, rel, rhs in problem.constraints:
        v = fn.vector(n)
        if rel == "=":
            eq_rows.append(v)
            eq_rhs.append(rhs - fn.constant)
        elif rel == ">=":
            ineq.append((v, fn.constant - rhs))
        else:  # <=
            ineq.append((-v, rhs - fn.constant))

    d = structure.dimension + len(ineq)
    g0 = np.zeros((d, d))
    g0[: structure.dimension, : structure.dimension] = f0
    gs = np.zeros((n, d, d))
    gs[:, : structure.dimension, : structure.dimension] = f
    for idx, (v, c) in enumerate(ineq):
        pos = structure.dimension + idx
        g0[pos, pos] = c
        gs[:, pos, pos] = v

    if not eq_rows:
        return g0, gs, np.zeros(n), np.eye(n)

    a_eq = np.vstack(eq_rows)
    b_eq = np.asarray(eq_rhs)
    y_part, residual, *_ = np.linalg.lstsq(a_eq, b_eq, rcond=None)
    if np.linalg.norm(a_eq @ y_part - b_eq) > 1e-8 * (1.0 + np.linalg.norm(b_eq)):
        return "infeasible"
    basis = null_space(a_eq)
    return g0, gs, y_part, basis


def solve(
    problem: SDPProblem,
    direction: str = "max",
    *,
    gap_tol: float = DEFAULT_GAP_TOL,
    feas_tol: float = DEFAULT_FEAS_TOL,
    psd_tol: float = DEFAULT_PSD_TOL,
    max_iterations: int = 400,
    max_dimension: int = DEFAULT_MAX_DIMENSION,
) -> SDPSolution:
    """Optimize a linear functional of moments over the PSD moment cone.

    Never raises for solver-level outcomes; inspect ``SDPSolution.status``.
    """
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    if problem.dimension > max_dimension:
        raise ValueError(
            f"moment matrix dimension {problem.dimension} exceeds the configured "
            f"maximum {max_dimension}"
        )

    assembled = _assemble(problem)
    if assembled == "infeasible":
        return SDPSolution("infeasible", np.nan, None, np.inf, 0)
    g0, gs, y_part, basis = assembled

    n = problem.structure.n_vars
    obj_vec = problem.objective.vector(n)
    sign = 1.0 if direction == "max" else -1.0

    g0_red = g0 + np.tensordot(y_part, gs, axes=1)
    offset = float(obj_vec @ y_part) + problem.objective.constant

    if basis.shape[1] == 0:
        # Equalities pin every variable; just check PSD membership.
        eigmin = float(np.linalg.eigvalsh((g0_red + g0_red.T) / 2.0)[0])
        if eigmin < -psd_tol:
            return SDPSolution("infeasible", np.nan, None, np.inf, 0)
        return SDPSolution("optimal", offset, y_part.copy(), 0.0, 0)

    gs_red = np.tensordot(basis.T, gs, axes=1)
    b_red = sign * (basis.T @ obj_vec)

    result = _solve_lmi(g0_red, gs_red, b_red, gap_tol, feas_tol, max_iterations)
    assignment = y_part + basis @ result.z
    value = sign * float(result.z @ b_red) + offset

    if result.status != "optimal":
        val = value if result.status in ("numerical_failure", "unbounded") else np.nan
        return SDPSolution(result.status, val, assignment, result.gap, result.iterations)

    # Reconstruction contract before reporting optimality.
    moment = problem.structure.matrix(assignment)
    eigmin = float(np.linalg.eigvalsh((moment + moment.T) / 2.0)[0])
    feas_ok = eigmin >= -psd_tol
    for fn, rel, rhs in problem.constraints:
        v = fn.evaluate(assignment)
        if rel == "=" and abs(v - rhs) > feas_tol * (1.0 + abs(rhs)):
            feas_ok = False
        elif rel == ">=" and v < rhs - feas_tol * (1.0 + abs(rhs)):
            feas_ok = False
        elif rel == "<=" and v > rhs + feas_tol * (1.0 + abs(rhs)):
            feas_ok = False
    status = "optimal" if feas_ok else "numerical_failure"
    return SDPSolution(status, value, assignment, result.gap, result.iterations)


#: Fallback (gap, feasibility, PSD) tolerance rungs for degenerate instances,
#: e.g. probability bounds pinned at a near-extremal Bell value, where the
#: central path is too ill conditioned for full accuracy in double precision.
RETRY_TOLERANCES = ((1e-6, 1e-6, 1e-6), (1e-4, 1e-4, 1e-5))


def solve_tolerant(
    problem: SDPProblem,
    direction: str = "max",
    *,
    gap_tol: float = DEFAULT_GAP_TOL,
    feas_tol: float = DEFAULT_FEAS_TOL,
    psd_tol: float = DEFAULT_PSD_TOL,
    **options,
) -> tuple[SDPSolution, float]:
    """solve() with a deterministic looser-tolerance retry ladder.

    Returns (solution, gap tolerance actually satisfied).  Only
    numerical failures descend the ladder; infeasible/unbounded verdicts
    return immediately.
    """
    rungs = [(gap_tol, feas_tol, psd_tol)]
    rungs += [r for r in RETRY_TOLERANCES if r[0] > gap_tol]
    sol = None
    for (g, f, p) in rungs:
        sol = solve(problem, direction, gap_tol=g, feas_tol=f, psd_tol=p, **options)
        if sol.status != "numerical_failure":
            return sol, g
    return sol, rungs[-1][0]


def solve_or_raise(problem: SDPProblem, direction: str = "max", **options) -> SDPSolution:
    """Like solve() but turns non-optimal statuses into exceptions."""
    sol = solve(problem, direction, **options)
    if sol.status == "optimal":
        return sol
    from .errors import InfeasibleError, UnboundedError

    if sol.status == "infeasible":
        raise InfeasibleError("SDP constraints contradict the PSD cone")
    if sol.status == "unbounded":
        raise UnboundedError("SDP objective unbounded (malformed relaxation)")
    raise SolverError(f"SDP solver failed (gap {sol.gap:.2e} after {sol.iterations} iterations)")


# ---------------------------------------------------------------------------
# Round-trippable text dump of a problem (debugging aid).
# ---------------------------------------------------------------------------

_DUMP_HEADER = "bellcert-sdp/1"


def _functional_str(fn: LinearFunctional) -> str:
    parts = [f"const {fn.constant!r}"]
    parts += [f"{k} {c!r}" for k, c in sorted(fn.terms.items())]
    return " ; ".join(parts)


def _functional_from_str(text: str) -> LinearFunctional:
    constant = 0.0
    terms: dict[int, float] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, val = part.rsplit(" ", 1)
        if key.strip() == "const":
            constant = float(val)
        else:
            terms[int(key)] = float(val)
    return LinearFunctional(terms, constant)


def dump_problem(problem: SDPProblem) -> str:
    """Text serialization: dimension, pinned entries, variable
    identifications (with word labels), objective and constraints."""
    st = problem.structure
    out = io.StringIO()
    out.write(f"{_DUMP_HEADER}\n")
    out.write(f"scenario {st.scenario.n_alice} {st.scenario.n_bob}\n")
    out.write(f"level {st.level}\n")
    out.write(f"dimension {st.dimension}\n")
    out.write("basis " + " ".join(word_str(w) for w in st.basis.words) + "\n")
    out.write("pinned " + " ".join(f"{i},{j}" for i, j in st.pinned) + "\n")
    for k, positions in enumerate(st.cells):
        cells = " ".join(f"{i},{j}" for i, j in positions)
        out.write(f"var {k} {word_str(st.words[k])} : {cells}\n")
    out.write(f"objective {_functional_str(problem.objective)}\n")
    for fn, rel, rhs in problem.constraints:
        out.write(f"constraint {rel} {rhs!r} : {_functional_str(fn)}\n")
    return out.getvalue()


def load_problem(text: str) -> SDPProblem:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _DUMP_HEADER:
        raise ValueError(f"not a {_DUMP_HEADER} dump")
    scenario: Scenario | None = None
    level = ""
    basis_words: tuple[Word, ...] = ()
    pinned: list[tuple[int, int]] = []
    words: list[Word] = []
    cells: list[tuple[tuple[int, int], ...]] = []
    objective = LinearFunctional()
    constraints: list[Constraint] = []
    for line in lines[1:]:
        tag, _, rest = line.partition(" ")
        rest = rest.strip()
        if tag == "scenario":
            n, m = rest.split()
            scenario = Scenario(int(n), int(m))
        elif tag == "level":
            level = rest
        elif tag == "dimension":
            pass  # implied by the basis
        elif tag == "basis":
            basis_words = tuple(word_from_str(t) for t in rest.split())
        elif tag == "pinned":
            pinned = [tuple(int(v) for v in p.split(",")) for p in rest.split()]
        elif tag == "var":
            head, _, cell_text = rest.partition(":")
            _k, word_text = head.split()
            words.append(word_from_str(word_text))
            cells.append(
                tuple(tuple(int(v) for v in p.split(",")) for p in cell_text.split())
            )
        elif tag == "objective":
            objective = _functional_from_str(rest)
        elif tag == "constraint":
            rel, rhs_text, _, fn_text = rest.split(" ", 3)
            constraints.append((_functional_from_str(fn_text), rel, float(rhs_text)))
        else:
            raise ValueError(f"unknown dump line {line!r}")
    if scenario is None:
        raise ValueError("dump lacks a scenario line")
    basis = MonomialBasis(scenario, level, basis_words)
    structure = MomentStructure(
        basis,
        tuple(words),
        {w: k for k, w in enumerate(words)},
        tuple(cells),
        tuple(pinned),
    )
    return SDPProblem(structure, objective, tuple(constraints))
