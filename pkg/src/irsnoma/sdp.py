"""Dense barrier solver for small Hermitian semidefinite programs.

Problem class: maximize Re tr(C B) over Hermitian B >= 0 subject to linear
inequalities Re tr(A_m B) >= c_m and the elementwise bound diag(B) <= d.
The diagonal bound makes the feasible set compact (|B_ij|^2 <= B_ii B_jj),
so the problem is never unbounded.

Method: primal path-following on the log-barrier

    phi_t(B) = -t Re tr(C B) - log det B - sum_m log(slack_m) - sum_n log(d - B_nn)

with exact Newton steps. The Newton system is the positive map
B^-1 (.) B^-1 plus a low-rank sum over constraint normals, so it is solved
through the inverse map B (.) B and a small dense correction system, which
keeps a step at O(few matrix products). The barrier parameter grows
tenfold per centering round until the gap estimate nu / t clears the
requested tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_HERM_TOL = 1e-9


def frob(x: np.ndarray, y: np.ndarray) -> float:
    """Re tr(X Y) for Hermitian arguments."""
    return float(np.real(np.einsum("ij,ji->", x, y)))


def _check_hermitian(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    scale = max(float(np.abs(mat).max()), 1.0)
    if float(np.abs(mat - mat.conj().T).max()) > _HERM_TOL * scale:
        raise ValueError(f"{name} is not Hermitian")
    return 0.5 * (mat + mat.conj().T)


@dataclass
class SdpProblem:
    """maximize Re tr(C B) + sum_l w_l ln(Re tr(M_l B))
    subject to Re tr(A_m B) >= c_m, diag(B) <= d, B >= 0.

    ``log_terms`` is empty for the plain linear-objective problem class;
    weighted concave logs of positive traces share the Newton structure of
    the constraint barriers, so they come at no extra solver machinery.
    """

    objective: np.ndarray
    constraints: list[tuple[np.ndarray, float]] = field(default_factory=list)
    diag_bound: float = 1.0
    log_terms: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.objective = _check_hermitian(self.objective, "objective")
        n = self.objective.shape[0]
        if n > 128:
            raise ValueError("dense solver is limited to N <= 128")
        checked = []
        for idx, (mat, bound) in enumerate(self.constraints):
            mat = _check_hermitian(mat, f"constraint {idx}")
            if mat.shape[0] != n:
                raise ValueError(f"constraint {idx} has mismatched dimension")
            checked.append((mat, float(bound)))
        self.constraints = checked
        logs = []
        for idx, (mat, weight) in enumerate(self.log_terms):
            mat = _check_hermitian(mat, f"log term {idx}")
            if mat.shape[0] != n:
                raise ValueError(f"log term {idx} has mismatched dimension")
            if weight <= 0.0:
                raise ValueError(f"log term {idx} needs a positive weight")
            logs.append((mat, float(weight)))
        self.log_terms = logs
        if self.diag_bound <= 0.0:
            raise ValueError("diag_bound must be positive")

    @property
    def dim(self) -> int:
        return self.objective.shape[0]

    def value(self, b: np.ndarray) -> float:
        """Objective value (linear plus weighted logs) at a feasible point."""
        total = frob(self.objective, b)
        for mat, weight in self.log_terms:
            trace = frob(mat, b)
            if trace <= 0.0:
                return -np.inf
            total += weight * float(np.log(trace))
        return total


@dataclass
class SdpSolution:
    matrix: np.ndarray
    status: str              # "optimal" | "max_iters" | "infeasible"
    objective: float
    newton_steps: int
    gap_estimate: float


def _slacks(problem: SdpProblem, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lin = np.array([frob(a, b) - c for a, c in problem.constraints])
    diag = problem.diag_bound - np.real(np.diag(b))
    return lin, diag


def _log_traces(problem: SdpProblem, b: np.ndarray) -> np.ndarray:
    return np.array([frob(m, b) for m, _ in problem.log_terms])


def strictly_feasible(problem: SdpProblem, b: np.ndarray, margin: float = 1e-12) -> bool:
    """True when ``b`` sits strictly inside every constraint of ``problem``."""
    lin, diag = _slacks(problem, b)
    scale = 1.0 + max((abs(c) for _, c in problem.constraints), default=0.0)
    if lin.size and lin.min() <= margin * scale:
        return False
    if diag.min() <= margin * problem.diag_bound:
        return False
    traces = _log_traces(problem, b)
    if traces.size and traces.min() <= 0.0:
        return False
    try:
        np.linalg.cholesky(b + 0.0j)
    except np.linalg.LinAlgError:
        return False
    return True


def _barrier_value(problem: SdpProblem, b: np.ndarray, t: float) -> float:
    lin, diag = _slacks(problem, b)
    if (lin.size and lin.min() <= 0.0) or diag.min() <= 0.0:
        return np.inf
    traces = _log_traces(problem, b)
    if traces.size and traces.min() <= 0.0:
        return np.inf
    try:
        chol = np.linalg.cholesky(b)
    except np.linalg.LinAlgError:
        return np.inf
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(chol)))))
    value = -t * frob(problem.objective, b) - logdet
    for trace, (_, weight) in zip(traces, problem.log_terms):
        value -= t * weight * float(np.log(trace))
    if lin.size:
        value -= float(np.sum(np.log(lin)))
    value -= float(np.sum(np.log(diag)))
    return value


def _center(problem: SdpProblem, b: np.ndarray, t: float, newton_budget: int,
            ctol: float) -> tuple[np.ndarray, int]:
    """Newton descent on phi_t from a strictly feasible start.

    Stops when the Newton decrement satisfies lambda^2 / 2 <= ctol; a loose
    ctol keeps the iterate inside the quadratic-convergence basin of the
    next barrier round at a fraction of the cost of exact centering.
    """
    n = problem.dim
    mats = [a for a, _ in problem.constraints]
    log_mats = [mat for mat, _ in problem.log_terms]
    log_weights = np.array([weight for _, weight in problem.log_terms])
    steps = 0
    while steps < newton_budget:
        lin, diag = _slacks(problem, b)
        traces = _log_traces(problem, b)
        binv = np.linalg.inv(b)
        binv = 0.5 * (binv + binv.conj().T)
        grad = -t * problem.objective - binv
        for a, s in zip(mats, lin):
            grad -= a / s
        for mat, weight, trace in zip(log_mats, log_weights, traces):
            grad -= (t * weight / trace) * mat
        grad[np.diag_indices(n)] += 1.0 / diag

        resid = -grad
        q = b @ resid @ b
        proj = [b @ a @ b for a in mats] + [b @ mat @ b for mat in log_mats]

        m = len(mats) + len(log_mats)
        vmats = mats + log_mats
        r = m + n
        w = np.concatenate([
            1.0 / lin**2,
            t * log_weights / traces**2 if traces.size else np.empty(0),
            1.0 / diag**2,
        ])
        gram = np.zeros((r, r))
        for s_i in range(m):
            for r_i in range(s_i, m):
                gram[s_i, r_i] = gram[r_i, s_i] = frob(vmats[s_i], proj[r_i])
            gram[s_i, m:] = gram[m:, s_i] = np.real(np.diag(proj[s_i]))
        gram[m:, m:] = np.abs(b) ** 2
        rhs = np.empty(r)
        rhs[:m] = [frob(a, q) for a in vmats]
        rhs[m:] = np.real(np.diag(q))

        sqrt_w = np.sqrt(w)
        core = np.eye(r) + sqrt_w[:, None] * gram * sqrt_w[None, :]
        y = np.linalg.solve(core, sqrt_w * rhs) / sqrt_w

        delta = q.copy()
        for w_i, y_i, p_i in zip(w[:m], y[:m], proj):
            delta -= w_i * y_i * p_i
        delta -= (b * (w[m:] * y[m:])[None, :]) @ b
        delta = 0.5 * (delta + delta.conj().T)

        decrement = frob(resid, delta)
        if not np.isfinite(decrement) or decrement <= 2.0 * ctol:
            break

        # largest step keeping every barrier term defined
        s_max = 1.0
        for a, s in zip(mats, lin):
            d = frob(a, delta)
            if d < 0.0:
                s_max = min(s_max, s / -d)
        for mat, trace in zip(log_mats, traces):
            d = frob(mat, delta)
            if d < 0.0:
                s_max = min(s_max, trace / -d)
        d_diag = np.real(np.diag(delta))
        pos = d_diag > 0.0
        if np.any(pos):
            s_max = min(s_max, float(np.min(diag[pos] / d_diag[pos])))
        chol = np.linalg.cholesky(b)
        half = np.linalg.solve(chol, delta)
        white = np.linalg.solve(chol, half.conj().T).conj().T
        lam_min = float(np.min(np.linalg.eigvalsh(0.5 * (white + white.conj().T))))
        if lam_min < 0.0:
            s_max = min(s_max, 1.0 / -lam_min)
        step = min(1.0, 0.99 * s_max)

        phi0 = _barrier_value(problem, b, t)
        accepted = False
        for _ in range(40):
            cand = b + step * delta
            cand = 0.5 * (cand + cand.conj().T)
            if _barrier_value(problem, cand, t) <= phi0 - 0.25 * step * decrement:
                accepted = True
                break
            step *= 0.5
        steps += 1
        if not accepted:
            break
        b = cand
    return b, steps


def solve(problem: SdpProblem, tolerance: float = 1e-6, max_iters: int = 600,
          initial: np.ndarray | None = None) -> SdpSolution:
    """Path-following solve; returns the best iterate with a status flag.

    ``initial`` may carry a warm start; it is used only when strictly
    feasible. Without one, d/2 * I is tried, then a few feasibility-repair
    rounds; if no interior point is found the status is "infeasible".
    """
    n = problem.dim
    b = None
    if initial is not None and strictly_feasible(problem, initial):
        b = np.asarray(initial, dtype=complex).copy()
    if b is None:
        cand = 0.5 * problem.diag_bound * np.eye(n, dtype=complex)
        if strictly_feasible(problem, cand):
            b = cand
        else:
            b = _phase_one(problem, cand)
    if b is None:
        return SdpSolution(matrix=0.5 * problem.diag_bound * np.eye(n, dtype=complex),
                           status="infeasible", objective=np.nan,
                           newton_steps=0, gap_estimate=np.inf)

    nu = float(2 * n + len(problem.constraints))
    obj0 = problem.value(b)
    t = max(1.0, nu / (1.0 + abs(obj0)))
    total_steps = 0
    status = "max_iters"
    while total_steps < max_iters:
        budget = min(80, max_iters - total_steps)
        b, used = _center(problem, b, t, newton_budget=budget, ctol=0.05)
        total_steps += used
        obj = problem.value(b)
        if nu / t <= tolerance * (1.0 + abs(obj)):
            b, used = _center(problem, b, t, ctol=1e-10 * (1.0 + nu),
                              newton_budget=min(80, max_iters - total_steps))
            total_steps += used
            status = "optimal"
            break
        t *= 10.0
    return SdpSolution(matrix=b, status=status,
                       objective=problem.value(b),
                       newton_steps=total_steps, gap_estimate=nu / t)


def _phase_one(problem: SdpProblem, start: np.ndarray) -> np.ndarray | None:
    """Feasibility repair by maximizing the worst constraint slack.

    Works inside the same problem class: one extra diagonal coordinate
    carries the (shifted, rescaled) slack level, every constraint is
    tightened by it, and its own value is maximized. The recovered block
    maximizes the minimum slack; None when that maximum is nonpositive.
    """
    if not problem.constraints:
        return None
    n = problem.dim
    d = problem.diag_bound
    lin0, _ = _slacks(problem, start)
    offset = max(0.0, -float(lin0.min())) + 1.0
    scale = 2.0 * offset / d          # slack level = scale * last diagonal entry
    aug_cons = []
    for a, c in problem.constraints:
        a_aug = np.zeros((n + 1, n + 1), dtype=complex)
        a_aug[:n, :n] = a
        a_aug[n, n] = -scale
        aug_cons.append((a_aug, c - offset))
    c_aug = np.zeros((n + 1, n + 1), dtype=complex)
    c_aug[n, n] = 1.0
    aug = SdpProblem(objective=c_aug, constraints=aug_cons, diag_bound=d)
    b_aug0 = np.zeros((n + 1, n + 1), dtype=complex)
    b_aug0[:n, :n] = start
    b_aug0[n, n] = 1e-3 * d
    solution = solve(aug, tolerance=1e-4, max_iters=400, initial=b_aug0)
    block = solution.matrix[:n, :n].copy()
    block = 0.5 * (block + block.conj().T)
    # pull off the boundary as far as feasibility allows
    interior = 0.5 * d * np.eye(n, dtype=complex)
    for tau in (0.3, 0.1, 0.03, 0.01, 0.0):
        blend = (1.0 - tau) * block + tau * interior
        if strictly_feasible(problem, blend):
            return blend
    return None
