"""Newton solver for the blended data map and epsilon path-following.

newton_solve inverts F -> ([gamma], blend) at fixed epsilon by Gauss-Newton
over the variation basis, with the structurally rank-deficient systems
(ambient isometries are always in the kernel) handled by truncated-SVD
least squares tied to the same spectral-gap detector used for the Fredholm
reports.

epsilon_continuation follows solutions of Phi_eps(F) = ([gamma*], target)
down a decreasing epsilon schedule.  The isometric problem prescribes no
mean curvature, so the blended target is assembled quasi-statically: the
lambda^2 part comes from uniformizing gamma* once, the H part is frozen
from the previous step's solution and refreshed by a few inner sweeps.  At
the quasi-static fixed point gamma(F) = gamma* exactly (matching class and
conformal factor pin the metric), and the H-term's weight vanishes as
epsilon -> 0, so the reported isometry defect shrinks along the schedule.

The quasi-static construction is singular near epsilon = 1/2: along the
uniform-scaling mode the blend responds to a radius change by
2(1 - 2 eps) to leading order, so the frozen-H solve amplifies any error
in the frozen field by eps / (2|1 - 2 eps|) and the refresh iteration has
multiplier -eps / (1 - 2 eps).  Schedules therefore hop over the band
_POLE_BAND rather than stepping through it; shrinking the step inside the
band cannot help because the amplification depends on eps itself, not on
the step size.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ImmersionRegularityError
from .bases import tensor_basis, vector_basis
from .fredholm import _detect_rank
from .geometry import ImmersionMap
from .operators import (EpsilonData, _scalar_labels, apply_phi,
                        assemble_linearization, domain_labels,
                        project_codomain)
from .shapes import sphere_immersion
from .spectral import SphereGrid
from .uniformize import MetricData, conformal_class, solve_liouville

__all__ = [
    "TargetData",
    "StepRecord",
    "ContinuationTrace",
    "newton_solve",
    "epsilon_continuation",
    "procrustes_align",
    "default_schedule",
]


@dataclass(frozen=True)
class TargetData:
    """Right-hand side for the inverse problem at one epsilon."""

    class_rep: np.ndarray      # (n, 2, 2), det = 1 per node
    blended: np.ndarray        # (n,)
    variant: str = "additive"
    epsilon: float = 1.0

    def __post_init__(self):
        det = (self.class_rep[:, 0, 0] * self.class_rep[:, 1, 1]
               - self.class_rep[:, 0, 1] * self.class_rep[:, 1, 0])
        if np.abs(det - 1.0).max() > 1e-8:
            raise ValueError("class target must have unit determinant per node")

    @classmethod
    def from_data(cls, data: EpsilonData) -> "TargetData":
        return cls(data.class_rep, data.blended, data.variant, data.epsilon)

    @classmethod
    def from_immersion(cls, F: ImmersionMap, epsilon: float,
                       variant: str = "additive", **kw) -> "TargetData":
        return cls.from_data(apply_phi(F, epsilon, variant, **kw))


@dataclass(frozen=True)
class StepRecord:
    epsilon: float
    iterations: int
    residual: float
    singular_values: np.ndarray   # smallest 12, ascending
    accepted: bool
    defect: float                 # max |gamma(F) - gamma*| over nodes


@dataclass
class ContinuationTrace:
    steps: list = field(default_factory=list)
    status: str = "reached eps_min"
    F: ImmersionMap | None = None

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([s.epsilon for s in self.steps])

    @property
    def defects(self) -> np.ndarray:
        return np.array([s.defect for s in self.steps])


def _residual(F: ImmersionMap, target: TargetData, tb, *,
              class_only: bool = False) -> np.ndarray:
    data = apply_phi(F, target.epsilon, target.variant, liouville_tol=None)
    blended = (np.zeros_like(data.blended) if class_only
               else data.blended - target.blended)
    return project_codomain(F.grid, tb, data.class_rep - target.class_rep,
                            blended)


def _dealias_masks(g: SphereGrid, tb) -> tuple[np.ndarray, np.ndarray]:
    """Domain-column and codomain-row masks keeping degrees <= L - 2.

    The push-forward V^i d_iF + nu N of a top-degree basis field has an
    order-one fraction of its energy above the band limit, so resampling
    truncates it and the analytic Jacobian column stops describing the
    discrete update.  Dually, codomain rows at the top two degrees are fed
    only through aliasing-corrupted channels while the iterate is far from
    the solution.  Solving on the dealiased pair is the consistent
    discrete system; the full-spectrum mismatch is what the continuation
    defect reports.
    """
    keep_dom = np.array([l <= g.L - 2 for _, l, _ in domain_labels(g)])
    rows_class = np.array([l <= g.L - 2 for _, l, _ in tb.labels])
    rows_scalar = np.array([l <= g.L - 2 for _, l, _ in _scalar_labels(g)])
    return keep_dom, np.concatenate([rows_class, rows_scalar])


def _step_candidates(matrix: np.ndarray, r: np.ndarray,
                     gap_min: float) -> list:
    """Truncated-SVD least-squares steps, best truncation first.

    Near a symmetric shape the spectrum carries a cluster of near-null
    modes (the deformed round-sphere kernel) whose inversion amplifies
    Jacobian truncation noise while the residual is large; the primary
    step cuts them at the largest relative gap (certified threshold
    gap_min, else any mild gap >= 10).  The fallback keeps every mode
    above a conditioning floor: once the residual has shrunk to the level
    the gap-truncated step cannot correct, inverting the near-null modes
    is harmless and mops up the remaining components.
    """
    U, s, Vt = np.linalg.svd(matrix, full_matrices=False)
    floor_rank = int(np.sum(s > s[0] * 1e-8))
    rank, _, reliable = _detect_rank(s, gap_min)
    if not reliable:
        rank, _, mild = _detect_rank(s, 10.0)
        if not mild:
            rank = floor_rank

    def solve(k):
        return Vt[:k].T @ ((U[:, :k].T @ -r) / s[:k])

    steps = [solve(rank)]
    if floor_rank > rank:
        steps.append(solve(floor_rank))
    return steps


def newton_solve(F0: ImmersionMap, target: TargetData, tol: float = 1e-10,
                 max_iter: int = 25, *, gap_min: float = 1e3,
                 class_only: bool = False, max_backtracks: int = 8
                 ) -> tuple[ImmersionMap, np.ndarray]:
    """Gauss-Newton solve of Phi_eps(F) = target from the initial guess F0.

    The update solves the assembled linearization by truncated-SVD least
    squares (rank from the spectral-gap detector), so the ambient-isometry
    kernel never pollutes the step.  Both sides are dealiased to degree
    <= L - 2 (see _dealias_masks): the solve, the residual norm, and the
    convergence test all live on that consistent discrete system, and the
    top two degrees follow along as the iterate approaches the solution.
    Steps are damped by backtracking on the residual norm and rejected
    outright if min det gamma falls below 1e-4 of its initial value.
    class_only restricts the residual and matrix to the class rows (used
    to seed continuation, where no H target exists yet).  Returns (F,
    residual norm history); raises ConvergenceError with a status
    attribute ("stalled" or "diverged") on failure.
    """
    if target.epsilon <= 0.0:
        raise ValueError("newton_solve needs epsilon > 0 (elliptic regime)")
    g = F0.grid
    tb = tensor_basis(g)
    vb = vector_basis(g)
    det_floor = 1e-4 * F0.geometry.det_gamma.min()
    keep, rows = _dealias_masks(g, tb)
    if class_only:
        rows = rows.copy()
        rows[tb.size:] = False

    F = F0
    r = _residual(F, target, tb, class_only=class_only)
    history = [float(np.linalg.norm(r[rows]))]
    for _ in range(max_iter):
        if history[-1] <= tol:
            return F, np.array(history)
        M = assemble_linearization(F, target.epsilon, target.variant,
                                   liouville_tol=None)
        matrix, rvec = M.matrix[np.ix_(rows, keep)], r[rows]

        accepted = None
        for v_kept in _step_candidates(matrix, rvec, gap_min):
            v = np.zeros(M.matrix.shape[1])
            v[keep] = v_kept
            X = np.einsum("nik,nim,k->nm", vb.fields, F.geometry.dF,
                          v[:vb.size])
            X += (F.geometry.normal
                  * (g.node_matrix(0, 0) @ v[vb.size:])[:, None])
            step = 1.0
            for _ in range(max_backtracks + 1):
                try:
                    trial = ImmersionMap.from_samples(g,
                                                      F.positions + step * X)
                    if trial.geometry.det_gamma.min() < det_floor:
                        raise ImmersionRegularityError("det gamma under floor")
                    r_trial = _residual(trial, target, tb,
                                        class_only=class_only)
                except (ImmersionRegularityError, FloatingPointError):
                    step *= 0.5
                    continue
                if np.linalg.norm(r_trial[rows]) < history[-1]:
                    accepted = (trial, r_trial)
                    break
                step *= 0.5
            if accepted is not None:
                break
        if accepted is None:
            exc = ConvergenceError(
                f"newton stalled at residual {history[-1]:.3e} "
                f"(eps={target.epsilon}, no descent step found)")
            exc.status = "diverged" if step < 1e-2 else "stalled"
            exc.history = np.array(history)
            raise exc
        F, r = accepted
        history.append(float(np.linalg.norm(r[rows])))

    if history[-1] <= tol:
        return F, np.array(history)
    exc = ConvergenceError(
        f"newton used {max_iter} iterations, residual {history[-1]:.3e} > "
        f"tol {tol:.1e}")
    exc.status = "stalled"
    exc.history = np.array(history)
    raise exc


def procrustes_align(F: ImmersionMap, G: ImmersionMap
                     ) -> tuple[np.ndarray, float]:
    """Best rigid motion of F's nodes onto G's, and the max node distance.

    Minimizes the quadrature-weighted square distance over rotations
    (including reflections) and translations; returns (aligned positions,
    max per-node Euclidean error).
    """
    w = F.grid.weights[:, None]
    P, Q = F.positions, G.positions
    pbar = (w * P).sum(axis=0) / w.sum()
    qbar = (w * Q).sum(axis=0) / w.sum()
    C = (w * (Q - qbar)).T @ (P - pbar)
    U, _, Vt = np.linalg.svd(C)
    R = U @ Vt
    aligned = (P - pbar) @ R.T + qbar
    return aligned, float(np.linalg.norm(aligned - Q, axis=1).max())


# Quasi-static response pole at eps = 1/2 (see module docstring); default
# schedules skip this band entirely and bisection never lands inside it.
_POLE_BAND = (0.36, 0.64)

# Defects this small are discretization noise; the monotone-defect guard
# does not distinguish below it.
_DEFECT_FLOOR = 1e-10


def _bisect_eps(eps_last: float, eps: float) -> float:
    """Midpoint of a failed step, clamped off the quasi-static pole band."""
    mid = 0.5 * (eps_last + eps)
    lo, hi = _POLE_BAND
    if lo < mid < hi and not lo < eps < hi:
        return lo if eps <= lo else hi
    return mid


def default_schedule(eps_min: float = 0.05, ratio: float = 0.7) -> list:
    """Geometric epsilon schedule 1.0, ratio, ratio^2, ..., ending at eps_min.

    Points falling inside _POLE_BAND are dropped: the quasi-static blend
    is near-singular along the scaling mode there, so the path hops from
    one side of the band to the other instead of stepping through it.
    """
    out = [1.0]
    while out[-1] * ratio > eps_min:
        out.append(out[-1] * ratio)
    lo, hi = _POLE_BAND
    out = [e for e in out if not lo < e < hi]
    if out[-1] > eps_min:
        out.append(eps_min)
    return out


def _blend_target(lam2_star: np.ndarray, H: np.ndarray, epsilon: float,
                  variant: str) -> np.ndarray:
    if variant == "additive":
        return (1.0 - epsilon) * lam2_star + epsilon * H
    return lam2_star ** (1.0 - epsilon) * H ** (-epsilon)


def epsilon_continuation(target_metric: MetricData, eps_schedule=None,
                         tol: float = 1e-9, *, F0: ImmersionMap | None = None,
                         variant: str = "additive", max_iter: int = 25,
                         sweeps: int = 3, gap_min: float = 1e3,
                         liouville_tol: float | None = 1e-9,
                         max_bisections: int = 3) -> ContinuationTrace:
    """Follow Phi_eps(F) = ([gamma*], quasi-static blend) down in epsilon.

    The schedule defaults to the geometric one from default_schedule.  The
    first step solves the class rows alone (no H target exists before a
    solution does); each later step freezes H from the previous accepted
    solution and solves, then refreshes the frozen H for up to sweeps
    further solves, keeping refreshes only while the isometry defect
    max |gamma(F) - gamma*| keeps dropping (the refresh map contracts for
    small eps but repels around eps = 1/2, so it is never iterated
    blindly).  A step whose defect would exceed the previous accepted
    one is refused, unless both sit at the resolution floor.  Failed or
    refused steps trigger bisection toward the last accepted epsilon, up
    to max_bisections, with midpoints clamped off the quasi-static pole
    band (stepping inside it cannot succeed; see module docstring).
    Persistent failure ends the trace with the Newton status.  F0
    defaults to the round sphere matching gamma*'s total area.
    """
    g = target_metric.grid
    schedule = list(default_schedule() if eps_schedule is None else eps_schedule)
    eps_arr = np.array(schedule, dtype=float)
    if len(eps_arr) == 0 or np.any(np.diff(eps_arr) >= 0.0) or \
            eps_arr[0] > 1.0 or eps_arr[-1] <= 0.0:
        raise ValueError("eps_schedule must decrease strictly within (0, 1]")

    conf_star = solve_liouville(target_metric, tol=liouville_tol)
    class_star = conformal_class(target_metric.gamma)
    lam2_star = conf_star.lambda2
    gamma_star = target_metric.gamma

    if F0 is None:
        area = target_metric.vol_weights.sum()
        F0 = sphere_immersion(g, radius=float(np.sqrt(area / (4.0 * np.pi))))

    trace = ContinuationTrace()
    F = F0
    H_ref = None
    defect_prev = np.inf
    queue = deque(schedule)
    eps_last = None
    bisections = 0

    def _defect(G):
        return float(np.abs(G.geometry.gamma - gamma_star).max())

    while queue:
        eps = queue[0]
        F_try = F
        iters = 0
        try:
            if H_ref is None:
                target = TargetData(class_star, lam2_star, variant, eps)
                F_try, hist = newton_solve(F_try, target, tol, max_iter,
                                           gap_min=gap_min, class_only=True)
                iters += len(hist) - 1
                H_ref = F_try.geometry.H
            # one solve with H frozen from the previous solution, then
            # refresh sweeps kept only while the defect keeps dropping
            # (the refresh map contracts at small eps and repels at mid
            # eps, so blind iteration to a fixed point is not safe)
            best = None
            H_sweep = H_ref
            base = F_try
            for _ in range(1 + max(0, sweeps)):
                blended = _blend_target(lam2_star, H_sweep, eps, variant)
                target = TargetData(class_star, blended, variant, eps)
                base, hist = newton_solve(base, target, tol, max_iter,
                                          gap_min=gap_min)
                iters += len(hist) - 1
                d = _defect(base)
                if best is not None and d >= best[2]:
                    break
                best = (base, hist, d)
                if d <= _DEFECT_FLOOR:
                    break
                H_sweep = base.geometry.H
            F_try, hist, defect = best
            if defect > max(defect_prev, _DEFECT_FLOOR):
                raise _step_worsened(defect, defect_prev, eps, hist)
        except ConvergenceError as exc:
            if eps_last is not None and bisections < max_bisections:
                bisections += 1
                queue.appendleft(_bisect_eps(eps_last, eps))
                continue
            last = getattr(exc, "history", [np.nan])[-1]
            trace.steps.append(StepRecord(
                eps, iters, float(last), np.full(12, np.nan),
                False, _defect(F_try)))
            trace.status = getattr(exc, "status", "diverged")
            trace.F = F
            return trace

        F = F_try
        H_ref = F.geometry.H
        defect_prev = defect
        queue.popleft()
        bisections = 0
        eps_last = eps
        M = assemble_linearization(F, eps, variant, liouville_tol=None)
        sv = np.linalg.svd(M.matrix, compute_uv=False)[::-1][:12]
        trace.steps.append(StepRecord(eps, iters, float(hist[-1]), sv,
                                      True, defect))

    trace.F = F
    return trace


def _step_worsened(defect: float, defect_prev: float, eps: float,
                   hist: np.ndarray) -> ConvergenceError:
    exc = ConvergenceError(
        f"accepted-step defect would rise {defect_prev:.3e} -> {defect:.3e} "
        f"at eps={eps}; refusing the step")
    exc.status = "stalled"
    exc.history = hist
    return exc
