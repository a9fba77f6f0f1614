"""MAP inference for hinge-loss MRFs by projected subgradient descent."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numba
import numpy as np

from .grounding import PotentialSet

__all__ = ["SolveReport", "SolverConfig", "brute_force_map", "energy", "solve_map"]


@dataclass(frozen=True)
class SolverConfig:
    """Projected subgradient settings.

    Attributes:
        max_iters: Total iteration budget over all phases.
        tol: Best-objective improvement below which a patience window counts as stalled.
        step0: Initial step size; iteration ``t`` of phase ``k`` uses ``step0 * 10**-k / sqrt(t)``.
        seed: ``None`` starts at the box centre, an integer draws a uniform start.
        patience: Length of the stall window.
        phases: Number of step-size phases. Each phase restarts from the best
            iterate with a ten times smaller step; ``1`` is the plain
            ``step0 / sqrt(t)`` schedule.
        normalize: Divide each step by the subgradient norm, so that tiny
            rule weights do not stall progress.
    """

    max_iters: int = 20_000
    tol: float = 1e-7
    step0: float = 1.0
    seed: int | None = None
    patience: int = 500
    phases: int = 4
    normalize: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.step0 > 0:
            raise ValueError("step0 must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 1 <= self.phases <= self.max_iters:
            raise ValueError("phases must lie in [1, max_iters]")


@dataclass
class SolveReport:
    iterations: int
    objective: float
    trace: list[float] = field(default_factory=list)
    converged: bool = False


def energy(potentials: PotentialSet, y) -> float:
    """Weighted sum of distances to satisfaction over the soft potentials."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != potentials.n_free:
        raise ValueError(f"interpretation has {y.shape[0]} entries, expected {potentials.n_free}")
    w, b, A = potentials.linear_form()
    return _energy(w, b, A, y)


def _energy(w, b, A, y) -> float:
    if w.size == 0:
        return 0.0
    return float(w @ np.maximum(b + A @ y, 0.0))


def _csr(A: np.ndarray):
    rows, cols = np.nonzero(A)
    indptr = np.zeros(A.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64), A[rows, cols].astype(np.float64)


@numba.njit(cache=True)
def _csr_energy(w, b, indptr, indices, data, y):
    total = 0.0
    for j in range(w.shape[0]):
        z = b[j]
        for k in range(indptr[j], indptr[j + 1]):
            z += data[k] * y[indices[k]]
        if z > 0.0:
            total += w[j] * z
    return total


@numba.njit(cache=True)
def _descend(w, b, indptr, indices, data, lo, hi, y0, max_iters, step0, tol, patience, phases, normalize):
    n = y0.shape[0]
    y = y0.copy()
    g = np.empty(n)
    best = _csr_energy(w, b, indptr, indices, data, y)
    best_y = y.copy()
    trace = np.empty(max_iters + 1)
    trace[0] = best
    it = 0
    per = max_iters // phases
    for ph in range(phases):
        if best == 0.0:
            break
        budget = per if ph < phases - 1 else max_iters - per * (phases - 1)
        scale = step0 / 10.0**ph
        y[:] = best_y
        for t in range(1, budget + 1):
            g[:] = 0.0
            for j in range(w.shape[0]):
                z = b[j]
                for k in range(indptr[j], indptr[j + 1]):
                    z += data[k] * y[indices[k]]
                if z > 0.0:
                    for k in range(indptr[j], indptr[j + 1]):
                        g[indices[k]] += w[j] * data[k]
            alpha = scale / np.sqrt(t)
            if normalize:
                gn = np.sqrt(np.sum(g * g))
                if gn == 0.0:
                    # zero subgradient: y is a global minimiser
                    return best_y, trace[: it + 1], True
                alpha /= gn
            for i in range(n):
                v = y[i] - alpha * g[i]
                y[i] = min(max(v, lo[i]), hi[i])
            f = _csr_energy(w, b, indptr, indices, data, y)
            it += 1
            if f < best:
                best = f
                best_y[:] = y
            trace[it] = best
            if best == 0.0:
                break
            # only the final phase may stop early on a stall
            if ph == phases - 1 and t > patience and trace[it - patience] - best < tol:
                break
    return best_y, trace[: it + 1], False


def solve_map(potentials: PotentialSet, config: SolverConfig | None = None):
    """Minimise the hinge-loss energy over the unit box.

    Runs projected subgradient descent with ``step0 / sqrt(t)`` steps
    (divided by the subgradient norm when ``normalize`` is set) and
    best-iterate tracking. With ``phases > 1`` the budget is split evenly and
    each phase restarts from the best iterate with a ten times smaller step,
    which shrinks the residual oscillation around the optimum.

    Returns:
        ``(y, report)`` where ``y`` is the best iterate, inside the box.
        ``report.converged`` holds when the best objective improved by less
        than ``tol`` over the last ``patience`` iterations, or reached zero.
    """
    config = config or SolverConfig()
    w, b, A = potentials.linear_form()
    lo, hi = potentials.bounds()
    n = potentials.n_free
    if config.seed is None:
        y = np.clip(np.full(n, 0.5), lo, hi)
    else:
        y = lo + (hi - lo) * np.random.default_rng(config.seed).uniform(size=n)
    if n == 0 or w.size == 0:
        f = _energy(w, b, A, y)
        return y, SolveReport(0, f, [f], True)

    indptr, indices, data = _csr(A)
    best_y, trace, stationary = _descend(
        w, b, indptr, indices, data, lo, hi, y, config.max_iters, config.step0, config.tol, config.patience,
        config.phases, config.normalize,
    )  # fmt: skip
    best = float(trace[-1])
    it = len(trace) - 1
    converged = (
        stationary or best == 0.0 or (it >= config.patience and trace[-config.patience - 1] - best < config.tol)
    )
    return best_y, SolveReport(it, best, trace.tolist(), bool(converged))


def brute_force_map(potentials: PotentialSet, resolution: float = 1e-2):
    """Exhaustive grid search over ``{0, res, ..., 1}^n`` (n <= 4).

    Ties go to the first grid point in row-major order. Used as a test oracle.
    """
    n = potentials.n_free
    if n > 4:
        raise ValueError(f"brute force limited to 4 free variables, got {n}")
    if not 0 < resolution <= 0.5:
        raise ValueError("resolution must lie in (0, 0.5]")
    steps = int(round(1.0 / resolution))
    grid = np.minimum(np.arange(steps + 1) * resolution, 1.0)
    if grid[-1] != 1.0:
        grid = np.append(grid, 1.0)
    w, b, A = potentials.linear_form()
    if n == 0:
        return np.zeros(0), _energy(w, b, A, np.zeros(0))
    if w.size == 0:
        return np.zeros(n), 0.0
    # chunk over the leading coordinate; strict < keeps the first minimiser
    tail = np.array(list(itertools.product(grid, repeat=n - 1))) if n > 1 else np.zeros((1, 0))
    best_val, best_pt = np.inf, None
    for g0 in grid:
        z = b[:, None] + A[:, :1] * g0 + A[:, 1:] @ tail.T
        values = w @ np.maximum(z, 0.0)
        k = int(np.argmin(values))
        if values[k] < best_val:
            best_val = float(values[k])
            best_pt = np.concatenate([[g0], tail[k]])
    return best_pt, best_val
