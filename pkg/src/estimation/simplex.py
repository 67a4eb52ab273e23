from dataclasses import dataclass
from typing import Dict, Hashable, Optional, Sequence, Tuple
import logging

import numpy as np

from src.core.errors import EstimationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 100_000


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative weights summing to one over ``keys``, with the achieved least-squares objective"""
    keys: Tuple[Hashable, ...]
    values: np.ndarray
    objective: float
    iterations: int = 0

    def as_dict(self) -> Dict[Hashable, float]:
        return {k: float(v) for k, v in zip(self.keys, self.values)}

    def support(self, threshold: float = 0.0) -> Tuple[Hashable, ...]:
        return tuple(k for k, v in zip(self.keys, self.values) if v > threshold)

    def entropy(self) -> float:
        positive = self.values[self.values > 0]
        return float(-np.sum(positive * np.log(positive)))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum(w) = 1} (sort-based)"""
    n = len(v)
    with np.errstate(all="ignore"):
        u = np.sort(v)[::-1]
        cssv = np.cumsum(u) - 1.0
        ind = np.arange(1, n + 1)
        rho = max(np.count_nonzero(u - cssv / ind > 0), 1)
        theta = cssv[rho - 1] / rho
        w = np.maximum(v - theta, 0.0)
        total = w.sum()
    if not np.isfinite(total) or total <= 0:
        # entries beyond float resolution of the unit sum: the nearest vertex
        w = np.zeros(n)
        w[int(np.nanargmax(np.where(np.isnan(v), -np.inf, v)))] = 1.0
        return w
    # renormalize away rounding so the sum-to-one invariant holds tightly
    return w / total


def _objective(R: np.ndarray, w: np.ndarray) -> float:
    r = R @ w
    return float(r @ r)


def solve_simplex_ls(A: np.ndarray, b: np.ndarray, keys: Optional[Sequence[Hashable]] = None,
                     options: SolverOptions = SolverOptions()) -> SimplexWeights:
    """Minimize ||A w - b||^2 over the probability simplex.

    On the simplex A w - b = (A - b 1') w, so the program is solved on that
    residual matrix: a constant added to every entry of A and b cancels, and
    convergence does not depend on the outcome level. Accelerated projected
    gradient with adaptive restart, cold-started from uniform weights. If the
    optimum is within tolerance of the uniform objective, uniform weights are
    returned.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    n_rows, n_cols = A.shape
    if n_cols == 0:
        raise EstimationError("simplex least squares needs at least one column")
    if n_rows != len(b):
        raise EstimationError(f"A has {n_rows} rows but b has {len(b)} entries")
    keys = tuple(keys) if keys is not None else tuple(range(n_cols))
    if len(keys) != n_cols or len(set(keys)) != n_cols:
        raise EstimationError("weight keys must be distinct and match the columns of A")

    R = A - b[:, None]
    uniform = np.full(n_cols, 1.0 / n_cols)
    if n_cols == 1:
        return SimplexWeights(keys, np.ones(1), _objective(R, np.ones(1)), 0)

    gram = R.T @ R
    lipschitz = 2.0 * np.linalg.eigvalsh(gram)[-1]
    f_uniform = _objective(R, uniform)
    if lipschitz <= 0 or f_uniform <= 0:
        return SimplexWeights(keys, uniform, f_uniform, 0)

    def smooth(w):
        gw = gram @ w
        return float(w @ gw), 2.0 * gw

    # decreases are judged against the starting objective, so the rule is scale-free
    threshold = options.tol * f_uniform
    w = uniform.copy()
    f_w = f_uniform
    y = w.copy()
    t = 1.0
    iteration = 0
    for iteration in range(1, options.max_iter + 1):
        _, grad_y = smooth(y)
        w_next = project_simplex(y - grad_y / lipschitz)
        f_next, grad_next = smooth(w_next)

        if f_next > f_w:
            # restart momentum from the last iterate
            t = 1.0
            _, grad_w = smooth(w)
            w_next = project_simplex(w - grad_w / lipschitz)
            f_next, grad_next = smooth(w_next)

        step = np.max(np.abs(project_simplex(w_next - grad_next / lipschitz) - w_next))
        decrease = f_w - f_next
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        w, f_w, t = w_next, f_next, t_next

        if decrease <= threshold and step <= np.sqrt(options.tol):
            break
    else:
        logger.warning(f"Simplex solver reached the {options.max_iter} iteration cap")

    objective = _objective(R, w)
    if f_uniform - objective <= threshold:
        logger.debug("Flat objective around uniform weights; returning uniform weights")
        return SimplexWeights(keys, uniform, f_uniform, iteration)

    logger.debug(f"Simplex solve: {n_cols} weights, {iteration} iterations, objective {objective:.3e}")
    return SimplexWeights(keys, w, objective, iteration)
