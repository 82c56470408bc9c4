"""Batched Gauss-Newton with step halving.

Every batch element iterates independently; converged or failed elements are
frozen while the rest continue, so an element's trajectory does not depend
on what else is in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .statcore import condition_spd, solve_spd_batch

OK = 0
SINGULAR = 1
MAX_ITER = 2
STEP_FAILURE = 3

REASONS = {OK: "converged", SINGULAR: "singular gradient", MAX_ITER: "iteration limit reached", STEP_FAILURE: "step factor below minimum"}

# Rank tolerance 1e-7 on the Jacobian, stated for J'J.
COND_LIMIT = 1e14


@dataclass
class GNResult:
    params: np.ndarray
    value: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    reason: np.ndarray


def gauss_newton_batch(
    objective: Callable[[np.ndarray, np.ndarray], np.ndarray],
    normal_equations: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
    start: np.ndarray,
    *,
    max_iter: int = 50,
    tol: float = 1e-10,
    max_halvings: int = 50,
) -> GNResult:
    """Minimize a sum of squares for each batch element.

    ``objective(params, idx)`` returns the criterion for the elements ``idx``;
    ``normal_equations(params, idx)`` returns ``(H, g)`` whose solution
    ``H^{-1} g`` is the Gauss-Newton step.  Convergence is declared when the
    relative decrease of the criterion falls below ``tol``.
    """
    params = np.array(start, dtype=float, copy=True)
    B = params.shape[0]
    idx_all = np.arange(B)
    value = objective(params, idx_all)
    converged = np.zeros(B, dtype=bool)
    iterations = np.zeros(B, dtype=int)
    reason = np.full(B, MAX_ITER)
    active = idx_all[np.isfinite(value)]
    reason[~np.isfinite(value)] = SINGULAR
    for _ in range(max_iter):
        if active.size == 0:
            break
        cur = params[active]
        H, g = normal_equations(cur, active)
        singular = ~(condition_spd(H) <= COND_LIMIT)
        step, ok = solve_spd_batch(np.where(singular[:, None, None], np.eye(H.shape[-1]), H), g)
        singular |= ~ok
        iterations[active] += 1
        old = value[active]
        new = old.copy()
        nxt = cur.copy()
        accepted = singular.copy()
        lam = 1.0
        first_try = None
        for _h in range(max_halvings + 1):
            pend = np.flatnonzero(~accepted)
            if pend.size == 0:
                break
            trial = cur[pend] + lam * step[pend]
            tv = objective(trial, active[pend])
            if first_try is None:
                first_try = np.full(active.size, np.nan)
                first_try[pend] = tv
            good = tv <= old[pend]
            hit = pend[good]
            nxt[hit] = trial[good]
            new[hit] = tv[good]
            accepted[hit] = True
            lam *= 0.5
        stalled = ~accepted
        if stalled.any():
            # a full step that only fails by rounding is a converged fit
            rounding = stalled & (np.abs(first_try - old) <= tol * np.maximum(np.abs(old), 1e-300))
            accepted |= rounding
            stalled &= ~rounding
        params[active] = nxt
        value[active] = new
        small = accepted & ~singular & (np.abs(old - new) <= tol * np.maximum(np.abs(new), 1e-300))
        converged[active[small]] = True
        reason[active[small]] = OK
        reason[active[singular]] = SINGULAR
        reason[active[stalled]] = STEP_FAILURE
        active = active[~(small | singular | stalled)]
    return GNResult(params, value, converged, iterations, reason)
