"""Dense box-constrained QP by a primal active-set method.

Solves ``min 0.5 x'Hx + f'x  s.t.  lb <= x <= ub`` for small positive
definite ``H``. The working set holds variables pinned to a bound; each
iteration solves the equality-constrained subproblem on the free variables,
then either takes a blocked step (adding a bound) or drops the bound with the
most negative multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QpError(RuntimeError):
    pass


@dataclass(frozen=True)
class QpResult:
    x: np.ndarray
    active: int
    iterations: int
    converged: bool


def solve_box_qp(H: np.ndarray, f: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                 max_iter: int = 200, tol: float = 1e-12) -> QpResult:
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    n = f.shape[0]
    if H.shape != (n, n) or lb.shape != (n,) or ub.shape != (n,):
        raise QpError("inconsistent QP dimensions")
    if np.any(lb > ub):
        raise QpError("infeasible bounds")
    # warm start: clipped unconstrained minimizer, clipped variables pinned
    x0 = np.linalg.solve(H, -f)
    at_lb = x0 <= lb
    at_ub = (x0 >= ub) & ~at_lb
    x = np.clip(x0, lb, ub)
    gscale = 1.0 + np.abs(f).max(initial=0.0) + np.abs(H).max() * (1.0 + np.abs(x).max(initial=0.0))
    for it in range(1, max_iter + 1):
        fixed = at_lb | at_ub
        free = ~fixed
        g = H @ x + f
        p = np.zeros(n)
        if np.any(free):
            p[free] = np.linalg.solve(H[np.ix_(free, free)], -g[free])
        alpha = 1.0
        block = -1
        for i in np.flatnonzero(free):
            if x[i] + p[i] < lb[i]:
                a = (lb[i] - x[i]) / p[i]
            elif x[i] + p[i] > ub[i]:
                a = (ub[i] - x[i]) / p[i]
            else:
                continue
            if a < alpha:
                alpha, block = a, i
        if block >= 0:
            x = x + alpha * p
            if p[block] < 0.0:
                at_lb[block] = True
                x[block] = lb[block]
            else:
                at_ub[block] = True
                x[block] = ub[block]
            continue
        # full step reaches the minimizer on the current face
        x = x + p
        x = np.where(at_lb, lb, np.where(at_ub, ub, x))
        g = H @ x + f
        # at a lower bound the gradient must point inward (g >= 0), at an upper bound g <= 0
        lam = np.where(at_lb, g, np.where(at_ub, -g, np.inf))
        i = int(np.argmin(lam))
        if not np.any(fixed) or lam[i] >= -tol * gscale:
            return QpResult(x, int(fixed.sum()), it, True)
        at_lb[i] = at_ub[i] = False
    return QpResult(np.clip(x, lb, ub), int((at_lb | at_ub).sum()), max_iter, False)
