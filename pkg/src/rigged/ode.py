"""Thin wrapper around scipy's Dormand-Prince 5(4) integrator with domain checks."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

DEFAULT_ODE_TOL = 1e-10


class FlowError(Exception):
    pass


class FlowDomainExit(FlowError):
    def __init__(self, exit_time: float, point: np.ndarray):
        self.exit_time = exit_time
        self.point = point
        super().__init__(f"trajectory left the domain at s = {exit_time:.6g}")


class IntegratorFailure(FlowError):
    pass


Domain = Optional[tuple[np.ndarray, np.ndarray]]


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    s: float,
    tol: float = DEFAULT_ODE_TOL,
    domain: Domain = None,
    coords: slice = slice(None),
) -> np.ndarray:
    """Integrate the autonomous system ``x' = rhs(x)`` from ``x0`` for time ``s``.

    ``domain`` is an optional ``(lo, hi)`` box on the coordinates ``x[coords]``;
    leaving it raises :class:`FlowDomainExit` with the exit time.
    """
    x0 = np.asarray(x0, dtype=float)
    if s == 0.0:
        return x0.copy()
    events = None
    if domain is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in domain)
        head = x0[coords]
        if np.any(head < lo) or np.any(head > hi):
            raise FlowDomainExit(0.0, x0)

        def margin(_s, x):
            y = x[coords]
            return float(min(np.min(y - lo), np.min(hi - y)))

        margin.terminal = True
        margin.direction = -1
        events = [margin]

    sol = solve_ivp(
        lambda _s, x: rhs(x),
        (0.0, float(s)),
        x0,
        method="RK45",
        rtol=tol,
        atol=tol,
        events=events,
    )
    if sol.status == -1:
        raise IntegratorFailure(sol.message)
    if sol.status == 1:
        t_exit = float(sol.t_events[0][0])
        raise FlowDomainExit(t_exit, sol.y_events[0][0])
    return sol.y[:, -1]
