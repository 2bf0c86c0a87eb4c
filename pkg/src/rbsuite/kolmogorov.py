"""Backward-in-time 1D Kolmogorov solver and Ito-integral control values.

The value function u(t, x) = E[g(X_T) - int_t^T f | X_t = x] satisfies

    du/dt + b du/dx + (1/2) sigma^2 d2u/dx2 = f,   u(T, .) = g,

marched here backward with an unconditionally stable implicit step on
a uniform grid.  At the truncated far-field edges the second
derivative is set to zero through linearly extrapolated ghost values,
which also degrades the advection term to one-sided differences there.

The gradient table feeds the martingale control variate

    Y = sum_j du/dx(t_j, X_j) * sigma(t_j, X_j) * dB_j,

a left-endpoint discretization of the exact stochastic integral,
evaluated by replaying a stored ensemble's increments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError
from .sde import PathEnsemble, SDEModel, walk

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlGrid:
    """Tabulated value function and spatial gradient for one parameter."""

    lam: np.ndarray
    t_grid: np.ndarray      # (nt + 1,) increasing, [0, T]
    x_grid: np.ndarray      # (nx,) uniform
    u_values: np.ndarray    # (nt + 1, nx)
    du_dx: np.ndarray       # (nt + 1, nx)


def _gradient_table(u, dx):
    du = np.empty_like(u)
    du[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2.0 * dx)
    du[:, 0] = (u[:, 1] - u[:, 0]) / dx
    du[:, -1] = (u[:, -1] - u[:, -2]) / dx
    return du


def kolmogorov_solve_1d(model: SDEModel, lam, t_steps, x_grid) -> ControlGrid:
    """Implicit backward march of the 1D value-function PDE."""
    if model.dimension != 1:
        raise ConfigError("the grid solver handles one-dimensional models")
    x_grid = np.asarray(x_grid, dtype=float)
    nx = x_grid.size
    if nx < 5:
        raise ConfigError("grid too coarse: need at least 3 interior points")
    dx = x_grid[1] - x_grid[0]
    if not np.allclose(np.diff(x_grid), dx):
        raise ConfigError("x_grid must be uniform")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    T = model.horizon
    dt = T / t_steps
    t_grid = np.linspace(0.0, T, t_steps + 1)
    xs = x_grid[:, None]

    u = np.empty((t_steps + 1, nx))
    u[t_steps] = np.asarray(model.terminal(lam, xs), dtype=float)

    for k in range(t_steps - 1, -1, -1):
        t = t_grid[k]
        b = np.broadcast_to(
            np.asarray(model.drift(lam, t, xs))[:, 0], (nx,)).astype(float)
        if model.diffusion is None:
            sig2 = np.ones(nx)
        else:
            sig = np.asarray(model.diffusion(lam, t, xs))
            sig2 = np.broadcast_to(sig.reshape(nx, -1)[:, 0], (nx,)) ** 2
        adv = b / (2.0 * dx)
        dif = sig2 / (2.0 * dx * dx)

        # banded (I - dt*L): rows = [upper, main, lower]
        ab = np.zeros((3, nx))
        ab[0, 2:] = -dt * (adv[1:-1] + dif[1:-1])          # superdiag
        ab[1, 1:-1] = 1.0 + dt * 2.0 * dif[1:-1]           # diagonal
        ab[2, :-2] = -dt * (-adv[1:-1] + dif[1:-1])        # subdiag
        # far-field rows: u_xx = 0, one-sided advection
        ab[1, 0] = 1.0 + dt * b[0] / dx
        ab[0, 1] = -dt * b[0] / dx
        ab[1, -1] = 1.0 - dt * b[-1] / dx
        ab[2, -2] = dt * b[-1] / dx

        rhs = u[k + 1].copy()
        if model.running_cost is not None:
            rhs -= dt * np.asarray(model.running_cost(lam, t, xs),
                                   dtype=float)
        u[k] = scipy.linalg.solve_banded((1, 1), ab, rhs)

    return ControlGrid(lam=lam, t_grid=t_grid, x_grid=x_grid,
                       u_values=u, du_dx=_gradient_table(u, dx))


def hookean_exact_grid(lam, t_steps, x_grid, horizon=1.0) -> ControlGrid:
    """Closed-form value function for the 1D Hookean model, payoff x^2.

    With a = lam - 1: u(t, x) = x^2 e^{2 a tau} + (e^{2 a tau} - 1)/(2a),
    tau = T - t (the variance term degenerates to tau as a -> 0).
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    a = lam[0] - 1.0
    x_grid = np.asarray(x_grid, dtype=float)
    t_grid = np.linspace(0.0, horizon, t_steps + 1)
    tau = horizon - t_grid
    growth = np.exp(2.0 * a * tau)
    if abs(a) < 1e-12:
        var = tau
    else:
        var = np.expm1(2.0 * a * tau) / (2.0 * a)
    u = growth[:, None] * x_grid[None, :] ** 2 + var[:, None]
    du = 2.0 * growth[:, None] * x_grid[None, :]
    return ControlGrid(lam=lam, t_grid=t_grid, x_grid=x_grid,
                       u_values=u, du_dx=du)


def _interp_gradient(grid: ControlGrid, t, x):
    """Bilinear gradient lookup; x values are clamped to the grid range."""
    tg = grid.t_grid
    k = np.searchsorted(tg, t, side="right") - 1
    k = min(max(k, 0), len(tg) - 2)
    w = (t - tg[k]) / (tg[k + 1] - tg[k])
    row = (1.0 - w) * grid.du_dx[k] + w * grid.du_dx[k + 1]
    clipped = np.clip(x, grid.x_grid[0], grid.x_grid[-1])
    vals = np.interp(clipped, grid.x_grid, row)
    return vals, int(np.count_nonzero((x < grid.x_grid[0])
                                      | (x > grid.x_grid[-1])))


def ito_control_variates_multi(grids, model: SDEModel, lam,
                               ensemble: PathEnsemble):
    """Ito-integral control values for several gradient tables at once.

    Replays the ensemble's increments at its own parameter (so states
    and increments match the priced paths exactly) and accumulates, for
    each grid i, sum_j du_i(t_j, X_j) * sigma(lam, t_j, X_j) * dB_j.
    Returns an (m, len(grids)) array.  States leaving a grid's range
    are clamped; their count is logged.
    """
    if model.dimension != 1:
        raise ConfigError("Ito control values are built for 1D models here")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if not np.array_equal(lam, ensemble.lam):
        raise ConfigError("control integrand must ride the ensemble's paths: "
                          f"lam={lam} vs ensemble.lam={ensemble.lam}")
    values = np.zeros((ensemble.m, len(grids)))
    extrapolated = [0] * len(grids)

    def on_step(j, t, x, dw):
        if model.diffusion is None:
            noise = dw[:, 0]
        else:
            sig = np.asarray(model.diffusion(lam, t, x))
            noise = sig.reshape(ensemble.m, -1)[:, 0] * dw[:, 0]
        for i, grid in enumerate(grids):
            g, n_out = _interp_gradient(grid, t, x[:, 0])
            extrapolated[i] += n_out
            values[:, i] += g * noise

    walk(model, lam, ensemble.m, ensemble.steps,
         ensemble.increment_stream(), on_step)
    total = sum(extrapolated)
    if total:
        log.warning("control-variate evaluation clamped %d state lookups "
                    "outside the grid range", total)
    return values


def ito_control_variate(grid: ControlGrid, model: SDEModel, lam,
                        ensemble: PathEnsemble):
    """Per-path Ito-integral control values for one gradient table."""
    return ito_control_variates_multi([grid], model, lam, ensemble)[:, 0]
