"""Parametrized SDE path simulation with Euler-Maruyama stepping.

Paths follow dX = b(lam, t, X) dt + sigma(lam, t, X) dB from a
deterministic start, optionally confined to an open ball by mirror
reflection at the sphere.  The per-path output functional is

    Z = g(lam, X_T) - sum_j f(lam, t_j, X_j) * dt,

with left-endpoint quadrature for the running cost, consistent with
the Ito convention used everywhere else.

Common random numbers are first-class: an ensemble can be re-simulated
at a different parameter against the exact same Brownian increments,
either from the stored increment array or by regenerating the stream
from the stored seed (both paths draw step by step in the same order,
so they are bit-identical).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._util import rng_from
from .errors import ConfigError, DivergenceError, NumericalError


@dataclass(frozen=True)
class SDEModel:
    """Drift/diffusion/payoff bundle parametrized by ``lam``.

    ``drift(lam, t, x)`` maps states of shape (m, d) to (m, d);
    ``diffusion`` is None for the identity, or a callable returning
    either (m, d) diagonal factors or (m, d, d) matrices;
    ``terminal(lam, x)`` and ``running_cost(lam, t, x)`` return one
    value per path.  ``reflect_radius`` confines paths to an open ball.
    """

    dimension: int
    drift: callable
    terminal: callable
    x0: np.ndarray
    horizon: float
    diffusion: callable | None = None
    running_cost: callable | None = None
    reflect_radius: float | None = None
    force: callable | None = None     # dumbbell entropic force, for outputs
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths: increments provenance, outputs, terminal states."""

    m: int
    steps: int
    dt: float
    lam: np.ndarray
    seed: object
    z_values: np.ndarray
    terminal_states: np.ndarray
    increments: np.ndarray | None = None

    def increment_stream(self):
        """Per-step (m, d) increment arrays, stored or regenerated."""
        if self.increments is not None:
            return _array_stream(self.increments)
        if self.seed is None:
            raise ConfigError("ensemble has neither stored increments nor a seed")
        d = self.terminal_states.shape[1]
        return _rng_stream(np.random.default_rng(self.seed), self.m,
                           self.steps, d, self.dt)


def _rng_stream(rng, m, steps, d, dt):
    root = np.sqrt(dt)
    for _ in range(steps):
        yield rng.standard_normal((m, d)) * root


def _array_stream(increments):
    for j in range(increments.shape[1]):
        yield increments[:, j, :]


def _apply_diffusion(model, lam, t, x, dw):
    if model.diffusion is None:
        return dw
    sig = np.asarray(model.diffusion(lam, t, x))
    if sig.ndim == dw.ndim:
        return sig * dw
    return np.einsum("mij,mj->mi", sig, dw)


def _reflect(x, radius):
    """Mirror overshooting states back across the sphere |x| = radius."""
    for _ in range(8):
        r = np.linalg.norm(x, axis=1)
        out = r >= radius
        if not out.any():
            return x
        scale = np.abs(2.0 * radius - r[out]) / r[out]
        x[out] *= scale[:, None]
    r = np.linalg.norm(x, axis=1)
    out = r >= radius
    if out.any():
        x[out] *= (radius * (1.0 - 1e-12) / r[out])[:, None]
    return x


def walk(model: SDEModel, lam, m, steps, stream, on_step=None):
    """Euler-Maruyama march consuming a per-step increment stream.

    ``on_step(j, t, x, dw)`` is invoked with the pre-step state and the
    increment about to be applied (the left-endpoint convention shared
    by the running-cost quadrature and the stochastic-integral
    discretization).  Returns the terminal states.
    """
    dt = model.horizon / steps
    x = np.tile(np.asarray(model.x0, dtype=float), (m, 1))
    for j, dw in enumerate(stream):
        t = j * dt
        if on_step is not None:
            on_step(j, t, x, dw)
        x = x + model.drift(lam, t, x) * dt + _apply_diffusion(model, lam, t, x, dw)
        if model.reflect_radius is not None:
            x = _reflect(x, model.reflect_radius)
        if not np.isfinite(x).all():
            raise DivergenceError(f"non-finite state at step {j + 1}")
    return x


def simulate(model: SDEModel, lam, m, steps, seed=None, reuse=None,
             keep_increments=True) -> PathEnsemble:
    """Simulate ``m`` paths over ``steps`` Euler steps.

    ``reuse`` accepts a (m, steps, d) increment array or another
    ensemble (common random numbers); otherwise fresh Gaussian
    increments are drawn from ``seed``.  With ``keep_increments=False``
    the array is not stored; it can be regenerated from the seed.
    """
    if m < 1 or steps < 1:
        raise ConfigError("need m >= 1 paths and steps >= 1")
    d = model.dimension
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    dt = model.horizon / steps
    stored = None
    ens_seed = seed

    if reuse is not None:
        if isinstance(reuse, PathEnsemble):
            if (reuse.m, reuse.steps) != (m, steps):
                raise ConfigError("reused ensemble shape mismatch")
            stream = reuse.increment_stream()
            stored = reuse.increments
            ens_seed = reuse.seed
        else:
            arr = np.asarray(reuse, dtype=float)
            if arr.shape != (m, steps, d):
                raise ConfigError(
                    f"increment array has shape {arr.shape}, "
                    f"expected {(m, steps, d)}")
            stream = _array_stream(arr)
            stored = arr
            ens_seed = None
    else:
        if keep_increments:
            rng = rng_from(seed)
            stored = np.empty((m, steps, d))
            root = np.sqrt(dt)
            for j in range(steps):
                stored[:, j, :] = rng.standard_normal((m, d)) * root
            stream = _array_stream(stored)
        else:
            if seed is None:
                raise ConfigError(
                    "streaming simulation needs a seed for reproducibility")
            stream = _rng_stream(rng_from(seed), m, steps, d, dt)

    cost = np.zeros(m)
    if model.running_cost is not None:
        def on_step(j, t, x, dw):
            cost[:] += model.running_cost(lam, t, x) * dt
    else:
        on_step = None

    x_T = walk(model, lam, m, steps, stream, on_step)
    z = np.asarray(model.terminal(lam, x_T), dtype=float) - cost
    return PathEnsemble(
        m=m, steps=steps, dt=dt, lam=lam, seed=ens_seed, z_values=z,
        terminal_states=x_T,
        increments=stored if keep_increments else None)


def kramers_output(model: SDEModel, ensemble: PathEnsemble,
                   component=(0, 1)):
    """Selected entry of the per-path stress tensor X_T (x) F(X_T)."""
    if model.force is None:
        raise ConfigError("model has no dumbbell force; "
                          "use a Hookean or FENE factory")
    x = ensemble.terminal_states
    if model.reflect_radius is not None:
        b = model.reflect_radius ** 2
        if np.any(1.0 - (x ** 2).sum(axis=1) / b <= 0.0):
            raise NumericalError(
                "terminal state on the constraint boundary; force singular")
    f = model.force(x)
    i, j = component
    return x[:, i] * f[:, j]


# -- model factories ----------------------------------------------------------


def hookean_1d(horizon=1.0, x0=1.0):
    """1D Hookean dumbbell: drift (lam - 1) x, unit noise, payoff x^2."""
    return SDEModel(
        dimension=1,
        drift=lambda lam, t, x: (lam[0] - 1.0) * x,
        terminal=lambda lam, x: x[:, 0] ** 2,
        x0=np.array([float(x0)]), horizon=float(horizon),
        force=lambda x: x,
        params={"kind": "hookean_1d", "horizon": horizon, "x0": x0})


def _lam_matrix(lam):
    # traceless 2x2 velocity gradient from (l11, l12, l21)
    return np.array([[lam[0], lam[1]], [lam[2], -lam[0]]])


def fene_dumbbell(b=16.0, horizon=1.0, x0=(1.0, 1.0), component=(0, 1)):
    """2D FENE dumbbell confined to |X| < sqrt(b).

    Drift lam . X - F(X) with F(X) = X / (1 - |X|^2 / b); the payoff is
    the selected entry of the Kramers tensor X (x) F(X).
    """
    b = float(b)

    def force(x):
        denom = 1.0 - (x ** 2).sum(axis=1) / b
        return x / denom[:, None]

    def drift(lam, t, x):
        return x @ _lam_matrix(lam).T - force(x)

    i, j = component

    def terminal(lam, x):
        return x[:, i] * force(x)[:, j]

    return SDEModel(
        dimension=2, drift=drift, terminal=terminal,
        x0=np.asarray(x0, dtype=float), horizon=float(horizon),
        reflect_radius=np.sqrt(b), force=force,
        params={"kind": "fene", "b": b, "horizon": horizon,
                "x0": list(x0), "component": list(component)})


def black_scholes_1d(rate=0.05, sigma=0.2, strike=1.0, horizon=1.0, x0=1.0):
    """Scalar geometric Brownian motion with a call payoff (smoke model)."""
    return SDEModel(
        dimension=1,
        drift=lambda lam, t, x: rate * x,
        diffusion=lambda lam, t, x: sigma * x,
        terminal=lambda lam, x: np.maximum(x[:, 0] - strike, 0.0),
        x0=np.array([float(x0)]), horizon=float(horizon),
        params={"kind": "black_scholes", "rate": rate, "sigma": sigma,
                "strike": strike})
