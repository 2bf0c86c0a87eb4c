"""Reduced-basis control variates for parametrized Monte-Carlo estimation.

Offline, a greedy loop selects parameter values where the current
control basis leaves the most empirical variance; the per-parameter
control data is either a fine Monte-Carlo reference mean (Algorithm 1)
or a gridded value function for the Ito-integral control (Algorithm 2).
Online, for a new parameter, the estimator subtracts the
variance-minimizing linear combination of the stored controls:

    alpha* = argmin Var_M(Z - sum_n alpha_n Ybar_n),

a least-squares problem whose normal equations are C alpha = b with
C_ij = Cov_M(Ybar_i, Ybar_j) and b_j = Cov_M(Z, Ybar_j), where
Cov_M(U, V) = (1/M) sum U V - (1/M sum U)(1/M sum V).  It is solved
through the singular-value decomposition of the centered sample matrix
with a relative cutoff, which both regularizes the nearly collinear
columns arising from nearby parameters and keeps the exact-cancellation
case (a query at a stored parameter under common random numbers)
accurate to machine level.

Everything rides on common random numbers: within one greedy sweep all
trial parameters share one increment store, and Algorithm 1 re-simulates
the stored parameters on the *online* paths so Z and its controls are
driven by the same Brownian increments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import parallel_map
from .errors import ConfigError
from .kolmogorov import ControlGrid, ito_control_variates_multi
from .sde import SDEModel, simulate
from .uq import clt_halfwidth, mc_mean, mc_variance

ALG1 = "alg1"
ALG2 = "alg2"

SV_CUTOFF = 1e-10


@dataclass(frozen=True)
class CVBasis:
    """Offline control-variate data for one SDE model."""

    kind: str
    selected_lambdas: np.ndarray      # (N, p)
    m_small: int
    steps: int
    trial_history: tuple              # per-iteration max empirical variance
    alg1_refs: np.ndarray | None = None   # (N,) fine reference means
    m_large: int | None = None
    alg2_grids: tuple | None = None       # one ControlGrid per parameter
    c_eigenvalues: np.ndarray | None = None   # offline covariance spectrum
    c_eigenvectors: np.ndarray | None = None
    model_params: dict | None = None

    @property
    def n(self):
        return self.selected_lambdas.shape[0]

    def prefix(self, n):
        """Restriction to the first ``n`` selected parameters."""
        if not 1 <= n <= self.n:
            raise ConfigError(f"n must lie in [1, {self.n}], got {n}")
        import dataclasses
        return dataclasses.replace(
            self,
            selected_lambdas=self.selected_lambdas[:n],
            alg1_refs=None if self.alg1_refs is None else self.alg1_refs[:n],
            alg2_grids=None if self.alg2_grids is None else self.alg2_grids[:n],
            c_eigenvalues=None, c_eigenvectors=None)


@dataclass(frozen=True)
class CVEstimate:
    """Variance-reduced estimate of E(Z) at one parameter."""

    lam: np.ndarray
    alpha_star: np.ndarray
    mean: float
    variance: float
    raw_variance: float
    ratio: float
    clt_halfwidth: float
    m: int

    @property
    def normalized_variance(self):
        return self.variance / self.mean ** 2

    @property
    def raw_normalized_variance(self):
        return self.raw_variance / self.mean ** 2


def empirical_cov(u, v):
    """Product-moment covariance (1/M)sum uv - (1/M sum u)(1/M sum v)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    m = u.shape[0]
    return (u * v).sum(axis=0) / m - u.sum(axis=0) / m * v.sum(axis=0) / m


def solve_combination(z, controls):
    """Variance-minimizing combination weights and corrected statistics.

    Returns ``(alpha_star, stats)`` where ``stats`` carries the corrected
    mean/variance, the raw (uncontrolled) variance on the same paths,
    their ratio and the 95% CLT half-width.  Singular directions of the
    centered control matrix below the relative cutoff are dropped.
    """
    z = np.asarray(z, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    m, n = controls.shape
    if z.shape[0] != m:
        raise ConfigError("outputs/controls sample-count mismatch")
    if m <= n:
        raise ConfigError(
            f"underdetermined combination: m={m} samples for n={n} controls")
    zc = z - z.sum() / m
    cc = controls - controls.sum(axis=0) / m
    alpha, *_ = np.linalg.lstsq(cc, zc, rcond=SV_CUTOFF)
    corrected = z - controls @ alpha
    variance = mc_variance(corrected)
    raw_variance = mc_variance(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = float(np.divide(raw_variance, variance)) \
            if variance > 0 else np.inf
    stats = {
        "mean": mc_mean(corrected),
        "variance": variance,
        "raw_variance": raw_variance,
        "ratio": ratio,
        "clt_halfwidth": clt_halfwidth(variance, m),
    }
    return alpha, stats


def build_controls(basis: CVBasis, lam, ensemble, model: SDEModel):
    """Per-path control matrix (m, N) evaluated on the ensemble's paths.

    Algorithm 1 re-simulates every stored parameter on the ensemble's
    increments and subtracts the fine reference means; Algorithm 2
    integrates every stored gradient table along the ensemble's own
    paths (exactly centered by the martingale property).
    """
    if basis.kind == ALG1:
        cols = []
        for lam_i, ref in zip(basis.selected_lambdas, basis.alg1_refs):
            zi = simulate(model, lam_i, ensemble.m, ensemble.steps,
                          reuse=ensemble).z_values
            cols.append(zi - ref)
        return np.column_stack(cols)
    if basis.kind == ALG2:
        return ito_control_variates_multi(
            list(basis.alg2_grids), model, lam, ensemble)
    raise ConfigError(f"unknown control-variate kind {basis.kind!r}")


def draw_increments(seed, m, steps, d, dt):
    """Reproducible (m, steps, d) Brownian increment store for dt-steps."""
    rng = np.random.default_rng(seed)
    out = np.empty((m, steps, d))
    root = np.sqrt(dt)
    for j in range(steps):
        out[:, j, :] = rng.standard_normal((m, d)) * root
    return out


def _large_reference(model, lam, m_large, steps, seed):
    ens = simulate(model, lam, m_large, steps, seed=seed,
                   keep_increments=False)
    return mc_mean(ens.z_values)


def greedy_offline_cv(kind, model: SDEModel, trial, n_max, m_small, m_large,
                      eps, seed, steps=100, grid_solver=None,
                      threads=1) -> CVBasis:
    """Greedy selection of control parameters by residual-variance maximization.

    Each iteration draws one shared increment store, evaluates the
    residual empirical variance eps_i(lambda) for every unselected trial
    parameter, and admits the maximizer (ties at the lowest trial
    index); the loop stops once the maximum drops to ``eps`` or the
    basis holds ``n_max`` parameters.  Algorithm 1 follows each
    admission with an ``m_large``-sample reference mean; Algorithm 2
    calls ``grid_solver(lam)`` for the control function.
    """
    trial = np.atleast_2d(np.asarray(trial, dtype=float))
    n_trial = trial.shape[0]
    if n_trial == 0:
        raise ConfigError("trial sample is empty")
    if kind not in (ALG1, ALG2):
        raise ConfigError(f"unknown control-variate kind {kind!r}")
    if kind == ALG2 and grid_solver is None:
        raise ConfigError("Algorithm 2 needs a grid_solver callable")
    d = model.dimension
    dt = model.horizon / steps

    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    ss_init, ss_store, ss_large, ss_cfac = ss.spawn(4)
    store_seeds = ss_store.spawn(max(n_max, 1))
    large_seeds = ss_large.spawn(max(n_max, 1))

    first = int(np.random.default_rng(ss_init).integers(n_trial))
    selected = [first]
    refs = []
    grids = []
    if kind == ALG1:
        refs.append(_large_reference(model, trial[first], m_large, steps,
                                     large_seeds[0]))
    else:
        grids.append(grid_solver(trial[first]))

    history = []
    for it in range(n_max - 1):
        store = draw_increments(store_seeds[it], m_small, steps, d, dt)
        candidates = [i for i in range(n_trial) if i not in set(selected)]
        if not candidates:
            break

        if kind == ALG1:
            z_sel = np.column_stack([
                simulate(model, trial[i], m_small, steps, reuse=store).z_values
                for i in selected])
            controls = z_sel - np.asarray(refs)[None, :]

            def eval_candidate(i):
                z = simulate(model, trial[i], m_small, steps,
                             reuse=store).z_values
                _, stats = solve_combination(z, controls)
                return stats["variance"]
        else:
            def eval_candidate(i):
                ens = simulate(model, trial[i], m_small, steps, reuse=store)
                controls = ito_control_variates_multi(
                    grids, model, trial[i], ens)
                _, stats = solve_combination(ens.z_values, controls)
                return stats["variance"]

        eps_vals = np.full(n_trial, -np.inf)
        eps_vals[candidates] = parallel_map(eval_candidate, candidates,
                                            threads)
        best = int(np.argmax(eps_vals))
        history.append(float(eps_vals[best]))
        if eps_vals[best] <= eps:
            break
        selected.append(best)
        if kind == ALG1:
            refs.append(_large_reference(model, trial[best], m_large, steps,
                                         large_seeds[it + 1]))
        else:
            grids.append(grid_solver(trial[best]))

    c_eigvals = c_eigvecs = None
    basis = CVBasis(
        kind=kind, selected_lambdas=trial[selected], m_small=m_small,
        steps=steps, trial_history=tuple(history),
        alg1_refs=np.asarray(refs) if kind == ALG1 else None,
        m_large=m_large if kind == ALG1 else None,
        alg2_grids=tuple(grids) if kind == ALG2 else None,
        model_params=dict(model.params))
    if kind == ALG1:
        # offline factorization of the control covariance (the controls do
        # not depend on the online parameter); refreshed online anyway.
        store = draw_increments(ss_cfac, m_small, steps, d, dt)
        ens = simulate(model, trial[first], m_small, steps, reuse=store)
        controls = build_controls(basis, trial[first], ens, model)
        cc = controls - controls.mean(axis=0)
        cov = (cc.T @ cc) / m_small
        c_eigvals, c_eigvecs = np.linalg.eigh(cov)
        import dataclasses
        basis = dataclasses.replace(basis, c_eigenvalues=c_eigvals,
                                    c_eigenvectors=c_eigvecs)
    return basis


def online_estimate(basis: CVBasis, model: SDEModel, lam, seed,
                    m=None) -> CVEstimate:
    """Variance-reduced Monte-Carlo estimate at a new parameter."""
    m = basis.m_small if m is None else m
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    ens = simulate(model, lam, m, basis.steps, seed=seed)
    controls = build_controls(basis, lam, ens, model)
    alpha, stats = solve_combination(ens.z_values, controls)
    return CVEstimate(lam=lam, alpha_star=alpha, m=m, **stats)


def cv_sweep(basis: CVBasis, model: SDEModel, test_lambdas, n_values,
             seed, m=None, threads=1, store=None):
    """Variance-reduction aggregates over a test sample, per basis size.

    One increment store is shared by the whole sweep: Algorithm 1
    control columns are built once and reused for every test parameter
    and every prefix size.  An explicit ``store`` array (e.g. loaded
    from a persisted increment file) overrides the seeded draw, letting
    separate processes price against identical Brownian paths.  Returns
    one row per basis size with min/geometric-mean/max of the variance
    ratio and min/mean/max of the normalized variances (controlled and
    raw).
    """
    test_lambdas = np.atleast_2d(np.asarray(test_lambdas, dtype=float))
    m = basis.m_small if m is None else m
    n_values = [n for n in n_values if 1 <= n <= basis.n]
    if not n_values:
        raise ConfigError("no valid basis sizes requested")
    d = model.dimension
    dt = model.horizon / basis.steps
    if store is None:
        store = draw_increments(np.random.SeedSequence(seed), m,
                                 basis.steps, d, dt)
    elif store.shape != (m, basis.steps, d):
        raise ConfigError(
            f"increment store shape {store.shape} does not match "
            f"{(m, basis.steps, d)}")

    shared_controls = None
    if basis.kind == ALG1:
        ref_ens = simulate(model, test_lambdas[0], m, basis.steps,
                           reuse=store)
        shared_controls = build_controls(basis, test_lambdas[0], ref_ens,
                                         model)

    def eval_lambda(lam):
        ens = simulate(model, lam, m, basis.steps, reuse=store)
        if basis.kind == ALG1:
            controls = shared_controls
        else:
            controls = ito_control_variates_multi(
                list(basis.alg2_grids), model, lam, ens)
        out = {}
        for n in n_values:
            _, stats = solve_combination(ens.z_values, controls[:, :n])
            out[n] = stats
        return out

    per_lambda = parallel_map(eval_lambda, test_lambdas, threads)

    rows = []
    for n in n_values:
        stats = [res[n] for res in per_lambda]
        ratios = np.array([s["ratio"] for s in stats])
        nv = np.array([s["variance"] / s["mean"] ** 2 for s in stats])
        raw_nv = np.array([s["raw_variance"] / s["mean"] ** 2 for s in stats])
        rows.append({
            "n": n,
            "min_ratio": float(ratios.min()),
            "geomean_ratio": float(np.exp(np.mean(np.log(ratios)))),
            "max_ratio": float(ratios.max()),
            "min_norm_var": float(nv.min()),
            "mean_norm_var": float(nv.mean()),
            "max_norm_var": float(nv.max()),
            "mean_raw_norm_var": float(raw_nv.mean()),
        })
    return rows
