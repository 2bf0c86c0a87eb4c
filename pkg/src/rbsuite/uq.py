"""Monte-Carlo estimation of output statistics with certified bounds.

For each realization of the boundary field the reduced problem is
solved with the expansion truncated at order K, while the error is
measured against the full-order solution of the *untruncated* (order
KK) field.  Since the reduced solution is not a Galerkin projection in
the full form, the compliant-output identity picks up a truncation
term; the exact decomposition

    s_full - s_reduced = ||e||_{full}^2 + r_full(u_reduced),
    r_full(u_reduced)  = -sum_{k>K} theta_k * u^T C_k u,

yields the certified per-sample bound

    e_m = ||G_full u_reduced||_X^2 / alpha_LB(full) + |r_full(u_reduced)|,

with both pieces computable online: the first through the Riesz Gram
tables evaluated with the full coefficient vector, the second through
the reduced matrices of the truncated-away modes.  The Monte-Carlo
mean discrepancy is bounded by the average of the e_m, and the
variance discrepancy by a triangle-inequality expansion of the squared
deviations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .errors import ConfigError
from .klfield import KLBasis, sample_y_batch
from .rb import ReducedBasis, online_arrays, residual_norm2

CLT_QUANTILE_95 = 1.96


@dataclass(frozen=True)
class MCResult:
    """Empirical moments of the output with certified discrepancy bounds."""

    mean: float
    variance: float
    m: int
    delta_e: float
    delta_v: float
    per_sample_bounds: np.ndarray
    delta_s: float          # average pure-RB bound (truncated form)
    delta_t_proxy: float    # delta_e minus delta_s
    clt_halfwidth: float
    rejections: int
    outputs: np.ndarray


def mc_mean(values):
    """Unbiased empirical mean (1/M normalization)."""
    values = np.asarray(values, dtype=float)
    return float(values.sum() / values.size)


def mc_variance(values):
    """Unbiased empirical variance (1/(M-1) normalization)."""
    values = np.asarray(values, dtype=float)
    m = values.size
    if m < 2:
        raise ConfigError("variance estimate needs at least two samples")
    e = mc_mean(values)
    return float(((values - e) ** 2).sum() / (m - 1))


def clt_halfwidth(variance, m, quantile=CLT_QUANTILE_95):
    """Normal-approximation half-width of the mean estimate."""
    return float(quantile * np.sqrt(max(variance, 0.0) / m))


def combine_variance_bound(outputs, bounds):
    """Bound on |V_M(S) - V_M(S')| given per-sample deviations |S_m - S'_m| <= e_m.

    Uses Delta_V = 1/(M-1) * sum_m (e_m + ebar) * (2|S_m - E_M| + e_m + ebar)
    with ebar the average bound; each squared deviation changes by at
    most (e_m + ebar) * (|S_m - E_M| + |S'_m - E'_M|).
    """
    outputs = np.asarray(outputs, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    if outputs.shape != bounds.shape:
        raise ConfigError("outputs and bounds must have equal length")
    m = outputs.size
    if m < 2:
        raise ConfigError("variance bound needs at least two samples")
    ebar = bounds.sum() / m
    dev = np.abs(outputs - mc_mean(outputs))
    return float(np.sum((bounds + ebar) * (2.0 * dev + bounds + ebar)) / (m - 1))


def _tail_theta_indices(rb: ReducedBasis, k_trunc, n_modes):
    # theta layout for the Robin model: (1, bbar, bbar*y_1, ..., bbar*y_KK)
    return np.arange(2 + k_trunc, 2 + n_modes)


def total_error_bounds_batch(rb: ReducedBasis, mus_full, k_trunc, coeffs):
    """Vectorized certified bounds |s_full - s_reduced,K| for many draws."""
    mus_full = np.atleast_2d(np.asarray(mus_full, dtype=float))
    n_modes = mus_full.shape[1] - 1
    if not 1 <= k_trunc <= n_modes:
        raise ConfigError(f"k_trunc must lie in [1, {n_modes}], got {k_trunc}")
    if rb.q_count != 2 + n_modes:
        raise ConfigError(
            f"basis has {rb.q_count} affine terms, expected {2 + n_modes}")
    theta_full = assembly.theta_batch(rb.kind, mus_full)
    res2 = residual_norm2(rb, theta_full, coeffs)
    alpha, _ = rb.stability_ratios(mus_full)
    tail = _tail_theta_indices(rb, k_trunc, n_modes)
    if len(tail):
        quad = np.einsum("ti,qij,tj->tq", coeffs,
                         rb.reduced_stiffness[tail], coeffs)
        tail_term = np.abs(np.einsum("tq,tq->t", theta_full[:, tail], quad))
    else:
        tail_term = np.zeros(mus_full.shape[0])
    return res2 / alpha + tail_term


def total_error_bound(rb: ReducedBasis, kl: KLBasis, realization, k_trunc,
                      online):
    """Certified bound on the combined RB + truncation output error.

    ``realization`` carries the full-order amplitude vector; ``online``
    is the reduced solution obtained with the first ``k_trunc`` modes.
    """
    if k_trunc > kl.n_modes:
        raise ConfigError(
            f"k_trunc={k_trunc} exceeds the stored {kl.n_modes} modes")
    b_bar = online.mu[0]
    mu_full = np.concatenate([[b_bar], realization.y])
    return float(total_error_bounds_batch(
        rb, mu_full[None, :], k_trunc, online.coefficients[None, :])[0])


def mc_outputs(rb: ReducedBasis, kl: KLBasis, k_trunc, m, rng,
               b_bar=None) -> MCResult:
    """Monte-Carlo moments of the reduced output over field realizations.

    Full-order (all stored modes) realizations are drawn; the reduced
    solve truncates the expansion at ``k_trunc``.  Moments use the
    unbiased 1/M and 1/(M-1) normalizations; the certified per-sample
    bounds are combined into mean/variance discrepancy bounds against
    the untruncated truth outputs.
    """
    if m < 2:
        raise ConfigError("need m >= 2 samples")
    if not 1 <= k_trunc <= kl.n_modes:
        raise ConfigError(
            f"k_trunc must lie in [1, {kl.n_modes}], got {k_trunc}")
    if b_bar is None:
        b_bar = float(rb.mu_bar[0])
    ys, rejections = sample_y_batch(kl, kl.n_modes, m, rng)
    mus_full = np.column_stack([np.full(m, b_bar), ys])
    mus_trunc = mus_full.copy()
    mus_trunc[:, 1 + k_trunc:] = 0.0

    coeffs, outputs, res2_t, alpha_t = online_arrays(rb, mus_trunc)
    bounds = total_error_bounds_batch(rb, mus_full, k_trunc, coeffs)

    mean = mc_mean(outputs)
    variance = mc_variance(outputs)
    delta_e = float(bounds.sum() / m)
    delta_v = combine_variance_bound(outputs, bounds)
    delta_s = float((res2_t / alpha_t).sum() / m)
    return MCResult(
        mean=mean, variance=variance, m=m, delta_e=delta_e, delta_v=delta_v,
        per_sample_bounds=bounds, delta_s=delta_s,
        delta_t_proxy=delta_e - delta_s,
        clt_halfwidth=clt_halfwidth(variance, m),
        rejections=rejections, outputs=np.asarray(outputs))
