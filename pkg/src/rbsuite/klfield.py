"""Truncated spectral expansion of the random Robin boundary field.

The squared-exponential covariance
``(bbar * upsilon)^2 * exp(-|x - y|^2 / delta^2)`` is discretized on
the boundary quadrature nodes (Nystrom method with quadrature weights)
and its largest eigenpairs are kept.  Realizations take the form

    b(x, y) = bbar * (G(x) + sum_k Phi_k(x) * y_k),
    y_k = upsilon * sqrt(lambda_k) * z_k,

with ``z_k`` i.i.d. uniform on (-sqrt(3), sqrt(3)) so each amplitude
has zero mean and variance ``upsilon^2 * lambda_k``.  Draws violating
the uniform-coercivity constraint ``b >= bbar * G / 2`` are rejected
and redrawn.

The mean profile ``G`` follows one of two conventions: ``"unit"``
(G identically one on the convective boundary, the experimental
default) or ``"normalized"`` (G scaled so its boundary integral is
one).  The convention in force is recorded on the basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError
from .quadrature import BoundaryQuadrature

_SQRT3 = np.sqrt(3.0)
_EIG_CLIP = -1e-12


@dataclass(frozen=True)
class KLBasis:
    """Truncated eigen-expansion data for the boundary field."""

    quadrature: BoundaryQuadrature
    g_values: np.ndarray        # G at the quadrature nodes
    modes: np.ndarray           # (K, nq) eigenfunctions at the nodes
    eigenvalues: np.ndarray     # (K,) non-increasing, >= 0
    all_eigenvalues: np.ndarray  # full discrete spectrum (diagnostics)
    b_bar: float
    upsilon: float
    correlation_length: float
    g_convention: str

    @property
    def n_modes(self):
        return self.modes.shape[0]

    def amplitude_bounds(self):
        """Per-mode hard bounds |y_k| <= upsilon * sqrt(3 * lambda_k)."""
        return self.upsilon * np.sqrt(3.0 * self.eigenvalues)

    def field(self, y):
        """Reconstruct b(., y) at the quadrature nodes (batched over rows)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        k = y.shape[1]
        vals = self.b_bar * (self.g_values[None, :] + y @ self.modes[:k])
        return vals

    def admissible(self, y):
        """Check b(., y) >= bbar * G / 2 at every quadrature node."""
        lower = 0.5 * self.b_bar * self.g_values
        return np.all(self.field(y) >= lower[None, :], axis=1)


@dataclass(frozen=True)
class FieldRealization:
    """One admissible draw of the boundary field."""

    y: np.ndarray
    b_values: np.ndarray
    admissible: bool
    rejections: int


def kl_expand(boundary: BoundaryQuadrature, delta, upsilon, b_bar, k_max,
              g_convention="unit") -> KLBasis:
    """Eigen-decompose the covariance kernel on the boundary rule nodes.

    Distances in the kernel are ambient 2D distances between quadrature
    points.  Eigenvalues more negative than the clipping tolerance
    (relative to the largest) indicate a broken discretization and
    raise; small negative values are clipped to zero.
    """
    if delta <= 0:
        raise ConfigError(f"correlation length must be positive, got {delta}")
    nq = boundary.n_points
    if not 1 <= k_max <= nq:
        raise ConfigError(
            f"k_max must lie in [1, {nq}] (number of quadrature points)")
    if g_convention not in ("unit", "normalized"):
        raise ConfigError(f"unknown G convention {g_convention!r}")

    pts = boundary.points
    w = boundary.weights
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    kernel = (b_bar * upsilon) ** 2 * np.exp(-d2 / delta ** 2)

    sw = np.sqrt(w)
    sym = kernel * np.outer(sw, sw)
    lam, psi = scipy.linalg.eigh(sym)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    psi = psi[:, order]

    scale = max(lam[0], 1e-300)
    if lam[-1] < _EIG_CLIP * scale and lam[-1] < _EIG_CLIP:
        raise NumericalError(
            f"covariance discretization is indefinite "
            f"(most negative eigenvalue {lam[-1]:.3e})")
    lam = np.clip(lam, 0.0, None)

    # Nystrom eigenfunctions, orthonormal in the weighted inner product.
    modes = (psi[:, :k_max] / sw[:, None]).T

    # Fix a deterministic sign: first non-negligible entry positive.
    for k in range(k_max):
        row = modes[k]
        idx = np.argmax(np.abs(row) > 1e-12 * max(np.abs(row).max(), 1e-300))
        if row[idx] < 0:
            modes[k] = -row

    g_values = np.ones(nq)
    if g_convention == "normalized":
        g_values = g_values / boundary.total_measure()

    return KLBasis(
        quadrature=boundary, g_values=g_values,
        modes=np.ascontiguousarray(modes),
        eigenvalues=lam[:k_max].copy(), all_eigenvalues=lam.copy(),
        b_bar=float(b_bar), upsilon=float(upsilon),
        correlation_length=float(delta), g_convention=g_convention)


def sample_y(kl: KLBasis, k_trunc, rng, max_attempts=1000) -> FieldRealization:
    """Draw one admissible realization of the first ``k_trunc`` amplitudes.

    Rejection sampling enforces the coercivity constraint; a rejection
    rate above one half over ``max_attempts`` draws means the
    fluctuation intensity is too large for this setup and raises.
    """
    if not 1 <= k_trunc <= kl.n_modes:
        raise ConfigError(
            f"k_trunc must lie in [1, {kl.n_modes}], got {k_trunc}")
    std = kl.upsilon * np.sqrt(kl.eigenvalues[:k_trunc])
    rejections = 0
    for _ in range(max_attempts):
        z = rng.uniform(-_SQRT3, _SQRT3, size=k_trunc)
        y = std * z
        if kl.admissible(y)[0]:
            return FieldRealization(
                y=y, b_values=kl.field(y)[0], admissible=True,
                rejections=rejections)
        rejections += 1
    raise ConfigError(
        f"rejection rate exceeded 50% over {max_attempts} draws; "
        "fluctuation intensity upsilon is too large for the constraint")


def sample_y_batch(kl: KLBasis, k_trunc, m, rng, max_rounds=64):
    """Draw ``m`` admissible realizations, vectorized.

    Returns ``(y, rejections)`` with ``y`` of shape (m, k_trunc).
    Raises once the aggregate rejection rate exceeds one half after at
    least 1000 attempts.
    """
    if not 1 <= k_trunc <= kl.n_modes:
        raise ConfigError(
            f"k_trunc must lie in [1, {kl.n_modes}], got {k_trunc}")
    std = kl.upsilon * np.sqrt(kl.eigenvalues[:k_trunc])
    out = np.empty((m, k_trunc))
    need = np.arange(m)
    attempts = 0
    rejections = 0
    for _ in range(max_rounds):
        z = rng.uniform(-_SQRT3, _SQRT3, size=(len(need), k_trunc))
        y = z * std[None, :]
        ok = kl.admissible(y)
        out[need[ok]] = y[ok]
        attempts += len(need)
        rejections += int((~ok).sum())
        need = need[~ok]
        if len(need) == 0:
            return out, rejections
        if attempts >= 1000 and rejections > 0.5 * attempts:
            break
    raise ConfigError(
        "rejection rate exceeded 50%; fluctuation intensity upsilon is "
        "too large for the admissibility constraint")
