import numpy as np
import pytest

from rbsuite.errors import ConfigError
from rbsuite.klfield import kl_expand, sample_y, sample_y_batch
from rbsuite.meshing import GAMMA_B, T_SINK, build_mesh
from rbsuite.quadrature import boundary_quadrature


@pytest.fixture(scope="module")
def bq():
    mesh = build_mesh(T_SINK, 0.2)
    return boundary_quadrature(mesh, GAMMA_B)


@pytest.fixture(scope="module")
def kl(bq):
    return kl_expand(bq, delta=0.5, upsilon=0.058, b_bar=0.5, k_max=25)


def test_eigenvalues_sorted_nonnegative(kl):
    lam = kl.eigenvalues
    assert np.all(np.diff(lam) <= 0)
    assert np.all(lam >= 0)


def test_modes_orthonormal_weighted(kl, bq):
    gram = (kl.modes * bq.weights) @ kl.modes.T
    assert np.abs(gram - np.eye(kl.n_modes)).max() < 1e-8


def test_trace_identity(kl, bq):
    # the full discrete spectrum carries the kernel trace exactly
    trace = np.sum(bq.weights) * (kl.b_bar * kl.upsilon) ** 2
    assert abs(kl.all_eigenvalues.sum() - trace) < 1e-6 * trace


def test_covariance_reconstruction_within_tail(kl, bq):
    pts, w = bq.points, bq.weights
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    kernel = (kl.b_bar * kl.upsilon) ** 2 * np.exp(-d2 / kl.correlation_length ** 2)
    sw = np.sqrt(w)
    sym = kernel * np.outer(sw, sw)
    modes_w = kl.modes * sw[None, :]
    recon = (modes_w.T * kl.eigenvalues) @ modes_w
    tail = np.sqrt(np.sum(kl.all_eigenvalues[kl.n_modes:] ** 2))
    assert np.linalg.norm(sym - recon, "fro") <= tail * (1 + 1e-8)


def test_large_delta_rank_one_limit(bq):
    kl_inf = kl_expand(bq, delta=1e6, upsilon=0.058, b_bar=0.5, k_max=10)
    lam = kl_inf.eigenvalues
    assert lam[0] >= 0.999 * kl_inf.all_eigenvalues.sum()
    assert np.all(lam[1:] <= 1e-3 * lam[0])


def test_normalized_g_convention(bq):
    kl_n = kl_expand(bq, delta=0.5, upsilon=0.058, b_bar=0.5, k_max=5,
                     g_convention="normalized")
    assert abs(np.sum(bq.weights * kl_n.g_values) - 1.0) < 1e-10
    assert kl_n.g_convention == "normalized"


def test_zero_upsilon_degenerate(bq):
    kl0 = kl_expand(bq, delta=0.5, upsilon=0.0, b_bar=0.5, k_max=3)
    real = sample_y(kl0, 3, np.random.default_rng(0))
    assert np.all(real.y == 0.0)
    assert np.allclose(real.b_values, 0.5 * kl0.g_values)
    assert real.admissible


def test_amplitude_moments(kl):
    # Y_k = upsilon*sqrt(lam_k)*Z_k with unit-variance uniform Z_k
    rng = np.random.default_rng(7)
    m = 100_000
    ys, _ = sample_y_batch(kl, 4, m, rng)
    target_var = kl.upsilon ** 2 * kl.eigenvalues[:4]
    for k in range(4):
        se_mean = np.sqrt(target_var[k] / m)
        assert abs(ys[:, k].mean()) < 3 * se_mean
        # Var of the variance estimator for uniform Z: (mu4 - sigma^4)/m
        se_var = target_var[k] * np.sqrt((9.0 / 5.0 - 1.0) / m)
        assert abs(ys[:, k].var(ddof=1) - target_var[k]) < 3 * se_var


def test_amplitudes_uncorrelated(kl):
    rng = np.random.default_rng(8)
    m = 100_000
    ys, _ = sample_y_batch(kl, 4, m, rng)
    corr = np.corrcoef(ys.T)
    off = corr[~np.eye(4, dtype=bool)]
    assert np.abs(off).max() < 3.0 / np.sqrt(m)


def test_admissibility_always_holds_at_experiment_settings(kl):
    rng = np.random.default_rng(9)
    _, rejections = sample_y_batch(kl, kl.n_modes, 10_000, rng)
    assert rejections == 0


def test_linear_reconstruction_exact(kl):
    rng = np.random.default_rng(10)
    real = sample_y(kl, 10, rng)
    manual = kl.b_bar * (kl.g_values + real.y @ kl.modes[:10])
    assert np.array_equal(real.b_values, manual)


def test_truncation_gap_bounded_by_summable_tail(kl):
    # |b_full - b_K|_inf is controlled by the summable eigenvalue tail;
    # the bound itself is non-increasing in K and vanishes at full order.
    # (The raw sup-norm gap is not pointwise monotone: dropping a signed
    # term can increase it, so only the triangle-inequality step is
    # asserted between consecutive K.)
    rng = np.random.default_rng(11)
    full = sample_y(kl, kl.n_modes, rng)
    b_full = kl.field(full.y)[0]
    prev = None
    for K in range(1, kl.n_modes + 1):
        gap = np.abs(b_full - kl.field(full.y[:K])[0]).max()
        tail_bound = kl.b_bar * kl.upsilon * np.sqrt(3.0) * np.sum(
            np.sqrt(kl.eigenvalues[K:]) * np.abs(kl.modes[K:]).max(axis=1))
        assert gap <= tail_bound * (1 + 1e-8) + 1e-15
        if prev is not None:
            step = kl.b_bar * abs(full.y[K - 1]) * np.abs(kl.modes[K - 1]).max()
            assert gap <= prev + step + 1e-15
        prev = gap
    assert prev == 0.0


def test_rejection_rate_error(bq):
    kl_big = kl_expand(bq, delta=0.5, upsilon=80.0, b_bar=0.5, k_max=10)
    with pytest.raises(ConfigError):
        sample_y(kl_big, 10, np.random.default_rng(0), max_attempts=200)
    with pytest.raises(ConfigError):
        sample_y_batch(kl_big, 10, 2000, np.random.default_rng(0))


def test_invalid_inputs(bq, kl):
    with pytest.raises(ConfigError):
        kl_expand(bq, delta=0.0, upsilon=0.058, b_bar=0.5, k_max=5)
    with pytest.raises(ConfigError):
        kl_expand(bq, delta=0.5, upsilon=0.058, b_bar=0.5,
                  k_max=bq.n_points + 1)
    with pytest.raises(ConfigError):
        sample_y(kl, 0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        sample_y(kl, kl.n_modes + 1, np.random.default_rng(0))
