import numpy as np
import pytest
from numpy.testing import assert_allclose

from channel_model import ChannelRealization, SystemConfig, sample_channels
from estimators import (
    IdentifiabilityError,
    analytic_mse,
    analytic_mse_G,
    analytic_mse_H,
    cascaded_nmse,
    estimate_frame,
    lmmse_G,
    lmmse_H,
    lmmse_H_dense,
    min_pilot_length,
    noise_cov_D,
    recover_G_noisefree,
    recover_H_noisefree,
)
from experiments import monte_carlo
from hris_model import ConnectionTopology, HrisParams, random_params, reflection_matrices, stack_reception
from pilot_protocol import generate_pilots, project_pilots, simulate_uplink, stack_bs_observations
from utils import DomainError, complex_gaussian, make_rng


def _g_covariances(params, config):
    """Sigma and R_err of the G estimator; both are independent of the observation"""
    est = lmmse_G(np.zeros((config.N_r * config.B, config.K)), stack_reception(params),
                  config.gammas, config.T, config.snr, config.K)
    return est.sigma, est.r_err


@pytest.mark.parametrize("N, K, N_r, expected", [(64, 8, 8, 64), (64, 16, 8, 128), (10, 3, 7, 10), (4, 3, 2, 6)])
def test_min_pilot_length(N, K, N_r, expected):
    assert min_pilot_length(N, K, N_r) == expected


def test_recover_G_noise_free():
    N, K, N_r, B, T = 8, 2, 2, 8, 2
    S = generate_pilots(K, T)
    for seed in range(20):
        rng = make_rng(seed)
        A = stack_reception(random_params(B, N, N_r, seed=seed))
        G = complex_gaussian(rng, (N, K), 1.0)
        recovered = recover_G_noisefree(A @ G @ S.S, S, A)
        assert np.linalg.norm(recovered - G) < 1e-8 * np.linalg.norm(G)


def test_recover_G_needs_enough_observations():
    N, K, N_r, B, T = 4, 2, 2, 1, 2
    S = generate_pilots(K, T)
    for seed in range(20):
        A = stack_reception(random_params(B, N, N_r, seed=seed))
        G = complex_gaussian(make_rng(seed), (N, K), 1.0)
        with pytest.raises(IdentifiabilityError) as info:
            recover_G_noisefree(A @ G @ S.S, S, A)
        assert info.value.required == N * K
        assert info.value.rank < N * K


def test_recover_G_nothing_sensed(make_params):
    A = stack_reception(make_params(4, 4, 2, rho=1.0))
    with pytest.raises(IdentifiabilityError):
        recover_G_noisefree(np.zeros((8, 2)), generate_pilots(2, 2), A)


def test_recover_H_noise_free():
    M, N, K, B, T = 2, 4, 2, 4, 2
    S = generate_pilots(K, T)
    for seed in range(20):
        rng = make_rng(seed)
        psi_list = reflection_matrices(random_params(B, N, 2, seed=seed))
        H = complex_gaussian(rng, (M, N), 1.0)
        G = complex_gaussian(rng, (N, K), 1.0)
        blocks = [H @ psi @ G @ S.S for psi in psi_list]
        recovered = recover_H_noisefree(blocks, G, psi_list, S)
        assert np.linalg.norm(recovered - H) < 1e-8 * np.linalg.norm(H)


def test_recover_H_needs_tau_at_least_N():
    M, N, K, B, T = 2, 4, 2, 1, 2
    S = generate_pilots(K, T)
    for seed in range(20):
        rng = make_rng(seed)
        psi_list = reflection_matrices(random_params(B, N, 2, seed=seed))
        H = complex_gaussian(rng, (M, N), 1.0)
        G = complex_gaussian(rng, (N, K), 1.0)
        with pytest.raises(IdentifiabilityError):
            recover_H_noisefree([H @ psi @ G @ S.S for psi in psi_list], G, psi_list, S)


def test_recover_H_without_reflection(make_params):
    psi_list = reflection_matrices(make_params(4, 4, 2, rho=0.0))
    G = complex_gaussian(make_rng(0), (4, 2), 1.0)
    with pytest.raises(IdentifiabilityError):
        recover_H_noisefree([np.zeros((2, 2))] * 4, G, psi_list, generate_pilots(2, 2))


def test_lmmse_G_without_observation_returns_prior(desk_config, make_params):
    params = make_params(desk_config.B, desk_config.N, desk_config.N_r, rho=1.0)
    est = lmmse_G(np.ones((8, 2)), stack_reception(params), desk_config.gammas, 2, desk_config.snr, 2)
    assert_allclose(est.g_hat, 0)
    assert_allclose(est.sigma, 0)
    assert_allclose(est.r_err, np.eye(4))


def test_lmmse_G_approaches_inverse_at_high_snr():
    params = random_params(2, 4, 2, seed=3)
    A = stack_reception(params)
    G = complex_gaussian(make_rng(3), (4, 2), 0.5)
    est = lmmse_G(A @ G, A, (0.5, 0.5), 2, 1e12, 2)
    direct = np.linalg.solve(A, A @ G)
    assert np.linalg.norm(est.g_hat - direct) < 1e-4 * np.linalg.norm(direct)


def test_covariance_split_identity(desk_config):
    for seed in range(50):
        params = random_params(desk_config.B, desk_config.N, desk_config.N_r, seed=seed)
        sigma, r_err = _g_covariances(params, desk_config)
        assert np.max(np.abs(sigma + r_err - desk_config.sum_gamma * np.eye(desk_config.N))) < 1e-10


def test_analytic_mse_G_limits(make_params):
    nothing_sensed = make_params(1, 2, 1, rho=1.0)
    assert_allclose(analytic_mse_G(nothing_sensed, (1.0,), 1, 1.0, 1), 2.0)
    identity = make_params(1, 2, 2, rho=0.0, mask=ConnectionTopology.partially_connected(2, 2).mask(2, 2))
    assert_allclose(analytic_mse_G(identity, (1.0,), 1, 1.0, 1), 1.0)


def test_analytic_mse_G_is_error_trace(desk_config, desk_params):
    _, r_err = _g_covariances(desk_params, desk_config)
    eps_g = analytic_mse_G(desk_params, desk_config.gammas, desk_config.T, desk_config.snr, desk_config.K)
    assert_allclose(eps_g, np.trace(r_err).real, rtol=1e-12)


def test_analytic_mse_G_rejects_zero_snr(desk_params):
    with pytest.raises(DomainError):
        analytic_mse_G(desk_params, (0.5, 0.5), 2, 0.0, 2)


def test_noise_cov_without_reflection(desk_config, make_params):
    params = make_params(desk_config.B, desk_config.N, desk_config.N_r, rho=0.0)
    D = noise_cov_D(params, np.eye(4), 1.0, 2, desk_config.snr, 2)
    assert_allclose(D.D, np.eye(8) / (2 * desk_config.snr))


def test_noise_cov_single_identity_reflection(make_params):
    params = make_params(1, 4, 2, rho=1.0)
    c, beta, T, snr, K = 0.3, 2.0, 2, 10.0, 2
    D = noise_cov_D(params, c * np.eye(4), beta, T, snr, K)
    assert_allclose(D.D, (beta * 4 * c / K + 1 / (T * snr)) * np.eye(K))


def test_noise_cov_is_positive_definite(desk_config, desk_params):
    _, r_err = _g_covariances(desk_params, desk_config)
    D = noise_cov_D(desk_params, r_err, desk_config.beta, desk_config.T, desk_config.snr, desk_config.K)
    assert np.max(np.abs(D.D - D.D.conj().T)) < 1e-12
    assert np.min(np.linalg.eigvalsh(D.D)) > 0
    assert_allclose(D.block(1, 1), D.D[2:4, 2:4])


def test_mse_H_without_reflection_is_prior(desk_config, make_params):
    params = make_params(desk_config.B, desk_config.N, desk_config.N_r, rho=0.0)
    sigma, r_err = _g_covariances(params, desk_config)
    D = noise_cov_D(params, r_err, 1.0, 2, desk_config.snr, 2)
    assert analytic_mse_H(params, sigma, D, beta=1.0, M=2, K=2) == pytest.approx(1.0 * 2 * 4, rel=1e-14)


def test_mse_H_vanishes_with_beta(desk_config, desk_params):
    config = desk_config.with_updates(beta=1e-12)
    _, eps_h = analytic_mse(desk_params, config)
    assert eps_h < 1e-10


def test_tight_scaling_gives_larger_bound(desk_config, desk_params):
    _, default = analytic_mse(desk_params, desk_config)
    _, tight = analytic_mse(desk_params, desk_config, tight_bound=True)
    assert tight >= default
    assert tight < desk_config.beta * desk_config.M * desk_config.N


def _dense_jensen_mse_H(params, sigma, D, beta, M, K):
    """Tr((I_MN / beta + E^T kron I_M)^-1), E = K sum_ij Tr([D^-T]_ij) Psi(i) Sigma Psi(j)^H"""
    W = np.linalg.inv(D).T
    psi_list = reflection_matrices(params)
    N = sigma.shape[0]
    E = np.zeros((N, N), dtype=complex)
    for i, psi_i in enumerate(psi_list):
        for j, psi_j in enumerate(psi_list):
            trace_ij = np.trace(W[i * K:(i + 1) * K, j * K:(j + 1) * K])
            E += K * trace_ij * (psi_i @ sigma @ psi_j.conj().T)
    precision = np.eye(M * N) / beta + np.kron(E.T, np.eye(M))
    return np.trace(np.linalg.inv(precision)).real


def test_mse_H_matches_dense_jensen_bound(desk_config, desk_params):
    sigma, r_err = _g_covariances(desk_params, desk_config)
    D = noise_cov_D(desk_params, r_err, desk_config.beta, desk_config.T, desk_config.snr, desk_config.K)
    expected = _dense_jensen_mse_H(desk_params, sigma, D.D, desk_config.beta, desk_config.M, desk_config.K)
    eps_h = analytic_mse_H(desk_params, sigma, D, desk_config.beta, desk_config.M, desk_config.K)
    assert eps_h == pytest.approx(expected, rel=1e-10)
    assert analytic_mse(desk_params, desk_config)[1] == pytest.approx(expected, rel=1e-10)


def test_analytic_mse_matches_composed_operations(desk_config, desk_params):
    sigma, r_err = _g_covariances(desk_params, desk_config)
    D = noise_cov_D(desk_params, r_err, desk_config.beta, desk_config.T, desk_config.snr, desk_config.K)
    eps_h = analytic_mse_H(desk_params, sigma, D, desk_config.beta, desk_config.M, desk_config.K)
    eps_g = analytic_mse_G(desk_params, desk_config.gammas, desk_config.T, desk_config.snr, desk_config.K)
    assert_allclose(analytic_mse(desk_params, desk_config), (eps_g, eps_h), rtol=1e-10)


def test_mse_G_never_grows_with_an_extra_subframe(desk_config):
    longer = random_params(desk_config.B + 1, desk_config.N, desk_config.N_r, seed=3)
    shorter = HrisParams(longer.rho[:-1], longer.psi[:-1], longer.phi[:-1], longer.mask)
    args = (desk_config.gammas, desk_config.T, desk_config.snr, desk_config.K)
    assert analytic_mse_G(longer, *args) <= analytic_mse_G(shorter, *args) * (1 + 1e-12)


def test_mse_G_never_grows_with_snr(desk_config, desk_params):
    values = [analytic_mse_G(desk_params, desk_config.gammas, desk_config.T, 10 ** (db / 10), desk_config.K)
              for db in (0, 5, 10, 20, 30, 40)]
    assert np.all(np.diff(values) <= 1e-15)


def test_mse_G_never_shrinks_with_reflection(desk_config, desk_params):
    args = (desk_config.gammas, desk_config.T, desk_config.snr, desk_config.K)
    base = analytic_mse_G(desk_params, *args)
    for b in range(desk_params.B):
        for l in range(desk_params.N):
            rho = np.array(desk_params.rho)
            rho[b, l] = min(rho[b, l] + 0.2, 1.0)
            raised = HrisParams(rho, desk_params.psi, desk_params.phi, desk_params.mask)
            assert analytic_mse_G(raised, *args) >= base * (1 - 1e-12)


def test_lmmse_H_with_zero_regressor(desk_config, desk_params):
    psi_list = reflection_matrices(desk_params)
    D = np.eye(8)
    est = lmmse_H(np.ones(16, complex), np.zeros((4, 2)), psi_list, D, 1.0)
    assert_allclose(est.h_hat, 0)


def test_lmmse_H_near_noiseless_with_true_G(desk_config, desk_params):
    config = desk_config.with_updates(gamma_db=120.0)
    channels = sample_channels(config, seed=9)
    pilots = generate_pilots(config.K, config.T)
    _, ytilde_bs = project_pilots(simulate_uplink(channels, desk_params, pilots, config, seed=9), pilots)
    D = noise_cov_D(desk_params, np.zeros((4, 4)), config.beta, config.T, config.snr, config.K)
    est = lmmse_H(stack_bs_observations(ytilde_bs), channels.G, reflection_matrices(desk_params), D, config.beta)
    assert np.linalg.norm(est.h_hat - channels.H) < 1e-3 * np.linalg.norm(channels.H)


def test_lmmse_H_accepts_blocks_or_vector(desk_config, desk_params):
    channels = sample_channels(desk_config, seed=10)
    pilots = generate_pilots(2, 2)
    _, ytilde_bs = project_pilots(simulate_uplink(channels, desk_params, pilots, desk_config, seed=10), pilots)
    psi_list = reflection_matrices(desk_params)
    D = np.eye(8) * 0.05
    from_vector = lmmse_H(stack_bs_observations(ytilde_bs), channels.G, psi_list, D, 1.0)
    from_blocks = lmmse_H(ytilde_bs, channels.G, psi_list, D, 1.0)
    assert_allclose(from_vector.h_hat, from_blocks.h_hat)


def test_reduced_lmmse_H_matches_kronecker_form(desk_config, desk_params):
    channels = sample_channels(desk_config, seed=12)
    pilots = generate_pilots(2, 2)
    ytilde_rc, ytilde_bs = project_pilots(simulate_uplink(channels, desk_params, pilots, desk_config, seed=12), pilots)
    g_est = lmmse_G(ytilde_rc, stack_reception(desk_params), desk_config.gammas, 2, desk_config.snr, 2)
    D = noise_cov_D(desk_params, g_est.r_err, 1.0, 2, desk_config.snr, 2)
    psi_list = reflection_matrices(desk_params)
    ybar = stack_bs_observations(ytilde_bs)
    reduced = lmmse_H(ybar, g_est.g_hat, psi_list, D, 1.0).h_hat
    dense = lmmse_H_dense(ybar, g_est.g_hat, psi_list, D, 1.0, 2)
    assert_allclose(reduced, dense, rtol=1e-8, atol=1e-12)


@pytest.mark.slow
def test_lmmse_H_error_is_orthogonal_to_estimate(desk_config, desk_params):
    # With the true G the BS model is exactly linear Gaussian
    G = sample_channels(desk_config, seed=0).G
    pilots = generate_pilots(2, 2)
    psi_list = reflection_matrices(desk_params)
    D = noise_cov_D(desk_params, np.zeros((4, 4)), 1.0, 2, desk_config.snr, 2)
    cross, err_energy, est_energy = 0.0, 0.0, 0.0
    for trial in range(4000):
        H = sample_channels(desk_config, seed=(1, trial)).H
        obs = simulate_uplink(ChannelRealization(H, G), desk_params, pilots, desk_config, seed=(2, trial))
        _, ytilde_bs = project_pilots(obs, pilots)
        h_hat = lmmse_H(ytilde_bs, G, psi_list, D, 1.0).h_hat
        error = H - h_hat
        cross += np.vdot(h_hat, error).real
        err_energy += np.sum(np.abs(error) ** 2)
        est_energy += np.sum(np.abs(h_hat) ** 2)
    assert abs(cross) / np.sqrt(err_energy * est_energy) < 0.03


def test_cascaded_nmse_examples():
    rng = make_rng(0)
    H = complex_gaussian(rng, (2, 4), 1.0)
    G = complex_gaussian(rng, (4, 2), 1.0)
    assert cascaded_nmse(H, G, H, G) == 0.0
    assert_allclose(cascaded_nmse(np.zeros_like(H), complex_gaussian(rng, (4, 2), 1.0), H, G), 1.0)
    assert_allclose(cascaded_nmse(2 * H, G, H, G), 1.0)


def test_cascaded_nmse_rejects_zero_channel():
    with pytest.raises(DomainError):
        cascaded_nmse(np.ones((2, 2)), np.ones((2, 1)), np.zeros((2, 2)), np.ones((2, 1)))


def test_estimate_frame_report(desk_config, desk_params):
    channels = sample_channels(desk_config, seed=13)
    report = estimate_frame(channels, desk_params, generate_pilots(2, 2), desk_config, seed=13)
    eps_g, eps_h = analytic_mse(desk_params, desk_config)
    assert_allclose((report.eps_g, report.eps_h), (eps_g, eps_h), rtol=1e-10)
    assert report.g_hat.shape == (4, 2)
    assert report.h_hat.shape == (2, 4)
    assert_allclose(report.sq_error_g, np.sum(np.abs(channels.G - report.g_hat) ** 2))
    assert 0 <= report.cascaded_nmse
    assert report.mse_h_conditional > 0


def test_genie_G_improves_H_on_average(desk_config, desk_params):
    pilots = generate_pilots(2, 2)
    plain, genie = 0.0, 0.0
    for trial in range(200):
        channels = sample_channels(desk_config, seed=(14, trial))
        plain += estimate_frame(channels, desk_params, pilots, desk_config, (14, trial)).sq_error_h
        genie += estimate_frame(channels, desk_params, pilots, desk_config, (14, trial), genie_g=True).sq_error_h
    assert genie < plain


@pytest.mark.slow
def test_monte_carlo_matches_analytic_mse():
    config = SystemConfig(M=2, N=4, N_r=2, K=2, B=3, T=2, gamma_db=20.0, beta=1.0, gammas=(0.5, 0.5))
    params = random_params(3, 4, 2, seed=21)
    eps_g, eps_h = analytic_mse(params, config)
    summary = monte_carlo(config, params, trials=20000, seed=21)
    assert abs(summary.mse_g / eps_g - 1) < 0.03
    assert summary.mse_h >= 0.97 * eps_h
