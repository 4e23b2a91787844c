import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from channel_model import ChannelRealization, SystemConfig, sample_channels
from hris_model import random_params, stack_reception
from pilot_protocol import (
    InfeasiblePilotError,
    generate_pilots,
    project_pilots,
    simulate_uplink,
    stack_bs_observations,
    tx_amplitude,
)
from utils import DimensionError, vec


def test_single_user_pilot_is_constant():
    S = generate_pilots(1, 2).S
    assert_allclose(S, [[1, 1]])
    assert_allclose(S @ S.conj().T, [[2]])


def test_two_point_fourier_pilots():
    S = generate_pilots(2, 2).S
    assert_allclose(S, [[1, 1], [1, -1]], atol=1e-15)
    assert abs(np.vdot(S[0], S[1])) < 1e-15


@pytest.mark.parametrize("K, T", [(8, 13), (8, 8), (3, 104)])
def test_pilots_are_orthogonal(K, T):
    S = generate_pilots(K, T).S
    assert np.max(np.abs(S @ S.conj().T - T * np.eye(K))) < 1e-10 * T


def test_more_users_than_slots_is_infeasible():
    with pytest.raises(InfeasiblePilotError):
        generate_pilots(3, 2)


def test_noise_free_bs_block_is_exact(desk_config, make_params):
    config = desk_config.with_updates(B=1)
    params = make_params(1, config.N, config.N_r, rho=1.0)
    channels = sample_channels(config, seed=1)
    pilots = generate_pilots(config.K, config.T)
    obs = simulate_uplink(channels, params, pilots, config, seed=1, add_noise=False)
    a = tx_amplitude(config)
    assert_allclose(obs.y_bs[0], a * channels.H @ channels.G @ pilots.S, rtol=1e-12)


def test_nothing_sensed_at_full_reflection(desk_config, make_params):
    params = make_params(desk_config.B, desk_config.N, desk_config.N_r, rho=1.0)
    obs = simulate_uplink(sample_channels(desk_config, 2), params, generate_pilots(2, 2),
                          desk_config, seed=2, add_noise=False)
    assert_array_equal(obs.y_rc, 0)


def test_noise_only_variance_is_sigma2():
    config = SystemConfig(M=10, N=10, N_r=10, K=1, B=10, T=1000, gamma_db=0.0, beta=0.0, gammas=(0.0,))
    params = random_params(config.B, config.N, config.N_r, seed=0)
    channels = ChannelRealization(H=np.zeros((10, 10), complex), G=np.zeros((10, 1), complex))
    obs = simulate_uplink(channels, params, generate_pilots(1, 1000), config, seed=3)
    assert obs.y_rc.size == 100000
    assert_allclose(np.mean(np.abs(obs.y_rc) ** 2), 1.0, rtol=0.03)
    assert_allclose(np.mean(np.abs(np.hstack(obs.y_bs)) ** 2), 1.0, rtol=0.03)


def test_projected_noise_variance():
    config = SystemConfig(M=1, N=10, N_r=10, K=10, B=1000, T=10, gamma_db=10.0, beta=0.0, gammas=(0.0,) * 10)
    params = random_params(config.B, config.N, config.N_r, seed=0)
    channels = ChannelRealization(H=np.zeros((1, 10), complex), G=np.zeros((10, 10), complex))
    pilots = generate_pilots(config.K, config.T)
    ytilde_rc, _ = project_pilots(simulate_uplink(channels, params, pilots, config, seed=4), pilots)
    assert ytilde_rc.size == 100000
    per_entry = 1.0 / (config.T * config.snr)
    assert_allclose(np.mean(np.abs(ytilde_rc) ** 2), per_entry, rtol=0.03)
    # second moment of a K-column row
    assert_allclose(np.mean(np.sum(np.abs(ytilde_rc) ** 2, axis=1)), config.K * per_entry, rtol=0.03)


def test_noise_free_projection_recovers_A_G(desk_config, desk_params):
    channels = sample_channels(desk_config, seed=5)
    pilots = generate_pilots(desk_config.K, desk_config.T)
    obs = simulate_uplink(channels, desk_params, pilots, desk_config, seed=5, add_noise=False)
    ytilde_rc, ytilde_bs = project_pilots(obs, pilots)
    expected = stack_reception(desk_params) @ channels.G
    assert np.linalg.norm(ytilde_rc - expected) < 1e-10 * np.linalg.norm(expected)
    psi_1 = np.diag(desk_params.rho[0] * np.exp(1j * desk_params.psi[0]))
    assert_allclose(ytilde_bs[0], channels.H @ psi_1 @ channels.G, rtol=1e-10)


def test_square_pilots_projection_is_inverse(desk_config, desk_params):
    pilots = generate_pilots(2, 2)
    obs = simulate_uplink(sample_channels(desk_config, 6), desk_params, pilots, desk_config, seed=6)
    ytilde_rc, _ = project_pilots(obs, pilots)
    S = pilots.S
    direct = obs.y_rc @ np.linalg.inv(S) @ (S @ S.conj().T / pilots.T) / obs.tx_amplitude
    assert_allclose(ytilde_rc, direct, rtol=1e-12)


def test_projection_rejects_wrong_length(desk_config, desk_params):
    obs = simulate_uplink(sample_channels(desk_config, 7), desk_params, generate_pilots(2, 2), desk_config, seed=7)
    with pytest.raises(DimensionError):
        project_pilots(obs, generate_pilots(2, 3))


def test_simulate_rejects_mismatched_channels(desk_config, desk_params):
    channels = ChannelRealization(H=np.zeros((3, 4), complex), G=np.zeros((4, 2), complex))
    with pytest.raises(DimensionError):
        simulate_uplink(channels, desk_params, generate_pilots(2, 2), desk_config, seed=0)


def test_noise_streams_are_deterministic(desk_config, desk_params):
    channels = sample_channels(desk_config, seed=8)
    pilots = generate_pilots(2, 2)
    first = simulate_uplink(channels, desk_params, pilots, desk_config, seed=(8, 0))
    second = simulate_uplink(channels, desk_params, pilots, desk_config, seed=(8, 0))
    assert_array_equal(first.y_rc, second.y_rc)
    assert_array_equal(first.y_bs[3], second.y_bs[3])


def test_stacked_bs_vector_is_block_vec():
    blocks = [np.arange(4).reshape(2, 2) + 10 * b for b in range(3)]
    stacked = stack_bs_observations(blocks)
    assert_array_equal(stacked, np.concatenate([vec(block) for block in blocks]))


def test_projected_hris_observation_is_linear_in_G(desk_config, desk_params):
    pilots = generate_pilots(desk_config.K, desk_config.T)
    base = sample_channels(desk_config, seed=14)
    G1 = sample_channels(desk_config, seed=15).G
    G2 = sample_channels(desk_config, seed=16).G

    def ytilde_rc(G):
        obs = simulate_uplink(ChannelRealization(base.H, G), desk_params, pilots, desk_config, seed=17)
        return project_pilots(obs, pilots)[0]

    noise = ytilde_rc(np.zeros_like(G1))
    combined = ytilde_rc(G1 + G2) - noise
    assert_allclose(combined, (ytilde_rc(G1) - noise) + (ytilde_rc(G2) - noise), atol=1e-12)
    assert_allclose(ytilde_rc(2.5 * G1) - noise, 2.5 * (ytilde_rc(G1) - noise), atol=1e-12)
    assert np.any(noise != 0)
