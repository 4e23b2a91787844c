"""Shared scenarios for the test suite"""

from pathlib import Path

import numpy as np
import pytest

from channel_model import SystemConfig
from hris_model import HrisParams, random_params

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def desk_config() -> SystemConfig:
    """Tiny normalized scenario used by the Monte Carlo oracles"""
    return SystemConfig(M=2, N=4, N_r=2, K=2, B=4, T=2, gamma_db=20.0, beta=1.0, gammas=(0.5, 0.5))


@pytest.fixture
def pathloss_config() -> SystemConfig:
    """Tiny scenario with path-loss-scale channel variances at high SNR"""
    return SystemConfig(M=2, N=4, N_r=2, K=2, B=4, T=2, gamma_db=80.0, beta=1.8e-6, gammas=(1e-5, 1e-5))


@pytest.fixture
def desk_params(desk_config) -> HrisParams:
    return random_params(desk_config.B, desk_config.N, desk_config.N_r, seed=1)


@pytest.fixture
def configs_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path, monkeypatch):
    monkeypatch.setenv("LOG_FILE", str(tmp_path / "logs" / "hris.log"))


def constant_params(B: int, N: int, N_r: int, rho: float, psi: float = 0.0, phi: float = 0.0,
                    mask=None) -> HrisParams:
    mask = np.ones((N_r, N), dtype=bool) if mask is None else mask
    return HrisParams(np.full((B, N), rho), np.full((B, N), psi), np.full((B, N_r, N), phi), mask)


@pytest.fixture
def make_params():
    return constant_params
