import numpy as np
import pytest

from eeisac.system_model import SystemConfig


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    return SystemConfig(n_tx=4, n_rf=4, n_rx=2, n_rx_sen=4, n_users=2, n_streams=1,
                        n_sub=2, n_sym=8, p_tx_w=10.0, p_th=0.5,
                        theta_targets=(np.deg2rad(20.0),))


def on_grid_target(cfg, angle_rad, kd, ld, gain=1.0):
    """Target whose delay and Doppler fall exactly on RD bins ``(kd, ld)``."""
    from eeisac.channel import SPEED_OF_LIGHT, Target
    from eeisac.radar import pulse_timing
    _, eps_d, eps_D = pulse_timing(cfg)
    rng_m = kd * eps_d * SPEED_OF_LIGHT / 2
    v = ld * eps_D * SPEED_OF_LIGHT / (2 * cfg.carrier_hz)
    return Target(float(angle_rad), float(rng_m), float(v), gain)
