import numpy as np
import pytest

from cfmixed.estimation import assign_pilots, estimation_statistics
from cfmixed.timing import OfdmConfig, timing_model, ul_phase_diagonals
from cfmixed.topology import NetworkConfig, generate_drop


def random_psd(rng, M, scale=1.0):
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    R = A @ A.conj().T + 0.1 * np.eye(M)
    return scale * M * R / np.trace(R).real


@pytest.fixture
def small_system():
    """Q=3 APs, K=5 users sharing 4 pilots, correlated R, asynchronous uplink."""
    rng = np.random.default_rng(2024)
    Q, K, M, tau_p = 3, 5, 3, 4
    R = np.empty((Q, K, M, M), dtype=complex)
    for q in range(Q):
        for k in range(K):
            R[q, k] = random_psd(rng, M, scale=10 ** rng.uniform(-1, 0))
    pilots = assign_pilots(K, tau_p)
    ofdm = OfdmConfig(num_subcarriers=64, cp_length=8,
                      coherence_block={"n_sub": tau_p, "n_t": 7, "n1": 20})
    ul = rng.integers(0, 6, size=(Q, K))
    theta = ul_phase_diagonals(ul, ofdm)
    p = np.array([0.1, 0.2, 0.1, 0.05, 0.1])
    est = estimation_statistics(R, pilots, theta, p, 0.05)
    return {"R": R, "pilots": pilots, "theta": theta, "ul": ul, "p": p,
            "noise": 0.05, "est": est, "ofdm": ofdm}


@pytest.fixture
def desk_drop():
    cfg = NetworkConfig(num_aps=4, num_users=2, antennas_per_ap=2, shadowing_std_db=0.0)
    return cfg, generate_drop(cfg, 11)


def build_estimation(drop, serving, ofdm, ul_power=0.1, noise=None, uplink="nearest",
                     tau_p=None):
    tau_p = tau_p or ofdm.coherence_block.n_sub
    tm = timing_model(drop.distances, serving, ofdm, uplink)
    pilots = assign_pilots(drop.num_users, tau_p, drop.user_positions, 1000.0)
    noise = noise if noise is not None else NetworkConfig().noise_power
    est = estimation_statistics(drop.R, pilots, ul_phase_diagonals(tm.ul_offset, ofdm),
                                ul_power, noise)
    return tm, est
