import numpy as np
import pytest

from cfmixed.estimation import (channel_sqrt, draw_channels, estimation_statistics,
                                assign_pilots, lmmse_estimate,
                                simulate_pilot_observations)
from cfmixed.precoding import (equal_power, lmmse_precoder, mr_normalizer,
                               mr_precoder, normalize, sample_normalizer)

from conftest import random_psd


def test_equal_power_split():
    serving = np.zeros((3, 6), dtype=bool)
    serving[0, :4] = True
    serving[1, 2] = True
    rho = equal_power(serving, 0.2)
    assert np.allclose(rho[0, :4], 0.05)
    assert rho[1, 2] == pytest.approx(0.2)
    assert np.all(rho[~serving] == 0)
    assert np.allclose(rho.sum(axis=1), [0.2, 0.2, 0.0])


def test_mr_is_identity_map():
    x = np.arange(6.0).reshape(1, 1, 2, 3) + 1j
    assert mr_precoder(x) is x


def test_mr_normalizer_matches_samples(small_system):
    est = small_system["est"]
    rng = np.random.default_rng(0)
    h = draw_channels(channel_sqrt(small_system["R"]), 20_000, rng)
    hhat = lmmse_estimate(simulate_pilot_observations(h, est, rng), est)
    mc = sample_normalizer(hhat)
    assert np.allclose(mc, mr_normalizer(est), rtol=0.03)


def test_zero_power_gives_zero_precoder():
    w = np.ones((2, 1, 2, 3), dtype=complex)
    out = normalize(w, np.zeros((1, 2)), np.ones((1, 2)))
    assert not np.any(out)
    out = normalize(w, np.full((1, 2), 0.1), np.zeros((1, 2)))
    assert not np.any(out)


def test_normalized_average_power(small_system):
    est = small_system["est"]
    rng = np.random.default_rng(1)
    h = draw_channels(channel_sqrt(small_system["R"]), 2_000, rng)
    hhat = lmmse_estimate(simulate_pilot_observations(h, est, rng), est)
    serving = np.ones((3, 5), dtype=bool)
    rho = equal_power(serving, 0.2)
    for wbar, norm in ((hhat, mr_normalizer(est)), ):
        w = normalize(wbar, rho, norm)
        power = np.mean(np.sum(np.abs(w) ** 2, axis=-1), axis=0)
        assert np.all((power >= 0.9 * rho) & (power <= 1.1 * rho))
    wbar = lmmse_precoder(hhat, est.C, serving, small_system["p"], small_system["noise"])
    # independent batch for the normalizer, as in the simulation pipeline
    h2 = draw_channels(channel_sqrt(small_system["R"]), 2_000, rng)
    hhat2 = lmmse_estimate(simulate_pilot_observations(h2, est, rng), est)
    norm = sample_normalizer(lmmse_precoder(hhat2, est.C, serving, small_system["p"],
                                            small_system["noise"]))
    w = normalize(wbar, rho, norm)
    power = np.mean(np.sum(np.abs(w) ** 2, axis=-1), axis=0)
    assert np.all((power >= 0.9 * rho) & (power <= 1.1 * rho))


def test_mr_normalization_is_scale_invariant():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((4, 2, 3, 2)) + 1j * rng.standard_normal((4, 2, 3, 2))
    rho = np.full((2, 3), 0.1)
    a = normalize(w, rho, sample_normalizer(w))
    b = normalize(5.0 * w, rho, sample_normalizer(5.0 * w))
    assert np.allclose(a, b, atol=1e-14)


def test_lmmse_single_antenna_is_collinear_with_estimate():
    rng = np.random.default_rng(3)
    hhat = rng.standard_normal((5, 2, 3, 1)) + 1j * rng.standard_normal((5, 2, 3, 1))
    C = np.full((2, 3, 1, 1), 0.01, dtype=complex)
    w = lmmse_precoder(hhat, C, np.ones((2, 3), dtype=bool), 0.1, 0.01)
    ratio = w / hhat
    assert np.allclose(ratio.imag, 0, atol=1e-12)
    assert np.all(ratio.real > 0)


def test_lmmse_solves_its_system():
    rng = np.random.default_rng(4)
    S, Q, K, M = 3, 2, 4, 3
    hhat = rng.standard_normal((S, Q, K, M)) + 1j * rng.standard_normal((S, Q, K, M))
    C = np.stack([np.stack([random_psd(rng, M, 0.1) for _ in range(K)]) for _ in range(Q)])
    serving = np.array([[True, True, False, True], [False, True, True, True]])
    p = np.array([0.1, 0.2, 0.1, 0.05])
    w = lmmse_precoder(hhat, C, serving, p, 0.02)
    for s in range(S):
        for q in range(Q):
            Z = 0.02 * np.eye(M, dtype=complex)
            for i in np.flatnonzero(serving[q]):
                Z += p[i] * (np.outer(hhat[s, q, i], hhat[s, q, i].conj()) + C[q, i])
            for k in range(K):
                if serving[q, k]:
                    res = Z @ w[s, q, k] - p[k] * hhat[s, q, k]
                    assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(hhat[s, q, k])
                else:
                    assert not np.any(w[s, q, k])


def test_lmmse_tends_to_mr_direction_at_high_noise():
    rng = np.random.default_rng(5)
    hhat = rng.standard_normal((2, 1, 3, 4)) + 1j * rng.standard_normal((2, 1, 3, 4))
    C = np.zeros((1, 3, 4, 4), dtype=complex)
    serving = np.ones((1, 3), dtype=bool)
    gaps = []
    for noise in (1.0, 1e2, 1e4):
        w = lmmse_precoder(hhat, C, serving, 0.1, noise)
        u = w / np.linalg.norm(w, axis=-1, keepdims=True)
        v = hhat / np.linalg.norm(hhat, axis=-1, keepdims=True)
        gaps.append(np.abs(1 - np.abs(np.sum(u.conj() * v, axis=-1))).max())
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-6


def test_ill_conditioning_counter():
    hhat = np.zeros((1, 1, 1, 2), dtype=complex)
    hhat[..., 0] = 1e7
    diag = {}
    lmmse_precoder(hhat, np.zeros((1, 1, 2, 2)), np.ones((1, 1), bool), 1.0, 1e-3, diag)
    assert diag["ill_conditioned"] == 1
