"""Uplink pilots and asynchronous LMMSE channel estimation.

Conventions: ``alpha[i, q, k] = phi_{t_i}^T Theta_{qi}^T phi_{t_k}^*``,
matrices per (AP, user) are stacked as ``(Q, K, M, M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import pairwise_distances


class DegeneratePilotError(ValueError):
    """A user's own pilot inner product vanished; its estimate is undefined."""


@dataclass
class PilotBook:
    tau_p: int
    sequences: np.ndarray  # (tau_p, tau_p); row t is pilot t
    assignment: np.ndarray  # (K,) pilot index per user

    @property
    def num_users(self) -> int:
        return len(self.assignment)

    def copilots(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == self.assignment[k])

    @property
    def same_pilot(self) -> np.ndarray:
        """K x K boolean mask, True where two users share a pilot."""
        t = self.assignment
        return t[:, None] == t[None, :]


def dft_pilots(tau_p: int) -> np.ndarray:
    m = np.arange(tau_p)
    return np.exp(2j * np.pi * np.outer(m, m) / tau_p)


def assign_pilots(num_users: int, tau_p: int, user_positions=None,
                  area_side=None, wrap=True) -> PilotBook:
    """Orthogonal pilots while they last, then greedy reuse.

    Users beyond ``tau_p`` pick, among the least-loaded pilots, the one
    whose current holders are farthest away (largest minimum distance).
    Without positions the reuse falls back to round robin.
    """
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    t = np.empty(num_users, dtype=int)
    first = min(num_users, tau_p)
    t[:first] = np.arange(first)
    if num_users > tau_p:
        if user_positions is None:
            t[tau_p:] = np.arange(num_users - tau_p) % tau_p
        else:
            pos = np.asarray(user_positions, dtype=float)
            side = area_side if area_side is not None else 1.0
            d = pairwise_distances(pos, pos, side, wrap=wrap and area_side is not None)
            load = np.bincount(t[:tau_p], minlength=tau_p)
            for k in range(tau_p, num_users):
                candidates = np.flatnonzero(load == load.min())
                score = [d[k, :k][t[:k] == c].min() for c in candidates]
                # argmax picks the lowest pilot index on ties
                c = candidates[int(np.argmax(score))]
                t[k] = c
                load[c] += 1
    return PilotBook(tau_p, dft_pilots(tau_p), t)


def alpha(phi_i, phi_k, theta_qi):
    """``phi_i^T Theta^T phi_k^*``. ``theta_qi`` may be a matrix or its diagonal."""
    theta_qi = np.asarray(theta_qi)
    if theta_qi.ndim == 2:
        return np.asarray(phi_i) @ theta_qi.T @ np.conj(phi_k)
    return np.sum(np.asarray(phi_i) * theta_qi * np.conj(phi_k))


def pilot_alphas(pilots: PilotBook, theta_diag) -> np.ndarray:
    """Inner products of every user's phase-rotated pilot with every pilot.

    ``theta_diag`` has shape ``(Q, K, tau_p)``. Returns ``(K, Q, tau_p)``:
    entry ``[i, q, t]`` is user i's received pilot at AP q projected on pilot t.
    """
    phi = pilots.sequences
    rotated = phi[pilots.assignment][None, :, :] * theta_diag  # (Q, K, tau)
    return np.einsum("qim,tm->iqt", rotated, phi.conj())


@dataclass
class EstimationSet:
    """Second-order statistics of the LMMSE estimates for one drop.

    ``alpha`` is ``(K, Q, K)`` indexed ``[i, q, k]``; ``psi`` is indexed by
    pilot, ``(Q, tau_p, M, M)``; ``B``, ``C``, ``R`` and ``filters`` are
    ``(Q, K, M, M)``.
    """

    alpha: np.ndarray
    alpha_pilot: np.ndarray
    psi: np.ndarray
    B: np.ndarray
    C: np.ndarray
    R: np.ndarray
    filters: np.ndarray
    ul_power: np.ndarray
    noise_power: float
    pilots: PilotBook
    diagnostics: dict = field(default_factory=dict)

    @property
    def trace_B(self) -> np.ndarray:
        return np.einsum("qkmm->qk", self.B).real


def psi_matrices(alpha_pilot, R, ul_power, noise_power, tau_p, mode="matrix"):
    """Covariance of the projected pilot signal, per (AP, pilot).

    ``mode="matrix"``: ``sum_i p_i/tau_p |alpha|^2 R_qi + sigma^2 I``.
    ``mode="scalar"``: the R-free weighting ``(sum_i p_i/tau_p |alpha|^2 + sigma^2) I``,
    which is not a signal covariance and is kept only for sensitivity runs.
    """
    Q, K, M, _ = R.shape
    weights = (np.asarray(ul_power)[:, None, None] / tau_p) * np.abs(alpha_pilot) ** 2
    eye = np.eye(M)
    if mode == "matrix":
        psi = np.einsum("iqt,qimn->qtmn", weights, R)
        return psi + noise_power * eye
    if mode == "scalar":
        s = weights.sum(axis=0)  # (Q, tau)
        return (s + noise_power)[..., None, None] * eye
    raise ValueError(f"unknown psi mode {mode!r}")


def estimation_statistics(R, pilots: PilotBook, theta_diag, ul_power,
                          noise_power, psi_mode="matrix") -> EstimationSet:
    """Estimator filters plus estimate/error covariances for every (q, k)."""
    R = np.asarray(R)
    Q, K, M, _ = R.shape
    tau_p = pilots.tau_p
    p = np.broadcast_to(np.asarray(ul_power, dtype=float), (K,)).copy()
    a_pil = pilot_alphas(pilots, theta_diag)
    a = a_pil[:, :, pilots.assignment]  # (K, Q, K): [i, q, k]
    psi = psi_matrices(a_pil, R, p, noise_power, tau_p, psi_mode)

    own = a[np.arange(K), :, np.arange(K)].T  # (Q, K): alpha_kqk
    if np.any(np.abs(own) < 1e-12 * tau_p):
        raise DegeneratePilotError("alpha_kqk vanished for some (q, k)")
    psi_k = psi[:, pilots.assignment]  # (Q, K, M, M)
    # R Psi^{-1} = (Psi^{-1} R)^H since both are Hermitian
    r_psi_inv = np.swapaxes(np.linalg.solve(psi_k, R), -1, -2).conj()
    scale = np.sqrt(p / tau_p)[None, :] * own.conj()
    filters = scale[..., None, None] * r_psi_inv
    B = ((p / tau_p)[None, :] * np.abs(own) ** 2)[..., None, None] * (r_psi_inv @ R)
    B = 0.5 * (B + np.swapaxes(B, -1, -2).conj())
    C = R - B
    return EstimationSet(a, a_pil, psi, B, C, R, filters, p, float(noise_power),
                         pilots, {"ridge_inverses": 0})


def psi(alpha_k, ul_power, noise_power, tau_p, R_q=None):
    """Single-AP covariance for one user's pilot.

    ``alpha_k[i]`` is ``alpha_iqk``; ``R_q[i]`` is ``R_qi``. Without ``R_q``
    the scalar reading is returned (as a multiple of the identity, M = 1
    unless ``R_q`` gives the dimension).
    """
    w = np.asarray(ul_power, dtype=float) / tau_p * np.abs(np.asarray(alpha_k)) ** 2
    if R_q is None:
        return np.atleast_2d(w.sum() + noise_power)
    R_q = np.asarray(R_q)
    return np.einsum("i,imn->mn", w, R_q) + noise_power * np.eye(R_q.shape[-1])


def lmmse_estimate(y, est: EstimationSet):
    """Apply the LMMSE filters to projected pilot observations.

    ``y`` has shape ``(..., Q, tau_p, M)``. Returns estimates with shape
    ``(..., Q, K, M)``.
    """
    y_k = y[..., :, est.pilots.assignment, :]
    return np.einsum("qkmn,...qkn->...qkm", est.filters, y_k)


def cross_matrix(i: int, q: int, k: int, est: EstimationSet) -> np.ndarray:
    """Matrix E with ``hhat_qi = E @ hhat_qk`` for co-pilot users i and k."""
    if est.pilots.assignment[i] != est.pilots.assignment[k]:
        raise ValueError("users i and k do not share a pilot")
    a_iqk = est.alpha[i, q, k]
    a_kqk = est.alpha[k, q, k]
    if abs(a_kqk) == 0:
        raise DegeneratePilotError(f"alpha_kqk vanished at (q={q}, k={k})")
    R_qk = est.R[q, k]
    M = R_qk.shape[0]
    try:
        if np.linalg.cond(R_qk) > 1e12:
            raise np.linalg.LinAlgError
        R_inv = np.linalg.inv(R_qk)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * np.trace(R_qk).real / M
        R_inv = np.linalg.inv(R_qk + ridge * np.eye(M))
        est.diagnostics["ridge_inverses"] = est.diagnostics.get("ridge_inverses", 0) + 1
    factor = np.sqrt(est.ul_power[i] / est.ul_power[k]) * np.conj(a_iqk / a_kqk)
    return factor * est.R[q, i] @ R_inv


def cross_correlations(est: EstimationSet) -> np.ndarray:
    """``E{h_qk^H hhat_qi}`` for every (q, k, i), shape ``(Q, K, K)``.

    Holds for any pair of users: the estimate of user i is built from the
    observation on pilot t_i, which contains user k's channel through
    ``alpha[k, q, i]``. For co-pilot users it equals ``tr(E_iqk B_qk)``.
    """
    K = est.alpha.shape[0]
    p = est.ul_power
    tau_p = est.pilots.tau_p
    own = est.alpha[np.arange(K), :, np.arange(K)].T  # (Q, K) alpha_iqi
    # leakage of user k's channel into the observation used for user i
    leak = np.transpose(est.alpha, (1, 0, 2))  # (Q, k, i): alpha_kqi
    coef = (np.sqrt(np.outer(p, p)) / tau_p)[None] * own.conj()[:, None, :] * leak
    psi_i = est.psi[:, est.pilots.assignment]  # (Q, i, M, M)
    # R_qi Psi_qi^{-1} = (Psi_qi^{-1} R_qi)^H
    sol = np.linalg.solve(psi_i, est.R)
    tr = np.einsum("qinm,qknm->qki", sol.conj(), est.R)
    return coef * tr


def simulate_pilot_observations(h, est: EstimationSet, rng):
    """Projected pilot signals ``y[..., q, t, :]`` for channel draws ``h``.

    ``h`` has shape ``(S, Q, K, M)``. The projections of the noise matrix on
    distinct DFT pilots are independent CN(0, sigma^2 I) vectors, so they are
    drawn directly.
    """
    S, Q, K, M = h.shape
    tau_p = est.pilots.tau_p
    gain = np.sqrt(est.ul_power / tau_p)[:, None, None] * est.alpha_pilot  # (K, Q, t)
    y = np.einsum("iqt,sqim->sqtm", gain, h)
    noise = complex_normal(rng, (S, Q, tau_p, M)) * np.sqrt(est.noise_power)
    return y + noise


def complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def channel_sqrt(R) -> np.ndarray:
    """Hermitian square roots of a stack of PSD matrices."""
    w, V = np.linalg.eigh(R)
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2).conj()


def draw_channels(R_sqrt, num, rng):
    """``num`` independent draws of every ``h_qk ~ CN(0, R_qk)``, shape (S, Q, K, M)."""
    Q, K, M, _ = R_sqrt.shape
    z = complex_normal(rng, (num, Q, K, M))
    return np.einsum("qkmn,sqkn->sqkm", R_sqrt, z)
