"""MR and local MMSE precoding with average-power normalization."""

from __future__ import annotations

import numpy as np

# condition-number ceiling before an L-MMSE solve is flagged
COND_LIMIT = 1e12


def equal_power(serving, ap_power: float) -> np.ndarray:
    """``rho[q, i] = P_ap / |K_q|`` for served users, zero elsewhere."""
    serving = np.asarray(serving, dtype=bool)
    load = serving.sum(axis=1, keepdims=True)
    return np.where(serving, ap_power / np.maximum(load, 1), 0.0)


def mr_precoder(hhat):
    return hhat


def mr_normalizer(est) -> np.ndarray:
    """Analytic ``E{||hhat_qk||^2} = tr(B_qk)``."""
    return est.trace_B


def lmmse_precoder(hhat, C, serving, ul_power, noise_power, diagnostics=None):
    """Local MMSE directions from each AP's own estimates.

    ``hhat`` is ``(S, Q, K, M)``. For served pairs,
    ``wbar_qk = p_k (sum_{i in K_q} p_i (hhat_qi hhat_qi^H + C_qi) + sigma^2 I)^{-1} hhat_qk``;
    other entries are zero.
    """
    S, Q, K, M = hhat.shape
    p = np.broadcast_to(np.asarray(ul_power, dtype=float), (K,))
    weight = np.asarray(serving, dtype=float) * p[None, :]  # (Q, K)
    Z = np.einsum("qi,sqim,sqin->sqmn", weight, hhat, hhat.conj())
    Z += np.einsum("qi,qimn->qmn", weight, C)[None]
    Z += noise_power * np.eye(M)
    if diagnostics is not None:
        # lambda_max <= trace, lambda_min >= sigma^2
        bound = np.einsum("sqmm->sq", Z).real / noise_power
        diagnostics["ill_conditioned"] = (diagnostics.get("ill_conditioned", 0)
                                          + int(np.sum(bound > COND_LIMIT)))
    rhs = np.swapaxes(hhat, -1, -2)  # (S, Q, M, K)
    sol = np.linalg.solve(Z, rhs)
    w = np.swapaxes(sol, -1, -2) * p[None, None, :, None]
    return w * np.asarray(serving)[None, :, :, None]


def sample_normalizer(wbar) -> np.ndarray:
    """Batch mean of ``||wbar_qk||^2`` with pairwise summation over draws."""
    sq = np.sum(np.abs(wbar) ** 2, axis=-1)  # (S, Q, K)
    return np.sum(np.ascontiguousarray(np.moveaxis(sq, 0, -1)), axis=-1) / sq.shape[0]


def normalize(wbar, rho, normalizer):
    """Scale directions so that ``E{||w_qk||^2} = rho_qk``.

    Pairs with zero power or a zero normalizer get a zero precoder.
    """
    normalizer = np.asarray(normalizer, dtype=float)
    ok = (normalizer > 0) & (rho > 0)
    scale = np.where(ok, np.sqrt(np.where(ok, rho, 0.0) / np.where(ok, normalizer, 1.0)), 0.0)
    return wbar * scale[None, :, :, None]
