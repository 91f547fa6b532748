"""Downlink rate evaluation: use-and-then-forget moments, the MR closed form,
per-cluster SIC decomposition and spectral efficiency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .timing import phase_shift

SCHEMES = ("sync", "async", "mixed")
DENOMINATOR_FLOOR = 1e-15


@dataclass
class SchemeLayout:
    """How one transmission scheme groups APs into streams.

    ``membership[q, i, l]`` is 1 when AP q sends stream l of user i; only
    non-empty clusters get a slot, in ascending cluster order (nearest first),
    and unused slots are all-zero. ``chi[q, k]`` is the phase rotation
    user k sees from AP q.
    """

    name: str
    membership: np.ndarray
    chi: np.ndarray

    @property
    def num_slots(self) -> int:
        return self.membership.shape[-1]

    @property
    def slot_used(self) -> np.ndarray:
        """(K, L) mask of slots that hold a real cluster."""
        return self.membership.any(axis=0)


def dense_membership(cluster) -> np.ndarray:
    """Pack 1-based cluster labels into consecutive non-empty slots."""
    cluster = np.asarray(cluster)
    Q, K = cluster.shape
    slots = []
    width = 1
    for k in range(K):
        labels = np.unique(cluster[:, k][cluster[:, k] > 0])
        slots.append(labels)
        width = max(width, len(labels))
    A = np.zeros((Q, K, width))
    for k, labels in enumerate(slots):
        for j, lab in enumerate(labels):
            A[cluster[:, k] == lab, k, j] = 1.0
    return A


def scheme_layout(scheme, plan, dl_offset, N, n) -> SchemeLayout:
    """Layout of ``sync``, ``async`` or ``mixed`` for a cluster plan.

    ``sync`` assumes perfect alignment (zero offsets) and one coherent
    stream; ``async`` keeps one coherent stream but applies the true phase
    shifts; ``mixed`` uses the plan's clusters with the true phase shifts.
    """
    serving = np.asarray(plan.serving)
    single = dense_membership(serving.astype(np.int64))
    if scheme == "sync":
        return SchemeLayout(scheme, single, phase_shift(np.zeros_like(dl_offset), n, N))
    chi = phase_shift(dl_offset, n, N)
    if scheme == "async":
        return SchemeLayout(scheme, single, chi)
    if scheme == "mixed":
        return SchemeLayout(scheme, dense_membership(plan.cluster), chi)
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class MomentAccumulator:
    """Running sums of the expectations in the UatF SINR.

    ``desired_sum[k, l]`` accumulates ``sum_{q in cluster l} chi_qk^* h_qk^H w_qk``;
    ``power_sum[k, i, l]`` accumulates ``|sum_{q in cluster l of i} chi_qk^* h_qk^H w_qi|^2``.
    For the mixed scheme the within-cluster phase is common, so only the
    magnitude of the desired mean matters.
    """

    desired_sum: np.ndarray
    power_sum: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, K, L):
        return cls(np.zeros((K, L), dtype=complex), np.zeros((K, K, L)), 0)

    @property
    def desired_mean(self) -> np.ndarray:
        return self.desired_sum / self.count

    @property
    def interference_power(self) -> np.ndarray:
        return self.power_sum / self.count

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        return MomentAccumulator(self.desired_sum + other.desired_sum,
                                 self.power_sum + other.power_sum,
                                 self.count + other.count)

    def __iadd__(self, other):
        self.desired_sum = self.desired_sum + other.desired_sum
        self.power_sum = self.power_sum + other.power_sum
        self.count += other.count
        return self


def effective_gains(h, w) -> np.ndarray:
    """``G[s, q, k, i] = h_qk^H w_qi`` for a batch of draws."""
    return np.einsum("sqkm,sqim->sqki", h.conj(), w, optimize=True)


def stream_gains(G, layout: SchemeLayout) -> np.ndarray:
    """``T[i, s, k, l]``: what user k receives from stream l of user i."""
    S, Q, K, _ = G.shape
    X = G * layout.chi.conj()[None, :, :, None]
    Xi = np.ascontiguousarray(np.transpose(X, (3, 0, 2, 1))).reshape(K, S * K, Q)
    T = Xi @ np.transpose(layout.membership, (1, 0, 2))  # (i, s*k, L)
    return T.reshape(K, S, K, -1)


def accumulate_moments(h, w, layout: SchemeLayout) -> MomentAccumulator:
    """Moments contributed by one batch of draws (shape ``(S, Q, K, M)``)."""
    G = effective_gains(h, w)
    return accumulate_gains(G, layout)


def accumulate_gains(G, layout: SchemeLayout) -> MomentAccumulator:
    T = stream_gains(G, layout)
    K = T.shape[0]
    own = T[np.arange(K), :, np.arange(K), :]  # (k, s, L)
    # draws on the last, contiguous axis so the reductions are pairwise
    desired = np.sum(np.ascontiguousarray(np.moveaxis(own, 1, -1)), axis=-1)
    power = np.abs(T) ** 2  # (i, s, k, L)
    power = np.sum(np.ascontiguousarray(np.transpose(power, (2, 0, 3, 1))), axis=-1)
    return MomentAccumulator(desired, power, T.shape[1])


def _floor(den, counter):
    bad = den < DENOMINATOR_FLOOR
    if counter is not None:
        counter["floored"] = counter.get("floored", 0) + int(bad.sum())
    return np.where(bad, DENOMINATOR_FLOOR, den)


def sinr_mixed(acc: MomentAccumulator, noise_power, diagnostics=None) -> np.ndarray:
    """Per-user effective SINR from accumulated moments.

    numerator: sum over clusters of squared desired means; denominator:
    total received power minus the numerator plus noise.
    """
    desired = np.abs(acc.desired_mean) ** 2
    num = desired.sum(axis=1)
    total = acc.interference_power.sum(axis=(1, 2))
    den = _floor(total - num + noise_power, diagnostics)
    return num / den


def sic_cluster_sinrs(acc: MomentAccumulator, noise_power, order=None,
                      diagnostics=None) -> np.ndarray:
    """SINR of each cluster stream under successive cancellation.

    ``order`` is an optional ``(K, L)`` permutation giving the decoding
    sequence per user (default: slot order, i.e. nearest cluster first).
    Returns ``(K, L)`` SINRs in slot order; unused slots carry zero.
    Decoding cluster l removes it from the interference along with every
    previously decoded cluster, so ``prod(1 + gamma_l) - 1`` equals the
    :func:`sinr_mixed` value.
    """
    desired = np.abs(acc.desired_mean) ** 2
    K, L = desired.shape
    if order is None:
        order = np.broadcast_to(np.arange(L), (K, L))
    order = np.asarray(order)
    total = acc.interference_power.sum(axis=(1, 2))
    ordered = np.take_along_axis(desired, order, axis=1)
    removed = np.cumsum(ordered, axis=1)
    den = _floor(total[:, None] - removed + noise_power, diagnostics)
    gamma_ordered = ordered / den
    gamma = np.empty_like(gamma_ordered)
    np.put_along_axis(gamma, order, gamma_ordered, axis=1)
    return gamma


def closed_form_mr(est, layout: SchemeLayout, rho, noise_power, copilot_only=False):
    """MR precoding SINR from second-order statistics alone.

    numerator: ``sum_l |sum_{q in l} chi_qk^* sqrt(rho_qk tr B_qk)|^2``;
    denominator: ``sum_i sum_q rho_qi tr(R_qk B_qi)/tr(B_qi)`` plus the
    coherent leakage ``sum_{i != k} sum_l |sum_{q in l} chi_qk^* sqrt(rho_qi/tr B_qi) c_qki|^2``
    plus noise, where ``c_qki = E{h_qk^H hhat_qi}``.

    With ``copilot_only`` the leakage is restricted to users sharing k's
    pilot and uses ``c = tr(E_iqk B_qk)``; this matches the general form
    whenever phase-rotated pilots of different users stay orthogonal.
    """
    from .estimation import cross_correlations, cross_matrix

    trB = est.trace_B
    A = layout.membership
    chi_c = layout.chi.conj()
    Q, K = trB.shape
    active = (trB > 0) & (rho > 0)
    safe_tr = np.where(active, trB, 1.0)
    amp = np.where(active, np.sqrt(rho * safe_tr), 0.0)  # sqrt(rho tr B)
    inv = np.where(active, np.sqrt(rho / safe_tr), 0.0)  # sqrt(rho / tr B)

    coh_own = np.einsum("qkl,qk,qk->kl", A, chi_c, amp)
    num = np.sum(np.abs(coh_own) ** 2, axis=1)

    trRB = np.einsum("qkmn,qinm->qki", est.R, est.B).real  # tr(R_qk B_qi)
    served = A.sum(axis=2)  # (Q, i)
    var = np.einsum("qi,qi,qki->k", served, inv ** 2, trRB)

    if copilot_only:
        c = np.zeros((Q, K, K), dtype=complex)
        for q in range(Q):
            for k in range(K):
                for i in est.pilots.copilots(k):
                    E = cross_matrix(i, q, k, est)
                    c[q, k, i] = np.trace(E @ est.B[q, k])
    else:
        c = cross_correlations(est)
    lead = np.einsum("qil,qk,qi,qki->kil", A, chi_c, inv, c)
    coh = np.abs(lead) ** 2
    coh[np.arange(K), np.arange(K), :] = 0.0
    den = var + coh.sum(axis=(1, 2)) + noise_power
    return num / den


@dataclass
class RateReport:
    scheme: str
    per_user_sinr: np.ndarray
    per_user_se: np.ndarray
    sum_se: float
    prefactor: float
    subcarrier: int | None = None
    cluster_sinr: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def se_prefactor(tau, tau_p, N, N_ofdm) -> float:
    tau_d = tau - tau_p
    if tau_d <= 0:
        raise ValueError("no channel uses left for downlink data")
    return (tau_d / tau) * (N / N_ofdm)


def spectral_efficiency(gamma, tau, tau_p, N, N_ofdm, scheme="mixed",
                        subcarrier=None) -> RateReport:
    pre = se_prefactor(tau, tau_p, N, N_ofdm)
    gamma = np.asarray(gamma, dtype=float)
    se = pre * np.log2(1.0 + gamma)
    return RateReport(scheme, gamma, se, float(np.sum(se)), pre, subcarrier)
