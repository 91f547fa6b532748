"""Quantized propagation-delay offsets and the per-subcarrier phase shifts they
induce, for both link directions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass
class CoherenceBlock:
    n_sub: int = 14
    n_t: int = 7
    n1: int | None = None  # first subcarrier; None -> the centre block

    @property
    def tau(self) -> int:
        return self.n_sub * self.n_t


@dataclass
class OfdmConfig:
    num_subcarriers: int = 1024
    cp_length: int = 72
    subcarrier_spacing: float = 15e3
    coherence_block: CoherenceBlock = field(default_factory=CoherenceBlock)

    def __post_init__(self):
        if isinstance(self.coherence_block, dict):
            self.coherence_block = CoherenceBlock(**self.coherence_block)
        cb = self.coherence_block
        if self.num_subcarriers < 1 or self.cp_length < 0:
            raise ValueError("invalid OFDM dimensions")
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier_spacing must be positive")
        if not 1 <= cb.n_sub <= self.num_subcarriers or cb.n_t < 1:
            raise ValueError("invalid coherence block dimensions")
        if cb.n1 is not None and not 0 <= cb.n1 <= self.num_subcarriers - cb.n_sub:
            raise ValueError("coherence block does not fit in the OFDM symbol")

    @property
    def symbol_length(self) -> int:
        return self.num_subcarriers + self.cp_length

    @property
    def sample_period(self) -> float:
        return 1.0 / (self.num_subcarriers * self.subcarrier_spacing)

    @property
    def sampling_distance(self) -> float:
        return self.sample_period * SPEED_OF_LIGHT

    @property
    def num_blocks(self) -> int:
        # trailing subcarriers that do not fill a block are left unused
        return self.num_subcarriers // self.coherence_block.n_sub

    @property
    def first_subcarrier(self) -> int:
        cb = self.coherence_block
        if cb.n1 is not None:
            return cb.n1
        return (self.num_blocks // 2) * cb.n_sub

    @property
    def eval_subcarrier(self) -> int:
        return self.first_subcarrier + self.coherence_block.n_sub // 2

    @property
    def block_subcarriers(self) -> np.ndarray:
        n1 = self.first_subcarrier
        return np.arange(n1, n1 + self.coherence_block.n_sub)


@dataclass
class TimingModel:
    """Integer sample offsets, indexed ``[q, k]``.

    ``dl_reference[k]`` is the nearest serving AP of user k and
    ``dl_farthest[k]`` the farthest one. ``ul_reference[q]`` is the nearest
    served user of AP q (-1 when uplink offsets are globally zero).
    """

    dl_offset: np.ndarray
    ul_offset: np.ndarray
    dl_reference: np.ndarray
    dl_farthest: np.ndarray
    ul_reference: np.ndarray


def quantize_offset(diff, D):
    """``floor(diff / D)`` as integers."""
    return np.floor(np.asarray(diff, dtype=float) / D).astype(np.int64)


def _nearest_farthest(dist, mask, axis):
    # ties go to the lowest index: argmin/argmax return the first hit
    masked = np.where(mask, dist, np.inf)
    nearest = np.argmin(masked, axis=axis)
    far = np.argmax(np.where(mask, dist, -np.inf), axis=axis)
    return nearest, far


def dl_offsets(distances, serving, D):
    """Downlink offsets relative to each user's nearest serving AP.

    Returns ``(delta, nearest, farthest)``. ``delta`` covers every AP, not
    only serving ones, because non-serving APs still interfere; an AP closer
    than the reference (possible when serving sets are not distance based)
    gets a negative offset.
    """
    distances = np.asarray(distances, dtype=float)
    serving = np.asarray(serving, dtype=bool)
    if not serving.any(axis=0).all():
        raise ValueError("every user needs at least one serving AP")
    nearest, farthest = _nearest_farthest(distances, serving, axis=0)
    ref = distances[nearest, np.arange(distances.shape[1])]
    delta = quantize_offset(distances - ref[None, :], D)
    delta[nearest, np.arange(distances.shape[1])] = 0
    return delta, nearest, farthest


def ul_offsets(distances, served, D):
    """Uplink offsets relative to each AP's nearest served user.

    ``served[q, k]`` is True when AP q serves user k. APs serving nobody
    take the globally nearest user as their reference.
    """
    distances = np.asarray(distances, dtype=float)
    served = np.asarray(served, dtype=bool).copy()
    idle = ~served.any(axis=1)
    served[idle, :] = True
    nearest, _ = _nearest_farthest(distances, served, axis=1)
    ref = distances[np.arange(distances.shape[0]), nearest]
    delta = quantize_offset(distances - ref[:, None], D)
    delta[np.arange(distances.shape[0]), nearest] = 0
    return delta, nearest


def timing_model(distances, serving, ofdm: OfdmConfig, uplink="nearest") -> TimingModel:
    """Both offset tables for one drop.

    ``uplink="zero"`` sets every uplink offset to 0 (Theta = I), which
    isolates the downlink asynchrony.
    """
    D = ofdm.sampling_distance
    dl, near, far = dl_offsets(distances, serving, D)
    if uplink == "nearest":
        ul, ul_ref = ul_offsets(distances, serving, D)
    elif uplink == "zero":
        ul = np.zeros_like(dl)
        ul_ref = np.full(dl.shape[0], -1)
    else:
        raise ValueError(f"unknown uplink reference {uplink!r}")
    return TimingModel(dl, ul, near, far, ul_ref)


def phase_shift(delta, n, N):
    """``exp(-j 2 pi n delta / N)``; broadcasts over array inputs."""
    arg = -2.0 * np.pi * (np.asarray(n) * np.asarray(delta) % N) / N
    return np.exp(1j * arg)


def ul_phase_matrix(delta, ofdm: OfdmConfig) -> np.ndarray:
    """tau_p x tau_p diagonal pilot phase matrix for one uplink offset."""
    return np.diag(phase_shift(delta, ofdm.block_subcarriers, ofdm.num_subcarriers))


def ul_phase_diagonals(ul_offset, ofdm: OfdmConfig) -> np.ndarray:
    """Diagonals of every uplink phase matrix, shape ``(Q, K, tau_p)``."""
    n = ofdm.block_subcarriers
    return phase_shift(np.asarray(ul_offset)[..., None], n, ofdm.num_subcarriers)
