"""Exact (non-surrogate) performance metrics: SINR, rates, leakage, beampatterns.

User indexing is cyclic: user (k-1) mod K transmits symbol s_k through
precoder p_k toward user k, who applies combiner w_k. All symbols carry
unit average power; rates are log2, in bits/s/Hz.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, EffectiveChannels
from .config import ScenarioConfig


@dataclass
class BeamformerState:
    """Precoders p_k (length N), unit-norm combiners w_k, and bisection diagnostics."""

    precoders: np.ndarray           # (K, N) complex
    combiners: np.ndarray           # (K, N) complex
    last_mu: np.ndarray = None      # (K,) most recent power-constraint multipliers

    def __post_init__(self):
        if self.last_mu is None:
            self.last_mu = np.zeros(self.precoders.shape[0])

    def copy(self) -> "BeamformerState":
        return BeamformerState(self.precoders.copy(), self.combiners.copy(),
                               self.last_mu.copy())


@dataclass
class RateReport:
    per_user_sinr: np.ndarray
    per_user_rate: np.ndarray       # log2(1 + sinr)
    weighted_sum: float
    other_user_power: np.ndarray    # watts, leakage from unintended transmitters

    def to_row(self) -> dict:
        row = {"weighted_sum_rate": self.weighted_sum}
        for k in range(len(self.per_user_rate)):
            row[f"sinr_{k + 1}"] = float(self.per_user_sinr[k])
            row[f"rate_{k + 1}"] = float(self.per_user_rate[k])
            row[f"other_power_{k + 1}"] = float(self.other_user_power[k])
        return row


def _mu_interferers(k: int, num_users: int):
    """Transmit indices i with i != k, k+1 (cyclic); empty for K = 2."""
    return [i for i in range(num_users) if i != k and i != (k + 1) % num_users]


def desired_gain(k: int, bf: BeamformerState, eff: EffectiveChannels) -> complex:
    """w_k^H H_tilde[k, k-1] p_k, the useful-signal amplitude at user k."""
    kk = eff.h_tilde.shape[0]
    return complex(bf.combiners[k].conj() @ eff.h_tilde[k, (k - 1) % kk] @ bf.precoders[k])


def interference_power(k: int, bf: BeamformerState, eff: EffectiveChannels,
                       ch: ChannelSet) -> float:
    """I_k: multi-user interference plus the combined SI + loop term."""
    kk = eff.h_tilde.shape[0]
    w = bf.combiners[k]
    total = 0.0
    for i in _mu_interferers(k, kk):
        total += abs(w.conj() @ eff.h_tilde[k, (i - 1) % kk] @ bf.precoders[i]) ** 2
    p_next = bf.precoders[(k + 1) % kk]
    si_loop = w.conj() @ (ch.h_si[k] + eff.h_bar[k]) @ p_next
    return float(total + abs(si_loop) ** 2)


def sinr(k: int, bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
         noise_w: float) -> float:
    """gamma_k = |w_k^H H_tilde[k,k-1] p_k|^2 / (I_k + ||w_k||^2 sigma^2)."""
    num = abs(desired_gain(k, bf, eff)) ** 2
    w_norm2 = float(np.vdot(bf.combiners[k], bf.combiners[k]).real)
    den = interference_power(k, bf, eff, ch) + w_norm2 * noise_w
    return float(num / den)


def other_user_power(k: int, bf: BeamformerState, eff: EffectiveChannels) -> float:
    """Eavesdroppable power at user k from all unintended transmitters (0 for K < 3)."""
    kk = eff.h_tilde.shape[0]
    w = bf.combiners[k]
    total = 0.0
    for i in _mu_interferers(k, kk):
        total += abs(w.conj() @ eff.h_tilde[k, (i - 1) % kk] @ bf.precoders[i]) ** 2
    return float(total)


def weighted_sum_rate(bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
                      cfg: ScenarioConfig) -> RateReport:
    cfg.require_validated()
    kk = cfg.users
    gammas = np.array([sinr(k, bf, eff, ch, cfg.noise_w) for k in range(kk)])
    rates = np.log2(1.0 + gammas)
    leak = np.array([other_user_power(k, bf, eff) for k in range(kk)])
    weighted = float(np.dot(cfg.weights, rates))
    return RateReport(per_user_sinr=gammas, per_user_rate=rates,
                      weighted_sum=weighted, other_user_power=leak)


def beampatterns(phi: np.ndarray, ch: ChannelSet, grid_deg: np.ndarray | None = None,
                 structural: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Impinging/reflected angular power responses for every user, N = 1 only.

    impinging[k](theta) = |h_{k+1}^T S a(theta)|^2,
    reflected[k](theta) = |a(theta)^T S h_k|^2,
    with S = Phi (or Phi - I when structural) and a(theta) the unnormalized
    ULA response. Jointly normalized so the global maximum over all users
    and both families equals 1. Returns (grid_deg, impinging, reflected),
    patterns of shape (K, len(grid)).
    """
    kk, m, n = ch.h_ref.shape
    if n != 1:
        raise ValueError("beampatterns are defined for N = 1 scenarios")
    if grid_deg is None:
        grid_deg = np.arange(0.0, 180.0 + 1e-9, 0.25)
    grid_deg = np.asarray(grid_deg, dtype=float)
    scatter = phi - np.eye(m) if structural else phi
    # Unnormalized steering responses, one column per grid angle.
    a = np.exp(1j * np.pi * np.arange(m)[:, None] * np.cos(np.deg2rad(grid_deg))[None, :])
    h = ch.h_ref[:, :, 0]                       # (K, M)
    impinging = np.abs(np.roll(h, -1, axis=0) @ scatter @ a) ** 2
    reflected = np.abs(h @ scatter.T @ a) ** 2  # a^T S h = (S^T a)^T h
    peak = max(impinging.max(), reflected.max())
    if peak > 0:
        impinging = impinging / peak
        reflected = reflected / peak
    return grid_deg, impinging, reflected
