"""Fractional-programming surrogate: auxiliary updates and the transformed objective.

Two stacked transforms turn the weighted sum-rate f_o = sum_k alpha_k
log2(1 + gamma_k) into a block-wise tractable surrogate:

  f_iota  (ratio pulled out of the log, auxiliary iota_k),
  f_tau   (ratio linearized by the quadratic transform, auxiliary tau_k).

Rates stay in bits: the log is log2 and the remaining transform terms carry
a 1/ln(2) factor so that iota_k = gamma_k is the exact stationary maximizer
and the tightness chain f_tau = f_iota = f_o holds after both updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, EffectiveChannels
from .config import ScenarioConfig
from .metrics import BeamformerState, desired_gain, interference_power, sinr

LN2 = float(np.log(2.0))


@dataclass
class SurrogateState:
    iota: np.ndarray    # (K,) nonnegative
    tau: np.ndarray     # (K,) complex

    @classmethod
    def zeros(cls, num_users: int) -> "SurrogateState":
        return cls(iota=np.zeros(num_users), tau=np.zeros(num_users, dtype=complex))

    def copy(self) -> "SurrogateState":
        return SurrogateState(self.iota.copy(), self.tau.copy())


def update_iota(bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
                cfg: ScenarioConfig) -> np.ndarray:
    """iota_k^opt = gamma_k."""
    return np.array([sinr(k, bf, eff, ch, cfg.noise_w) for k in range(cfg.users)])


def gamma_total(k: int, bf: BeamformerState, eff: EffectiveChannels,
                ch: ChannelSet) -> float:
    """Gamma_k = I_k + |w_k^H H_tilde[k,k-1] p_k|^2 (signal plus interference, no noise)."""
    return interference_power(k, bf, eff, ch) + abs(desired_gain(k, bf, eff)) ** 2


def update_tau(bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
               sur: SurrogateState, cfg: ScenarioConfig) -> np.ndarray:
    """tau_k^opt = sqrt(1+iota_k) w_k^H H_tilde[k,k-1] p_k / (Gamma_k + ||w_k||^2 sigma^2)."""
    tau = np.zeros(cfg.users, dtype=complex)
    for k in range(cfg.users):
        g = desired_gain(k, bf, eff)
        w_norm2 = float(np.vdot(bf.combiners[k], bf.combiners[k]).real)
        den = gamma_total(k, bf, eff, ch) + w_norm2 * cfg.noise_w
        tau[k] = np.sqrt(1.0 + sur.iota[k]) * g / den
    return tau


def eval_f_tau(bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
               sur: SurrogateState, cfg: ScenarioConfig) -> float:
    """Quadratic-transform objective.

    sum_k alpha_k [ log2(1+iota_k)
                    + (1/ln2) ( -iota_k
                                + 2 sqrt(1+iota_k) Re{tau_k^* w_k^H H_tilde p_k}
                                - |tau_k|^2 (Gamma_k + ||w_k||^2 sigma^2) ) ]
    """
    total = 0.0
    for k in range(cfg.users):
        g = desired_gain(k, bf, eff)
        w_norm2 = float(np.vdot(bf.combiners[k], bf.combiners[k]).real)
        den = gamma_total(k, bf, eff, ch) + w_norm2 * cfg.noise_w
        iota, tau = sur.iota[k], sur.tau[k]
        total += cfg.weights[k] * (
            np.log2(1.0 + iota)
            + (-iota + 2.0 * np.sqrt(1.0 + iota) * (np.conj(tau) * g).real
               - abs(tau) ** 2 * den) / LN2
        )
    return float(total)


def eval_f_iota(bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
                sur: SurrogateState, cfg: ScenarioConfig) -> float:
    """Lagrangian-dual-transform objective (tau maximized out)."""
    total = 0.0
    for k in range(cfg.users):
        g = abs(desired_gain(k, bf, eff)) ** 2
        w_norm2 = float(np.vdot(bf.combiners[k], bf.combiners[k]).real)
        den = gamma_total(k, bf, eff, ch) + w_norm2 * cfg.noise_w
        iota = sur.iota[k]
        total += cfg.weights[k] * (
            np.log2(1.0 + iota) + (-iota + (1.0 + iota) * g / den) / LN2
        )
    return float(total)
