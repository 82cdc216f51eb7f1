"""Closed-form precoder and combiner block updates.

Precoders maximize the quadratic-transform surrogate under a per-user power
budget, with the Lagrange multiplier mu found by bisection. Combiners are the
unconstrained (MMSE-direction) maximizers, normalized afterwards; the SINR is
scale-invariant in w_k so normalization costs nothing.

The quadratic coefficients are assembled in their algebraically exact
Hermitian forms. In particular zeta1 for precoder p_k collects every receiver
r != k-1 that hears p_k through its own channel H_tilde[r, k-1], each term
weighted by alpha_r |tau_r|^2, so that the update is the exact stationary
point of f_tau in p_k (the surrogate is then non-decreasing under the update).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, EffectiveChannels
from .config import ScenarioConfig
from .metrics import BeamformerState, _mu_interferers
from .surrogate import SurrogateState


@dataclass
class PrecoderQuadratics:
    """Hermitian PSD quadratic coefficients for one precoder update.

    zeta1 : cross-receiver term, weights alpha_r |tau_r|^2 folded in
    zeta2 : combined SI-plus-loop term at receiver k-1 (weight applied later)
    """

    zeta1: np.ndarray
    zeta2: np.ndarray


@dataclass
class CombinerQuadratic:
    xi: np.ndarray      # Hermitian, PD when sigma^2 > 0


def build_zeta(k: int, bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
               cfg: ScenarioConfig, sur: SurrogateState) -> PrecoderQuadratics:
    """Quadratic coefficients of f_tau in p_k.

    zeta1 = sum_{r != k-1} alpha_r |tau_r|^2 H_tilde[r,k-1]^H w_r w_r^H H_tilde[r,k-1]
    zeta2 = (H_SI,k-1 + H_bar_{k-1})^H w_{k-1} w_{k-1}^H (H_SI,k-1 + H_bar_{k-1})

    zeta2's quadratic form equals |w_{k-1}^H (H_SI,k-1 + H_bar_{k-1}) p_k|^2
    exactly (the Hermitian form of the loop-interference power).
    """
    kk, n = cfg.users, cfg.antennas
    km1 = (k - 1) % kk
    zeta1 = np.zeros((n, n), dtype=complex)
    for r in range(kk):
        if r == km1:
            continue
        v = eff.h_tilde[r, km1].conj().T @ bf.combiners[r]
        zeta1 += cfg.weights[r] * abs(sur.tau[r]) ** 2 * np.outer(v, v.conj())
    g = (ch.h_si[km1] + eff.h_bar[km1]).conj().T @ bf.combiners[km1]
    zeta2 = np.outer(g, g.conj())
    return PrecoderQuadratics(zeta1=zeta1, zeta2=zeta2)


def _spectral_norm2(lam: np.ndarray, c2: np.ndarray, mu: float) -> float:
    """||p(mu)||^2 = sum_i |c_i|^2 / (lambda_i + mu)^2 in the eigenbasis of D."""
    den = lam + mu
    with np.errstate(divide="ignore", over="ignore"):
        out = np.sum(c2 / den**2)
    return float(out)


def update_precoder(k: int, bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
                    cfg: ScenarioConfig, sur: SurrogateState) -> tuple[np.ndarray, float]:
    """p_k = (zeta1 + alpha_{k-1}|tau_{k-1}|^2 zeta2 + mu I)^-1 b, b the linear term.

    mu = 0 when the unconstrained solution meets ||p_k||^2 <= P_{k-1};
    otherwise the unique mu > 0 with ||p_k(mu)||^2 = P_{k-1}, by bisection
    (bracket grown by doubling from mu = 1).
    """
    cfg.require_validated()
    kk = cfg.users
    km1 = (k - 1) % kk
    budget = cfg.tx_power_w[km1]
    quad = build_zeta(k, bf, eff, ch, cfg, sur)
    d = quad.zeta1 + cfg.weights[km1] * abs(sur.tau[km1]) ** 2 * quad.zeta2
    b = (cfg.weights[k] * np.sqrt(1.0 + sur.iota[k]) * sur.tau[k]
         * (eff.h_tilde[k, km1].conj().T @ bf.combiners[k]))
    if not np.any(b) or budget <= 0:
        return np.zeros_like(b), 0.0

    lam, u = np.linalg.eigh(0.5 * (d + d.conj().T))
    lam = np.maximum(lam, 0.0)
    c = u.conj().T @ b
    c2 = np.abs(c) ** 2
    c2[c2 < 1e-300] = 0.0

    sol = cfg.solver
    tol = sol.bisection_tol * max(budget, 1e-300)
    if lam[0] > 0 and _spectral_norm2(lam, c2, 0.0) <= budget + tol:
        mu = 0.0
    else:
        hi = 1.0
        for _ in range(sol.bisection_max_iters):
            if _spectral_norm2(lam, c2, hi) <= budget:
                break
            hi *= 2.0
        else:
            raise RuntimeError("precoder bisection failed to bracket mu")
        lo = 0.0
        for _ in range(sol.bisection_max_iters):
            mu = 0.5 * (lo + hi)
            if _spectral_norm2(lam, c2, mu) > budget:
                lo = mu
            else:
                hi = mu
            if abs(_spectral_norm2(lam, c2, mu) - budget) <= tol:
                break
        mu = hi
    p = u @ (c / (lam + mu)) if mu > 0 or lam[0] > 0 else np.zeros_like(b)
    return p, float(mu)


def build_xi(k: int, bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
             sigma2: float) -> CombinerQuadratic:
    """xi_k = (H_SI,k + H_bar_k) p_{k+1} p_{k+1}^H (...)^H
              + sum_{i != k+1} H_tilde[k,i-1] p_i p_i^H H_tilde[k,i-1]^H + sigma^2 I.

    Exact Hermitian form: w^H xi w equals the full interference-plus-signal
    power plus sigma^2 ||w||^2 (the i = k term is the desired-signal power,
    present in Gamma_k).
    """
    kk, n = bf.precoders.shape
    g = (ch.h_si[k] + eff.h_bar[k]) @ bf.precoders[(k + 1) % kk]
    xi = np.outer(g, g.conj())
    for i in range(kk):
        if i == (k + 1) % kk:
            continue
        v = eff.h_tilde[k, (i - 1) % kk] @ bf.precoders[i]
        xi += np.outer(v, v.conj())
    return CombinerQuadratic(xi=xi + sigma2 * np.eye(n))


def update_combiner(k: int, bf: BeamformerState, eff: EffectiveChannels, ch: ChannelSet,
                    cfg: ScenarioConfig, sur: SurrogateState) -> np.ndarray:
    """w_k = normalize( (|tau_k|^2 xi_k)^-1 sqrt(1+iota_k) tau_k^* H_tilde[k,k-1] p_k ).

    The |tau_k|^2 factor only rescales the raw solution and normalization
    removes it, so the solve drops it (this also avoids overflow when tau_k
    is tiny). tau_k = 0 or a zero/non-finite raw solution leaves the
    combiner unchanged (degenerate user this round).
    """
    cfg.require_validated()
    tau = sur.tau[k]
    if tau == 0:
        return bf.combiners[k].copy()
    xi = build_xi(k, bf, eff, ch, cfg.noise_w).xi
    rhs = (np.sqrt(1.0 + sur.iota[k]) * np.conj(tau)
           * (eff.h_tilde[k, (k - 1) % cfg.users] @ bf.precoders[k]))
    w_raw = np.linalg.solve(xi, rhs)
    norm = np.linalg.norm(w_raw)
    if norm == 0 or not np.isfinite(norm):
        return bf.combiners[k].copy()
    return w_raw / norm
