"""Channel synthesis and physics-compliant effective-channel composition.

Geometry: the RIS is a half-wavelength uniform linear array on the x-axis,
users sit in the upper half-plane at polar coordinates (d_k, theta_k) around
the RIS origin. RIS-user links are Rician; direct links are Rayleigh; the
residual self-interference channel is Rayleigh with a configurable variance.

Effective channels (receiver k, transmitter i):

    H_tilde[k, i] = H_dir[k, i]^T + H_ref[k]^T (Phi - I) H_ref[i]
    H_bar[k]      = H_ref[k]^T (Phi - I) H_ref[k]

The -I term is the structural-scattering (specular) contribution; dropping
it recovers the conventional cascaded model. Plain transposes, never
Hermitian, on the channel factors: that is what models reciprocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import D0_M, ScenarioConfig, db_to_linear


@dataclass(frozen=True)
class ChannelSet:
    """One Monte-Carlo realization of every channel in the scenario.

    h_ref : (K, M, N)  user-to-RIS channels H_ref[k]
    h_dir : (K, K, N, N) user-to-user channels H_dir[k, i] (receiver k,
            transmitter i); the diagonal H_dir[k, k] is the SI channel.
    """

    h_ref: np.ndarray
    h_dir: np.ndarray

    @property
    def h_si(self) -> np.ndarray:
        """(K, N, N) self-interference channels, H_si[k] = H_dir[k, k]."""
        return np.einsum("kkij->kij", self.h_dir)

    @property
    def num_users(self) -> int:
        return self.h_ref.shape[0]

    @property
    def num_elements(self) -> int:
        return self.h_ref.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.h_ref.shape[2]


@dataclass(frozen=True)
class EffectiveChannels:
    """Composed channels for a given scattering matrix.

    h_tilde : (K, K, N, N), h_tilde[k, i] for transmitter i, receiver k
    h_bar   : (K, N, N) loop channels
    """

    h_tilde: np.ndarray
    h_bar: np.ndarray


def steering_vector(theta: float, length: int) -> np.ndarray:
    """Unit-norm ULA steering vector, entry n = exp(j*pi*n*cos(theta)) / sqrt(L)."""
    if length < 1:
        raise ValueError("steering vector length must be >= 1")
    n = np.arange(length)
    return np.exp(1j * np.pi * n * np.cos(theta)) / np.sqrt(length)


def path_loss_linear(d: float, exponent: float, zeta0_db: float) -> float:
    """Distance-dependent path loss zeta0 * (d / d0)^(-exponent), d0 = 1 m."""
    if d <= 0:
        raise ValueError("distance must be positive")
    return db_to_linear(zeta0_db) * (d / D0_M) ** (-exponent)


def _crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian, unit variance per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_ris_user_channel(cfg: ScenarioConfig, k: int, rng: np.random.Generator) -> np.ndarray:
    """Rician M x N channel between user k and the RIS.

    sqrt(PL_k) * ( sqrt(kappa/(1+kappa)) * LoS + sqrt(1/(1+kappa)) * W ),
    LoS = sqrt(M*N) * a_M(theta_k) a_N(theta'_k)^T so each LoS entry has
    unit magnitude; W is i.i.d. CN(0, 1).
    """
    cfg.require_validated()
    m, n = cfg.ris.elements, cfg.antennas
    pl = path_loss_linear(cfg.user_distances_m[k], cfg.exponent_ris, cfg.pathloss_ref_db)
    theta = np.deg2rad(cfg.user_angles_deg[k])
    theta_dep = np.deg2rad(cfg.departure_angle_deg)
    los = np.sqrt(m * n) * np.outer(steering_vector(theta, m), steering_vector(theta_dep, n))
    kappa = cfg.rician_kappa
    if np.isinf(kappa):
        fading = los
    else:
        fading = (np.sqrt(kappa / (1 + kappa)) * los
                  + np.sqrt(1 / (1 + kappa)) * _crandn(rng, m, n))
    return np.sqrt(pl) * fading


def user_separation_m(cfg: ScenarioConfig, k: int, i: int) -> float:
    """Euclidean distance between users k and i from their polar coordinates."""
    dk, di = cfg.user_distances_m[k], cfg.user_distances_m[i]
    tk, ti = np.deg2rad(cfg.user_angles_deg[k]), np.deg2rad(cfg.user_angles_deg[i])
    return float(np.sqrt(dk**2 + di**2 - 2 * dk * di * np.cos(tk - ti)))


def sample_direct_channel(cfg: ScenarioConfig, k: int, i: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Rayleigh N x N direct channel from transmitter i to receiver k."""
    cfg.require_validated()
    n = cfg.antennas
    if not cfg.direct_links:
        return np.zeros((n, n), dtype=complex)
    d = user_separation_m(cfg, k, i)
    pl = path_loss_linear(d, cfg.exponent_direct, cfg.pathloss_ref_db)
    return np.sqrt(pl) * _crandn(rng, n, n)


def sample_si_channel(cfg: ScenarioConfig, k: int, rng: np.random.Generator) -> np.ndarray:
    """Residual self-interference channel, CN(0, residual_si_gain) entries."""
    cfg.require_validated()
    n = cfg.antennas
    return np.sqrt(cfg.residual_si_gain) * _crandn(rng, n, n)


def sample_channel_set(cfg: ScenarioConfig, rng: np.random.Generator) -> ChannelSet:
    """Draw every channel of one trial in a fixed order (reproducible)."""
    cfg.require_validated()
    k_users, n = cfg.users, cfg.antennas
    h_ref = np.stack([sample_ris_user_channel(cfg, k, rng) for k in range(k_users)])
    h_dir = np.zeros((k_users, k_users, n, n), dtype=complex)
    for k in range(k_users):
        for i in range(k_users):
            if i != k:
                h_dir[k, i] = sample_direct_channel(cfg, k, i, rng)
    for k in range(k_users):
        h_dir[k, k] = sample_si_channel(cfg, k, rng)
    return ChannelSet(h_ref=h_ref, h_dir=h_dir)


def effective_channels(ch: ChannelSet, phi: np.ndarray, structural: bool) -> EffectiveChannels:
    """Compose H_tilde and H_bar for a scattering matrix Phi.

    Pure linear algebra; feasibility of Phi is the optimizer's business.
    """
    k_users, m, n = ch.h_ref.shape
    if phi.shape != (m, m):
        raise ValueError(f"phi must be {m}x{m}, got {phi.shape}")
    scatter = phi - np.eye(m) if structural else phi
    # through[i] = (Phi - I) H_ref[i]; then H_tilde[k, i] = H_ref[k]^T through[i]
    through = np.einsum("ab,ibn->ian", scatter, ch.h_ref)
    reflected = np.einsum("kma,imb->kiab", ch.h_ref, through)
    h_tilde = reflected + np.transpose(ch.h_dir, (0, 1, 3, 2))
    h_bar = np.einsum("kkab->kab", reflected).copy()
    return EffectiveChannels(h_tilde=h_tilde, h_bar=h_bar)


def channel_dump(ch: ChannelSet) -> dict:
    """Arrays keyed for a cross-implementation regression dump (np.savez-ready)."""
    return {"h_ref": ch.h_ref, "h_dir": ch.h_dir}
