"""Algorithm 1 orchestration: initialization, the BCD loop, and reporting.

Block order per iteration is iota, tau, P, W, Phi. Every block update is an
exact maximizer of f_tau with the others fixed (the Phi block carries its own
monotone safeguard), so the objective trace is non-decreasing; since iota and
tau are tight, the traced value equals the true weighted sum-rate f_o.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import beamformers, surrogate
from .channel import ChannelSet, effective_channels, sample_channel_set
from .config import RisArchitecture, ScenarioConfig, derive_trial_seed, validate
from .metrics import BeamformerState, RateReport, weighted_sum_rate
from .scattering import RisState, identity_state, optimize_scattering
from .surrogate import SurrogateState


@dataclass
class OptimizerReport:
    objective_trace: list
    sum_rate_trace: list
    converged: bool
    iterations_used: int
    pdd_traces: list
    final_rates: RateReport
    wall_time_s: float
    final_phi: np.ndarray = None
    final_bf: BeamformerState = None


def _principal_left_singular(h: np.ndarray) -> np.ndarray:
    u, s, _ = np.linalg.svd(h)
    if s[0] == 0:
        w = np.zeros(h.shape[0], dtype=complex)
        w[0] = 1.0
        return w
    return u[:, 0]


def _dft_matrix(m: int) -> np.ndarray:
    """Unitary DFT matrix: symmetric, so feasible for both symmetry classes."""
    idx = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / m) / np.sqrt(m)


def initialize(cfg: ScenarioConfig, ch: ChannelSet,
               rng: np.random.Generator | None = None
               ) -> tuple[BeamformerState, SurrogateState, RisState]:
    """Deterministic starting point.

    Phi_g is the unitary DFT matrix of size M_g (scalar groups get the phase
    ramp e^{j 2 pi g / G}): deterministic, unitary, symmetric, and spreading
    energy over all directions, so no user starts with a near-zero effective
    channel. Phi = I, the natural alternative, starves whichever user pair
    sits at the least coherent angle sum and that user's tau then collapses
    to zero, a self-reinforcing local optimum the BCD cannot leave. w_k is
    the principal left singular direction of H_tilde[k,k-1]; p_k points along
    the matched direction H_tilde[k,k-1]^H w_k at full budget P_{k-1}. If the
    desired channels all vanish anyway (degenerate geometry), fall back to
    Phi = -I, which is equally feasible and breaks the deadlock.
    """
    cfg.require_validated()
    kk, n, m = cfg.users, cfg.antennas, cfg.ris.elements
    state = identity_state(cfg.ris, cfg.solver.pdd_rho0)
    mg, groups = cfg.ris.group_size, cfg.ris.groups
    for g in range(groups):
        if mg > 1:
            block = _dft_matrix(mg)
        else:
            block = np.array([[np.exp(2j * np.pi * g / groups)]])
        state.phi_groups[g] = block.astype(complex)
        state.psi_groups[g] = state.phi_groups[g].copy()
    eff = effective_channels(ch, state.phi, cfg.structural_scattering)
    desired = [eff.h_tilde[k, (k - 1) % kk] for k in range(kk)]
    if not np.any(np.abs(desired) > 0):
        for g in range(cfg.ris.groups):
            state.phi_groups[g] = -np.eye(mg, dtype=complex)
            state.psi_groups[g] = state.phi_groups[g].copy()
        eff = effective_channels(ch, state.phi, cfg.structural_scattering)
    combiners = np.zeros((kk, n), dtype=complex)
    precoders = np.zeros((kk, n), dtype=complex)
    for k in range(kk):
        h = eff.h_tilde[k, (k - 1) % kk]
        combiners[k] = _principal_left_singular(h)
        v = h.conj().T @ combiners[k]
        nv = np.linalg.norm(v)
        direction = v / nv if nv > 0 else _unit(n)
        precoders[k] = np.sqrt(cfg.tx_power_w[(k - 1) % kk]) * direction
    bf = BeamformerState(precoders=precoders, combiners=combiners)
    sur = SurrogateState.zeros(kk)
    sur.iota = surrogate.update_iota(bf, eff, ch, cfg)
    sur.tau = surrogate.update_tau(bf, eff, ch, sur, cfg)
    return bf, sur, state


def _unit(n: int) -> np.ndarray:
    e = np.zeros(n, dtype=complex)
    e[0] = 1.0
    return e


def _check_finite(arr: np.ndarray, block: str):
    if not np.all(np.isfinite(arr.view(float))):
        raise RuntimeError(f"non-finite value after the {block} block update")


def run(cfg: ScenarioConfig, ch: ChannelSet, collect_pdd_trace: bool = False
        ) -> OptimizerReport:
    """One full BCD optimization on fixed channels."""
    cfg.require_validated()
    start = time.perf_counter()
    kk = cfg.users
    bf, sur, state = initialize(cfg, ch)
    eff = effective_channels(ch, state.phi, cfg.structural_scattering)
    objective_trace: list = []
    sum_rate_trace: list = []
    pdd_traces: list = []
    converged = False
    for t in range(cfg.solver.bcd_max_iters):
        sur.iota = surrogate.update_iota(bf, eff, ch, cfg)
        sur.tau = surrogate.update_tau(bf, eff, ch, sur, cfg)
        _check_finite(sur.iota, "iota")
        _check_finite(sur.tau, "tau")
        v_t = surrogate.eval_f_tau(bf, eff, ch, sur, cfg)
        objective_trace.append(v_t)
        sum_rate_trace.append(weighted_sum_rate(bf, eff, ch, cfg).weighted_sum)

        snapshot = bf.copy() if cfg.solver.jacobi_updates else bf
        for k in range(kk):
            p, mu = beamformers.update_precoder(k, snapshot, eff, ch, cfg, sur)
            bf.precoders[k] = p
            bf.last_mu[k] = mu
        _check_finite(bf.precoders, "precoder")
        snapshot = bf.copy() if cfg.solver.jacobi_updates else bf
        for k in range(kk):
            bf.combiners[k] = beamformers.update_combiner(k, snapshot, eff, ch, cfg, sur)
        _check_finite(bf.combiners, "combiner")

        state, rows, _ = optimize_scattering(bf, sur, ch, cfg, state,
                                             collect_trace=collect_pdd_trace)
        pdd_traces.append(rows)
        phi = state.phi
        _check_finite(phi, "scattering")
        eff = effective_channels(ch, phi, cfg.structural_scattering)

        if t >= 1 and abs(objective_trace[-1] - objective_trace[-2]) <= (
                cfg.solver.bcd_rel_tol * max(1.0, abs(objective_trace[-1]))):
            converged = True
            break
    final_phi = state.phi
    final_rates = weighted_sum_rate(bf, eff, ch, cfg)
    return OptimizerReport(objective_trace=objective_trace,
                           sum_rate_trace=sum_rate_trace,
                           converged=converged,
                           iterations_used=len(objective_trace),
                           pdd_traces=pdd_traces,
                           final_rates=final_rates,
                           wall_time_s=time.perf_counter() - start,
                           final_phi=final_phi,
                           final_bf=bf)


ARCHITECTURE_ARMS = {
    "NR": ("fully_connected", "non_reciprocal"),
    "R": ("fully_connected", "reciprocal"),
    "D": ("diagonal", "reciprocal"),
}


def arm_config(cfg: ScenarioConfig, arm: str) -> ScenarioConfig:
    """Re-validate cfg with the architecture of one comparison arm."""
    connectivity, reciprocity = ARCHITECTURE_ARMS[arm]
    m = cfg.ris.elements
    ris = RisArchitecture(elements=m,
                          group_size=1 if connectivity == "diagonal" else m,
                          connectivity=connectivity, reciprocity=reciprocity)
    return validate(dataclasses.replace(cfg, ris=ris, validated=False))


def compare_architectures(cfg: ScenarioConfig, trials: int | None = None,
                          arms: tuple = ("NR", "R", "D")) -> dict:
    """Paired comparison over identical channel realizations per trial.

    Returns {arm: {"sum_rates": [...], "mean": m, "stderr": s}} plus the
    per-trial seeds under "trial_seeds".
    """
    cfg.require_validated()
    trials = cfg.trials if trials is None else trials
    results = {arm: [] for arm in arms}
    seeds = []
    for t in range(trials):
        ts = derive_trial_seed(cfg.seed, t)
        seeds.append(ts.derived_seed)
        rng = np.random.default_rng(ts.derived_seed)
        ch = sample_channel_set(cfg, rng)
        for arm in arms:
            rep = run(arm_config(cfg, arm), ch)
            results[arm].append(rep.final_rates.weighted_sum)
    out = {"trial_seeds": seeds}
    for arm in arms:
        vals = np.array(results[arm])
        stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out[arm] = {"sum_rates": vals.tolist(), "mean": float(vals.mean()),
                    "stderr": stderr}
    return out
