"""Scenario configuration, validation, unit conversions, and trial seeding."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

CONNECTIVITIES = ("diagonal", "group_connected", "fully_connected")
RECIPROCITIES = ("reciprocal", "non_reciprocal")

# Reference distance for the path-loss model, fixed by convention.
D0_M = 1.0


class ConfigError(ValueError):
    """Raised when a scenario configuration violates an invariant."""


def dbm_to_watts(x_dbm: float) -> float:
    """Convert a power in dBm to watts: 10^((x - 30) / 10)."""
    if not math.isfinite(x_dbm):
        raise ConfigError("power in dBm must be finite")
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(x_w: float) -> float:
    if x_w <= 0:
        raise ConfigError("power in watts must be positive")
    return 10.0 * math.log10(x_w) + 30.0


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class RisArchitecture:
    """RIS element count, block structure, and symmetry class."""

    elements: int = 16                      # M
    group_size: int = 16                    # M_g, must divide M
    connectivity: str = "fully_connected"   # diagonal | group_connected | fully_connected
    reciprocity: str = "non_reciprocal"     # reciprocal | non_reciprocal

    @property
    def groups(self) -> int:
        return self.elements // self.group_size


@dataclass(frozen=True)
class SolverParams:
    """Iteration caps and tolerances for the BCD driver and the PDD inner solver."""

    bcd_max_iters: int = 50
    bcd_rel_tol: float = 1e-4
    pdd_inner_max: int = 50
    pdd_inner_rel_tol: float = 1e-8
    pdd_outer_max: int = 200
    pdd_eps: float = 1e-6
    pdd_rho0: float = 1e-2
    pdd_scale: float = 0.8          # c, penalty shrink factor in (0, 1)
    bisection_tol: float = 1e-8     # relative tolerance on ||p||^2 - P
    bisection_max_iters: int = 200
    jacobi_updates: bool = False    # per-user updates read a frozen snapshot when True


@dataclass(frozen=True)
class TrialSeed:
    trial_index: int
    derived_seed: int


@dataclass(frozen=True)
class ScenarioConfig:
    """Full experiment description. Immutable after validate()."""

    users: int = 3                                          # K
    antennas: int = 1                                       # N (per user, Tx = Rx)
    user_angles_deg: tuple = (30.0, 90.0, 150.0)
    user_distances_m: tuple = (35.0, 35.0, 35.0)
    ris: RisArchitecture = field(default_factory=RisArchitecture)
    pathloss_ref_db: float = -30.0                          # zeta_0 at d0 = 1 m
    exponent_ris: float = 2.2
    exponent_direct: float = 3.3
    rician_kappa: float = 5.0
    tx_power_dbm: tuple = (20.0, 20.0, 20.0)                # P_k per user
    noise_dbm: float = -80.0                                # sigma^2
    residual_si_gain: float | None = None                   # None -> sigma^2 / mean(P) at validate
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)                  # alpha_k, sum to 1
    structural_scattering: bool = True
    direct_links: bool = True
    departure_angle_deg: float = 90.0                       # user-array side angle, broadside default
    solver: SolverParams = field(default_factory=SolverParams)
    seed: int = 0
    trials: int = 1

    # Derived at validation (0 / empty until then).
    groups: int = 0
    tx_power_w: tuple = ()
    noise_w: float = 0.0
    validated: bool = False

    def require_validated(self):
        if not self.validated:
            raise ConfigError("config must pass validate() first")


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check all invariants and return a copy with derived fields populated.

    Idempotent: validate(validate(c)) == validate(c).
    """
    k = cfg.users
    _check(isinstance(k, int) and k >= 2, "users: need an integer K >= 2")
    _check(isinstance(cfg.antennas, int) and cfg.antennas >= 1,
           "antennas: need an integer N >= 1")

    angles = tuple(float(a) for a in cfg.user_angles_deg)
    _check(len(angles) == k, "user_angles_deg: need one angle per user")
    _check(all(0.0 < a < 180.0 for a in angles),
           "user_angles_deg: angles must lie strictly inside (0, 180) degrees")
    dists = tuple(float(d) for d in cfg.user_distances_m)
    _check(len(dists) == k, "user_distances_m: need one distance per user")
    _check(all(d > 0 and math.isfinite(d) for d in dists),
           "user_distances_m: distances must be positive")

    ris = cfg.ris
    m, mg = ris.elements, ris.group_size
    _check(isinstance(m, int) and m >= 1, "ris.elements: need a positive integer")
    _check(isinstance(mg, int) and mg >= 1, "ris.group_size: need a positive integer")
    _check(m % mg == 0, "ris.group_size: group size must divide element count")
    _check(ris.connectivity in CONNECTIVITIES,
           f"ris.connectivity: must be one of {CONNECTIVITIES}")
    _check(ris.reciprocity in RECIPROCITIES,
           f"ris.reciprocity: must be one of {RECIPROCITIES}")
    if ris.connectivity == "diagonal":
        _check(mg == 1, "ris.group_size: diagonal connectivity requires group_size = 1")
        # A diagonal matrix is symmetric; the reciprocity flag is moot.
        ris = dataclasses.replace(ris, reciprocity="reciprocal")
    elif ris.connectivity == "fully_connected":
        _check(mg == m, "ris.group_size: fully_connected requires group_size = elements")
    else:
        _check(1 <= mg <= m, "ris.group_size: out of range")

    weights = tuple(float(w) for w in cfg.weights)
    _check(len(weights) == k, "weights: need one weight per user")
    _check(all(w >= 0 and math.isfinite(w) for w in weights),
           "weights: must be finite and nonnegative")
    _check(abs(sum(weights) - 1.0) <= 1e-12, "weights: weights must sum to 1")

    powers = tuple(float(p) for p in cfg.tx_power_dbm)
    _check(len(powers) == k, "tx_power_dbm: need one power per user")
    _check(all(math.isfinite(p) for p in powers), "tx_power_dbm: powers must be finite")
    _check(math.isfinite(cfg.noise_dbm), "noise_dbm: must be finite")
    _check(cfg.rician_kappa >= 0, "rician_kappa: must be nonnegative")

    sol = cfg.solver
    _check(0.0 < sol.pdd_scale < 1.0, "solver.pdd_scale: c must lie in (0, 1)")
    _check(sol.pdd_eps > 0, "solver.pdd_eps: must be positive")
    _check(sol.pdd_rho0 > 0, "solver.pdd_rho0: must be positive")
    _check(sol.bcd_max_iters >= 1, "solver.bcd_max_iters: must be >= 1")

    _check(isinstance(cfg.trials, int) and cfg.trials >= 1, "trials: must be >= 1")

    tx_power_w = tuple(dbm_to_watts(p) for p in powers)
    noise_w = dbm_to_watts(cfg.noise_dbm)
    si_gain = cfg.residual_si_gain
    if si_gain is None:
        # Residual SI mitigated to the noise level: entry variance sigma^2 / P_t
        # makes the mean received SI power equal the noise power at full budget.
        si_gain = noise_w / (sum(tx_power_w) / k)
    _check(si_gain >= 0, "residual_si_gain: must be nonnegative")

    return dataclasses.replace(
        cfg,
        user_angles_deg=angles,
        user_distances_m=dists,
        ris=ris,
        weights=weights,
        tx_power_dbm=powers,
        residual_si_gain=float(si_gain),
        groups=m // mg,
        tx_power_w=tx_power_w,
        noise_w=noise_w,
        validated=True,
    )


def derive_trial_seed(seed: int, trial: int) -> TrialSeed:
    """Deterministic, collision-free per-trial seed from the run seed.

    Pure function of (seed, trial); stable across processes and platforms.
    """
    if trial < 0:
        raise ConfigError("trial index must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(trial),))
    derived = int(ss.generate_state(1, dtype=np.uint64)[0])
    return TrialSeed(trial_index=trial, derived_seed=derived)


# ---------------------------------------------------------------------------
# Flat key = value config files (angles in degrees, powers in dBm, meters).

_LIST_FIELDS = {"user_angles_deg", "user_distances_m", "tx_power_dbm", "weights"}
_BOOL_FIELDS = {"structural_scattering", "direct_links"}
_INT_FIELDS = {"users", "antennas", "seed", "trials"}
_RIS_INT = {"elements", "group_size"}
_SOLVER_INT = {"bcd_max_iters", "pdd_inner_max", "pdd_outer_max", "bisection_max_iters"}


def _parse_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("true", "on", "yes", "1"):
        return True
    if s in ("false", "off", "no", "0"):
        return False
    raise ConfigError(f"cannot parse boolean value {v!r}")


def config_to_text(cfg: ScenarioConfig) -> str:
    """Serialize to the flat external format (one key = value per line)."""
    lines = []

    def emit(key, value):
        if isinstance(value, (tuple, list)):
            value = ", ".join(repr(x) for x in value)
        lines.append(f"{key} = {value}")

    for f in ("users", "antennas", "user_angles_deg", "user_distances_m",
              "pathloss_ref_db", "exponent_ris", "exponent_direct", "rician_kappa",
              "tx_power_dbm", "noise_dbm", "residual_si_gain", "weights",
              "structural_scattering", "direct_links", "departure_angle_deg",
              "seed", "trials"):
        emit(f, getattr(cfg, f))
    for f in ("elements", "group_size", "connectivity", "reciprocity"):
        emit(f"ris.{f}", getattr(cfg.ris, f))
    for f in ("bcd_max_iters", "bcd_rel_tol", "pdd_inner_max", "pdd_inner_rel_tol",
              "pdd_outer_max", "pdd_eps", "pdd_rho0", "pdd_scale",
              "bisection_tol", "bisection_max_iters", "jacobi_updates"):
        emit(f"solver.{f}", getattr(cfg.solver, f))
    return "\n".join(lines) + "\n"


def config_from_text(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse the flat external format back into an (unvalidated) ScenarioConfig."""
    cfg_kw: dict = {}
    ris_kw: dict = {}
    sol_kw: dict = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("ris."):
            name = key[4:]
            ris_kw[name] = int(value) if name in _RIS_INT else value
        elif key.startswith("solver."):
            name = key[7:]
            if name == "jacobi_updates":
                sol_kw[name] = _parse_bool(value)
            elif name in _SOLVER_INT:
                sol_kw[name] = int(value)
            else:
                sol_kw[name] = float(value)
        elif key in _LIST_FIELDS:
            cfg_kw[key] = tuple(float(x) for x in value.split(",") if x.strip())
        elif key in _BOOL_FIELDS:
            cfg_kw[key] = _parse_bool(value)
        elif key in _INT_FIELDS:
            cfg_kw[key] = int(value)
        elif key == "residual_si_gain":
            cfg_kw[key] = None if value == "None" else float(value)
        elif key == "connectivity" or key == "reciprocity":
            ris_kw[key] = value
        else:
            cfg_kw[key] = float(value)
    base = base if base is not None else ScenarioConfig()
    ris = dataclasses.replace(base.ris, **ris_kw) if ris_kw else base.ris
    solver = dataclasses.replace(base.solver, **sol_kw) if sol_kw else base.solver
    return dataclasses.replace(base, ris=ris, solver=solver, validated=False, **cfg_kw)
