"""Experiment harness: figure-style sweeps, probes, fixtures, and export.

Every sweep is a pure function of (spec, config, seed): trials draw their
channels from per-trial derived seeds, and the three architecture arms of a
comparison share each trial's channel realization (paired statistics).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .channel import sample_channel_set, steering_vector
from .config import (RisArchitecture, ScenarioConfig, config_to_text,
                     derive_trial_seed, validate)
from .driver import ARCHITECTURE_ARMS, run
from .metrics import beampatterns

EXPERIMENTS = ("elements", "moving_user", "group_size", "antennas", "users",
               "rate_region", "beampatterns", "security_power", "convergence")


@dataclass
class SweepSpec:
    experiment: str
    swept_values: list
    fixed_overrides: dict = field(default_factory=dict)
    trials: int = 1
    arms: list = field(default_factory=lambda: ["NR", "R", "D"])


def _arm_pair(arm) -> tuple:
    """Accepts 'NR'/'R'/'D' or an explicit (connectivity, reciprocity) pair."""
    if isinstance(arm, str):
        return ARCHITECTURE_ARMS[arm]
    return tuple(arm)


def _arm_name(arm) -> str:
    return arm if isinstance(arm, str) else f"{arm[0]}/{arm[1]}"


def _user_layout(k: int) -> dict:
    angles = tuple(np.linspace(180.0 / (k + 1), 180.0 * k / (k + 1), k))
    return {"users": k, "user_angles_deg": angles,
            "user_distances_m": (35.0,) * k, "tx_power_dbm": (20.0,) * k,
            "weights": (1.0 / k,) * k}


def _cell_config(spec: SweepSpec, cfg: ScenarioConfig, arm, value) -> ScenarioConfig:
    """Resolved config for one (arm, swept value) cell."""
    connectivity, reciprocity = _arm_pair(arm)
    kw = dict(spec.fixed_overrides)
    m = int(kw.pop("elements", cfg.ris.elements))
    exp = spec.experiment
    if exp == "elements":
        m = int(value)
    elif exp == "moving_user":
        angles = list(cfg.user_angles_deg)
        angles[-1] = float(value)
        kw["user_angles_deg"] = tuple(angles)
    elif exp == "group_size":
        connectivity = "group_connected"
    elif exp == "antennas":
        kw["antennas"] = int(value)
    elif exp == "users":
        kw.update(_user_layout(int(value)))
    elif exp == "rate_region":
        kw["weights"] = tuple(float(w) for w in value)
    elif exp == "security_power":
        k = kw.get("users", cfg.users)
        kw["tx_power_dbm"] = (float(value),) * k
    elif exp == "beampatterns":
        kw.setdefault("rician_kappa", float("inf"))
        kw.setdefault("antennas", 1)
    elif exp != "convergence":
        raise ValueError(f"unknown experiment {exp!r}")
    if exp == "group_size":
        group_size = int(value)
    elif connectivity == "diagonal":
        group_size = 1
    else:
        group_size = m
    ris = RisArchitecture(elements=m, group_size=group_size,
                          connectivity=connectivity, reciprocity=reciprocity)
    return validate(dataclasses.replace(cfg, ris=ris, validated=False, **kw))


def weight_grid(k: int = 3, step: float = 0.1) -> list:
    """Uniform barycentric grid on the weight simplex (66 points at step 0.1, K=3)."""
    n = int(round(1.0 / step))
    pts = []
    if k != 3:
        raise ValueError("the weight grid is defined for K = 3")
    for i in range(n + 1):
        for j in range(n + 1 - i):
            pts.append((i / n, j / n, (n - i - j) / n))
    return pts


def _trial_channels(cfg: ScenarioConfig, base_seed: int, trial: int):
    ts = derive_trial_seed(base_seed, trial)
    rng = np.random.default_rng(ts.derived_seed)
    return sample_channel_set(cfg, rng), ts.derived_seed


def run_sweep(spec: SweepSpec, cfg: ScenarioConfig) -> list:
    """One row per (arm, value, trial), plus mean/stderr aggregate rows."""
    cfg.require_validated()
    if spec.experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {spec.experiment!r}")
    if not spec.swept_values:
        raise ValueError("swept_values must be nonempty")
    if spec.experiment == "beampatterns":
        return _run_beampatterns(spec, cfg)
    rows = []
    for arm in spec.arms:
        for value in spec.swept_values:
            cell = _cell_config(spec, cfg, arm, value)
            sums = []
            for trial in range(spec.trials):
                ch, seed = _trial_channels(cell, cfg.seed, trial)
                rep = run(cell, ch)
                row = {"experiment": spec.experiment, "arm": _arm_name(arm),
                       "value": _value_repr(value), "trial": trial,
                       "derived_seed": seed,
                       "converged": rep.converged,
                       "iterations": rep.iterations_used}
                row.update(rep.final_rates.to_row())
                rows.append(row)
                sums.append(rep.final_rates.weighted_sum)
                if spec.experiment == "convergence":
                    for it, (obj, sr) in enumerate(zip(rep.objective_trace,
                                                       rep.sum_rate_trace)):
                        rows.append({"experiment": "convergence",
                                     "arm": _arm_name(arm),
                                     "value": _value_repr(value), "trial": trial,
                                     "record": "trace", "iteration": it,
                                     "objective": obj, "sum_rate": sr})
            sums = np.array(sums)
            stderr = float(sums.std(ddof=1) / np.sqrt(len(sums))) if len(sums) > 1 else 0.0
            rows.append({"experiment": spec.experiment, "arm": _arm_name(arm),
                         "value": _value_repr(value), "trial": "mean",
                         "weighted_sum_rate": float(sums.mean())})
            rows.append({"experiment": spec.experiment, "arm": _arm_name(arm),
                         "value": _value_repr(value), "trial": "stderr",
                         "weighted_sum_rate": stderr})
    return rows


def _value_repr(value):
    if isinstance(value, (tuple, list)):
        return "/".join(f"{float(v):g}" for v in value)
    return value


def _run_beampatterns(spec: SweepSpec, cfg: ScenarioConfig) -> list:
    rows = []
    for arm in spec.arms:
        cell = _cell_config(spec, cfg, arm, None)
        ch, seed = _trial_channels(cell, cfg.seed, 0)
        rep = run(cell, ch)
        grid, imp, refl = beampatterns(rep.final_phi, ch,
                                       structural=cell.structural_scattering)
        for k in range(cell.users):
            for gi, theta in enumerate(grid):
                rows.append({"experiment": "beampatterns", "arm": _arm_name(arm),
                             "derived_seed": seed, "user": k,
                             "angle_deg": float(theta),
                             "impinging": float(imp[k, gi]),
                             "reflected": float(refl[k, gi])})
    return rows


def structural_scattering_probe(angles_deg: tuple, m: int) -> float:
    """Specular coupling amplitude |sum_{n=0}^{M-1} e^{j n pi (cos theta_k + cos theta_{k-1})}|.

    Equals M exactly when theta_k + theta_{k-1} = 180 deg (the exponents all
    vanish); otherwise it is a finite geometric sum.
    """
    tk, tkm1 = (np.deg2rad(a) for a in angles_deg)
    x = np.pi * (np.cos(tk) + np.cos(tkm1))
    return float(abs(np.sum(np.exp(1j * x * np.arange(m)))))


@dataclass
class EqualityConditionFixture:
    h_pair: tuple
    beta: complex
    phi_constructed: np.ndarray


def _complete_unitary(u: np.ndarray) -> np.ndarray:
    """Deterministic unitary whose first column is exactly the unit vector u."""
    basis = np.linalg.svd(u.reshape(-1, 1), full_matrices=True)[0]
    phase = complex(basis[:, 0].conj() @ u)
    basis[:, 0] = basis[:, 0] * phase
    # Re-orthonormalize the remainder against the exact first column.
    basis[:, 0] = u
    q, _ = np.linalg.qr(basis)
    q[:, 0] = u
    return q


def build_equality_fixture(h_km1: np.ndarray, h_k: np.ndarray) -> EqualityConditionFixture:
    """Unitary Phi attaining the Cauchy-Schwarz bound on |h_k^T (Phi - I) h_{k-1}|,
    i.e. ||h_k|| ||h_{k-1}|| + |h_k^T h_{k-1}|.

    Phi maps u = h_{k-1}/||h_{k-1}|| to beta h_k^*/||h_k||; then
    h_k^T Phi h_{k-1} = beta ||h_k|| ||h_{k-1}||, and beta (unit modulus) is
    chosen so this adds in phase with the structural term -h_k^T h_{k-1}.
    """
    u = np.asarray(h_km1, dtype=complex)
    v = np.asarray(h_k, dtype=complex)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("equality fixture needs nonzero channel vectors")
    u = u / nu
    w = v.conj() / nv
    c = complex(v @ (np.asarray(h_km1, dtype=complex)))     # h_k^T h_{k-1}
    beta = -c / abs(c) if abs(c) > 0 else 1.0 + 0.0j
    qu = _complete_unitary(u)
    qw = _complete_unitary(w)
    phi = (beta * np.outer(qw[:, 0], qu[:, 0].conj())
           + qw[:, 1:] @ qu[:, 1:].conj().T)
    return EqualityConditionFixture(h_pair=(np.asarray(h_km1), np.asarray(h_k)),
                                    beta=complex(beta), phi_constructed=phi)


def los_vector(theta_deg: float, m: int, distance_m: float = 35.0,
               exponent: float = 2.2, zeta0_db: float = -30.0) -> np.ndarray:
    """Pure-LoS RIS-side channel vector used by the bound/equality fixtures."""
    from .channel import path_loss_linear
    pl = path_loss_linear(distance_m, exponent, zeta0_db)
    return np.sqrt(pl * m) * steering_vector(np.deg2rad(theta_deg), m)


def _stable_columns(rows: list) -> list:
    cols: list = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    return cols


def export(rows: list, fmt: str, out_dir: str, name: str,
           cfg: ScenarioConfig | None = None) -> dict:
    """Write the result table plus a manifest; returns the written paths."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, f"{name}.{fmt}")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=_stable_columns(rows),
                                restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        payload = buf.getvalue().encode()
    else:
        payload = json.dumps({"rows": rows}, indent=1, sort_keys=True,
                             default=_json_default).encode()
    with open(data_path, "wb") as fh:
        fh.write(payload)
    manifest = {
        "name": name,
        "format": fmt,
        "rows": len(rows),
        "content_sha256": hashlib.sha256(payload).hexdigest(),
    }
    if cfg is not None:
        manifest["config"] = config_to_text(cfg)
        manifest["seed"] = cfg.seed
    manifest_path = os.path.join(out_dir, f"{name}.manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return {"data": data_path, "manifest": manifest_path}


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")
