"""Shared builders for the test suite."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from fdcirc import (BeamformerState, RisArchitecture, ScenarioConfig,
                    SurrogateState, sample_channel_set, validate)
from fdcirc import surrogate as sg
from fdcirc.channel import effective_channels
from fdcirc.scattering import random_feasible_phi


def make_cfg(**overrides) -> ScenarioConfig:
    base = ScenarioConfig()
    if "ris" not in overrides and ("elements" in overrides or "group_size" in overrides
                                   or "connectivity" in overrides
                                   or "reciprocity" in overrides):
        m = overrides.pop("elements", 16)
        mg = overrides.pop("group_size", m)
        overrides["ris"] = RisArchitecture(
            elements=m, group_size=mg,
            connectivity=overrides.pop("connectivity",
                                       "diagonal" if mg == 1 and m > 1 else
                                       "fully_connected" if mg == m else "group_connected"),
            reciprocity=overrides.pop("reciprocity", "non_reciprocal"))
    return validate(dataclasses.replace(base, validated=False, **overrides))


def random_instance(rng, cfg, feasible_power=True):
    """Channels, a random feasible Phi, and random feasible beamformers with
    tight iota/tau. Returns (ch, eff, bf, sur, phi)."""
    kk, n = cfg.users, cfg.antennas
    ch = sample_channel_set(cfg, rng)
    phi = random_feasible_phi(rng, cfg.ris)
    eff = effective_channels(ch, phi, cfg.structural_scattering)
    pre = rng.standard_normal((kk, n)) + 1j * rng.standard_normal((kk, n))
    for k in range(kk):
        budget = cfg.tx_power_w[(k - 1) % kk]
        scale = budget * (rng.random() if feasible_power else 2.0)
        pre[k] *= np.sqrt(scale) / np.linalg.norm(pre[k])
    com = rng.standard_normal((kk, n)) + 1j * rng.standard_normal((kk, n))
    for k in range(kk):
        com[k] /= np.linalg.norm(com[k])
    bf = BeamformerState(precoders=pre, combiners=com)
    sur = SurrogateState.zeros(kk)
    sur.iota = sg.update_iota(bf, eff, ch, cfg)
    sur.tau = sg.update_tau(bf, eff, ch, sur, cfg)
    return ch, eff, bf, sur, phi


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
