"""Full-duplex wireless circulator with a (non-)reciprocal BD-RIS.

Channel synthesis, weighted sum-rate maximization (BCD with a PDD inner
solver for the scattering matrix), and the experiment harness reproducing
the sweep/beampattern/eavesdropping studies.
"""

from .config import (RisArchitecture, ScenarioConfig, SolverParams, TrialSeed,
                     config_from_text, config_to_text, derive_trial_seed, validate)
from .channel import ChannelSet, EffectiveChannels, effective_channels, sample_channel_set
from .metrics import BeamformerState, RateReport, beampatterns, weighted_sum_rate
from .surrogate import SurrogateState
from .scattering import RisState, optimize_scattering
from .driver import OptimizerReport, compare_architectures, initialize, run
from .experiments import SweepSpec, export, run_sweep

__all__ = [
    "RisArchitecture", "ScenarioConfig", "SolverParams", "TrialSeed",
    "config_from_text", "config_to_text", "derive_trial_seed", "validate",
    "ChannelSet", "EffectiveChannels", "effective_channels", "sample_channel_set",
    "BeamformerState", "RateReport", "beampatterns", "weighted_sum_rate",
    "SurrogateState", "RisState", "optimize_scattering",
    "OptimizerReport", "compare_architectures", "initialize", "run",
    "SweepSpec", "export", "run_sweep",
]

__version__ = "0.1.0"
