"""tankopt: optimal maintenance dates for the heated hold-up tank.

Simulation of the tank as a piecewise deterministic Markov process,
quantization of its embedded jump chain, backward dynamic programming for the
value function, and an online stopping rule for the maintenance date.
"""
from .errors import (ArtifactMismatchError, ConfigError, DomainExitError,
                     ModelContractError, ProjectionError, TankoptError)
from .pdmp import (HybridState, JumpKind, JumpSample, PdmpModel, TerminalCause,
                   Trajectory, flow_between, sample_next_jump,
                   simulate_trajectory)
from .policy import Decision, PolicyRun, StoppingPolicy, next_decision, run_policy
from .quantizer import (ChainBank, ChainQuantizer, GridPoint, QuantizationGrid,
                        codebook_distortion, sample_chain_bank, train_codebook)
from .tank import (INITIAL_MODE, ControllerState, Mode, TankModel, TankParams,
                   UnitState, boundary_time, flow, jump_kernel,
                   rate_multiplier, reachable_modes, reward, reward_shape,
                   total_intensity, unit_intensity)
from .evaluate import (CampaignStats, CensusReport, baseline_campaign,
                       mode_census, policy_campaign)
from .value import (ValueSolver, ValueTable, apply_L_hat, backward_solve,
                    build_time_grid)

__version__ = "0.1.0"

__all__ = [
    "ArtifactMismatchError", "ConfigError", "DomainExitError",
    "ModelContractError", "ProjectionError", "TankoptError",
    "HybridState", "JumpKind", "JumpSample", "PdmpModel", "TerminalCause",
    "Trajectory", "flow_between", "sample_next_jump", "simulate_trajectory",
    "Decision", "PolicyRun", "StoppingPolicy", "next_decision", "run_policy",
    "ChainBank", "ChainQuantizer", "GridPoint", "QuantizationGrid",
    "codebook_distortion", "sample_chain_bank", "train_codebook",
    "INITIAL_MODE", "ControllerState", "Mode", "TankModel", "TankParams",
    "UnitState", "boundary_time", "flow", "jump_kernel", "rate_multiplier",
    "reachable_modes", "reward", "reward_shape", "total_intensity",
    "unit_intensity",
    "CampaignStats", "CensusReport", "baseline_campaign", "mode_census",
    "policy_campaign",
    "ValueSolver", "ValueTable", "apply_L_hat", "backward_solve",
    "build_time_grid",
]
