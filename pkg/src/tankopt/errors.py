"""Exception hierarchy for tankopt."""


class TankoptError(Exception):
    """Base class for all tankopt errors."""


class ConfigError(TankoptError):
    """Bad or unreadable configuration (CLI exit code 2)."""


class ArtifactMismatchError(TankoptError):
    """Hash chain between params, grids and value table is broken (exit code 3)."""


class ModelContractError(TankoptError):
    """A model broke its own contract, e.g. intensity above its stated bound
    or a non-finite flow output (exit code 4)."""


class DomainExitError(TankoptError):
    """A deterministic flow was evaluated past the domain boundary."""


class ProjectionError(TankoptError):
    """A sample could not be projected onto a grid (mode has no codebook points)."""
