"""
Exception hierarchy shared by every stage.

Each class carries the process exit code the CLI maps it to.
"""


class BondRiskError(Exception):
    """Base class for all expected failures"""

    exit_code = 1


class ConfigError(BondRiskError):
    """One or more configuration bounds are violated"""

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__(
            "Invalid configuration: " + "; ".join(self.violations)
        )


class MissingArtifactError(BondRiskError):
    """An upstream artifact a stage depends on does not exist"""

    exit_code = 3

    def __init__(self, path, hint: str = ""):
        self.path = path
        message = f"Missing input artifact: {path}"
        if hint:
            message += f" ({hint})"
        super().__init__(message)


class NumericalError(BondRiskError):
    """Training or fitting diverged"""

    exit_code = 4


class DomainError(BondRiskError, ValueError):
    """An argument lies outside the domain of a formula"""

    exit_code = 4


class ShapeError(BondRiskError, ValueError):
    """Tensor shapes do not line up"""

    exit_code = 4


class MissingColumnError(DomainError):
    """A feature column has no observed value at all"""

    def __init__(self, bond_id: str, feature_id: int, feature_name: str):
        self.bond_id = bond_id
        self.feature_id = feature_id
        super().__init__(
            f"Bond {bond_id}: feature {feature_id} ({feature_name}) has no observed value"
        )


class InsufficientSamplesError(DomainError):
    """Too few bonds or samples to satisfy a split or resampling request"""
