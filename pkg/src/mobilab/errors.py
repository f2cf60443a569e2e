"""Exception hierarchy with process exit codes for the CLI."""


class MobilabError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(MobilabError):
    """Invalid configuration: bad parameter domains, malformed config files."""

    exit_code = 2


class ParameterDomainError(ConfigError):
    """A model parameter lies outside its valid domain."""


class DependencyError(ConfigError):
    """A report preset or analysis is missing a prerequisite output."""


class DataValidationError(MobilabError):
    """Input data failed schema or range validation."""

    exit_code = 3


class AnalysisError(MobilabError):
    """An estimation or test step could not be completed."""

    exit_code = 4


class EstimationError(AnalysisError):
    """A region-level estimate is undefined (degenerate inputs)."""


class SpecError(AnalysisError):
    """An estimator was applied to a spec it does not support."""
