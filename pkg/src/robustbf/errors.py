"""Error taxonomy shared across the package."""


class ConfigurationError(ValueError):
    """Bad dimensions, malformed config files, out-of-range parameters."""


class SolverError(RuntimeError):
    """A numerical routine failed to converge; message carries diagnostics."""


class TrainingError(RuntimeError):
    """Non-finite loss/gradient during training; message names the batch."""
