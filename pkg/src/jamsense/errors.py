"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class JamSenseError(Exception):
    exit_code = 3


class ParameterError(JamSenseError, ValueError):
    """Invalid numeric parameter or malformed input."""
    exit_code = 2


class ConfigError(JamSenseError):
    """Unknown scenario, model name, or inconsistent configuration."""
    exit_code = 2


class SpecError(ParameterError):
    """Model parameters do not match their architecture spec."""


class LabelError(ParameterError):
    pass


class InputTooShortError(ParameterError):
    pass


class DegenerateReferenceError(ParameterError):
    pass


class PairingError(JamSenseError):
    exit_code = 2


class DivergenceError(JamSenseError):
    """Training produced a non-finite loss."""
    exit_code = 4

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
