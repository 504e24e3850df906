"""Exception hierarchy shared by every module of the package."""


class SpikeAEError(Exception):
    """Base class for all package errors."""


class InputDomainError(SpikeAEError, ValueError):
    """A value lies outside the domain an operation accepts."""


class StructuralError(SpikeAEError, ValueError):
    """Array shapes or layer widths are inconsistent."""


class ConfigError(SpikeAEError, ValueError):
    """A configuration value is invalid or contradicts another one."""


class FormatError(SpikeAEError, ValueError):
    """A file does not follow its binary format (bad magic, version, ...)."""


class ConsistencyError(SpikeAEError, ValueError):
    """Data parsed correctly but is internally inconsistent (count mismatch, missing class, ...)."""


class DataIOError(SpikeAEError, OSError):
    """A file could not be read completely (missing, empty or truncated)."""


class NumericalInstabilityError(SpikeAEError, ArithmeticError):
    """Training produced non-finite values.

    Carries the location of the failure so a long run can be diagnosed
    without re-running it.
    """

    def __init__(self, message, layer=None, batch=None, step=None):
        parts = [message]
        if layer is not None:
            parts.append(f"layer={layer}")
        if batch is not None:
            parts.append(f"batch={batch}")
        if step is not None:
            parts.append(f"step={step}")
        super().__init__(" ".join(parts))
        self.layer = layer
        self.batch = batch
        self.step = step
