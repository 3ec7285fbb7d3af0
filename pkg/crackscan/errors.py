"""
Exception hierarchy for crackscan

Every error carries the exit code the CLI reports for it.
"""


class CrackscanError(Exception):
    """Base class for all crackscan errors"""
    exit_code = 1


class ConfigError(CrackscanError):
    """Invalid configuration value; messages start with the dotted field path"""
    exit_code = 2


class ParameterError(ConfigError):
    """Invalid operation parameter (sigma <= 0, g > dims, u > g, ...)"""


class InputError(CrackscanError):
    """Data problem: size or dims mismatch, out-of-range index"""
    exit_code = 3


class VolumeIOError(InputError):
    """Unreadable or unwritable volume file"""


class NumericError(InputError):
    """Non-finite value where a finite one is required"""


class CalibrationError(CrackscanError):
    """Empirical null is missing or was built for another configuration"""
    exit_code = 4
