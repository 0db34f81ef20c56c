"""Exception types shared across the package.

The command line tool maps these onto distinct exit codes, so raising the
right class matters for scripted sweeps.
"""


class KinverifyError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(KinverifyError):
    """Invalid configuration file, option value, or command usage."""


class DataError(KinverifyError):
    """Missing or malformed input: manifests, images, serialized files."""


class NumericError(KinverifyError):
    """Numerical degeneracy: singular scatter, failed eigensolve, zero vectors."""
