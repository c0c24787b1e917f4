"""Exception hierarchy shared by the library and the CLI.

Every error that can surface at the command line carries a stable short
code and the process exit status the CLI maps it to (0 ok, 2 config error,
3 missing/unusable input, 4 numerical failure).
"""


class PipelineError(Exception):
    """Base class for errors the CLI knows how to report."""

    exit_code = 1
    code = "error"


class ConfigError(PipelineError):
    """Bad configuration value, unknown key, or out-of-bounds parameter."""

    exit_code = 2
    code = "config"


class MissingInputError(PipelineError):
    """A required input file or pipeline stage output does not exist."""

    exit_code = 3
    code = "missing-input"


class MapIOError(PipelineError):
    """A map file exists but cannot be parsed into the declared type."""

    exit_code = 3
    code = "map-io"


class NumericalError(PipelineError):
    """A numerical procedure produced NaN/Inf or otherwise diverged."""

    exit_code = 4
    code = "numerical"
