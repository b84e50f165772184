"""Exception hierarchy and the exit codes the CLI maps them to."""

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_SIMULATION_ERROR = 3


class SimulatorError(Exception):
    """Base class for every error raised by the simulator."""

    exit_code = 1


class ConfigError(SimulatorError):
    """Invalid or contradictory scenario configuration."""

    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")

    def __reduce__(self):
        return type(self), (self.key, self.message)


class SimulationError(SimulatorError):
    """A simulation invariant was violated."""

    exit_code = EXIT_SIMULATION_ERROR


class DeviceFullError(SimulationError):
    """Garbage collection could not reclaim a free page."""


class QueueFullError(SimulationError):
    """A command was submitted to a full submission queue."""
