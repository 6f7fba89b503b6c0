"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for all simulator-specific failures."""


class ModelError(SimulationError, ValueError):
    """Invalid physical model: bad rates, non-physical states, wrong shapes."""


class GridError(SimulationError, ValueError):
    """Invalid or mismatched time grid."""


class IntegrationError(SimulationError, RuntimeError):
    """Integrator could not meet its tolerance (stiffness, step underflow)
    or the propagated state violated a physicality invariant."""


class CalibrationError(SimulationError, RuntimeError):
    """Amplitude calibration could not bracket the requested target."""


class EstimateError(SimulationError, ValueError):
    """An estimator's input is degenerate (zero flux, unnormalized grids)."""


class ConfigError(SimulationError, ValueError):
    """Run configuration file or CLI arguments are invalid."""
