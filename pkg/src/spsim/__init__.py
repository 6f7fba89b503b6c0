"""Pulsed single-photon-source simulator.

Deterministic pipeline: build a driven emitter (model), integrate its
master equation and two-time correlation grids (dynamics), reduce them to
interferometric figures of merit (coherence).  Stochastic pipeline:
quantum-jump trajectories with click-level detection (trajectories).  The
cli module wires both into sweep commands.
"""

__version__ = "0.1.0"

from .coherence import (
    CoherenceSummary,
    FivePeakPattern,
    SplitterSpec,
    coherence_summary,
    delay_shift,
    delay_steps,
    hom_cross_general,
    hom_identical,
    hom_normalization_reference,
    hom_short_time_intensity,
    hom_single_photon_overlap,
    integrated_g1sq_zero,
    integrated_g2_zero,
    mz_five_peaks,
    mz_identical,
)
from .dynamics import (
    CorrelationGrid,
    StateTrajectory,
    TimeGrid,
    calibrate_amplitude,
    emission_flux,
    evolve,
    expectation,
    g1_grid,
    g2_grid,
    load_grid_binary,
    load_grid_csv,
    mean_photon_number,
    pulse_window,
    refine_for_rates,
    save_grid_binary,
    save_grid_csv,
    two_time_grid,
)
from .errors import (
    CalibrationError,
    ConfigError,
    EstimateError,
    GridError,
    IntegrationError,
    ModelError,
    SimulationError,
)
from .model import (
    CollapseChannel,
    Operator,
    PulseEnvelope,
    SourceSystem,
    add_dephasing,
    gaussian_pulse,
    ladder_system,
    lambda_system,
    liouvillian,
    projector,
    scale_drive,
    split_emission,
    transition,
    two_level_system,
)
from .trajectories import (
    ClickRecord,
    DetectionModel,
    Histogram,
    PhotocountDistribution,
    click_records_to_csv,
    g2_from_photocounts,
    hbt_histogram,
    histogram_to_csv,
    photocount_distribution,
    photocount_g2_stats,
    ratio_estimate_g2,
    route_clicks,
    run_trajectories,
)
