"""Ensemble flood-forecast toolkit: raster diffusive-wave hydraulics, gauge
and wet-surface-ratio observation operators, Gaussian anamorphosis, a
stochastic ensemble Kalman filter with sliding windows, twin-experiment
synthesis and scoring."""

from .anamorphosis import (AnamorphosisFunction, SampleSpec, build_anamorphosis,
                           read_phi, transform_obs_block, write_phi)
from .enkf import (CycleConfig, CycleRecord, GainDiagnostics, analyze,
                   control_mask, perturb_observations, resample_controls,
                   run_event, stochastic_update, thin_wl_observations)
from .errors import (ConfigurationError, ConstructionError, DomainError,
                     FloodDAError, IntegrationError, ObservationError,
                     ValidationError)
from .experiments import (ExperimentConfig, RunResult, build_default_grid,
                          build_default_hydrograph, compare_runs, load_config,
                          make_default_case, run_experiment)
from .hydro import (ControlVector, EnsembleSimResult, Grid, Hydrograph,
                    ModelState, SimulationResult, VolumeBudget, apply_dh,
                    read_grid, read_hydrograph, read_restart, simulate,
                    simulate_ensemble, stable_dt, step, write_grid,
                    write_hydrograph, write_restart)
from .metrics import (ContingencyMap, contingency, csi, hwm_compare, rmse,
                      wsr_misfit_series)
from .observe import (GaugeSpec, Observation, extract_wl, flood_mask,
                      model_equivalent, read_mask_pgm, read_observations,
                      write_mask_pgm, write_observations, wsr, wsr_all)
from .osse import TruthRun, TruthSchedule, run_truth, synthesize_obs

__version__ = "0.1.0"

__all__ = [
    "AnamorphosisFunction", "SampleSpec", "build_anamorphosis", "read_phi",
    "transform_obs_block", "write_phi",
    "CycleConfig", "CycleRecord", "GainDiagnostics", "analyze", "control_mask",
    "perturb_observations", "resample_controls", "run_event", "stochastic_update",
    "thin_wl_observations",
    "ConfigurationError", "ConstructionError", "DomainError", "FloodDAError",
    "IntegrationError", "ObservationError", "ValidationError",
    "ExperimentConfig", "RunResult", "build_default_grid", "build_default_hydrograph",
    "compare_runs", "load_config", "make_default_case", "run_experiment",
    "ControlVector", "EnsembleSimResult", "Grid", "Hydrograph", "ModelState",
    "SimulationResult", "VolumeBudget", "apply_dh", "read_grid",
    "read_hydrograph", "read_restart", "simulate", "simulate_ensemble",
    "stable_dt", "step", "write_grid", "write_hydrograph", "write_restart",
    "ContingencyMap", "contingency", "csi", "hwm_compare", "rmse",
    "wsr_misfit_series",
    "GaugeSpec", "Observation", "extract_wl", "flood_mask", "model_equivalent",
    "read_mask_pgm", "read_observations", "write_mask_pgm", "write_observations",
    "wsr", "wsr_all",
    "TruthRun", "TruthSchedule", "run_truth", "synthesize_obs",
    "__version__",
]
