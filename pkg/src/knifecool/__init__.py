"""Knife-edge detection and feedback cooling of a trapped ion, simulated end to end."""

from .config import RunConfig, build_config, load_config
from .constants import doppler_limit
from .detection import (OpticalConfig, PhotocurrentTrace, knife_normal_coefficients,
                        knife_reflection, knife_transmission, project_onto_knife_normal,
                        sample_photon_counts, scattering_rate)
from .dynamics import (BathConfig, CoherentDrive, IonState, TrapConfig, coherent_drive,
                       doppler_bath, equipartition_temperature, langevin_step, simulate)
from .errors import (CalibrationError, ConfigError, FilterFault, FitError, NumericalError,
                     SimulationError)
from .experiments import (SweepResult, ThermometryResult, closed_loop_linewidths,
                          run_axis_finding, run_gain_sweep,
                          run_saturation_sweep, run_thermometry)
from .feedback import Bandpass, FeedbackChain, FeedbackConfig, PhaseShifter, dual_loop
from .imaging import GaussianFit2D, IonImage, axis_angles, fit_gaussian_2d
from .simulation import RunRecord, Timing, run_closed_loop
from .spectral import (CalibrationResult, LorentzianFit, Spectrum, calibrate_spectrum,
                       correlate_drive, fit_motion_psd, fit_saturation_curve, measure_slope,
                       motion_psd, saturation_temperature, welch_psd)

__version__ = "0.1.0"
