"""Optimal phase-current waveforms for switched reluctance motors.

Pipeline: sampled flux surfaces (``motor``) -> piecewise-affine fit (``pwa``)
-> periodic direct transcription into a mixed-integer QP (``transcription``)
-> branch and bound over region selectors with perspective cuts (``bnb``,
``perspective``, ``qp``) -> waveform files and lookup tables (``lut``,
``cli``). ``verify`` holds independent oracles.
"""
from .bnb import BnbConfig, BnbResult, solve
from .estimator import WaveformOptimizer
from .lut import LookupTable, SweepSettings, read_waveform_csv, solve_point, sweep, write_waveform_csv
from .modelfile import load_model, model_hash, resolve_model
from .motor import MotorModel, SampledSurface, derive_phase_torque, example_motor, toy_motor
from .pwa import PiecewiseAffineRegressor, PwaCharacteristic, fit_model
from .transcription import Grid, WaveformSolution, transcribe

__all__ = [
    "BnbConfig", "BnbResult", "Grid", "LookupTable", "MotorModel", "PiecewiseAffineRegressor",
    "PwaCharacteristic", "SampledSurface", "SweepSettings", "WaveformOptimizer", "WaveformSolution",
    "derive_phase_torque", "example_motor", "fit_model", "load_model", "model_hash", "read_waveform_csv",
    "resolve_model", "solve", "solve_point", "sweep", "toy_motor", "transcribe", "write_waveform_csv",
]
__version__ = "0.1.0"
