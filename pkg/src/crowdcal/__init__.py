"""Crowd size estimation from Wi-Fi probe requests, calibrated by a camera-counted choke point."""

from .calibration import (
    Algorithm, CalibrationState, ZoneEstimate, linear_coefficient, proportional_coefficient,
    update_and_calibrate,
)
from .core import (
    CameraEvent, Direction, ProbeRecord, TimeWindow, WindowMeasurement, Zone, ZoneTopology,
    validate_topology, window_for,
)
from .counting import camera_total, count_devices
from .evaluation import EvaluationReport, evaluate, nrmse, rmse
from .pipeline import Pipeline, PipelineConfig, run_replay

__version__ = "0.1.0"

__all__ = [
    "Algorithm", "CalibrationState", "ZoneEstimate", "linear_coefficient",
    "proportional_coefficient", "update_and_calibrate", "CameraEvent", "Direction",
    "ProbeRecord", "TimeWindow", "WindowMeasurement", "Zone", "ZoneTopology",
    "validate_topology", "window_for", "camera_total", "count_devices", "EvaluationReport",
    "evaluate", "nrmse", "rmse", "Pipeline", "PipelineConfig", "run_replay",
]
