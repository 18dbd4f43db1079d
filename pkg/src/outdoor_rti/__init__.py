"""Outdoor radio tomographic imaging: link-channel selection, adaptive
reference RSS, regularised image reconstruction, background subtraction and
tracking, plus an RSS trace simulator and an evaluation harness."""

from .channel_model import (GLOBAL, NODE_SPECIFIC, CalibrationWindow, LinkChannelStats, PathLossModel,
                            estimate_stats, fade_levels, fit_path_loss)
from .evaluation import EvalReport, Schedule, false_alarm_rate, rmse, run_experiment, run_strategy
from .pipeline import RtiPipeline, build_imaging
from .rti import RtiConfig, build_projection, build_weight_matrix, estimate_image
from .scene import Deployment, LinkKey, NodeRecord, enumerate_links, estimate_node_positions, forest_deployment
from .selection import SelectionSet, Strategy, energy_coefficient, select
from .simulate import ScenarioConfig, Trajectory, WindProfile, generate_trace
from .tracking import BackgroundModel, Tracker, TrackerConfig

__version__ = "0.1.0"

__all__ = [
    "GLOBAL", "NODE_SPECIFIC", "CalibrationWindow", "LinkChannelStats", "PathLossModel",
    "estimate_stats", "fade_levels", "fit_path_loss",
    "EvalReport", "Schedule", "false_alarm_rate", "rmse", "run_experiment", "run_strategy",
    "RtiPipeline", "build_imaging",
    "RtiConfig", "build_projection", "build_weight_matrix", "estimate_image",
    "Deployment", "LinkKey", "NodeRecord", "enumerate_links", "estimate_node_positions", "forest_deployment",
    "SelectionSet", "Strategy", "energy_coefficient", "select",
    "ScenarioConfig", "Trajectory", "WindProfile", "generate_trace",
    "BackgroundModel", "Tracker", "TrackerConfig",
]
