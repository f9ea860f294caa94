"""Closed-loop simulator of a projected-light arena for robot swarms.

Synthetic overhead camera frames are searched for circular robots with a
gradient Hough transform, detections are linked into tracks, tracks are
registered to the projector through homographies, and a virtual environment
(pheromone field, noisy tiles, objects, robot rings) is composed into the
projector frame that simulated robots then sense.
"""

from .calib import Homography, estimate_homography, invert_homography, map_point
from .config import ConfigError, ScenarioConfig, load_scenario
from .detect import CircleDetector, Detection, HoughParams, detect_circles
from .field import Field, TileLayer, VirtualObject, deposit, make_tile_layer_frame, sample_field, step_field
from .image import CameraModel, ImageBuffer, gaussian_blur, load_pnm, render_camera_view, save_pnm, sobel_gradients
from .orchestrate import Experiment, ExperimentSummary, ScriptedCommands, run_experiment
from .protocol import Command
from .render import OverlayStyle, compose_projector_frame, draw_ring, field_colormap
from .swarm import Behavior, Robot, step_swarm
from .track import Track, Tracker, TrackerParams, TrackState, step_tracker

__version__ = "0.1.0"

__all__ = [
    "Behavior", "CameraModel", "CircleDetector", "Command", "ConfigError", "Detection", "Experiment",
    "ExperimentSummary", "Field", "Homography", "HoughParams", "ImageBuffer", "OverlayStyle", "Robot",
    "ScenarioConfig", "ScriptedCommands", "TileLayer", "Track", "TrackState", "Tracker", "TrackerParams",
    "VirtualObject", "compose_projector_frame", "deposit", "detect_circles", "draw_ring",
    "estimate_homography", "field_colormap", "gaussian_blur", "invert_homography", "load_pnm",
    "load_scenario", "make_tile_layer_frame", "map_point", "render_camera_view", "run_experiment",
    "sample_field", "save_pnm", "sobel_gradients", "step_field", "step_swarm", "step_tracker",
]
