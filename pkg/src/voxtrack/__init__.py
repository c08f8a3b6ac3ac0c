"""voxtrack: solid-volume reconstruction from calibrated depth cameras,
multi-person tracking, and per-person action inference."""

from .backend import available_backends, backend_name
from .carving import (CROP_DIMS, GridSpec, ProjectionTables, VoxelGrid,
                      apply_topdown_mask, carve, crop_person, inject_points,
                      load_occupancy, save_occupancy)
from .detection import Candidate, detect_candidates, smooth, topdown_envelope
from .errors import ConfigurationError, DataError
from .geometry import (Camera, DepthImage, load_calibration, look_at_camera,
                       project, save_calibration, unproject)
from .nn import WeightBundle, load_weights, save_weights
from .pipeline import FrameRecord, RunConfig, evaluate, run
from .simulator import (SceneScript, ScenePrimitive, ground_truth_detections,
                        ground_truth_occupancy, load_scene, render_depth,
                        save_scene)
from .tracking import TrackParams, Tracker, Trajectory

__version__ = "0.1.0"
