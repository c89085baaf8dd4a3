"""shapeforge: spatially controlled 3D shape generation with rectified flows.

Control geometry (superquadric compositions or meshes) is voxelized, encoded
by an analytic patch codec, partially re-noised to a chosen schedule step and
denoised by a trained velocity field; the step index trades realism against
faithfulness to the control.
"""

__version__ = "0.1.0"

from .codec import CodecSpec, LatentGrid, decode, encode
from .flow import StepSchedule, forward_noise, integrate, make_schedule
from .geometry import ControlScene, OccupancyGrid, Superquadric, inside_outside, surface_sample, voxelize
from .guidance import (
    GenerationResult,
    GuidanceConfig,
    generate_scene,
    generate_structure,
    inject,
    normalize_to_unit_cube,
)
from .oracle import MixturePrior, OracleField, exact_sample, oracle_velocity

__all__ = [
    "CodecSpec",
    "ControlScene",
    "GenerationResult",
    "GuidanceConfig",
    "LatentGrid",
    "MixturePrior",
    "OccupancyGrid",
    "OracleField",
    "StepSchedule",
    "Superquadric",
    "decode",
    "encode",
    "exact_sample",
    "forward_noise",
    "generate_scene",
    "generate_structure",
    "inject",
    "inside_outside",
    "integrate",
    "make_schedule",
    "normalize_to_unit_cube",
    "oracle_velocity",
    "surface_sample",
    "voxelize",
]
