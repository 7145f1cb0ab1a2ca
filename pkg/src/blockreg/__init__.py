"""Coarse-to-fine 3D multimodal registration.

Block-matching affine registration with least-trimmed-squares estimation,
self-similarity-context similarity scoring, masked variational deformable
refinement, warping utilities, NIfTI-1 I/O and landmark evaluation.
"""

from ._kernels import active_backend, available_backends
from .errors import (
    BlockregError,
    GeometryError,
    ParseError,
    RankError,
    StageError,
    ValidationError,
)
from .geometry import (
    AffineTransform,
    Grid,
    LandmarkSet,
    Mask,
    Volume,
    compose,
    voxel_from_world,
    world_from_voxel,
)

__version__ = "0.1.0"
