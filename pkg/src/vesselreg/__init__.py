"""Regional multi-resolution rigid registration of serial whole-slide images."""

__version__ = "0.1.0"

from .core import (RigidTransform, RoiBox, build_pyramid, compose, roi_for_level,
                   scale_transform, ssd, warp_image, warp_mask)
from .evaluate import evaluate_chain, similarity_index
from .roi_register import RegistrationChain, register_pair, register_stack

__all__ = [
    "RigidTransform", "RoiBox", "build_pyramid", "compose", "roi_for_level",
    "scale_transform", "ssd", "warp_image", "warp_mask", "evaluate_chain",
    "similarity_index", "RegistrationChain", "register_pair", "register_stack",
]
