"""Attention-aggregated two-hand mesh recovery on a toy MANO-structured rig."""

from .aggregation import AggregationHeads, InteractionConfig, aggregate_maps, collision_aware_repulsion, interaction_intensity
from .attention_maps import KernelConfig, MapStack, render_center_map, render_part_segmentation
from .errors import (ACRError, CoincidentCenters, DegenerateAlignment, DegenerateRotation, FormatError,
                     InitializationError, InvalidLabel)
from .fitting import FitConfig, FitResult, fit_scene
from .hand_model import HandParams, HandRig, rot6d_to_matrix, skin_mesh, toy_rig
from .losses import LossWeights, procrustes_align, total_loss
from .synth import SynthConfig, oracle_maps, perturb_params, sample_scene

__version__ = "0.1.0"

__all__ = [
    "ACRError", "AggregationHeads", "CoincidentCenters", "DegenerateAlignment", "DegenerateRotation",
    "FitConfig", "FitResult", "FormatError", "HandParams", "HandRig", "InitializationError",
    "InteractionConfig", "InvalidLabel", "KernelConfig", "LossWeights", "MapStack", "SynthConfig",
    "aggregate_maps", "collision_aware_repulsion", "fit_scene", "interaction_intensity", "oracle_maps",
    "perturb_params", "procrustes_align", "render_center_map", "render_part_segmentation",
    "rot6d_to_matrix", "sample_scene", "skin_mesh", "toy_rig", "total_loss",
]
