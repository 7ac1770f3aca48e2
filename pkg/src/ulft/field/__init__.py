from .grid import GRID_GROUPS, GROUPS, HEAD_GROUPS, MultiResGrid
from .losses import LossTerms, LossWeights, Targets, compute_losses
from .optim import AdamState, GridAdam, optimizer_step
from .render import Gradients, RayBatch, RenderOut, backward, composite, make_rays, render

__all__ = [
    "GRID_GROUPS", "GROUPS", "HEAD_GROUPS", "MultiResGrid", "LossTerms", "LossWeights",
    "Targets", "compute_losses", "AdamState", "GridAdam", "optimizer_step", "Gradients",
    "RayBatch", "RenderOut", "backward", "composite", "make_rays", "render",
]
