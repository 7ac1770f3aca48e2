"""Photometric, depth and semantic losses with gradients w.r.t. rendered outputs.

Every loss is a mean over the rays it applies to.  Each function returns
``(value, grad)`` where ``grad`` has the shape of the rendered quantity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from .render import RenderOut, softmax


@dataclass(frozen=True)
class LossWeights:
    depth: float = 1.0
    semantic: float = 1.0
    instance: float = 1.0


@dataclass(eq=False)
class Targets:
    color: np.ndarray | None = None      # (B, 3)
    depth: np.ndarray | None = None      # (B,) planar depth, NaN where the prior is missing
    semantic: np.ndarray | None = None   # (B,) class ids


@dataclass(eq=False)
class LossTerms:
    values: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.values["total"]


def color_loss(pred, target):
    B = len(pred)
    diff = pred - target
    return float(np.sum(diff ** 2) / B), 2.0 * diff / B


def depth_loss(pred, target):
    valid = np.isfinite(target)
    n = int(valid.sum())
    grad = np.zeros_like(pred)
    if n == 0:
        return 0.0, grad
    diff = np.where(valid, pred - np.where(valid, target, 0.0), 0.0)
    grad[:] = 2.0 * diff / n
    return float(np.sum(diff ** 2) / n), grad


def semantic_loss(logits, target):
    """Mean cross-entropy of softmax(rendered logits) against class ids."""
    B = len(logits)
    p = softmax(logits)
    t = np.asarray(target, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    value = float(-logp[np.arange(B), t].sum() / B)
    grad = p.copy()
    grad[np.arange(B), t] -= 1.0
    return value, grad / B


def compute_losses(out: RenderOut, targets: Targets, weights: LossWeights = LossWeights(),
                   extra: dict | None = None) -> LossTerms:
    """Assemble the weighted total.

    ``extra`` carries additional ``name -> (value, grad, output_key)`` terms
    (the instance losses); their weight is ``weights.instance``.
    """
    B = len(out.opacity)
    if B == 0:
        raise InputError("empty ray batch")
    terms = LossTerms()
    total = 0.0
    grads = terms.grads
    if targets.color is not None:
        v, g = color_loss(out.color, targets.color)
        terms.values["color"] = v
        total += v
        grads["color"] = g
    if targets.depth is not None:
        v, g = depth_loss(out.depth, targets.depth)
        terms.values["depth"] = v
        total += weights.depth * v
        grads["depth"] = weights.depth * g
    if targets.semantic is not None:
        v, g = semantic_loss(out.semantic, targets.semantic)
        terms.values["semantic"] = v
        total += weights.semantic * v
        grads["semantic"] = weights.semantic * g
    for name, (v, g, key) in (extra or {}).items():
        terms.values[name] = v
        total += weights.instance * v
        grads[key] = grads.get(key, 0.0) + weights.instance * g
    terms.values["total"] = total
    return terms
