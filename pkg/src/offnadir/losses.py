"""Training losses and their composition over supervision levels.

The detection-network internals (RPN, R-CNN, roof mask head, offset head)
are out of scope; their loss values enter as externally supplied
nonnegative scalars. Everything else is computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import SupervisionLevel
from .raster import BitMask
from .geometry import Vec2

PROB_CLAMP = 1e-12  # guards log(0) in the mask cross entropy
UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class LossWeights:
    """Weight bundle for the level losses; defaults are the tuned values."""

    alpha1: float = 1.0
    alpha2: float = 32.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    alpha5: float = 16.0
    alpha6: float = 1.0
    alpha7: float = 8.0
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 16.0
    lambda1: float = 0.1
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"LossWeights.{name} must be finite and >= 0, got {value!r}")
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be > 0")


@dataclass(frozen=True)
class ExternalLossInputs:
    """Loss scalars produced by the detection network."""

    l_rp: float = 0.0  # region proposal
    l_rc: float = 0.0  # box classification/regression
    l_mh: float = 0.0  # roof mask head
    l_o: float = 0.0  # offset head

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")


def smooth_l1(pred, gt, beta: float = 1.0) -> float:
    """Mean smooth-L1: quadratic inside |d| < beta, linear outside."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    p = np.asarray(pred, dtype=float).ravel()
    g = np.asarray(gt, dtype=float).ravel()
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.size} vs {g.size}")
    if p.size == 0:
        raise ValueError("smooth_l1 of empty vectors is undefined")
    d = p - g
    ad = np.abs(d)
    vals = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    return float(vals.mean())


def mask_cross_entropy(pred_prob, gt: BitMask) -> float:
    """Mean binary cross entropy of a probability grid against a mask."""
    p = np.asarray(pred_prob, dtype=float)
    if p.shape != (gt.height, gt.width):
        raise ValueError(f"probability grid {p.shape} != mask ({gt.height}, {gt.width})")
    if p.size == 0:
        raise ValueError("cross entropy of an empty grid is undefined")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = gt.data.astype(float)
    vals = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(vals.mean())


def offset_angle_loss(v_pred: Vec2, v_gt_unit: Vec2, lambda1: float = 0.1) -> float:
    """Offset-direction loss: L1 distance to the unit ground-truth direction
    plus lambda1 times the deviation of the predicted norm from 1.

    Zero-offset (nadir) instances have no direction and must be excluded by
    the caller; the ground truth here is required to be unit length.
    """
    if abs(v_gt_unit.norm() - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"ground-truth direction must be unit length, got norm {v_gt_unit.norm()}")
    l1 = abs(v_pred.dx - v_gt_unit.dx) + abs(v_pred.dy - v_gt_unit.dy)
    return l1 + lambda1 * abs(v_pred.norm() - 1.0)


def off_nadir_loss(tan_pred, tan_gt) -> float:
    """Mean absolute error between predicted and true off-nadir tangents."""
    p = np.asarray(tan_pred, dtype=float)
    g = np.asarray(tan_gt, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.mean(np.abs(p - g)))


def height_loss(h_pred, h_gt) -> float:
    """Mean absolute height error (meters); scalars or per-instance vectors."""
    p = np.asarray(h_pred, dtype=float)
    g = np.asarray(h_gt, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.mean(np.abs(p - g)))


def loft_loss(x: ExternalLossInputs, w: LossWeights = LossWeights()) -> float:
    """Weighted sum of the four detection-network losses."""
    return x.l_rp + w.beta1 * x.l_rc + w.beta2 * x.l_mh + w.beta3 * x.l_o


@dataclass(frozen=True)
class LevelComponents:
    """Per-sample loss components; levels require different subsets."""

    l_f: float | None = None  # footprint mask loss
    l_h: float | None = None  # height loss
    l_ona: float | None = None  # off-nadir angle loss
    l_ova: float | None = None  # offset angle loss
    external: ExternalLossInputs | None = None

    def __post_init__(self):
        for name in ("l_f", "l_h", "l_ona", "l_ova"):
            value = getattr(self, name)
            if value is None:
                continue
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")

    def require(self, level: SupervisionLevel, *names: str):
        for name in names:
            if getattr(self, name) is None:
                raise ValueError(f"level {level.name} loss needs component {name!r}")


def level_loss(
    level: SupervisionLevel, components: LevelComponents, w: LossWeights = LossWeights()
) -> float:
    """Loss of one sample given its supervision level.

    N uses the footprint loss alone; H adds the region-proposal loss
    (trained against pseudo bboxes) and the weighted height loss; OH adds
    the remaining detection losses and both angle losses.
    """
    c = components
    c.require(level, "l_f")
    total = c.l_f
    if level >= SupervisionLevel.H:
        c.require(level, "l_h", "external")
        total += w.alpha1 * c.external.l_rp + w.alpha2 * c.l_h
    if level >= SupervisionLevel.OH:
        c.require(level, "l_ona", "l_ova")
        total += (
            w.alpha3 * c.external.l_rc
            + w.alpha4 * c.external.l_mh
            + w.alpha5 * c.external.l_o
            + w.alpha6 * c.l_ona
            + w.alpha7 * c.l_ova
        )
    return total


def hybrid_loss(graded, w: LossWeights = LossWeights()) -> float:
    """Total loss over (level, components) pairs; empty input sums to 0."""
    return sum(level_loss(level, comps, w) for level, comps in graded)
