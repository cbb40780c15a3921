"""Training losses and evaluation metrics.

Lengths are meters internally; ``joint_errors`` and the metric helpers
report millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping, Optional

import numpy as np

from .attention_maps import N_SEG_CLASSES, log_channel_softmax
from .errors import DegenerateAlignment, InvalidLabel
from .hand_model import BONE_EDGES, HANDS, HandParams, HandRig, bone_lengths, posed_joints, project_weak_perspective

MM = 1000.0

MESH_TERMS = ("mano", "j3d", "paj3d", "pj2d", "bone")
MAP_TERMS = ("center", "seg")
ALL_TERMS = MESH_TERMS + MAP_TERMS


@dataclass(frozen=True)
class LossWeights:
    w_j3d: float = 200.0
    w_paj3d: float = 360.0
    w_pj2d: float = 400.0
    w_bl: float = 200.0
    w_pose: float = 80.0
    w_shape: float = 10.0
    w_c: float = 80.0
    w_p: float = 160.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")


# ---------------------------------------------------------------- map losses

def focal_center_loss(pred, gt, pos_exponent: float = 2.0, neg_exponent: float = 4.0) -> float:
    """Penalty-reduced pixel-wise focal loss over both center channels.

    Positives are the pixels where the ground truth equals 1; the sum is
    divided by their count (at least 1).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    pos = gt == 1.0
    pos_loss = -((1 - pred[pos]) ** pos_exponent * np.log(pred[pos])).sum()
    neg = ~pos
    neg_loss = -((1 - gt[neg]) ** neg_exponent * pred[neg] ** pos_exponent * np.log1p(-pred[neg])).sum()
    return float((pos_loss + neg_loss) / max(int(pos.sum()), 1))


def part_seg_loss(pred_logits, gt_labels) -> float:
    """Mean per-pixel cross-entropy of the 33-class volume, background included."""
    logits = np.asarray(pred_logits, dtype=np.float64)
    labels = np.asarray(gt_labels)
    if labels.size and (labels.min() < 0 or labels.max() >= N_SEG_CLASSES):
        raise InvalidLabel(f"labels must lie in [0, {N_SEG_CLASSES - 1}]")
    logp = log_channel_softmax(logits, axis=0)
    picked = np.take_along_axis(logp, labels[None].astype(np.int64), axis=0)[0]
    return float(-picked.mean())


# ---------------------------------------------------------------- parameter loss

def mano_param_loss(pred: HandParams, gt: HandParams, weights: LossWeights = LossWeights()) -> float:
    return float(weights.w_pose * np.sum((pred.pose6d - gt.pose6d) ** 2)
                 + weights.w_shape * np.sum((pred.shape - gt.shape) ** 2))


def mano_param_loss_grad(pred: HandParams, gt: HandParams, weights: LossWeights = LossWeights()):
    """Gradient w.r.t. (pose6d, shape)."""
    return 2 * weights.w_pose * (pred.pose6d - gt.pose6d), 2 * weights.w_shape * (pred.shape - gt.shape)


# ---------------------------------------------------------------- alignment and joint errors

@dataclass
class Similarity:
    scale: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale[..., None, None] * np.einsum("...ab,...nb->...na", self.rotation, points) \
            + self.translation[..., None, :]


def similarity_fit(pred, gt) -> Similarity:
    """Umeyama least-squares similarity mapping pred onto gt (batched over leading axes)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-2] < 3:
        raise DegenerateAlignment("alignment needs matching sets of at least 3 points")
    mu_p = pred.mean(-2, keepdims=True)
    mu_g = gt.mean(-2, keepdims=True)
    x = pred - mu_p
    y = gt - mu_g
    var_p = (x ** 2).sum((-2, -1))
    sv_g = np.linalg.svd(y, compute_uv=False)
    if np.any(var_p <= 1e-24) or np.any(sv_g[..., 1] <= 1e-12 * np.maximum(sv_g[..., 0], 1e-300)):
        raise DegenerateAlignment("degenerate configuration: collinear target or collapsed prediction")
    cov = np.einsum("...na,...nb->...ab", y, x)
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    d = np.where(d == 0, 1.0, d)
    fix = np.ones(s.shape)
    fix[..., -1] = d
    rot = u @ (fix[..., :, None] * vt)
    scale = (s * fix).sum(-1) / var_p
    trans = mu_g[..., 0, :] - scale[..., None] * np.einsum("...ab,...b->...a", rot, mu_p[..., 0, :])
    return Similarity(scale, rot, trans)


def procrustes_align(pred, gt) -> np.ndarray:
    """pred mapped by the best similarity transform (rotation, scale, translation) onto gt."""
    return similarity_fit(pred, gt).apply(pred)


def root_aligned(joints, root: int = 0):
    joints = np.asarray(joints, dtype=np.float64)
    return joints - joints[..., root:root + 1, :]


def mpjpe(pred, gt, root: int = 0) -> np.ndarray:
    """Mean per-joint distance after subtracting each set's root joint (input units)."""
    return np.linalg.norm(root_aligned(pred, root) - root_aligned(gt, root), axis=-1).mean(-1)


def mpjpe_grad(pred, gt, root: int = 0) -> np.ndarray:
    """Gradient of mpjpe w.r.t. pred (N, 3); undefined where a residual vanishes."""
    r = root_aligned(pred, root) - root_aligned(gt, root)
    n = np.linalg.norm(r, axis=-1, keepdims=True)
    unit = np.divide(r, n, out=np.zeros_like(r), where=n > 0) / r.shape[-2]
    grad = unit.copy()
    grad[..., root, :] -= unit.sum(-2)
    return grad


def pa_mpjpe(pred, gt) -> np.ndarray:
    return np.linalg.norm(procrustes_align(pred, gt) - np.asarray(gt, dtype=np.float64), axis=-1).mean(-1)


def joint_errors(pred_j, gt_j, root: int = 0) -> tuple[float, float]:
    """(MPJPE, PA-MPJPE) in millimeters for joints given in meters."""
    return float(MM * mpjpe(pred_j, gt_j, root)), float(MM * pa_mpjpe(pred_j, gt_j))


def vertex_errors(pred_v, gt_v, pred_root, gt_root) -> tuple[float, float]:
    """(MPVPE, PA-MPVPE) in millimeters; vertices are root-aligned with the given root joints."""
    pv = np.asarray(pred_v, dtype=np.float64) - np.asarray(pred_root, dtype=np.float64)
    gv = np.asarray(gt_v, dtype=np.float64) - np.asarray(gt_root, dtype=np.float64)
    mpvpe = np.linalg.norm(pv - gv, axis=-1).mean()
    pa = np.linalg.norm(procrustes_align(pv, gv) - gv, axis=-1).mean()
    return float(MM * mpvpe), float(MM * pa)


# ---------------------------------------------------------------- 2D and bone losses

def pj2d_loss(pred3d, camera, gt2d, w_pj2d: float = 400.0) -> float:
    r = project_weak_perspective(pred3d, camera) - np.asarray(gt2d, dtype=np.float64)
    return float(w_pj2d * np.sum(r ** 2))


def pj2d_loss_grad(pred3d, camera, gt2d, w_pj2d: float = 400.0):
    """Gradient w.r.t. (pred3d (N, 3), camera (s, tx, ty))."""
    pred3d = np.asarray(pred3d, dtype=np.float64)
    camera = np.asarray(camera, dtype=np.float64)
    r = project_weak_perspective(pred3d, camera) - np.asarray(gt2d, dtype=np.float64)
    g3d = np.zeros_like(pred3d)
    g3d[:, :2] = 2 * w_pj2d * camera[0] * r
    gcam = 2 * w_pj2d * np.array([np.sum(r * pred3d[:, :2]), r[:, 0].sum(), r[:, 1].sum()])
    return g3d, gcam


def bone_loss(pred_bones, gt_bones) -> float:
    return float(np.sum((np.asarray(pred_bones, dtype=np.float64) - np.asarray(gt_bones, dtype=np.float64)) ** 2))


def bone_loss_grad(pred_joints, gt_bones, bone_edges=BONE_EDGES) -> np.ndarray:
    """Gradient of bone_loss(bone_lengths(pred_joints), gt_bones) w.r.t. pred_joints."""
    pred_joints = np.asarray(pred_joints, dtype=np.float64)
    edges = np.asarray(bone_edges)
    vec = pred_joints[edges[:, 1]] - pred_joints[edges[:, 0]]
    length = np.linalg.norm(vec, axis=-1)
    coef = 2 * (length - np.asarray(gt_bones)) / np.where(length > 0, length, 1.0)
    g = coef[:, None] * vec
    grad = np.zeros_like(pred_joints)
    np.add.at(grad, edges[:, 1], g)
    np.add.at(grad, edges[:, 0], -g)
    return grad


# ---------------------------------------------------------------- total

@dataclass
class HandTarget:
    params: HandParams
    joints3d: np.ndarray
    joints2d: np.ndarray
    bones: np.ndarray


@dataclass
class Target:
    hands: dict = field(default_factory=dict)  # handedness -> HandTarget
    center_map: Optional[np.ndarray] = None
    part_labels: Optional[np.ndarray] = None


@dataclass
class Prediction:
    hands: dict = field(default_factory=dict)  # handedness -> HandParams
    center_map: Optional[np.ndarray] = None   # probabilities in (0, 1)
    part_logits: Optional[np.ndarray] = None


@dataclass
class LossBreakdown:
    total: float
    terms: dict


def hand_mesh_terms(rig: HandRig, pred: HandParams, target: HandTarget,
                    weights: LossWeights = LossWeights()) -> dict:
    """Weighted mesh-loss terms of one hand."""
    joints = posed_joints(rig, pred.pose6d, pred.shape)
    return {
        "mano": mano_param_loss(pred, target.params, weights),
        "j3d": weights.w_j3d * float(mpjpe(joints, target.joints3d)),
        "paj3d": weights.w_paj3d * float(pa_mpjpe(joints, target.joints3d)),
        "pj2d": pj2d_loss(joints, pred.camera, target.joints2d, weights.w_pj2d),
        "bone": weights.w_bl * bone_loss(bone_lengths(joints, rig.bone_edges), target.bones),
    }


def total_loss(pred: Prediction, target: Target, rigs: Mapping[str, HandRig],
               weights: LossWeights = LossWeights(), active=ALL_TERMS) -> LossBreakdown:
    """Mesh terms summed over both hands plus weighted center and segmentation losses.

    A term contributes only when it is in ``active`` and its ground truth
    (and prediction) exist; inactive terms are reported as exactly 0.
    """
    active = set(active)
    unknown = active - set(ALL_TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    terms = {name: 0.0 for name in ALL_TERMS}
    for h in HANDS:
        if h not in pred.hands or h not in target.hands:
            continue
        for name, value in hand_mesh_terms(rigs[h], pred.hands[h], target.hands[h], weights).items():
            if name in active:
                terms[name] += value
    if "center" in active and pred.center_map is not None and target.center_map is not None:
        terms["center"] = weights.w_c * focal_center_loss(pred.center_map, target.center_map)
    if "seg" in active and pred.part_logits is not None and target.part_labels is not None:
        terms["seg"] = weights.w_p * part_seg_loss(pred.part_logits, target.part_labels)
    total = 0.0
    for name in ALL_TERMS:
        total += terms[name]
    return LossBreakdown(total, terms)
