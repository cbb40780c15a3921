"""Center repulsion, attention-weighted feature extraction and per-hand regression."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention_maps import CenterSpec, KernelConfig, MapStack, estimate_center, spatial_softmax
from .errors import CoincidentCenters
from .hand_model import HANDS, N_PARTS, PARAM_DIM, POSE_DIM, N_SHAPE, HandParams

log = logging.getLogger(__name__)

HIDDEN_DIM = 256
OUT_IN_DIM = PARAM_DIM + N_PARTS * PARAM_DIM + PARAM_DIM
SCALE_FLOOR = 1e-4
COINCIDENT_EPS = 1e-9


@dataclass(frozen=True)
class InteractionConfig:
    alpha: float = 0.5
    gamma: float = 2.0
    lambda_clamp: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")


@dataclass
class AggregationHeads:
    """Point-wise maps f_g, f_c (109 -> 109) and f_out (1962 -> 256 -> 109, ReLU)."""

    g_weight: np.ndarray
    g_bias: np.ndarray
    c_weight: np.ndarray
    c_bias: np.ndarray
    out_w1: np.ndarray
    out_b1: np.ndarray
    out_w2: np.ndarray
    out_b2: np.ndarray

    def __post_init__(self):
        shapes = {
            "g_weight": (PARAM_DIM, PARAM_DIM), "g_bias": (PARAM_DIM,),
            "c_weight": (PARAM_DIM, PARAM_DIM), "c_bias": (PARAM_DIM,),
            "out_w1": (HIDDEN_DIM, OUT_IN_DIM), "out_b1": (HIDDEN_DIM,),
            "out_w2": (PARAM_DIM, HIDDEN_DIM), "out_b2": (PARAM_DIM,),
        }
        for name, shape in shapes.items():
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {value.shape}")
            setattr(self, name, value)

    @classmethod
    def initial(cls) -> "AggregationHeads":
        """Identity f_g, f_c and an f_out that passes the global slice through.

        relu(x) - relu(-x) == x exactly, so the pass-through is bit-exact.
        """
        w1 = np.zeros((HIDDEN_DIM, OUT_IN_DIM))
        w1[:PARAM_DIM, :PARAM_DIM] = np.eye(PARAM_DIM)
        w1[PARAM_DIM:2 * PARAM_DIM, :PARAM_DIM] = -np.eye(PARAM_DIM)
        w2 = np.zeros((PARAM_DIM, HIDDEN_DIM))
        w2[:, :PARAM_DIM] = np.eye(PARAM_DIM)
        w2[:, PARAM_DIM:2 * PARAM_DIM] = -np.eye(PARAM_DIM)
        return cls(np.eye(PARAM_DIM), np.zeros(PARAM_DIM), np.eye(PARAM_DIM), np.zeros(PARAM_DIM),
                   w1, np.zeros(HIDDEN_DIM), w2, np.zeros(PARAM_DIM))

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 0.05) -> "AggregationHeads":
        def r(*shape):
            return scale * rng.standard_normal(shape)

        return cls(np.eye(PARAM_DIM) + r(PARAM_DIM, PARAM_DIM), r(PARAM_DIM),
                   np.eye(PARAM_DIM) + r(PARAM_DIM, PARAM_DIM), r(PARAM_DIM),
                   r(HIDDEN_DIM, OUT_IN_DIM), r(HIDDEN_DIM), r(PARAM_DIM, HIDDEN_DIM), r(PARAM_DIM))

    def f_g(self, x):
        return self.g_weight @ x + self.g_bias

    def f_c(self, x):
        return self.c_weight @ x + self.c_bias

    def f_out(self, x):
        hidden = np.maximum(self.out_w1 @ x + self.out_b1, 0.0)
        return self.out_w2 @ hidden + self.out_b2


@dataclass
class AggregatedFeature:
    F_g: np.ndarray
    F_p: np.ndarray
    F_c: np.ndarray
    lam: float
    F_out: np.ndarray


# ---------------------------------------------------------------- centers

def collision_aware_repulsion(c_left, c_right, k_left, k_right, alpha: float = 0.5):
    """Push two colliding centers apart along their connecting line.

    Centers closer than k_L + k_R + 1 move by +/- alpha * R with
    R = ((k_L + k_R + 1 - d) / d) (C_L - C_R); farther centers are returned unchanged.
    """
    c_left = np.asarray(c_left, dtype=np.float64)
    c_right = np.asarray(c_right, dtype=np.float64)
    diff = c_left - c_right
    d = float(np.linalg.norm(diff))
    if d < COINCIDENT_EPS:
        raise CoincidentCenters(f"hand centers coincide (d={d:g})")
    reach = k_left + k_right + 1
    if d >= reach:
        return c_left.copy(), c_right.copy()
    rep = (reach - d) / d * diff
    return c_left + alpha * rep, c_right - alpha * rep


def interaction_intensity(c_left, c_right, k_left, k_right, gamma: float = 2.0,
                          clamp: Optional[float] = None) -> float:
    """Cross-hand gate: ((IF - d) / d) * ||C_L - C_R||_1 inside IF = gamma (k_L + k_R + 1), else 0."""
    if c_left is None or c_right is None:
        return 0.0
    diff = np.asarray(c_left, dtype=np.float64) - np.asarray(c_right, dtype=np.float64)
    d = float(np.linalg.norm(diff))
    if d < COINCIDENT_EPS:
        raise CoincidentCenters(f"hand centers coincide (d={d:g})")
    field_radius = gamma * (k_left + k_right + 1)
    if d > field_radius:
        return 0.0
    lam = (field_radius - d) / d * float(np.abs(diff).sum())
    if clamp is not None:
        lam = min(lam, clamp)
    return lam


# ---------------------------------------------------------------- features

def _attend(logits, features) -> np.ndarray:
    # logits (..., H, W), features (C, H, W) -> (..., C)
    weights = spatial_softmax(logits)
    h, w = features.shape[-2:]
    return weights.reshape(weights.shape[:-2] + (h * w,)) @ features.reshape(-1, h * w).T


def global_feature(center_map, param_map, heads: AggregationHeads) -> np.ndarray:
    center_map = np.asarray(center_map, dtype=np.float64).reshape(np.shape(param_map)[-2:])
    return heads.f_g(_attend(center_map, np.asarray(param_map, dtype=np.float64)))


def part_feature(part_map, param_map) -> np.ndarray:
    """(16, 109): each part's spatially-softmaxed mask applied to the parameter map."""
    return _attend(np.asarray(part_map, dtype=np.float64), np.asarray(param_map, dtype=np.float64))


def cross_hand_feature(center_map_opposite, cross_map, heads: AggregationHeads) -> np.ndarray:
    """Inverse query: the opposite hand's center attention over this hand's cross map."""
    center = np.asarray(center_map_opposite, dtype=np.float64).reshape(np.shape(cross_map)[-2:])
    return heads.f_c(_attend(center, np.asarray(cross_map, dtype=np.float64)))


def aggregate_output(F_g, F_p, F_c, lam: float, heads: AggregationHeads) -> np.ndarray:
    x = np.concatenate([np.ravel(F_g), np.ravel(F_p), lam * np.ravel(F_c)])
    return heads.f_out(x)


# ---------------------------------------------------------------- decoding

def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    # log(exp(y) - 1) written to stay finite for large y
    return y + np.log(-np.expm1(-y))


def decode_param_vector(vec, handedness: str = "right") -> HandParams:
    """Raw 109-vector -> HandParams; the scale passes through softplus + 1e-4."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (PARAM_DIM,):
        raise ValueError(f"expected {PARAM_DIM} values, got shape {vec.shape}")
    camera = vec[POSE_DIM + N_SHAPE:].copy()
    camera[0] = softplus(camera[0]) + SCALE_FLOOR
    return HandParams(vec[:POSE_DIM], vec[POSE_DIM:POSE_DIM + N_SHAPE], camera, handedness)


def decode_batch(vecs):
    """Vectorized decode of (..., 109) into pose (..., 16, 6), shape and camera arrays."""
    vecs = np.asarray(vecs, dtype=np.float64)
    pose = vecs[..., :POSE_DIM].reshape(vecs.shape[:-1] + (N_PARTS, 6))
    shape = vecs[..., POSE_DIM:POSE_DIM + N_SHAPE]
    camera = vecs[..., POSE_DIM + N_SHAPE:].copy()
    camera[..., 0] = softplus(camera[..., 0]) + SCALE_FLOOR
    return pose, shape, camera


def encode_param_vector(params: HandParams) -> np.ndarray:
    """Inverse of decode_param_vector."""
    vec = params.flatten()
    vec[POSE_DIM + N_SHAPE] = inverse_softplus(params.camera[0] - SCALE_FLOOR)
    return vec


# ---------------------------------------------------------------- pipeline

@dataclass
class HandAggregate:
    handedness: str
    center: np.ndarray
    center_repulsed: np.ndarray
    kernel: float
    feature: AggregatedFeature
    params: HandParams


@dataclass
class AggregationResult:
    lam: float
    hands: dict = field(default_factory=dict)  # handedness -> HandAggregate


def aggregate_maps(maps: MapStack, heads: Optional[AggregationHeads] = None,
                   icfg: InteractionConfig = InteractionConfig(),
                   kcfg: KernelConfig = KernelConfig(), presence: float = 0.1) -> AggregationResult:
    """Repulsion, interaction gate, the three extractions and decoding for both hands.

    A hand whose center channel never reaches ``presence`` is treated as absent.
    """
    heads = heads or AggregationHeads.initial()
    specs: dict[str, Optional[CenterSpec]] = {
        h: estimate_center(maps.center_channel(h), presence, kcfg) for h in HANDS
    }
    centers = {h: None if s is None else s.center for h, s in specs.items()}
    repulsed = dict(centers)
    lam = 0.0
    if specs["left"] is not None and specs["right"] is not None:
        kl, kr = specs["left"].kernel, specs["right"].kernel
        repulsed["left"], repulsed["right"] = collision_aware_repulsion(
            centers["left"], centers["right"], kl, kr, icfg.alpha)
        lam = interaction_intensity(repulsed["left"], repulsed["right"], kl, kr, icfg.gamma, icfg.lambda_clamp)
    log.debug("centers %s -> %s, lambda=%.6g", centers, repulsed, lam)

    result = AggregationResult(lam=lam)
    for h in HANDS:
        if specs[h] is None:
            continue
        other = "right" if h == "left" else "left"
        sl = maps.hand_slice(h)
        f_g = global_feature(maps.center_channel(h), maps.param_map[sl], heads)
        f_p = part_feature(maps.part_channels(h), maps.param_map[sl])
        f_c = cross_hand_feature(maps.center_channel(other), maps.cross_map[sl], heads)
        f_out = aggregate_output(f_g, f_p, f_c, lam, heads)
        result.hands[h] = HandAggregate(
            handedness=h,
            center=centers[h],
            center_repulsed=repulsed[h],
            kernel=specs[h].kernel,
            feature=AggregatedFeature(f_g, f_p, f_c, lam, f_out),
            params=decode_param_vector(f_out, h),
        )
    return result
