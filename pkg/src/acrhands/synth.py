"""Synthetic two-hand scenes and the oracle maps that stand in for a backbone."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .aggregation import InteractionConfig, collision_aware_repulsion, encode_param_vector
from .attention_maps import (MAP_SIZE, CenterSpec, KernelConfig, MapStack, SplatHand, compute_center,
                             kernel_from_bbox, render_center_map, render_part_segmentation)
from .hand_model import (HANDS, N_PARTS, N_SHAPE, PARAM_DIM, HandParams, HandRig, axis_angle_to_matrix,
                         bone_lengths, matrix_to_rot6d, project_weak_perspective, regress_joints, rig_pair,
                         skin_mesh, toy_rig)
from .losses import HandTarget, Target

MIN_CENTER_DISTANCE = 1.5


@dataclass(frozen=True)
class SynthConfig:
    two_hand_prob: float = 0.5
    interaction_prob: float = 0.5
    truncation_prob: float = 0.2
    occlusion_prob: float = 0.2
    max_angle_deg: float = 45.0
    shape_range: float = 2.0
    scale_range: tuple = (80.0, 200.0)
    map_size: int = MAP_SIZE

    def __post_init__(self):
        for name in ("two_hand_prob", "interaction_prob", "truncation_prob", "occlusion_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")


@functools.lru_cache(maxsize=4)
def default_rigs(seed: int = 0, n_vertices: int = 778) -> dict[str, HandRig]:
    return rig_pair(toy_rig(seed, n_vertices))


@dataclass
class HandState:
    """Ground truth of one hand plus everything derived from it."""

    params: HandParams
    mesh: np.ndarray
    joints3d: np.ndarray
    joints2d: np.ndarray
    visible: np.ndarray
    center: Optional[np.ndarray]
    kernel: int
    bones: np.ndarray


@dataclass
class Scene:
    seed: Optional[int]
    hands: dict                      # handedness -> HandState
    crop: tuple                      # (x0, y0, x1, y1) visible window, inclusive
    occluder: Optional[tuple]        # (x0, y0, x1, y1) or None
    centers_repulsed: dict           # handedness -> center used for rendering
    center_map: np.ndarray           # (2, H, W)
    part_onehot: np.ndarray          # (33, H, W)
    part_labels: np.ndarray          # (H, W)
    rigs: Mapping[str, HandRig] = field(repr=False, default=None)
    interaction: InteractionConfig = InteractionConfig()

    @property
    def left(self) -> Optional[HandParams]:
        return self.hands["left"].params if "left" in self.hands else None

    @property
    def right(self) -> Optional[HandParams]:
        return self.hands["right"].params if "right" in self.hands else None

    @property
    def params(self) -> dict:
        return {h: s.params for h, s in self.hands.items()}

    @property
    def map_size(self) -> int:
        return self.center_map.shape[-1]

    def center_distance(self) -> Optional[float]:
        if self.hands.get("left") is None or self.hands.get("right") is None:
            return None
        cl, cr = self.hands["left"].center, self.hands["right"].center
        if cl is None or cr is None:
            return None
        return float(np.linalg.norm(cl - cr))

    def interaction_field(self) -> Optional[float]:
        if len(self.hands) < 2:
            return None
        return self.interaction.gamma * (self.hands["left"].kernel + self.hands["right"].kernel + 1)

    def target(self) -> Target:
        return Target(
            hands={h: HandTarget(s.params, s.joints3d, s.joints2d, s.bones) for h, s in self.hands.items()},
            center_map=self.center_map,
            part_labels=self.part_labels,
        )


def joint_visibility(joints2d, crop, occluder=None) -> np.ndarray:
    x, y = joints2d[:, 0], joints2d[:, 1]
    vis = (x >= crop[0]) & (y >= crop[1]) & (x <= crop[2]) & (y <= crop[3])
    if occluder is not None:
        inside = (x >= occluder[0]) & (y >= occluder[1]) & (x <= occluder[2]) & (y <= occluder[3])
        vis &= ~inside
    return vis


def _bbox_kernel(joints2d, kcfg: KernelConfig) -> int:
    extent = joints2d.max(0) - joints2d.min(0)
    return kernel_from_bbox(max(extent[0], 1.0), max(extent[1], 1.0), kcfg)


def build_scene(hand_params: Mapping[str, HandParams], rigs: Optional[Mapping[str, HandRig]] = None,
                seed: Optional[int] = None, crop=None, occluder=None,
                icfg: InteractionConfig = InteractionConfig(), kcfg: KernelConfig = KernelConfig(),
                map_size: int = MAP_SIZE) -> Scene:
    """Derive meshes, joints, visibility, centers and GT maps from hand parameters."""
    rigs = rigs if rigs is not None else default_rigs()
    if crop is None:
        crop = (0.0, 0.0, map_size - 1.0, map_size - 1.0)
    crop = tuple(float(c) for c in crop)
    occluder = None if occluder is None else tuple(float(c) for c in occluder)
    hands = {}
    for h in HANDS:
        params = hand_params.get(h)
        if params is None:
            continue
        if params.handedness != h:
            params = params.replace(handedness=h)
        rig = rigs[h]
        mesh = skin_mesh(rig, params)
        joints3d = regress_joints(rig, mesh)
        joints2d = project_weak_perspective(joints3d, params.camera)
        visible = joint_visibility(joints2d, crop, occluder)
        hands[h] = HandState(
            params=params, mesh=mesh, joints3d=joints3d, joints2d=joints2d, visible=visible,
            center=compute_center(joints2d, rig.mcp_indices, visible),
            kernel=_bbox_kernel(joints2d, kcfg),
            bones=bone_lengths(joints3d, rig.bone_edges),
        )

    centers = {h: s.center for h, s in hands.items()}
    if len(hands) == 2 and centers["left"] is not None and centers["right"] is not None:
        centers["left"], centers["right"] = collision_aware_repulsion(
            centers["left"], centers["right"], hands["left"].kernel, hands["right"].kernel, icfg.alpha)
    center_map = np.zeros((2, map_size, map_size))
    for i, h in enumerate(HANDS):
        if h in hands and centers[h] is not None:
            c = np.clip(centers[h], 0.0, map_size - 1.0)
            centers[h] = c
            center_map[i] = render_center_map(CenterSpec(c, hands[h].kernel), map_size, map_size)[0]
    onehot, labels = render_part_segmentation(
        [SplatHand(s.mesh, rigs[h].vertex_parts, s.params.camera, h) for h, s in hands.items()],
        map_size, map_size)
    return Scene(seed, hands, crop, occluder, centers, center_map, onehot, labels, rigs, icfg)


# ---------------------------------------------------------------- sampling

def _sample_pose(rng, max_angle):
    axes = rng.standard_normal((N_PARTS, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0.0, max_angle, size=(N_PARTS, 1))
    return matrix_to_rot6d(axis_angle_to_matrix(axes * angles))


def _draw_hand(rng, h, rig, cfg):
    pose = _sample_pose(rng, np.deg2rad(cfg.max_angle_deg))
    shape = rng.uniform(-cfg.shape_range, cfg.shape_range, size=N_SHAPE)
    scale = rng.uniform(*cfg.scale_range)
    params = HandParams(pose, shape, np.array([scale, 0.0, 0.0]), h)
    joints = regress_joints(rig, skin_mesh(rig, params))
    return params, joints


def _place(params, joints, rig, target):
    # translation putting the MCP mean at ``target``
    s = params.camera[0]
    mcp = s * joints[list(rig.mcp_indices), :2].mean(0)
    t = np.asarray(target) - mcp
    return params.replace(camera=np.array([s, t[0], t[1]]))


def sample_scene(seed: int, cfg: SynthConfig = SynthConfig(), rigs: Optional[Mapping[str, HandRig]] = None,
                 icfg: InteractionConfig = InteractionConfig(), kcfg: KernelConfig = KernelConfig()) -> Scene:
    """Deterministic random scene for ``seed``.

    Two-hand scenes are either interacting (center distance within the
    interaction field) or separated (beyond it). Truncation crops the visible
    window through a hand; occlusion drops a rectangle over one. Both keep
    at least one MCP joint of every hand visible.
    """
    rigs = rigs if rigs is not None else default_rigs()
    rng = np.random.default_rng(seed)
    size = cfg.map_size
    two = rng.random() < cfg.two_hand_prob
    names = list(HANDS) if two else [HANDS[int(rng.integers(2))]]
    drawn = {h: _draw_hand(rng, h, rigs[h], cfg) for h in names}
    kernels = {h: _bbox_kernel(project_weak_perspective(j, p.camera), kcfg) for h, (p, j) in drawn.items()}
    lo, hi = 0.3 * size, 0.7 * size

    if not two:
        targets = {names[0]: rng.uniform(lo, hi, size=2)}
    else:
        field_radius = icfg.gamma * (kernels["left"] + kernels["right"] + 1)
        mid = rng.uniform(0.4 * size, 0.6 * size, size=2)
        direction = rng.standard_normal(2)
        direction /= np.linalg.norm(direction)
        if rng.random() < cfg.interaction_prob:
            d = rng.uniform(MIN_CENTER_DISTANCE, field_radius)
        else:
            # separated: centered pair, as far apart as the map allows along ``direction``
            mid = np.full(2, 0.5 * (size - 1))
            margin = 0.1 * size
            reach = (0.5 * (size - 1) - margin) / np.maximum(np.abs(direction), 1e-12)
            d_max = 2 * reach.min()
            if d_max <= field_radius + 0.5:
                direction = np.array([1.0, 1.0]) / np.sqrt(2.0)
                d_max = 2 * (0.5 * (size - 1) - margin) * np.sqrt(2.0)
            d = rng.uniform(field_radius + 0.5, max(d_max, field_radius + 0.5))
        targets = {"left": mid + 0.5 * d * direction, "right": mid - 0.5 * d * direction}
    params = {h: _place(drawn[h][0], drawn[h][1], rigs[h], targets[h]) for h in names}
    joints2d = {h: project_weak_perspective(drawn[h][1], params[h].camera) for h in names}

    crop = (0.0, 0.0, size - 1.0, size - 1.0)
    if rng.random() < cfg.truncation_prob:
        crop = _truncating_crop(rng, joints2d, rigs, crop)
    occluder = None
    if rng.random() < cfg.occlusion_prob:
        occluder = _occluder(rng, joints2d, rigs, crop)
    return build_scene(params, rigs, seed, crop, occluder, icfg, kcfg, size)


def _keeps_mcp(joints2d, rigs, crop, occluder=None):
    return all(joint_visibility(j, crop, occluder)[list(rigs[h].mcp_indices)].any() for h, j in joints2d.items())


def _truncating_crop(rng, joints2d, rigs, full):
    for _ in range(20):
        h = list(joints2d)[int(rng.integers(len(joints2d)))]
        lo, hi = joints2d[h].min(0), joints2d[h].max(0)
        side = int(rng.integers(4))
        frac = rng.uniform(0.3, 0.7)
        crop = list(full)
        axis = side % 2
        cut = lo[axis] + frac * (hi[axis] - lo[axis])
        if side < 2:
            crop[axis] = max(full[axis], cut)
        else:
            crop[axis + 2] = min(full[axis + 2], cut)
        crop = tuple(crop)
        if _keeps_mcp(joints2d, rigs, crop):
            return crop
    return full


def _occluder(rng, joints2d, rigs, crop):
    for _ in range(20):
        h = list(joints2d)[int(rng.integers(len(joints2d)))]
        anchor = joints2d[h][int(rng.integers(len(joints2d[h])))]
        half = rng.uniform(2.0, 6.0, size=2)
        occ = (anchor[0] - half[0], anchor[1] - half[1], anchor[0] + half[0], anchor[1] + half[1])
        if _keeps_mcp(joints2d, rigs, crop, occ):
            return occ
    return None


# ---------------------------------------------------------------- oracle

def oracle_maps(scene: Scene, noise_std: float = 0.0, seed: Optional[int] = None) -> MapStack:
    """Maps a perfect backbone would emit for ``scene``.

    Parameter and cross maps broadcast each hand's encoded 109-vector to every
    pixel, so any normalized attention recovers it. ``noise_std`` > 0 adds
    seeded per-pixel Gaussian noise to the parameter map.
    """
    size = scene.map_size
    param = np.zeros((2 * PARAM_DIM, size, size))
    for i, h in enumerate(HANDS):
        if h in scene.hands:
            vec = encode_param_vector(scene.hands[h].params)
            param[i * PARAM_DIM:(i + 1) * PARAM_DIM] = vec[:, None, None]
    cross = param.copy()
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        param = param + noise_std * rng.standard_normal(param.shape)
    return MapStack(param, scene.center_map.copy(), scene.part_onehot.copy(), cross)


def perturb_params(params: HandParams, noise_scale: float, seed) -> HandParams:
    """Seeded Gaussian jitter: additive on pose and shape and translation, multiplicative on scale."""
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    if noise_scale == 0:
        return params
    rng = np.random.default_rng(seed)
    pose = params.pose6d + noise_scale * rng.standard_normal(params.pose6d.shape)
    shape = params.shape + noise_scale * rng.standard_normal(N_SHAPE)
    n = rng.standard_normal(3)
    camera = np.array([params.camera[0] * np.exp(noise_scale * n[0]),
                       params.camera[1] + noise_scale * n[1],
                       params.camera[2] + noise_scale * n[2]])
    return HandParams(pose, shape, camera, params.handedness)


# ---------------------------------------------------------------- serialization

def hand_to_json(params: HandParams) -> dict:
    return {"pose6d": params.pose6d.ravel().tolist(), "shape": params.shape.tolist(),
            "camera": params.camera.tolist()}


def hand_from_json(doc: Mapping, handedness: str) -> HandParams:
    try:
        pose, shape, camera = doc["pose6d"], doc["shape"], doc["camera"]
    except KeyError as exc:
        raise ValueError(f"{handedness} hand entry lacks {exc.args[0]!r}") from None
    if len(pose) != 6 * N_PARTS or len(shape) != N_SHAPE or len(camera) != 3:
        raise ValueError(f"{handedness} hand entry has wrong lengths")
    return HandParams(np.array(pose, dtype=np.float64), np.array(shape, dtype=np.float64),
                      np.array(camera, dtype=np.float64), handedness)


def scene_to_json(scene: Scene) -> dict:
    doc = {"seed": scene.seed}
    for h in HANDS:
        if h in scene.hands:
            doc[h] = hand_to_json(scene.hands[h].params)
    default_crop = (0.0, 0.0, scene.map_size - 1.0, scene.map_size - 1.0)
    if scene.crop != default_crop:
        doc["crop"] = list(scene.crop)
    if scene.occluder is not None:
        doc["occluder"] = list(scene.occluder)
    return doc


def scene_from_json(doc: Mapping, rigs=None, icfg: InteractionConfig = InteractionConfig(),
                    kcfg: KernelConfig = KernelConfig(), map_size: int = MAP_SIZE) -> Scene:
    hands = {h: hand_from_json(doc[h], h) for h in HANDS if doc.get(h) is not None}
    return build_scene(hands, rigs, doc.get("seed"), doc.get("crop"), doc.get("occluder"), icfg, kcfg, map_size)
