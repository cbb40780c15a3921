"""Dense map representations: center heatmaps, part segmentation, softmaxes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .hand_model import N_PARTS, PARAM_DIM, project_weak_perspective

MAP_SIZE = 64
N_SEG_CLASSES = 1 + 2 * N_PARTS
# channel layout of the single-tensor MapStack serialization
STACK_CHANNELS = 2 * PARAM_DIM + 2 + N_SEG_CLASSES + 2 * PARAM_DIM


@dataclass
class MapStack:
    """The four per-image maps.

    param_map (218, H, W) and cross_map (218, H, W): channels 0-108 left, 109-217 right.
    center_map (2, H, W): channel 0 left, 1 right.
    part_map (33, H, W): 0 background, 1-16 left parts, 17-32 right parts.
    """

    param_map: np.ndarray
    center_map: np.ndarray
    part_map: np.ndarray
    cross_map: np.ndarray

    def __post_init__(self):
        h, w = self.center_map.shape[-2:]
        expected = {
            "param_map": (2 * PARAM_DIM, h, w),
            "center_map": (2, h, w),
            "part_map": (N_SEG_CLASSES, h, w),
            "cross_map": (2 * PARAM_DIM, h, w),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def size(self) -> tuple[int, int]:
        return self.center_map.shape[-2:]

    def hand_slice(self, handedness: str) -> slice:
        return slice(0, PARAM_DIM) if handedness == "left" else slice(PARAM_DIM, 2 * PARAM_DIM)

    def center_channel(self, handedness: str) -> np.ndarray:
        return self.center_map[0 if handedness == "left" else 1]

    def part_channels(self, handedness: str) -> np.ndarray:
        """The 16 part channels of one hand, background excluded."""
        start = 1 if handedness == "left" else 1 + N_PARTS
        return self.part_map[start:start + N_PARTS]

    def to_tensor(self) -> np.ndarray:
        """Channel-concatenated (471, H, W) array: param, center, part, cross."""
        return np.concatenate([self.param_map, self.center_map, self.part_map, self.cross_map], axis=0)

    @classmethod
    def from_tensor(cls, tensor) -> "MapStack":
        tensor = np.asarray(tensor, dtype=np.float64)
        if tensor.ndim != 3 or tensor.shape[0] != STACK_CHANNELS:
            raise ValueError(f"map tensor must be ({STACK_CHANNELS}, H, W), got {tensor.shape}")
        cuts = np.cumsum([2 * PARAM_DIM, 2, N_SEG_CLASSES])
        param, center, part, cross = np.split(tensor, cuts, axis=0)
        return cls(param, center, part, cross)


@dataclass(frozen=True)
class CenterSpec:
    """One hand's center (map pixels, x then y), Gaussian kernel size and visibility."""

    center: Optional[np.ndarray]
    kernel: float
    visible: bool = True


@dataclass(frozen=True)
class KernelConfig:
    factor: float = 0.1
    k_min: int = 2
    k_max: int = 16


def compute_center(joints2d, mcp_indices, visible) -> Optional[np.ndarray]:
    """Mean 2D position of the visible MCP joints, or None if none is visible."""
    joints2d = np.asarray(joints2d, dtype=np.float64)
    mcp = np.asarray(mcp_indices)
    vis = np.asarray(visible, dtype=bool)[mcp]
    if not vis.any():
        return None
    return joints2d[mcp[vis]].mean(axis=0)


def kernel_from_bbox(bbox_w: float, bbox_h: float, cfg: KernelConfig = KernelConfig()) -> int:
    if bbox_w <= 0 or bbox_h <= 0:
        raise ValueError("bounding box dimensions must be positive")
    k = int(np.floor(cfg.factor * max(bbox_w, bbox_h) + 0.5))
    return int(min(max(k, cfg.k_min), cfg.k_max))


def render_center_map(spec: CenterSpec, height: int = MAP_SIZE, width: int = MAP_SIZE) -> np.ndarray:
    """Gaussian heatmap (1, H, W) with peak 1 at the center's nearest pixel.

    The Gaussian is placed on the rounded center so the peak pixel holds
    exactly 1, which the focal loss uses to identify positives.
    """
    out = np.zeros((1, height, width))
    if spec.center is None or not spec.visible:
        return out
    cx, cy = np.floor(np.asarray(spec.center, dtype=np.float64) + 0.5)
    ys, xs = np.mgrid[0:height, 0:width]
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    out[0] = np.exp(-d2 / (2.0 * spec.kernel ** 2))
    return out


def estimate_center(channel, presence: float = 0.1, cfg: KernelConfig = KernelConfig()) -> Optional[CenterSpec]:
    """Read a hand center and kernel back from one heatmap channel.

    The peak pixel is the center; the kernel follows from the Gaussian
    falloff to the in-bounds 4-neighbors. Returns None for a near-empty map.
    """
    channel = np.asarray(channel, dtype=np.float64)
    h, w = channel.shape
    iy, ix = np.unravel_index(np.argmax(channel), channel.shape)
    peak = channel[iy, ix]
    if not peak >= presence:
        return None
    ratios = []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        y, x = iy + dy, ix + dx
        if 0 <= y < h and 0 <= x < w:
            ratios.append(channel[y, x] / peak)
    r = np.clip(np.mean(ratios), 1e-12, 1 - 1e-12) if ratios else 1e-12
    k = float(np.sqrt(-1.0 / (2.0 * np.log(r))))
    return CenterSpec(np.array([ix, iy], dtype=np.float64), float(np.clip(k, cfg.k_min, cfg.k_max)))


def spatial_softmax(x) -> np.ndarray:
    """Softmax over the last two (spatial) axes."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(x.shape[:-2] + (-1,))
    flat = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(flat)
    return (e / e.sum(axis=-1, keepdims=True)).reshape(x.shape)


def channel_softmax(x, axis: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_channel_softmax(x, axis: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@dataclass
class SplatHand:
    """Input to the part rasterizer: one hand's mesh, per-vertex part and camera."""

    vertices: np.ndarray
    parts: np.ndarray
    camera: np.ndarray
    handedness: str


def render_part_segmentation(hands: Sequence[SplatHand], height: int = MAP_SIZE, width: int = MAP_SIZE,
                             radius: int = 1):
    """Depth-buffered point splatting of labelled vertices.

    Each vertex covers the (2r+1)^2 pixel square around its rounded
    projection; the smallest depth wins. Returns the (33, H, W) one-hot
    volume and the (H, W) integer label map.
    """
    labels = np.zeros((height, width), dtype=np.int64)
    xs, ys, zs, cls = [], [], [], []
    for hand in hands:
        verts = np.asarray(hand.vertices, dtype=np.float64)
        if len(verts) == 0:
            continue
        proj = np.floor(project_weak_perspective(verts, hand.camera) + 0.5).astype(np.int64)
        offset = 1 if hand.handedness == "left" else 1 + N_PARTS
        xs.append(proj[:, 0])
        ys.append(proj[:, 1])
        zs.append(verts[:, 2])
        cls.append(np.asarray(hand.parts, dtype=np.int64) + offset)
    if xs:
        x, y, z, c = (np.concatenate(a) for a in (xs, ys, zs, cls))
        d = np.arange(-radius, radius + 1)
        dx, dy = np.meshgrid(d, d)
        px = (x[:, None] + dx.ravel()).ravel()
        py = (y[:, None] + dy.ravel()).ravel()
        pz = np.repeat(z, dx.size)
        pc = np.repeat(c, dx.size)
        keep = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        px, py, pz, pc = px[keep], py[keep], pz[keep], pc[keep]
        flat = py * width + px
        # stable sort: nearest depth first, ties broken by input order
        order = np.lexsort((np.arange(len(flat)), pz, flat))
        flat, pc = flat[order], pc[order]
        first = np.ones(len(flat), dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        labels.ravel()[flat[first]] = pc[first]
    onehot = (np.arange(N_SEG_CLASSES)[:, None, None] == labels[None]).astype(np.float64)
    return onehot, labels


def coord_channels(height: int, width: int) -> np.ndarray:
    """(2, H, W): x then y, pixel centers mapped linearly onto [-1, 1]."""
    xs = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    return np.stack([np.broadcast_to(xs[None, :], (height, width)), np.broadcast_to(ys[:, None], (height, width))])


def append_coord_channels(feature) -> np.ndarray:
    feature = np.asarray(feature, dtype=np.float64)
    return np.concatenate([feature, coord_channels(*feature.shape[-2:])], axis=0)
