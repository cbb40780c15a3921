"""Parametric articulated hand model.

A ``HandRig`` carries the same structure as MANO (16 articulated parts, 21
output joints, 10 shape coefficients): template vertices, a linear shape
basis, skinning weights, a linear joint regressor and the kinematic tree.
``toy_rig`` builds a procedural stand-in made of capsule-like rings around
each bone; ``load_rig`` reads externally supplied rig data in the same
``.npz`` layout that ``save_rig`` writes.

Every numeric routine accepts leading batch dimensions so the fitter can
evaluate many parameter vectors in one call.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateRotation

N_PARTS = 16
N_JOINTS = 21
N_SHAPE = 10
N_BONES = 20
POSE_DIM = N_PARTS * 6
PARAM_DIM = POSE_DIM + N_SHAPE + 3

HANDS = ("left", "right")

# wrist, index 1-3, middle 4-6, little 7-9, ring 10-12, thumb 13-15
PARENTS = np.array([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14])
FINGER_CHAINS = ((1, 2, 3, 16), (4, 5, 6, 17), (7, 8, 9, 18), (10, 11, 12, 19), (13, 14, 15, 20))
MCP_INDICES = (1, 4, 7, 10, 13)
BONE_EDGES = tuple((int(PARENTS[i]), i) for i in range(1, N_PARTS)) + tuple(
    (chain[2], chain[3]) for chain in FINGER_CHAINS
)

DEGENERATE_EPS = 1e-8


@dataclass(frozen=True)
class HandParams:
    """Per-hand pose (16x6 rotations), shape (10) and weak-perspective camera."""

    pose6d: np.ndarray
    shape: np.ndarray
    camera: np.ndarray
    handedness: str = "right"

    def __post_init__(self):
        pose = np.asarray(self.pose6d, dtype=np.float64).reshape(N_PARTS, 6)
        shape = np.asarray(self.shape, dtype=np.float64).reshape(N_SHAPE)
        camera = np.asarray(self.camera, dtype=np.float64).reshape(3)
        if self.handedness not in HANDS:
            raise ValueError(f"handedness must be one of {HANDS}, got {self.handedness!r}")
        if not camera[0] > 0:
            raise ValueError(f"camera scale must be positive, got {camera[0]}")
        object.__setattr__(self, "pose6d", pose)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "camera", camera)

    def flatten(self) -> np.ndarray:
        """The 109-vector: pose (row-major), shape, then (s, tx, ty)."""
        return np.concatenate([self.pose6d.ravel(), self.shape, self.camera])

    @classmethod
    def from_flat(cls, vec, handedness: str = "right") -> "HandParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (PARAM_DIM,):
            raise ValueError(f"expected {PARAM_DIM} values, got shape {vec.shape}")
        return cls(vec[:POSE_DIM], vec[POSE_DIM:POSE_DIM + N_SHAPE], vec[POSE_DIM + N_SHAPE:], handedness)

    @classmethod
    def rest(cls, camera=(1.0, 0.0, 0.0), handedness: str = "right") -> "HandParams":
        pose = np.tile([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], (N_PARTS, 1))
        return cls(pose, np.zeros(N_SHAPE), np.asarray(camera, dtype=np.float64), handedness)

    def replace(self, **changes) -> "HandParams":
        kwargs = dict(pose6d=self.pose6d, shape=self.shape, camera=self.camera, handedness=self.handedness)
        kwargs.update(changes)
        return HandParams(**kwargs)


@dataclass(eq=False)
class HandRig:
    template_vertices: np.ndarray
    faces: np.ndarray
    shape_basis: np.ndarray
    skin_weights: np.ndarray
    joint_regressor: np.ndarray
    parent: np.ndarray = field(default_factory=lambda: PARENTS.copy())
    mcp_indices: tuple = MCP_INDICES
    bone_edges: tuple = BONE_EDGES

    def __post_init__(self):
        self.template_vertices = np.asarray(self.template_vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=np.float64)
        self.parent = np.asarray(self.parent, dtype=np.int64)
        self.mcp_indices = tuple(int(i) for i in self.mcp_indices)
        self.bone_edges = tuple((int(a), int(b)) for a, b in self.bone_edges)
        self.validate()

    def validate(self) -> None:
        v = self.template_vertices.shape[0]
        if self.template_vertices.shape != (v, 3):
            raise ValueError("template_vertices must be Vx3")
        if self.shape_basis.shape != (v, 3, N_SHAPE):
            raise ValueError(f"shape_basis must be {v}x3x{N_SHAPE}")
        if self.skin_weights.shape != (v, N_PARTS):
            raise ValueError(f"skin_weights must be {v}x{N_PARTS}")
        if self.joint_regressor.shape != (N_JOINTS, v):
            raise ValueError(f"joint_regressor must be {N_JOINTS}x{v}")
        if np.any(self.skin_weights < 0) or not np.allclose(self.skin_weights.sum(1), 1.0, atol=1e-6, rtol=0):
            raise ValueError("skin weight rows must be nonnegative and sum to 1")
        if not np.allclose(self.joint_regressor.sum(1), 1.0, atol=1e-6, rtol=0):
            raise ValueError("joint regressor rows must sum to 1")
        if self.parent.shape != (N_PARTS,) or self.parent[0] >= 0:
            raise ValueError("parent must have 16 entries with the root first")
        if any(not 0 <= self.parent[i] < i for i in range(1, N_PARTS)):
            raise ValueError("parent indices must satisfy 0 <= parent[i] < i")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= v):
            raise ValueError("faces reference vertices out of range")
        if len(self.mcp_indices) != 5 or len(self.bone_edges) != N_BONES:
            raise ValueError("expected 5 MCP indices and 20 bone edges")

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @functools.cached_property
    def rest_joints(self) -> np.ndarray:
        """Kinematic (16) joint positions of the template."""
        return self.joint_regressor[:N_PARTS] @ self.template_vertices

    @functools.cached_property
    def joint_shape_basis(self) -> np.ndarray:
        return np.einsum("jv,vck->jck", self.joint_regressor[:N_PARTS], self.shape_basis)

    @functools.cached_property
    def vertex_parts(self) -> np.ndarray:
        """Dominant skinning part of every vertex, used for segmentation labels."""
        return np.argmax(self.skin_weights, axis=1)

    @functools.cached_property
    def _regressed_skin(self):
        # regressor and skin weights folded together so output joints skip the full mesh
        rw = np.einsum("jv,vi->jiv", self.joint_regressor, self.skin_weights)
        return (
            rw.sum(-1),
            np.einsum("jiv,vc->jic", rw, self.template_vertices),
            np.einsum("jiv,vck->jick", rw, self.shape_basis),
        )

    def mirrored(self) -> "HandRig":
        """Left-hand rig: reflect x and flip face winding."""
        flip = np.array([-1.0, 1.0, 1.0])
        return HandRig(
            template_vertices=self.template_vertices * flip,
            faces=self.faces[:, [0, 2, 1]],
            shape_basis=self.shape_basis * flip[None, :, None],
            skin_weights=self.skin_weights.copy(),
            joint_regressor=self.joint_regressor.copy(),
            parent=self.parent.copy(),
            mcp_indices=self.mcp_indices,
            bone_edges=self.bone_edges,
        )


def rig_pair(right: HandRig) -> dict[str, HandRig]:
    return {"right": right, "left": right.mirrored()}


_RIG_KEYS = ("template_vertices", "faces", "shape_basis", "skin_weights", "joint_regressor", "parent",
             "mcp_indices", "bone_edges")


def save_rig(rig: HandRig, path) -> None:
    arrays = {k: np.asarray(getattr(rig, k)) for k in _RIG_KEYS}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_rig(path) -> HandRig:
    with np.load(Path(path), allow_pickle=False) as data:
        missing = [k for k in _RIG_KEYS if k not in data]
        if missing:
            raise ValueError(f"rig file {path} lacks arrays: {', '.join(missing)}")
        return HandRig(**{k: data[k] for k in _RIG_KEYS})


# ---------------------------------------------------------------- toy rig

# (MCP position, direction, phalanx lengths, radius) per finger chain, right hand, meters
_FINGERS = (
    ((0.024, 0.088, 0.0), (0.08, 1.0, 0.0), (0.040, 0.024, 0.021), 0.0085),
    ((0.003, 0.092, 0.0), (0.0, 1.0, 0.0), (0.044, 0.027, 0.023), 0.0090),
    ((-0.034, 0.078, 0.0), (-0.15, 1.0, 0.0), (0.030, 0.018, 0.018), 0.0075),
    ((-0.016, 0.087, 0.0), (-0.07, 1.0, 0.0), (0.041, 0.025, 0.022), 0.0085),
    ((0.022, 0.022, -0.005), (0.7, 0.7, -0.1), (0.035, 0.032, 0.027), 0.0100),
)
_PALM_RADIUS = 0.011
_WRIST_RADIUS = 0.02


def _ring_frame(d):
    d = d / np.linalg.norm(d)
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def toy_rig(seed: int = 0, n_vertices: int = 778, ring_size: int = 8) -> HandRig:
    """Deterministic procedural right-hand rig with MANO's structure.

    Vertices are rings around every bone; the regressor row of each joint is
    the uniform average of the ring centered on it, so regressed joints match
    forward kinematics exactly for any pose and shape.
    """
    if n_vertices < (N_BONES + 1) * ring_size:
        raise ValueError(f"need at least {(N_BONES + 1) * ring_size} vertices for ring size {ring_size}")
    rng = np.random.default_rng(seed)

    joints = np.zeros((N_JOINTS, 3))
    radius = np.zeros(N_JOINTS)
    radius[0] = _WRIST_RADIUS
    for chain, (mcp, direction, lengths, r) in zip(FINGER_CHAINS, _FINGERS):
        d = np.asarray(direction) / np.linalg.norm(direction)
        jitter = 1.0 + 0.05 * rng.uniform(-1, 1, size=3)
        joints[chain[0]] = mcp
        radius[chain[0]] = _PALM_RADIUS
        for k in range(3):
            joints[chain[k + 1]] = joints[chain[k]] + lengths[k] * jitter[k] * d
            radius[chain[k + 1]] = r * (1.0 - 0.12 * k)

    n_rings, n_caps = divmod(n_vertices, ring_size)
    lengths = np.array([np.linalg.norm(joints[c] - joints[p]) for p, c in BONE_EDGES])
    extra = n_rings - 1 - N_BONES
    share = extra * lengths / lengths.sum()
    per_bone = 1 + np.floor(share).astype(int)
    leftover = extra - int(np.floor(share).sum())
    for b in np.argsort(-(share - np.floor(share)), kind="stable")[:leftover]:
        per_bone[b] += 1

    phi = 2 * np.pi * np.arange(ring_size) / ring_size
    # per vertex: bone start joint, bone end joint, interpolation t, radial offset
    starts, ends, ts, offsets, ring_of = [], [], [], [], []
    ring_at_joint = {}
    rings = []

    def add_ring(p, c, t, rad, direction):
        u, w = _ring_frame(direction)
        first = len(starts)
        for a in phi:
            starts.append(p)
            ends.append(c)
            ts.append(t)
            offsets.append(rad * (np.cos(a) * u + np.sin(a) * w))
            ring_of.append(len(rings))
        rings.append(np.arange(first, first + ring_size))
        return len(rings) - 1

    ring_at_joint[0] = add_ring(0, 0, 0.0, radius[0], np.array([0.0, 1.0, 0.0]))
    bone_rings = []
    for b, (p, c) in enumerate(BONE_EDGES):
        d = joints[c] - joints[p]
        ids = []
        n = per_bone[b]
        for k in range(n):
            t = (k + 1) / n
            rad = (1 - t) * (radius[p] if p else _PALM_RADIUS) + t * radius[c]
            ids.append(add_ring(p, c, t, rad, d))
        ring_at_joint[c] = ids[-1]
        bone_rings.append(ids)

    tip_edges = [e for e in BONE_EDGES if e[1] >= N_PARTS]
    caps = []
    for j in range(n_caps):
        p, c = tip_edges[j % len(tip_edges)]
        starts.append(p)
        ends.append(c)
        ts.append(1.0 + 0.12 * (1 + j // len(tip_edges)))
        offsets.append(np.zeros(3))
        ring_of.append(-1)
        caps.append((len(starts) - 1, ring_at_joint[c], j < len(tip_edges)))

    starts = np.array(starts)
    ends = np.array(ends)
    ts = np.array(ts)[:, None]
    offsets = np.array(offsets)
    template = (1 - ts) * joints[starts] + ts * joints[ends] + offsets

    skin = np.zeros((n_vertices, N_PARTS))
    child_w = np.where(ends < N_PARTS, 0.4 * _smoothstep((ts[:, 0] - 0.5) / 0.5), 0.0)
    child_w[starts == ends] = 0.0
    skin[np.arange(n_vertices), starts] = 1.0 - child_w
    inner = ends < N_PARTS
    skin[np.arange(n_vertices)[inner], ends[inner]] += child_w[inner]

    regressor = np.zeros((N_JOINTS, n_vertices))
    for j in range(N_JOINTS):
        regressor[j, rings[ring_at_joint[j]]] = 1.0 / ring_size

    faces = []

    def stitch(a, b):
        ra, rb = rings[a], rings[b]
        for k in range(ring_size):
            k1 = (k + 1) % ring_size
            faces.append((ra[k], ra[k1], rb[k]))
            faces.append((ra[k1], rb[k1], rb[k]))

    for (p, c), ids in zip(BONE_EDGES, bone_rings):
        prev = ring_at_joint[p]
        for r in ids:
            stitch(prev, r)
            prev = r
    for vid, ring, fan in caps:
        if fan:
            rr = rings[ring]
            for k in range(ring_size):
                faces.append((rr[k], rr[(k + 1) % ring_size], vid))

    basis = _toy_shape_basis(joints, starts, ends, ts[:, 0], offsets, rng)
    return HandRig(template, np.array(faces), basis, skin, regressor)


def _toy_shape_basis(joints, starts, ends, ts, offsets, rng):
    fields = []  # (joint displacement 21x3, radial factor)
    fields.append((0.03 * joints, 0.03))
    fields.append((0.08 * joints * np.array([1.0, 0.0, 0.0]), 0.0))
    d = np.zeros_like(joints)
    for chain in FINGER_CHAINS:
        d[list(chain)] = 0.05 * (joints[list(chain)] - joints[chain[0]])
    fields.append((d, 0.0))
    d = np.zeros_like(joints)
    for chain in FINGER_CHAINS[:4]:
        d[list(chain)] = 0.05 * joints[chain[0]]
    fields.append((d, 0.0))
    fields.append((np.zeros_like(joints), 0.10))
    for chain in FINGER_CHAINS:
        d = np.zeros_like(joints)
        d[list(chain)] = 0.06 * (joints[list(chain)] - joints[chain[0]])
        fields.append((d, 0.0))

    ts = ts[:, None]
    basis = np.zeros((len(starts), 3, N_SHAPE))
    for k, (disp, rho) in enumerate(fields):
        gain = 1.0 + 0.1 * rng.uniform(-1, 1)
        basis[:, :, k] = gain * ((1 - ts) * disp[starts] + ts * disp[ends] + rho * offsets)
    return basis


# ---------------------------------------------------------------- rotations

def rot6d_to_matrix(r) -> np.ndarray:
    """Decode 6D rotations (..., 6) into rotation matrices (..., 3, 3).

    The first 3-vector is normalized, the second is Gram-Schmidt
    orthogonalized against it, and the third column is their cross product.
    """
    r = np.asarray(r, dtype=np.float64)
    mats, ok = _rot6d_unchecked(r)
    if not np.all(ok):
        raise DegenerateRotation("6D rotation has a near-zero or parallel column pair")
    return mats


def rot6d_is_valid(r) -> np.ndarray:
    return _rot6d_unchecked(np.asarray(r, dtype=np.float64))[1]


def _cross(a, b):
    # np.cross is slow on small trailing axes
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _rot6d_unchecked(r):
    a1, a2 = r[..., :3], r[..., 3:6]
    n1 = np.sqrt((a1 * a1).sum(-1))
    n2 = np.sqrt((a2 * a2).sum(-1))
    cross = np.sqrt((_cross(a1, a2) ** 2).sum(-1))
    ok = np.isfinite(r).all(-1) & (n1 > DEGENERATE_EPS) & (n2 > DEGENERATE_EPS) & (cross > DEGENERATE_EPS * n1 * n2)
    with np.errstate(invalid="ignore", divide="ignore"):
        b1 = a1 / n1[..., None]
        u2 = a2 - np.sum(b1 * a2, -1, keepdims=True) * b1
        b2 = u2 / np.sqrt((u2 * u2).sum(-1, keepdims=True))
        b3 = _cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1), ok


def matrix_to_rot6d(mat) -> np.ndarray:
    """First two columns of (..., 3, 3) matrices, concatenated."""
    mat = np.asarray(mat, dtype=np.float64)
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def axis_angle_to_matrix(axis_angle) -> np.ndarray:
    aa = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        axis = np.where(angle > 0, aa / angle, np.array([1.0, 0.0, 0.0]))
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    k = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], -1).reshape(aa.shape[:-1] + (3, 3))
    s = np.sin(angle)[..., None]
    c = np.cos(angle)[..., None]
    return np.eye(3) + s * k + (1 - c) * (k @ k)


def _rot6d_jacobian(r):
    """d(matrix)/d(r) for (N, 6) inputs: returns (N, 6, 3, 3)."""
    a1, a2 = r[:, :3], r[:, 3:]
    n1 = np.linalg.norm(a1, axis=-1)[:, None, None]
    b1 = a1 / n1[:, :, 0]
    eye = np.eye(3)
    d1 = (eye - b1[:, :, None] * b1[:, None, :]) / n1  # db1/da1
    dot = np.sum(b1 * a2, -1)
    u2 = a2 - dot[:, None] * b1
    n2 = np.linalg.norm(u2, axis=-1)[:, None, None]
    b2 = u2 / n2[:, :, 0]
    du_da1 = -(b1[:, :, None] * np.einsum("na,nab->nb", a2, d1)[:, None, :] + dot[:, None, None] * d1)
    du_da2 = eye - b1[:, :, None] * b1[:, None, :]
    p2 = (eye - b2[:, :, None] * b2[:, None, :]) / n2
    j1 = np.concatenate([d1, np.zeros_like(d1)], axis=-1)  # (N, 3, 6)
    j2 = np.einsum("nab,nbk->nak", p2, np.concatenate([du_da1, du_da2], axis=-1))
    j3 = np.cross(j1.transpose(0, 2, 1), b2[:, None, :]) + np.cross(b1[:, None, :], j2.transpose(0, 2, 1))
    return np.stack([j1.transpose(0, 2, 1), j2.transpose(0, 2, 1), j3], axis=-1)


# ---------------------------------------------------------------- kinematics

def shaped_joints(rig: HandRig, shape) -> np.ndarray:
    """Kinematic joint positions (..., 16, 3) of the shaped template."""
    shape = np.asarray(shape, dtype=np.float64)
    return rig.rest_joints + np.einsum("jck,...k->...jc", rig.joint_shape_basis, shape)


def forward_kinematics(rig: HandRig, rotmats, joints):
    """Chain local rotations along the tree.

    Returns global rotations (..., 16, 3, 3) and posed joint positions
    (..., 16, 3); the root rotates about its own rest position.
    """
    rots = [None] * N_PARTS
    pos = [None] * N_PARTS
    for i in range(N_PARTS):
        p = rig.parent[i]
        if p < 0:
            rots[i] = rotmats[..., i, :, :]
            pos[i] = joints[..., i, :]
        else:
            rots[i] = rots[p] @ rotmats[..., i, :, :]
            pos[i] = pos[p] + np.einsum("...ab,...b->...a", rots[p], joints[..., i, :] - joints[..., p, :])
    return np.stack(rots, axis=-3), np.stack(pos, axis=-2)


def _skinning_transforms(rig, pose6d, shape, check=True, rotmats=None):
    pose6d = np.asarray(pose6d, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    if rotmats is None:
        rotmats = rot6d_to_matrix(pose6d) if check else _rot6d_unchecked(pose6d)[0]
    rest = shaped_joints(rig, shape)
    grot, gpos = forward_kinematics(rig, rotmats, rest)
    trans = gpos - np.einsum("...iab,...ib->...ia", grot, rest)
    return grot, trans


def skin_vertices(rig: HandRig, pose6d, shape) -> np.ndarray:
    """Linear blend skinning of the shaped template, batched: (..., V, 3)."""
    shape = np.asarray(shape, dtype=np.float64)
    grot, trans = _skinning_transforms(rig, pose6d, shape)
    verts = rig.template_vertices + np.einsum("vck,...k->...vc", rig.shape_basis, shape)
    blend_rot = np.einsum("vi,...iab->...vab", rig.skin_weights, grot)
    blend_t = np.einsum("vi,...ia->...va", rig.skin_weights, trans)
    return np.einsum("...vab,...vb->...va", blend_rot, verts) + blend_t


def skin_mesh(rig: HandRig, params: HandParams) -> np.ndarray:
    """Mesh vertices (V, 3) for one hand's pose and shape."""
    return skin_vertices(rig, params.pose6d, params.shape)


def regress_joints(rig: HandRig, mesh) -> np.ndarray:
    return np.einsum("jv,...vc->...jc", rig.joint_regressor, np.asarray(mesh, dtype=np.float64))


def posed_joints(rig: HandRig, pose6d, shape, check=True) -> np.ndarray:
    """regress_joints(skin_vertices(...)) without materializing the mesh.

    With ``check=False`` degenerate rotations yield NaN instead of raising.
    """
    return _posed_joints(rig, pose6d, shape, _skinning_transforms(rig, pose6d, shape, check=check))


def posed_joints_masked(rig: HandRig, pose6d, shape):
    """posed_joints plus a (...,) mask that is False where any rotation is degenerate."""
    pose6d = np.asarray(pose6d, dtype=np.float64)
    rotmats, ok = _rot6d_unchecked(pose6d)
    transforms = _skinning_transforms(rig, pose6d, shape, rotmats=rotmats)
    return _posed_joints(rig, pose6d, shape, transforms), ok.all(-1)


def _posed_joints(rig, pose6d, shape, transforms):
    shape = np.asarray(shape, dtype=np.float64)
    grot, trans = transforms
    rw, rw_t, rw_b = rig._regressed_skin
    local = rw_t + (shape @ rw_b.reshape(-1, N_SHAPE).T).reshape(shape.shape[:-1] + rw_t.shape)
    rotated = (grot @ np.moveaxis(local, -3, -1)).sum(-3)  # (..., 3, 21)
    return np.swapaxes(rotated, -1, -2) + np.einsum("ji,...ia->...ja", rw, trans, optimize=True)


def skin_jacobian(rig: HandRig, pose6d, shape) -> np.ndarray:
    """Forward-mode derivative of skinned vertices w.r.t. (pose6d, shape).

    Returns (V, 3, 106): columns 0-95 are the row-major pose entries and
    96-105 the shape coefficients.
    """
    pose6d = np.asarray(pose6d, dtype=np.float64).reshape(N_PARTS, 6)
    shape = np.asarray(shape, dtype=np.float64).reshape(N_SHAPE)
    n_dir = POSE_DIM + N_SHAPE
    rotmats = rot6d_to_matrix(pose6d)
    drot_local = np.zeros((N_PARTS, n_dir, 3, 3))
    jac6 = _rot6d_jacobian(pose6d)
    for i in range(N_PARTS):
        drot_local[i, 6 * i:6 * i + 6] = jac6[i]
    rest = shaped_joints(rig, shape)
    drest = np.zeros((N_PARTS, n_dir, 3))
    drest[:, POSE_DIM:] = rig.joint_shape_basis.transpose(0, 2, 1)
    verts = rig.template_vertices + rig.shape_basis @ shape
    dverts = np.zeros((rig.n_vertices, n_dir, 3))
    dverts[:, POSE_DIM:] = rig.shape_basis.transpose(0, 2, 1)

    grot = [None] * N_PARTS
    gpos = [None] * N_PARTS
    dgrot = [None] * N_PARTS
    dgpos = [None] * N_PARTS
    for i in range(N_PARTS):
        p = rig.parent[i]
        if p < 0:
            grot[i], gpos[i] = rotmats[i], rest[i]
            dgrot[i], dgpos[i] = drot_local[i], drest[i]
        else:
            off = rest[i] - rest[p]
            doff = drest[i] - drest[p]
            grot[i] = grot[p] @ rotmats[i]
            gpos[i] = gpos[p] + grot[p] @ off
            dgrot[i] = dgrot[p] @ rotmats[i] + grot[p] @ drot_local[i]
            dgpos[i] = dgpos[p] + dgrot[p] @ off + doff @ grot[p].T
    grot = np.stack(grot)
    dgrot = np.stack(dgrot)
    dgpos = np.stack(dgpos)
    # v' = sum_i w_i (G_i (v - J_i) + P_i)
    per_joint = dgpos - np.einsum("idab,ib->ida", dgrot, rest) - np.einsum("iab,idb->ida", grot, drest)
    w = rig.skin_weights
    blend_drot = np.einsum("vi,idab->vdab", w, dgrot)
    blend_rot = np.einsum("vi,iab->vab", w, grot)
    out = (
        np.einsum("vdab,vb->vda", blend_drot, verts)
        + np.einsum("vab,vdb->vda", blend_rot, dverts)
        + np.einsum("vi,ida->vda", w, per_joint)
    )
    return out.transpose(0, 2, 1)


def joints_jacobian(rig: HandRig, pose6d, shape) -> np.ndarray:
    """Derivative of the 21 regressed joints w.r.t. (pose6d, shape): (21, 3, 106)."""
    return np.einsum("jv,vck->jck", rig.joint_regressor, skin_jacobian(rig, pose6d, shape))


# ---------------------------------------------------------------- projection

def project_weak_perspective(joints3d, camera) -> np.ndarray:
    """x2d = s * x3d + tx, y2d = s * y3d + ty; depth is dropped."""
    joints3d = np.asarray(joints3d, dtype=np.float64)
    camera = np.asarray(camera, dtype=np.float64)
    s = camera[..., 0:1, None]
    t = camera[..., None, 1:3]
    return s * joints3d[..., :2] + t


def bone_lengths(joints, bone_edges=BONE_EDGES) -> np.ndarray:
    joints = np.asarray(joints, dtype=np.float64)
    edges = np.asarray(bone_edges)
    return np.linalg.norm(joints[..., edges[:, 1], :] - joints[..., edges[:, 0], :], axis=-1)
