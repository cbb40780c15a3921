import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acrhands.errors import DegenerateRotation
from acrhands.hand_model import (BONE_EDGES, N_JOINTS, N_PARTS, PARENTS, HandParams, axis_angle_to_matrix,
                                 bone_lengths, forward_kinematics, joints_jacobian, load_rig, matrix_to_rot6d,
                                 posed_joints, project_weak_perspective, regress_joints, rot6d_is_valid,
                                 rot6d_to_matrix, save_rig, shaped_joints, skin_jacobian, skin_mesh,
                                 skin_vertices, toy_rig)


def random_params(rng, angle=0.6, handedness="right"):
    pose = matrix_to_rot6d(axis_angle_to_matrix(angle * rng.standard_normal((N_PARTS, 3))))
    return HandParams(pose, rng.uniform(-2, 2, 10), [rng.uniform(80, 200), *rng.uniform(0, 64, 2)], handedness)


# ---------------------------------------------------------------- rotations

finite6 = arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(finite6)
def test_rot6d_gives_rotation_when_valid(r):
    if not rot6d_is_valid(r):
        with pytest.raises(DegenerateRotation):
            rot6d_to_matrix(r)
        return
    m = rot6d_to_matrix(r)
    assert np.abs(m.T @ m - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(m) - 1) < 1e-9


def test_rot6d_first_column_is_normalized_input(rng):
    r = rng.standard_normal((50, 6))
    m = rot6d_to_matrix(r)
    np.testing.assert_allclose(m[:, :, 0], r[:, :3] / np.linalg.norm(r[:, :3], axis=1, keepdims=True))
    # the second column lies in the plane of the two inputs
    normal = np.cross(r[:, :3], r[:, 3:])
    assert np.abs(np.einsum("na,na->n", normal, m[:, :, 1])).max() < 1e-9


@pytest.mark.parametrize("r", [
    [0, 0, 0, 0, 1, 0],
    [1, 0, 0, 0, 0, 0],
    [1, 2, 3, 2, 4, 6],
    [1e-9, 0, 0, 0, 1, 0],
])
def test_rot6d_degenerate_raises(r):
    with pytest.raises(DegenerateRotation):
        rot6d_to_matrix(np.array(r, dtype=float))


def test_rot6d_round_trip(rng):
    mats = axis_angle_to_matrix(rng.standard_normal((100, 3)))
    np.testing.assert_allclose(rot6d_to_matrix(matrix_to_rot6d(mats)), mats, atol=1e-12)


def test_axis_angle_matches_rodrigues_about_z():
    m = axis_angle_to_matrix(np.array([0, 0, np.pi / 2]))
    np.testing.assert_allclose(m, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


# ---------------------------------------------------------------- rig

def test_toy_rig_shapes(rigs):
    r = rigs["right"]
    assert r.template_vertices.shape == (778, 3)
    assert r.joint_regressor.shape == (N_JOINTS, 778)
    assert r.shape_basis.shape == (778, 3, 10)
    np.testing.assert_allclose(r.skin_weights.sum(1), 1.0)
    np.testing.assert_array_equal(r.parent, PARENTS)


def test_toy_rig_is_deterministic():
    a, b = toy_rig(7), toy_rig(7)
    np.testing.assert_array_equal(a.template_vertices, b.template_vertices)
    np.testing.assert_array_equal(a.shape_basis, b.shape_basis)


def test_left_rig_mirrors_right(rigs):
    left, right = rigs["left"], rigs["right"]
    np.testing.assert_array_equal(left.template_vertices[:, 0], -right.template_vertices[:, 0])
    np.testing.assert_array_equal(left.template_vertices[:, 1:], right.template_vertices[:, 1:])
    np.testing.assert_array_equal(left.faces, right.faces[:, [0, 2, 1]])


def test_rig_validation_rejects_bad_weights(rigs):
    r = rigs["right"]
    w = r.skin_weights.copy()
    w[0, 0] += 0.5
    with pytest.raises(ValueError):
        type(r)(r.template_vertices, r.faces, r.shape_basis, w, r.joint_regressor)


def test_rig_save_load_round_trip(rigs, tmp_path):
    r = rigs["right"]
    save_rig(r, tmp_path / "rig.npz")
    back = load_rig(tmp_path / "rig.npz")
    for name in ("template_vertices", "faces", "shape_basis", "skin_weights", "joint_regressor", "parent"):
        np.testing.assert_array_equal(getattr(back, name), getattr(r, name))
    assert back.bone_edges == r.bone_edges and back.mcp_indices == r.mcp_indices


def test_regressed_rest_joints_match_kinematic_joints(rigs):
    r = rigs["right"]
    np.testing.assert_allclose(regress_joints(r, r.template_vertices)[:N_PARTS], r.rest_joints, atol=1e-12)


# ---------------------------------------------------------------- kinematics and skinning

def test_rest_pose_zero_shape_returns_template(rigs):
    r = rigs["right"]
    np.testing.assert_allclose(skin_mesh(r, HandParams.rest()), r.template_vertices, atol=1e-14)


def _fk_oracle(rig, rotmats, joints):
    # walk each chain from the root with explicit loops
    out = np.zeros((N_PARTS, 3))
    for i in range(N_PARTS):
        chain = [i]
        while rig.parent[chain[-1]] >= 0:
            chain.append(rig.parent[chain[-1]])
        chain = chain[::-1]
        pos = joints[chain[0]].copy()
        rot = np.eye(3)
        for a, b in zip(chain[:-1], chain[1:]):
            rot = rot @ rotmats[a]
            pos = pos + rot @ (joints[b] - joints[a])
        out[i] = pos
    return out


def test_forward_kinematics_matches_chain_walk(rigs, rng):
    r = rigs["right"]
    for _ in range(5):
        p = random_params(rng)
        rest = shaped_joints(r, p.shape)
        rotmats = rot6d_to_matrix(p.pose6d)
        _, pos = forward_kinematics(r, rotmats, rest)
        np.testing.assert_allclose(pos, _fk_oracle(r, rotmats, rest), atol=1e-12)


def test_skinning_matches_per_vertex_loop(rigs, rng):
    r = rigs["right"]
    p = random_params(rng)
    rest = shaped_joints(r, p.shape)
    grot, gpos = forward_kinematics(r, rot6d_to_matrix(p.pose6d), rest)
    verts = r.template_vertices + r.shape_basis @ p.shape
    mesh = skin_mesh(r, p)
    for v in rng.choice(r.n_vertices, 40, replace=False):
        expected = np.zeros(3)
        for i in range(N_PARTS):
            expected += r.skin_weights[v, i] * (grot[i] @ (verts[v] - rest[i]) + gpos[i])
        np.testing.assert_allclose(mesh[v], expected, atol=1e-12)


def test_posed_joints_equals_regressed_mesh_batched(rigs, rng):
    r = rigs["left"]
    ps = [random_params(rng, handedness="left") for _ in range(4)]
    pose = np.stack([p.pose6d for p in ps])
    shape = np.stack([p.shape for p in ps])
    np.testing.assert_allclose(posed_joints(r, pose, shape), regress_joints(r, skin_vertices(r, pose, shape)),
                               atol=1e-12)


def test_root_rotation_rotates_about_root(rigs):
    r = rigs["right"]
    p = HandParams.rest()
    rot = axis_angle_to_matrix(np.array([0.3, -0.4, 0.2]))
    pose = p.pose6d.copy()
    pose[0] = matrix_to_rot6d(rot)
    j_rest = posed_joints(r, p.pose6d, p.shape)
    j = posed_joints(r, pose, p.shape)
    np.testing.assert_allclose(j, (j_rest - j_rest[0]) @ rot.T + j_rest[0], atol=1e-12)


def test_bone_lengths_are_pose_invariant(rigs, rng):
    r = rigs["right"]
    p = random_params(rng)
    posed = bone_lengths(posed_joints(r, p.pose6d, p.shape), r.bone_edges)
    rest = bone_lengths(posed_joints(r, HandParams.rest().pose6d, p.shape), r.bone_edges)
    np.testing.assert_allclose(posed, rest, atol=1e-12)
    assert len(BONE_EDGES) == 20


def test_skin_jacobian_matches_finite_differences(rigs, rng):
    r = rigs["right"]
    p = random_params(rng)
    x = np.concatenate([p.pose6d.ravel(), p.shape])
    jac = skin_jacobian(r, p.pose6d, p.shape)
    h = 1e-6
    cols = rng.choice(x.size, 12, replace=False)
    for c in cols:
        e = np.zeros_like(x)
        e[c] = h
        hi = skin_vertices(r, (x + e)[:96].reshape(16, 6), (x + e)[96:])
        lo = skin_vertices(r, (x - e)[:96].reshape(16, 6), (x - e)[96:])
        np.testing.assert_allclose(jac[:, :, c], (hi - lo) / (2 * h), atol=1e-7)
    jj = joints_jacobian(r, p.pose6d, p.shape)
    np.testing.assert_allclose(jj, np.einsum("jv,vak->jak", r.joint_regressor, jac), atol=1e-12)


# ---------------------------------------------------------------- params and projection

def test_hand_params_flatten_round_trip(rng):
    p = random_params(rng, handedness="left")
    q = HandParams.from_flat(p.flatten(), "left")
    np.testing.assert_array_equal(q.flatten(), p.flatten())
    assert p.flatten().shape == (109,)


@pytest.mark.parametrize("s", [0.0, -1.0])
def test_hand_params_rejects_nonpositive_scale(s):
    with pytest.raises(ValueError):
        HandParams.rest(camera=(s, 0, 0))


def test_weak_perspective_by_hand():
    joints = np.array([[0.01, -0.02, 0.5], [0.0, 0.0, -3.0]])
    out = project_weak_perspective(joints, np.array([100.0, 30.0, 20.0]))
    np.testing.assert_allclose(out, [[31.0, 18.0], [30.0, 20.0]])
