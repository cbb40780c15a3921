import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acrhands.attention_maps import (N_SEG_CLASSES, STACK_CHANNELS, CenterSpec, KernelConfig, MapStack, SplatHand,
                                     append_coord_channels, channel_softmax, compute_center, coord_channels,
                                     estimate_center, kernel_from_bbox, log_channel_softmax, render_center_map,
                                     render_part_segmentation, spatial_softmax)
from acrhands.hand_model import MCP_INDICES, N_JOINTS


@pytest.mark.parametrize("w,h,k", [
    (10, 10, 2),    # 1.5 rounds down to 1, clamped up to 2
    (15, 4, 2),
    (25, 3, 3),
    (24.9, 1, 2),
    (50, 30, 5),
    (30, 64, 6),
    (155, 10, 16),
    (1000, 1000, 16),
])
def test_kernel_from_bbox(w, h, k):
    assert kernel_from_bbox(w, h) == k


def test_kernel_from_bbox_config_and_errors():
    assert kernel_from_bbox(100, 10, KernelConfig(factor=0.2, k_min=1, k_max=30)) == 20
    with pytest.raises(ValueError):
        kernel_from_bbox(0, 5)


def test_compute_center_uses_visible_mcps_only():
    joints = np.zeros((N_JOINTS, 2))
    joints[list(MCP_INDICES)] = np.arange(10).reshape(5, 2)
    vis = np.ones(N_JOINTS, dtype=bool)
    np.testing.assert_allclose(compute_center(joints, MCP_INDICES, vis), [4, 5])
    vis[list(MCP_INDICES[:4])] = False
    np.testing.assert_allclose(compute_center(joints, MCP_INDICES, vis), [8, 9])
    vis[MCP_INDICES[4]] = False
    assert compute_center(joints, MCP_INDICES, vis) is None


def test_center_map_peak_and_falloff():
    m = render_center_map(CenterSpec(np.array([20.4, 30.6]), 3), 64, 64)[0]
    assert m[31, 20] == 1.0 and m.max() == 1.0
    assert m[31, 23] == pytest.approx(np.exp(-0.5))
    assert m[34, 20] == pytest.approx(np.exp(-0.5))


def test_center_map_invisible_hand_is_empty():
    assert not render_center_map(CenterSpec(None, 3)).any()
    assert not render_center_map(CenterSpec(np.array([5.0, 5.0]), 3, visible=False)).any()


@pytest.mark.parametrize("k", [2, 3, 5, 9, 16])
def test_estimate_center_inverts_rendering(k):
    m = render_center_map(CenterSpec(np.array([31.0, 12.0]), k), 64, 64)[0]
    spec = estimate_center(m)
    np.testing.assert_array_equal(spec.center, [31, 12])
    assert spec.kernel == pytest.approx(k, rel=1e-9)


def test_estimate_center_absent_hand():
    assert estimate_center(np.full((8, 8), 0.05)) is None


maps = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(maps, st.floats(-100, 100))
def test_spatial_softmax_normalized_and_shift_invariant(x, c):
    p = spatial_softmax(x)
    np.testing.assert_allclose(p.sum((-2, -1)), 1.0, atol=1e-12)
    assert (p >= 0).all()
    np.testing.assert_allclose(spatial_softmax(x + c), p, atol=1e-12)


def test_spatial_softmax_brute_force(rng):
    x = rng.standard_normal((2, 3, 4))
    p = spatial_softmax(x)
    for c in range(2):
        total = sum(np.exp(x[c, i, j]) for i in range(3) for j in range(4))
        for i in range(3):
            for j in range(4):
                assert p[c, i, j] == pytest.approx(np.exp(x[c, i, j]) / total, rel=1e-12)


def test_channel_softmax_and_log(rng):
    x = rng.standard_normal((N_SEG_CLASSES, 5, 5)) * 10
    p = channel_softmax(x)
    np.testing.assert_allclose(p.sum(0), 1.0)
    np.testing.assert_allclose(np.exp(log_channel_softmax(x)), p, rtol=1e-12)


def test_coord_channels():
    c = coord_channels(3, 5)
    np.testing.assert_allclose(c[0, 0], [-1, -0.5, 0, 0.5, 1])
    np.testing.assert_allclose(c[1, :, 0], [-1, 0, 1])
    assert append_coord_channels(np.zeros((4, 3, 5))).shape == (6, 3, 5)


# ---------------------------------------------------------------- part splatting

def _splat_oracle(hands, h, w, radius=1):
    depth = np.full((h, w), np.inf)
    labels = np.zeros((h, w), dtype=int)
    for hand in hands:
        offset = 1 if hand.handedness == "left" else 17
        s, tx, ty = hand.camera
        for v, part in zip(hand.vertices, hand.parts):
            px = int(np.floor(s * v[0] + tx + 0.5))
            py = int(np.floor(s * v[1] + ty + 0.5))
            for y in range(py - radius, py + radius + 1):
                for x in range(px - radius, px + radius + 1):
                    if 0 <= x < w and 0 <= y < h and v[2] < depth[y, x]:
                        depth[y, x] = v[2]
                        labels[y, x] = part + offset
    return labels


def test_splat_matches_z_buffer_loop(rng):
    hands = []
    for handedness in ("left", "right"):
        verts = rng.uniform(-0.05, 0.05, (60, 3))
        hands.append(SplatHand(verts, rng.integers(0, 16, 60), np.array([150.0, 16.0, 16.0]), handedness))
    onehot, labels = render_part_segmentation(hands, 32, 32)
    np.testing.assert_array_equal(labels, _splat_oracle(hands, 32, 32))
    np.testing.assert_array_equal(onehot.argmax(0), labels)
    np.testing.assert_array_equal(onehot.sum(0), 1.0)


def test_splat_nearer_vertex_wins():
    cam = np.array([1.0, 0.0, 0.0])
    far = SplatHand(np.array([[3.0, 3.0, 5.0]]), np.array([2]), cam, "right")
    near = SplatHand(np.array([[3.0, 3.0, -5.0]]), np.array([4]), cam, "left")
    _, labels = render_part_segmentation([far, near], 8, 8)
    assert labels[3, 3] == 1 + 4
    assert (labels[2:5, 2:5] == 5).all() and labels.sum() == 9 * 5


def test_splat_empty_is_background():
    onehot, labels = render_part_segmentation([], 4, 4)
    assert not labels.any() and (onehot[0] == 1).all()


# ---------------------------------------------------------------- map stack

def test_map_stack_tensor_round_trip(rng):
    ms = MapStack(rng.standard_normal((218, 4, 5)), rng.standard_normal((2, 4, 5)),
                  rng.standard_normal((33, 4, 5)), rng.standard_normal((218, 4, 5)))
    t = ms.to_tensor()
    assert t.shape == (STACK_CHANNELS, 4, 5)
    back = MapStack.from_tensor(t)
    for name in ("param_map", "center_map", "part_map", "cross_map"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ms, name))
    np.testing.assert_array_equal(back.part_channels("left"), ms.part_map[1:17])
    np.testing.assert_array_equal(back.part_channels("right"), ms.part_map[17:33])


def test_map_stack_rejects_bad_shapes():
    with pytest.raises(ValueError):
        MapStack(np.zeros((217, 4, 4)), np.zeros((2, 4, 4)), np.zeros((33, 4, 4)), np.zeros((218, 4, 4)))
    with pytest.raises(ValueError):
        MapStack.from_tensor(np.zeros((470, 4, 4)))
