import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from alttrack.geometry import (
    BoxState,
    EgoPose,
    box_abs_diff,
    boxes_to_ego,
    boxes_to_world,
    ego_compensate,
    pairwise_abs_diff,
    propagate_reference,
)
from alttrack.numeric import ContractError

coord = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)


def test_yaw_difference_wraps():
    a = np.zeros(9)
    b = np.zeros(9)
    a[6], b[6] = 3.0, -3.0
    assert box_abs_diff(a, b)[6] == pytest.approx(2 * math.pi - 6.0)


def test_pairwise_layout():
    tracks = np.arange(18.0).reshape(2, 9)
    dets = np.zeros((3, 9))
    out = pairwise_abs_diff(tracks, dets)
    assert out.shape == (3, 2, 9)
    np.testing.assert_allclose(out[2, 1, :6], tracks[1, :6])


def test_box_state_validation():
    with pytest.raises(ContractError):
        BoxState.from_vector([0, 0, 0, -1, 1, 1, 0, 0, 0])
    b = BoxState.from_vector([0, 0, 0, 1, 1, 1, 4.0, 0, 0])
    assert -math.pi < b.yaw <= math.pi


def test_left_turn_rotates_points_clockwise():
    # vehicle turns +90 degrees in place: a point ahead ends up to the right
    out = ego_compensate(np.array([1.0, 0.0, 0.0]), EgoPose((0, 0, 0), 0.0), EgoPose((0, 0, 0), math.pi / 2))
    np.testing.assert_allclose(out, [0.0, -1.0, 0.0], atol=1e-15)


def test_forward_motion_shifts_points_back():
    out = ego_compensate(np.array([[5.0, 1.0, 0.5]]), EgoPose((0, 0, 0), 0.0), EgoPose((2, 0, 0), 0.0))
    np.testing.assert_allclose(out, [[3.0, 1.0, 0.5]])


def test_propagate_constant_velocity():
    np.testing.assert_allclose(propagate_reference([1.0, 2.0, 3.0], [2.0, -1.0], 0.5), [2.0, 1.5, 3.0])
    with pytest.raises(ContractError):
        propagate_reference([0, 0, 0], [1, 1], -0.1)


@given(hnp.arrays(np.float64, (3, 9), elements=st.floats(-30, 30, allow_nan=False)), coord, coord, angle)
def test_world_ego_roundtrip(boxes, x, y, yaw):
    boxes[:, 6] = np.clip(boxes[:, 6], -3.0, 3.0)
    pose = EgoPose((x, y, 0.0), yaw)
    back = boxes_to_world(boxes_to_ego(boxes, pose), pose)
    np.testing.assert_allclose(back[:, [0, 1, 2, 3, 4, 5, 7, 8]], boxes[:, [0, 1, 2, 3, 4, 5, 7, 8]], atol=1e-9)
    np.testing.assert_allclose(np.cos(back[:, 6] - boxes[:, 6]), 1.0, atol=1e-9)


@given(coord, coord, angle, coord, coord, angle, coord, coord)
def test_ego_compensation_preserves_world_position(x0, y0, a0, x1, y1, a1, px, py):
    p0, p1 = EgoPose((x0, y0, 0.0), a0), EgoPose((x1, y1, 0.0), a1)
    point = np.array([px, py, 0.0])
    moved = ego_compensate(point, p0, p1)
    box = np.zeros((2, 9))
    box[0, :3], box[1, :3] = point, moved
    w0 = boxes_to_world(box[:1], p0)[0, :2]
    w1 = boxes_to_world(box[1:], p1)[0, :2]
    np.testing.assert_allclose(w0, w1, atol=1e-8)


@given(hnp.arrays(np.float64, (2, 9), elements=st.floats(-10, 10, allow_nan=False)),
       hnp.arrays(np.float64, (2, 9), elements=st.floats(-10, 10, allow_nan=False)))
def test_abs_diff_symmetric_and_bounded_yaw(a, b):
    d1 = box_abs_diff(a, b)
    d2 = box_abs_diff(b, a)
    np.testing.assert_allclose(d1, d2, atol=1e-12)
    assert (d1[..., 6] <= math.pi + 1e-12).all()
