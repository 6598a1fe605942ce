import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mscmr.geometry import (
    CropRecord,
    center_crop,
    nearest_indices,
    preprocess_volume,
    reconstruct_inverse,
    reconstruct_probabilities,
    resample_volume,
    resize_slices,
)
from mscmr.volume_io import GridError, LabelGrid3D, ProbGrid4D, VoxelGrid3D

from oracles import brute_nearest


@pytest.mark.parametrize("n_in,n_out", [(2, 4), (3, 7), (7, 3), (144, 256), (256, 144), (5, 5), (1, 4)])
def test_nearest_indices_match_brute_force(n_in, n_out):
    assert list(nearest_indices(n_in, n_out)) == brute_nearest(n_in, n_out)


def test_identity_resample():
    g = VoxelGrid3D.from_array(np.random.default_rng(0).normal(size=(4, 5, 3)))
    out = resample_volume(g, (4, 5, 3))
    np.testing.assert_array_equal(out.voxels, g.voxels)


def test_constant_volume_stays_constant():
    g = VoxelGrid3D.from_array(np.full((5, 3, 4), 7.0))
    for dims in [(9, 2, 4), (11, 17, 1), (3, 3, 3)]:
        assert np.all(resample_volume(g, dims, "linear").voxels == 7.0)


def test_labels_nearest_upsample_pattern():
    lab = LabelGrid3D.from_array(np.array([1, 2]).reshape(2, 1, 1))
    out = resample_volume(lab, (4, 1, 1), "nearest")
    assert out.voxels.ravel().tolist() == [1, 1, 2, 2]


def test_labels_refuse_linear():
    lab = LabelGrid3D.from_array(np.zeros((2, 2, 2), dtype=int))
    with pytest.raises(GridError):
        resample_volume(lab, (3, 3, 3), "linear")


def test_spacing_rescaled():
    g = VoxelGrid3D.from_array(np.zeros((128, 100, 10)), spacing=(1.5, 2.0, 8.0))
    out = resample_volume(g, (256, 200, 10))
    assert out.meta.spacing == (0.75, 1.0, 8.0)


def test_linear_known_values():
    # 2 -> 4 samples at positions -0.25, 0.25, 0.75, 1.25 (clamped)
    g = VoxelGrid3D.from_array(np.array([0.0, 8.0]).reshape(2, 1, 1))
    out = resample_volume(g, (4, 1, 1), "linear").voxels.ravel()
    np.testing.assert_allclose(out, [0.0, 2.0, 6.0, 8.0])


def test_resize_slices_identity_and_constant():
    g = VoxelGrid3D.from_array(np.random.default_rng(1).normal(size=(256, 256, 2)))
    np.testing.assert_array_equal(resize_slices(g).voxels, g.voxels)
    c = VoxelGrid3D.from_array(np.full((128, 128, 3), 3.5))
    out = resize_slices(c)
    assert out.meta.dims == (256, 256, 3)
    assert np.all(out.voxels == 3.5)


def test_checkerboard_nearest_blocks():
    board = np.array([[0, 1], [1, 0]]).reshape(2, 2, 1)
    out = resize_slices(LabelGrid3D.from_array(board), (4, 4)).voxels[:, :, 0]
    expected = np.array([[board[i // 2, j // 2, 0] for j in range(4)] for i in range(4)])
    np.testing.assert_array_equal(out, expected)


def test_center_crop_offsets():
    g = VoxelGrid3D.from_array(np.arange(256 * 256 * 2, dtype=float).reshape(256, 256, 2))
    out, rec = center_crop(g, (144, 144))
    assert rec.offsets == (56, 56)
    assert out.meta.dims == (144, 144, 2)
    np.testing.assert_array_equal(out.voxels, g.voxels[56:200, 56:200])


def test_center_crop_odd_and_identity():
    g = VoxelGrid3D.from_array(np.zeros((145, 150, 1)))
    _, rec = center_crop(g, (144, 144))
    assert rec.offsets == (0, 3)
    _, rec = center_crop(VoxelGrid3D.from_array(np.zeros((144, 144, 1))), (144, 144))
    assert rec.offsets == (0, 0)


def test_crop_larger_than_input():
    with pytest.raises(GridError, match="larger"):
        center_crop(VoxelGrid3D.from_array(np.zeros((100, 100, 2))), (144, 144))


def test_roundtrip_256_exact():
    rng = np.random.default_rng(5)
    v = np.zeros((256, 256, 3), dtype=np.int32)
    v[60:195, 70:190] = rng.integers(0, 4, size=(135, 120, 3))
    lab = LabelGrid3D.from_array(v, (1.25, 1.25, 10.0))
    cropped, rec = preprocess_volume(lab)
    back = reconstruct_inverse(cropped, rec)
    np.testing.assert_array_equal(back.voxels, v)
    assert back.meta.spacing == (1.25, 1.25, 10.0)


def test_all_background_reconstruct():
    lab = LabelGrid3D.from_array(np.zeros((200, 180, 2), dtype=int))
    cropped, rec = preprocess_volume(lab)
    cropped = cropped.replace(np.zeros_like(cropped.voxels))
    back = reconstruct_inverse(cropped, rec)
    assert back.meta.dims == (200, 180, 2)
    assert not back.voxels.any()


def test_single_voxel_lands_at_offset():
    rec = CropRecord((256, 256), (56, 56), (144, 144), (256, 256), (1.0, 1.0, 1.0), "nearest")
    v = np.zeros((144, 144, 1), dtype=int)
    v[0, 0, 0] = 2
    back = reconstruct_inverse(LabelGrid3D.from_array(v), rec)
    assert np.argwhere(back.voxels).tolist() == [[56, 56, 0]]


def test_reconstruct_dimension_mismatch():
    rec = CropRecord((256, 256), (56, 56), (144, 144), (256, 256), (1.0, 1.0, 1.0), "nearest")
    with pytest.raises(GridError):
        reconstruct_inverse(LabelGrid3D.from_array(np.zeros((140, 144, 1), dtype=int)), rec)


def test_crop_record_json_roundtrip():
    _, rec = preprocess_volume(VoxelGrid3D.from_array(np.zeros((100, 120, 2)), (2.0, 2.0, 9.0)))
    assert CropRecord.from_json(rec.to_json()) == rec
    assert rec.original_inplane_dims == (100, 120)
    assert rec.interp_used == "linear"


def test_reconstruct_probabilities_simplex():
    rng = np.random.default_rng(7)
    p = rng.random((144, 144, 2, 4))
    prob = ProbGrid4D.from_array(p / p.sum(axis=3, keepdims=True))
    rec = CropRecord((256, 256), (56, 56), (144, 144), (200, 210), (1.0, 1.0, 1.0), "linear")
    out = reconstruct_probabilities(prob, rec)
    assert out.meta.dims == (200, 210, 2)
    np.testing.assert_allclose(out.voxels.sum(axis=3), 1.0, atol=1e-12)
    # far corners are pure background padding
    np.testing.assert_array_equal(out.voxels[0, 0, 0], [1, 0, 0, 0])


dims3 = st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 4))


@settings(max_examples=60, deadline=None)
@given(src=dims3, dst=dims3, seed=st.integers(0, 2**32 - 1))
def test_nearest_preserves_label_set(src, dst, seed):
    rng = np.random.default_rng(seed)
    lab = LabelGrid3D.from_array(rng.choice([0, 2, 3], size=src))
    out = resample_volume(lab, dst, "nearest")
    assert set(np.unique(out.voxels)) <= set(np.unique(lab.voxels))


@settings(max_examples=60, deadline=None)
@given(src=dims3, dst=dims3, seed=st.integers(0, 2**32 - 1))
def test_linear_within_input_range(src, dst, seed):
    rng = np.random.default_rng(seed)
    g = VoxelGrid3D.from_array(rng.normal(0, 50, size=src))
    out = resample_volume(g, dst, "linear").voxels
    assert out.min() >= g.voxels.min() and out.max() <= g.voxels.max()


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(4, 40), ny=st.integers(4, 40), cx=st.integers(1, 40), cy=st.integers(1, 40),
       seed=st.integers(0, 2**32 - 1))
def test_crop_then_pad(nx, ny, cx, cy, seed):
    cx, cy = min(cx, nx), min(cy, ny)
    rng = np.random.default_rng(seed)
    v = rng.integers(0, 4, size=(nx, ny, 2))
    lab = LabelGrid3D.from_array(v)
    cropped, rec = center_crop(lab, (cx, cy))
    back = reconstruct_inverse(cropped, rec).voxels
    ox, oy = rec.offsets
    window = np.zeros_like(v, dtype=bool)
    window[ox:ox + cx, oy:oy + cy] = True
    np.testing.assert_array_equal(back[window], v[window])
    assert not back[~window].any()


def test_repeat_resample_consistent():
    g = VoxelGrid3D.from_array(np.random.default_rng(3).normal(size=(5, 6, 2)))
    a = resample_volume(g, (9, 4, 2))
    np.testing.assert_array_equal(resample_volume(a, (9, 4, 2)).voxels, a.voxels)
