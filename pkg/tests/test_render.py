import numpy as np
import pytest

from covox.depth import DepthBins, DepthMap, DepthSource
from covox.metrics import Detection
from covox.render import (
    depth_map_gray,
    draw_box,
    mask_image,
    occupancy_image,
    render_bev,
    write_pgm16,
    write_ppm,
)
from covox.voxel import GridSpec

GRID = GridSpec((-10.0, 10.0), (-10.0, 10.0), (0.0, 4.0), 32, 32, 4, 8)


def test_pgm_header_and_payload(tmp_path):
    img = np.arange(12, dtype=np.uint16).reshape(3, 4)
    path = write_pgm16(tmp_path / "x.pgm", img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n4 3\n65535\n")
    assert raw[len(b"P5\n4 3\n65535\n"):] == img.astype(">u2").tobytes()


def test_ppm_header_and_size(tmp_path):
    img = np.zeros((5, 7, 3), dtype=np.uint8)
    path = write_ppm(tmp_path / "x.ppm", img)
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n7 5\n255\n")
    assert len(raw) == len(b"P6\n7 5\n255\n") + 5 * 7 * 3


def test_pgm_rejects_wrong_dtype(tmp_path):
    with pytest.raises(ValueError):
        write_pgm16(tmp_path / "x.pgm", np.zeros((2, 2), dtype=np.uint8))


def test_depth_gray_scaling():
    bins = DepthBins(1.0, 17.0, 16)
    dmap = DepthMap.empty(bins, 4, 4)
    dmap.bin_idx[1, 2] = 5
    dmap.source[1, 2] = DepthSource.EGO_PROJECTED
    gray = depth_map_gray(dmap)
    assert gray[1, 2] == round(5 * 65535 / 15)
    assert gray[0, 0] == 0


def test_mask_image_binary():
    mask = np.array([[1, 0], [0, 1]])
    img = mask_image(mask)
    assert img[0, 0].tolist() == [255, 255, 255]
    assert img[0, 1].tolist() == [0, 0, 0]


def test_occupancy_image_all_zero():
    img = occupancy_image(np.zeros((4, 4)))
    assert np.all(img == 0)


def test_render_bev_draws_boxes():
    occ = np.zeros((GRID.nx, GRID.ny))
    det = Detection(center=(0.0, 0.0), yaw=0.3, extent=(6.0, 3.0))
    img = render_bev(occ, GRID, [det], [])
    green = (img[:, :, 1] > img[:, :, 0]) & (img[:, :, 1] > 0)
    assert np.count_nonzero(green) > 10


def test_draw_box_out_of_grid_is_noop():
    img = occupancy_image(np.zeros((GRID.nx, GRID.ny)))
    before = img.copy()
    draw_box(img, GRID, Detection(center=(500.0, 0.0), yaw=0.0, extent=(2.0, 1.0)), (255, 0, 0))
    assert np.array_equal(img, before)
