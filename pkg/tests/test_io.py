import numpy as np
import pytest
from PIL import Image

from vesselreg import io as rio


def test_gray_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (12, 9)).astype(float)
    rio.write_gray(tmp_path / "a.png", img)
    assert np.array_equal(rio.read_gray(tmp_path / "a.png"), img)


def test_rgb_is_converted(tmp_path):
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[..., 0], rgb[..., 1], rgb[..., 2] = 100, 150, 200
    rio.write_rgb(tmp_path / "c.png", rgb)
    assert np.all(rio.read_gray(tmp_path / "c.png") == 141)


def test_tiff(tmp_path):
    Image.fromarray(np.full((5, 6), 77, np.uint8)).save(tmp_path / "s.tif")
    assert np.all(rio.read_gray(tmp_path / "s.tif") == 77)


def test_mask_round_trip(tmp_path):
    m = np.zeros((6, 6), bool)
    m[1:3, 2:5] = True
    rio.write_mask(tmp_path / "m.png", m)
    assert np.array_equal(rio.read_mask(tmp_path / "m.png"), m)
    assert set(np.unique(np.asarray(Image.open(tmp_path / "m.png")))) == {0, 255}


def test_labels_round_trip(tmp_path):
    lab = np.array([[0, 1], [3, 2]])
    rio.write_labels(tmp_path / "l.png", lab)
    assert np.array_equal(rio.read_labels(tmp_path / "l.png"), lab)


def test_numeric_ordering(tmp_path):
    for name in ["s_10.png", "s_2.png", "s_1.png", "notes.txt"]:
        if name.endswith(".png"):
            rio.write_gray(tmp_path / name, np.zeros((3, 3)))
        else:
            (tmp_path / name).write_text("x")
    assert [p.name for p in rio.list_slices(tmp_path)] == ["s_1.png", "s_2.png", "s_10.png"]


def test_missing_and_empty_dirs(tmp_path):
    with pytest.raises(rio.RasterError, match="does not exist"):
        rio.list_slices(tmp_path / "nope")
    with pytest.raises(rio.RasterError, match="no PNG"):
        rio.list_slices(tmp_path)


def test_unreadable_file_named(tmp_path):
    (tmp_path / "bad_0.png").write_bytes(b"not a png")
    with pytest.raises(rio.RasterError, match="bad_0.png"):
        rio.read_stack(tmp_path)


def test_dimension_mismatch_names_file(tmp_path):
    rio.write_gray(tmp_path / "s_0.png", np.zeros((4, 4)))
    rio.write_gray(tmp_path / "s_1.png", np.zeros((4, 5)))
    with pytest.raises(rio.RasterError, match="s_1.png"):
        rio.read_stack(tmp_path)
