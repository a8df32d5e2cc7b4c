import numpy as np
import pytest

from polarsep.fileio import (
    ImageIOError,
    decode_pfm,
    encode_pfm,
    read_image,
    read_pfm,
    write_pfm,
    write_png,
)


@pytest.mark.parametrize("channels", [1, 3])
def test_pfm_round_trip(tmp_path, rng, channels):
    img = rng.random((7, 5, channels)) * 4 - 1
    write_pfm(tmp_path / "a.pfm", img)
    back = read_pfm(tmp_path / "a.pfm")
    np.testing.assert_array_equal(back, img.astype(np.float32))


def test_pfm_header_and_row_order(rng):
    img = np.arange(6, dtype=np.float64).reshape(2, 3, 1)
    data = encode_pfm(img)
    assert data.startswith(b"Pf\n3 2\n-1.0\n")
    body = np.frombuffer(data[len(b"Pf\n3 2\n-1.0\n"):], dtype="<f4")
    # bottom row first
    np.testing.assert_array_equal(body, [3, 4, 5, 0, 1, 2])


def test_pfm_big_endian_read():
    img = np.array([[1.5, -2.0]], dtype=">f4")
    data = b"Pf\n2 1\n1.0\n" + img.tobytes()
    np.testing.assert_array_equal(decode_pfm(data)[..., 0], [[1.5, -2.0]])


def test_pfm_rejects_garbage():
    with pytest.raises(ImageIOError):
        decode_pfm(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ImageIOError):
        decode_pfm(b"PF\n4 4\n-1.0\n\x00\x00")


@pytest.mark.parametrize("bits", [8, 16])
@pytest.mark.parametrize("channels", [1, 3])
def test_png_round_trip_on_levels(tmp_path, rng, bits, channels):
    levels = 2**bits - 1
    img = rng.integers(0, levels + 1, size=(6, 9, channels)) / levels
    write_png(tmp_path / "a.png", img, bits)
    back = read_image(tmp_path / "a.png")
    np.testing.assert_array_equal(back, img)


def test_png_channel_order_is_rgb(tmp_path):
    import cv2

    img = np.zeros((1, 1, 3))
    img[0, 0, 0] = 1.0  # pure red
    write_png(tmp_path / "r.png", img)
    raw = cv2.imread(str(tmp_path / "r.png"))
    assert raw[0, 0].tolist() == [0, 0, 255]  # cv2 is BGR


def test_read_missing(tmp_path):
    with pytest.raises(ImageIOError):
        read_image(tmp_path / "nope.png")
