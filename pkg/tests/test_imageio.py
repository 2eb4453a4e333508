import numpy as np
import pytest

from poseadv.errors import FormatError
from poseadv.imageio import decode_ppm, encode_ppm, quantize, read_ppm, write_ppm


def test_white_pixel_bytes():
    data = b"P6\n1 1\n255\n\xff\xff\xff"
    np.testing.assert_array_equal(decode_ppm(data), [[[1.0, 1.0, 1.0]]])
    assert encode_ppm(np.ones((1, 1, 3))) == data


def test_round_trip_is_bit_identical(tmp_path):
    img = quantize(np.random.default_rng(0).random((7, 5, 3))) / 255.0
    write_ppm(img, tmp_path / "a.ppm")
    back = read_ppm(tmp_path / "a.ppm")
    assert np.array_equal(back, img) and back.shape == (7, 5, 3)
    write_ppm(back, tmp_path / "b.ppm")
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_quantize_clamps_and_rounds():
    assert quantize(np.array([-1.0, 0.0, 0.5, 1.0, 7.0])).tolist() == [0, 0, 128, 255, 255]


def test_header_comments():
    data = b"P6 # made by hand\n# another\n2 1\n255\n" + bytes(range(6))
    assert decode_ppm(data).shape == (1, 2, 3)


@pytest.mark.parametrize("data", [
    b"P3\n1 1\n255\n255 255 255\n",
    b"P6\n1 1\n65535\n" + b"\x00" * 6,
    b"P6\n2 2\n255\n" + b"\x00" * 11,
    b"P6\n1 1\n255\n" + b"\x00" * 4,
    b"P6\n1 1\n255",
    b"P6\n1 x\n255\n\x00\x00\x00",
    b"P6\n0 1\n255\n",
    b"",
])
def test_rejects_bad_files(data):
    with pytest.raises(FormatError):
        decode_ppm(data)


def test_rejects_bad_shape():
    with pytest.raises(FormatError):
        encode_ppm(np.zeros((2, 2)))
