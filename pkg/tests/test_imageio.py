import numpy as np
import pytest

from tgv2.imageio import (
    PGMError,
    encode_pgm,
    parse_pgm,
    read_kernel,
    read_pgm,
    write_kernel,
    write_pgm,
)
from tgv2.operators import ConvolutionKernel, gaussian_kernel


def test_p5_header_example():
    data = b"P5 3 2 255\n" + bytes([0, 51, 102, 153, 204, 255])
    u = parse_pgm(data)
    assert u.shape == (2, 3)
    np.testing.assert_allclose(u.ravel(), np.array([0, 51, 102, 153, 204, 255]) / 255)


def test_16bit_roundtrip_quantization(tmp_path, rng):
    u = rng.random((7, 9))
    path = tmp_path / "a.pgm"
    write_pgm(u, path, maxval=65535)
    v = read_pgm(path)
    assert np.abs(u - v).max() <= 1 / (2 * 65535) + 1e-15
    write_pgm(v, path, maxval=65535)
    np.testing.assert_array_equal(read_pgm(path), v)


@pytest.mark.parametrize("maxval", [255, 65535])
def test_p2_and_p5_agree(tmp_path, rng, maxval):
    u = rng.random((5, 4))
    write_pgm(u, tmp_path / "b.pgm", maxval, binary=True)
    write_pgm(u, tmp_path / "a.pgm", maxval, binary=False)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), read_pgm(tmp_path / "b.pgm"))


def test_write_rounds_half_away_and_clamps():
    u = np.array([[0.5 / 255, 1.5 / 255, -0.2, 1.7]])
    data = encode_pgm(u, 255)
    assert data.endswith(bytes([1, 2, 0, 255]))


def test_comments_in_header():
    data = b"P2\n# made by hand\n2 1 # width height\n255\n10 20\n"
    np.testing.assert_allclose(parse_pgm(data), [[10 / 255, 20 / 255]])


@pytest.mark.parametrize("data, offset", [
    (b"P6 1 1 255\n\x00", 0),
    (b"P5 2 2 255\n\x00\x01\x02", 14),
    (b"P5 2 2 100\n\x00\x01\x02\x03", 7),
    (b"P2 2 1 255\n7", 12),
    (b"P2 2 x 255\n", 5),
    (b"P2 2 1 255\n300 1", 11),
])
def test_parse_errors_report_offsets(data, offset):
    with pytest.raises(PGMError) as exc:
        parse_pgm(data)
    assert exc.value.offset == offset
    assert f"byte offset {offset}" in str(exc.value)


def test_kernel_file_roundtrip(tmp_path):
    k = gaussian_kernel(1.2, 5, spacing=0.5)
    write_kernel(k, tmp_path / "k.txt")
    k2 = read_kernel(tmp_path / "k.txt")
    assert k2.spacing == 0.5
    np.testing.assert_array_equal(k2.weights, k.weights)


def test_kernel_file_format(tmp_path):
    (tmp_path / "k.txt").write_text("3 1 1.0\n0.25 0.5 0.25\n")
    k = read_kernel(tmp_path / "k.txt")
    assert isinstance(k, ConvolutionKernel)
    assert (k.height, k.width) == (1, 3)
    (tmp_path / "bad.txt").write_text("3 2 1.0\n0.25 0.5 0.25\n")
    with pytest.raises(ValueError):
        read_kernel(tmp_path / "bad.txt")
