import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tfd.imageio import (
    Image8,
    PatchPair,
    PatchSet,
    PPMError,
    encode_ppm,
    extract_patches,
    from_tensor,
    load_ppm,
    parse_ppm,
    save_ppm,
    to_tensor,
)


def test_parse_p6_bytes():
    img = parse_ppm(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
    assert (img.width, img.height, img.channels) == (2, 1, 3)
    assert img.data == bytes([255, 0, 0, 0, 255, 0])


def test_parse_p5_single_sample():
    img = parse_ppm(b"P5 1 1 255\n" + bytes([128]))
    assert (img.width, img.height, img.channels) == (1, 1, 1)
    assert img.data == bytes([128])


def test_header_comments_allowed():
    img = parse_ppm(b"P5\n# made by hand\n2 # width\n1\n255\n" + bytes([1, 2]))
    assert img.data == bytes([1, 2])


@pytest.mark.parametrize(
    "blob, fragment",
    [
        (b"P6\n1 1\n65535\n" + bytes(6), "unsupported maxval"),
        (b"P3\n1 1\n255\n" + bytes(3), "malformed magic"),
        (b"P6\n2 2\n255\n" + bytes(5), "truncated body"),
        (b"P6\n1 1\n255\n" + bytes(4), "trailing bytes"),
        (b"P6\n1", "truncated header"),
    ],
)
def test_parse_errors_name_offset(blob, fragment):
    with pytest.raises(PPMError, match=fragment) as info:
        parse_ppm(blob)
    assert "byte offset" in str(info.value)


def test_grayscale_zero_body_is_single_byte(tmp_path):
    path = tmp_path / "z.pgm"
    save_ppm(Image8(np.zeros((1, 1, 1), np.uint8)), path)
    blob = path.read_bytes()
    assert blob.endswith(b"255\n\x00")
    assert len(blob) - blob.index(b"255\n") - 4 == 1


def test_checkerboard_byte_layout():
    px = np.zeros((2, 2, 3), np.uint8)
    px[0, 0] = px[1, 1] = 255
    body = encode_ppm(Image8(px))[-12:]
    assert body == bytes([255] * 3 + [0] * 3 + [0] * 3 + [255] * 3)


def test_save_error_has_path(tmp_path):
    target = tmp_path / "missing" / "x.ppm"
    with pytest.raises(OSError, match="missing"):
        save_ppm(Image8(np.zeros((1, 1, 3), np.uint8)), target)


image_arrays = st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3])).flatmap(
    lambda s: arrays(np.uint8, s)
)


@given(image_arrays)
@settings(max_examples=50, deadline=None)
def test_save_load_roundtrip(tmp_path_factory, px):
    img = Image8(px)
    path = tmp_path_factory.mktemp("rt") / "img.ppm"
    save_ppm(img, path)
    assert load_ppm(path) == img


@given(image_arrays)
@settings(max_examples=50, deadline=None)
def test_tensor_roundtrip_exact(px):
    img = Image8(px)
    assert from_tensor(to_tensor(img)) == img


@given(image_arrays, st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_loader_rejects_size_disagreement(px, delta):
    img = Image8(px)
    blob = encode_ppm(img)
    with pytest.raises(PPMError):
        parse_ppm(blob[:-delta])
    with pytest.raises(PPMError):
        parse_ppm(blob + bytes(delta))


def test_to_tensor_values():
    t = to_tensor(Image8(np.array([[[255], [0], [128]]], np.uint8)))
    assert t.shape == (1, 1, 1, 3)
    assert t.data[0, 0, 0, 0] == 1.0
    assert t.data[0, 0, 0, 1] == 0.0
    assert t.data[0, 0, 0, 2] == pytest.approx(128 / 255, abs=1e-15)


def test_quantize_rounds_half_up():
    out = from_tensor(np.array([[[[0.5 / 255, 1.5 / 255, 2.4999 / 255, 1.2, -0.3]]]]))
    assert out.pixels.ravel().tolist() == [1, 2, 2, 255, 0]


def test_patch_counts_and_offsets():
    img = Image8(np.arange(48 * 48, dtype=np.int64).reshape(48, 48) % 251)
    assert len(extract_patches(Image8(np.zeros((64, 64, 3), np.uint8)), 32, 32)) == 4
    single = Image8(np.zeros((32, 32, 1), np.uint8))
    assert extract_patches(single, 32, 32)[0] == single
    patches = extract_patches(img, 32, 16)
    assert len(patches) == 4
    for p, (y, x) in zip(patches, [(0, 0), (0, 16), (16, 0), (16, 16)]):
        assert np.array_equal(p.pixels, img.pixels[y : y + 32, x : x + 32])
    with pytest.raises(ValueError):
        extract_patches(img, 64, 16)


@given(st.integers(8, 40), st.integers(8, 40), st.integers(1, 8), st.integers(1, 9), st.integers(1, 50))
@settings(max_examples=60, deadline=None)
def test_patch_count_formula(h, w, patch, stride, limit):
    img = Image8(np.zeros((h, w, 1), np.uint8))
    n = ((h - patch) // stride + 1) * ((w - patch) // stride + 1)
    assert len(extract_patches(img, patch, stride, limit)) == min(n, limit)


def test_patchset_scale_invariant():
    ps = PatchSet(4)
    lr = Image8(np.zeros((2, 2, 3), np.uint8))
    ps.append(PatchPair(lr, Image8(np.zeros((8, 8, 3), np.uint8)), 1))
    with pytest.raises(ValueError):
        ps.append(PatchPair(lr, Image8(np.zeros((6, 8, 3), np.uint8)), 0))
    assert ps.labels().tolist() == [1]
