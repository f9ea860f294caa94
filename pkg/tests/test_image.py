import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lightarena.image import (
    CameraModel, ImageBuffer, PNMFormatError, gaussian_blur, gaussian_kernel, load_pnm,
    render_camera_view, save_pnm, sobel_gradients,
)


def _write(path, raw: bytes):
    path.write_bytes(raw)
    return path


# -- PNM ---------------------------------------------------------------------

def test_load_p5_verbatim(tmp_path):
    img = load_pnm(_write(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 128, 7])))
    assert (img.width, img.height, img.channels) == (2, 2, 1)
    assert img.samples.tolist() == [0, 255, 128, 7]


def test_load_p6_verbatim(tmp_path):
    img = load_pnm(_write(tmp_path / "a.ppm", b"P6\n1 1\n255\n" + bytes([255, 0, 0])))
    assert (img.width, img.height, img.channels) == (1, 1, 3)
    assert img.samples.tolist() == [255, 0, 0]


def test_load_accepts_comments_and_mixed_whitespace(tmp_path):
    raw = b"P5 # comment\n2\t1 # another\n255\n" + bytes([9, 10])
    assert load_pnm(_write(tmp_path / "c.pgm", raw)).samples.tolist() == [9, 10]


@pytest.mark.parametrize("raw, token", [
    (b"P4\n1 1\n255\n\x00", "P4"),
    (b"P5\n2 x\n255\n\x00\x00", "x"),
    (b"P5\n1 1\n65535\n\x00\x00", "65535"),
])
def test_load_rejects_bad_header_naming_token(tmp_path, raw, token):
    with pytest.raises(PNMFormatError, match=token):
        load_pnm(_write(tmp_path / "bad.pgm", raw))


def test_load_rejects_truncated_payload(tmp_path):
    with pytest.raises(PNMFormatError, match="truncated"):
        load_pnm(_write(tmp_path / "t.pgm", b"P5\n2 2\n255\n\x00\x01"))


def test_save_header_and_size(tmp_path):
    path = tmp_path / "s.pgm"
    save_pnm(ImageBuffer.from_samples(2, 2, 1, [0, 255, 128, 7]), path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert len(raw) == len(b"P5\n2 2\n255\n") + 4
    assert raw[-4:] == bytes([0, 255, 128, 7])


def test_save_p6_header(tmp_path):
    path = tmp_path / "s.ppm"
    save_pnm(ImageBuffer.from_samples(1, 1, 3, [1, 2, 3]), path)
    assert path.read_bytes() == b"P6\n1 1\n255\n\x01\x02\x03"


def test_two_channel_buffer_is_rejected():
    with pytest.raises(ValueError):
        ImageBuffer.from_samples(2, 2, 2, np.zeros(8))
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 2), np.uint8))


def test_save_reports_path_on_io_failure(tmp_path):
    target = tmp_path / "missing" / "x.pgm"
    with pytest.raises(OSError, match="missing"):
        save_pnm(ImageBuffer.from_samples(1, 1, 1, [0]), target)


def test_buffer_is_read_only():
    img = ImageBuffer.from_samples(2, 1, 1, [1, 2])
    with pytest.raises(ValueError):
        img.data[0, 0] = 5


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.data())
def test_pnm_round_trip_property(tmp_path_factory, w, h, c, data):
    samples = data.draw(arrays(np.uint8, w * h * c))
    img = ImageBuffer.from_samples(w, h, c, samples)
    path = tmp_path_factory.mktemp("rt") / ("x.ppm" if c == 3 else "x.pgm")
    save_pnm(img, path)
    assert load_pnm(path) == img


# -- blur --------------------------------------------------------------------

def test_blur_constant_is_fixed_point():
    img = ImageBuffer(np.full((7, 9), 77, np.uint8))
    for sigma, k in [(0.5, 3), (1.0, 5), (3.0, 9)]:
        assert np.all(gaussian_blur(img, sigma, k).data == 77)


def test_blur_impulse_center_matches_independent_kernel():
    # independent oracle: 2-D weight at the centre is the product of 1-D centre weights
    x = np.array([-2, -1, 0, 1, 2], float)
    w = np.exp(-x ** 2 / 2.0)
    w /= w.sum()
    k00 = w[2] * w[2]
    img = np.zeros((9, 9), np.uint8)
    img[4, 4] = 255
    out = gaussian_blur(ImageBuffer(img), 1.0, 5)
    assert out.data[4, 4] == round(255 * k00)
    assert abs(int(out.data.sum()) - 255) <= 25  # rounding of up to 25 taps


def test_blur_ksize_one_is_identity():
    rng = np.random.default_rng(0)
    img = ImageBuffer(rng.integers(0, 256, (6, 5), dtype=np.uint8))
    assert gaussian_blur(img, 1.0, 1) == img


@pytest.mark.parametrize("sigma, k", [(1.0, 4), (1.0, 0), (0.0, 3), (-1.0, 3)])
def test_blur_rejects_bad_parameters(sigma, k):
    with pytest.raises(ValueError):
        gaussian_blur(ImageBuffer(np.zeros((5, 5), np.uint8)), sigma, k)


def test_blur_kernel_sums_to_one():
    for sigma, k in [(0.3, 1), (1, 5), (2.5, 11)]:
        assert gaussian_kernel(sigma, k).sum() == pytest.approx(1.0, abs=1e-15)


def test_blur_clamps_borders():
    # replicate border: a left-right step stays a step at the border rows
    img = np.zeros((5, 8), np.uint8)
    img[:, 4:] = 200
    out = gaussian_blur(ImageBuffer(img), 1.0, 5).data
    assert np.all(out[:, 0] == 0) and np.all(out[:, -1] == 200)
    assert np.all(out[0] == out[2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 255), st.floats(0.3, 4.0), st.sampled_from([3, 5, 7]))
def test_blur_preserves_interior_impulse_mass(level, sigma, k):
    img = np.zeros((15, 15), np.uint8)
    img[7, 7] = level
    out = gaussian_blur(ImageBuffer(img), sigma, k)
    # each of the k*k taps rounds by at most 1/2
    assert abs(int(out.data.sum()) - level) <= k * k / 2


# -- sobel -------------------------------------------------------------------

def test_sobel_constant_is_zero():
    g = sobel_gradients(ImageBuffer(np.full((5, 6), 123, np.uint8)))
    assert not g.gx.any() and not g.gy.any() and not g.mag.any()


def test_sobel_horizontal_ramp():
    img = np.tile(np.arange(10, dtype=np.uint8), (6, 1))
    g = sobel_gradients(ImageBuffer(img))
    assert np.all(g.gx[1:-1, 1:-1] == 8)
    assert np.all(g.gy == 0)


def test_sobel_vertical_step_is_horizontal_gradient():
    img = np.zeros((7, 8), np.uint8)
    img[:, 4:] = 100
    g = sobel_gradients(ImageBuffer(img))
    assert np.all(g.gy[1:-1] == 0)
    assert np.all(g.gx[:, 3:5] > 0)


def test_sobel_planes_match_source_and_magnitude():
    rng = np.random.default_rng(1)
    g = sobel_gradients(ImageBuffer(rng.integers(0, 256, (9, 11), dtype=np.uint8)))
    for p in (g.gx, g.gy, g.mag):
        assert p.shape == (9, 11)
    np.testing.assert_allclose(g.mag, np.hypot(g.gx, g.gy), rtol=1e-12)
    assert np.all(g.mag >= 0)


def test_sobel_matches_hand_convolution():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 256, (6, 7)).astype(float)
    p = np.pad(a, 1, mode="edge")
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], float)
    gx = sum(kx[i, j] * p[i:i + 6, j:j + 7] for i in range(3) for j in range(3))
    gy = sum(kx.T[i, j] * p[i:i + 6, j:j + 7] for i in range(3) for j in range(3))
    g = sobel_gradients(ImageBuffer(a.astype(np.uint8)))
    np.testing.assert_array_equal(g.gx, gx)
    np.testing.assert_array_equal(g.gy, gy)


def test_sobel_rejects_small_images():
    with pytest.raises(ValueError):
        sobel_gradients(ImageBuffer(np.zeros((2, 5), np.uint8)))


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(3, 12), st.integers(0, 255))
def test_sobel_constant_property(w, h, v):
    g = sobel_gradients(ImageBuffer(np.full((h, w), v, np.uint8)))
    assert not g.mag.any()


# -- camera ------------------------------------------------------------------

def _cam(**kw):
    base = dict(width=320, height=240, background_level=40, robot_body_level=200)
    base.update(kw)
    return CameraModel(**base)


def test_empty_scene_is_constant_background():
    img = render_camera_view([], _cam(), 3)
    assert np.all(img.data == 40)


def test_disc_inside_and_outside():
    img = render_camera_view([((100, 120), 20)], _cam(), 0)
    assert img.data[120, 100] == 200
    assert img.data[150, 100] == 40


def test_rim_is_antialiased_between_levels():
    img = render_camera_view([((100.3, 120.0), 20)], _cam(), 0).data
    rim = img[120, 78:83]
    assert rim.min() >= 40 and rim.max() <= 200
    assert np.any((rim > 40) & (rim < 200))


def test_render_deterministic_and_seed_sensitive():
    cam = _cam(pixel_noise_sigma=5.0, vignette_strength=0.3)
    scene = [((50, 60), 10), ((200, 100), 15)]
    a = render_camera_view(scene, cam, 42)
    assert a == render_camera_view(scene, cam, 42)
    assert a != render_camera_view(scene, cam, 43)


def test_noise_has_requested_spread():
    img = render_camera_view([], _cam(pixel_noise_sigma=4.0, background_level=128), 5).data.astype(float)
    assert abs(img.mean() - 128) < 0.1
    assert 3.8 < img.std() < 4.2


def test_later_robot_overdraws():
    cam = _cam(robot_body_level=200)
    a = render_camera_view([((100, 100), 10), ((105, 100), 10)], cam, 0)
    assert a.data[100, 100] == 200


def test_out_of_bounds_robot_reports_index():
    with pytest.raises(ValueError, match=r"\[1\]"):
        render_camera_view([((10, 10), 5), ((1000, 10), 5)], _cam(), 0)
    with pytest.raises(ValueError, match="radii"):
        render_camera_view([((10, 10), 0)], _cam(), 0)


def test_camera_requires_contrast():
    with pytest.raises(ValueError):
        CameraModel(background_level=50, robot_body_level=50)
    with pytest.raises(ValueError):
        CameraModel(pixel_noise_sigma=-1)


def test_world_to_camera_scales_position_and_radius():
    H = np.diag([0.5, 0.5, 1.0])
    img = render_camera_view([((200, 240), 40)], _cam(world_to_camera=H), 0).data
    assert img[120, 100] == 200 and img[120, 119] == 200 and img[120, 122] == 40


@settings(max_examples=15, deadline=None)
@given(st.floats(20, 300), st.floats(20, 220), st.floats(2, 15), st.integers(0, 2**63 - 1))
def test_render_determinism_property(x, y, r, seed):
    cam = _cam(pixel_noise_sigma=3.0)
    assert render_camera_view([((x, y), r)], cam, seed) == render_camera_view([((x, y), r)], cam, seed)
