import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasnet import _kernels
from sasnet.imaging import (
    as_hwc,
    error_map,
    fd_gradient,
    load_png,
    normalize,
    pixel_coords,
    save_png,
    to_gray,
    toy_image,
)
from sasnet.metrics import (
    PSNR_CAP,
    CannyParams,
    EdgePartition,
    MetricReport,
    canny,
    edge_partition,
    gaussian_window,
    noisiness,
    psnr,
    psnr_edge,
    ssim,
)

# -- imaging -------------------------------------------------------------------------


def test_pixel_coords_margin_and_order():
    c = pixel_coords(512, 512)
    assert c[0, 0] == -0.94814453125 and c[0, 1] == -0.94814453125
    assert c[1, 0] > c[0, 0] and c[1, 1] == c[0, 1]  # x varies fastest
    assert np.abs(c).max() < 0.95
    c2 = pixel_coords(4, 3, margin=1.0)
    assert c2.shape == (12, 2)
    np.testing.assert_allclose(c2[:4, 0], [-0.75, -0.25, 0.25, 0.75])
    with pytest.raises(ValueError):
        pixel_coords(4, 4, margin=1.5)


def test_pixel_coords_scale_and_shift():
    fine = pixel_coords(4, 4, margin=1.0, scale=2)
    assert fine.shape == (64, 2)
    shifted = pixel_coords(4, 4, margin=1.0, shift=0.125)
    np.testing.assert_allclose(shifted[0], [-0.75 + 0.0625, -0.75 + 0.0625])


def test_toy_image_regression():
    img = toy_image(256)
    assert img.shape == (256, 256, 1)
    assert set(np.unique(img)) == {0.0, 1.0}
    assert img.mean() == 0.31805419921875  # 20844 ones, brute-force per-pixel count
    np.testing.assert_array_equal(img[:, :, 0], img[:, :, 0].T)  # radial


def test_gray_conversion_weights():
    rgb = np.zeros((2, 2, 3))
    rgb[..., 1] = 1.0
    np.testing.assert_allclose(to_gray(rgb), 0.587)
    assert as_hwc(np.zeros((3, 3))).shape == (3, 3, 1)
    with pytest.raises(ValueError):
        as_hwc(np.zeros((3, 3, 2)))


def test_fd_gradient_linear_ramp_units():
    # intensity rises by 1/255 per pixel along x
    ramp = np.tile(np.arange(32) / 255.0, (16, 1))
    g = fd_gradient(ramp)
    np.testing.assert_allclose(g[..., 0], 1 / 255.0, atol=1e-15)
    np.testing.assert_allclose(g[..., 1], 0.0, atol=1e-15)


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(9, 7, 3)) / 255.0
    save_png(tmp_path / "a.png", img)
    np.testing.assert_allclose(load_png(tmp_path / "a.png"), img, atol=1e-12)
    save_png(tmp_path / "g.png", img[:, :, :1])
    assert load_png(tmp_path / "g.png").shape == (9, 7, 1)
    assert load_png(tmp_path / "a.png", size=5).shape == (5, 5, 3)


def test_error_map_and_normalize():
    e = error_map(np.zeros((4, 4, 1)), np.full((4, 4, 1), 0.5))
    assert e.shape == (4, 4, 3) and np.all((e >= 0) & (e <= 1))
    assert np.all(normalize(np.full((3, 3), 2.0)) == 0)
    n = normalize(np.array([1.0, 3.0, 2.0]))
    np.testing.assert_allclose(n, [0, 1, 0.5])


# -- PSNR / SSIM --------------------------------------------------------------------


def test_psnr_values():
    a = np.zeros((4, 4))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, np.full((4, 4), 0.1)) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def brute_ssim(x, y, size=11, sigma=1.5):
    win = gaussian_window(size, sigma)
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a, b = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            ma, mb = (win * a).sum(), (win * b).sum()
            va = (win * (a - ma) ** 2).sum()
            vb = (win * (b - mb) ** 2).sum()
            cov = (win * (a - ma) * (b - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_bruteforce_windows():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(16, 14))
    y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
    assert ssim(x, y) == pytest.approx(brute_ssim(x, y), abs=1e-12)
    assert ssim(x, x) == pytest.approx(1.0)


def test_ssim_matches_skimage():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(40, 40))
    y = np.clip(x + rng.normal(scale=0.05, size=x.shape), 0, 1)
    ref = skm.structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
    assert ssim(x, y) == pytest.approx(ref, abs=1e-9)


def test_ssim_rejects_tiny_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))


# -- Canny / partition ----------------------------------------------------------------


def test_canny_step_edge_is_thin_and_located():
    img = np.zeros((32, 32))
    img[:, 16:] = 1.0
    e = canny(img)
    cols = np.unique(np.nonzero(e)[1])
    assert cols.tolist() == [16]
    assert e[4:-4].sum(axis=1).max() == 1  # one pixel wide per row


def test_canny_blank_image_has_no_edges():
    assert not canny(np.full((20, 20), 0.3)).any()
    part = edge_partition(np.full((20, 20), 0.3))
    assert not part.edge.any()
    assert math.isnan(psnr_edge(np.zeros((20, 20)), np.zeros((20, 20)), part))


def test_dilation_radius():
    img = np.zeros((40, 40))
    img[:, 20:] = 1.0
    thin = edge_partition(img, CannyParams(dilation_radius=0)).edge
    wide = edge_partition(img, CannyParams(dilation_radius=3)).edge
    assert thin.sum() < wide.sum()
    col = int(np.nonzero(thin[10])[0][0])
    assert np.nonzero(wide[10])[0].tolist() == list(range(col - 3, col + 4))


def test_toy_edge_pixel_count_regression():
    # frozen after the first verified run
    part = edge_partition(to_gray(toy_image(256)))
    assert int(part.edge.sum()) == 16628


def test_nms_paths_agree_on_image():
    rng = np.random.default_rng(2)
    mag = rng.uniform(size=(30, 30))
    gx, gy = rng.normal(size=(2, 30, 30))
    np.testing.assert_array_equal(_kernels.nms(mag, gx, gy), _kernels.nms_numpy(mag, gx, gy))


# -- noisiness ----------------------------------------------------------------------


def test_noisiness_identity_is_zero():
    g = np.random.default_rng(0).normal(size=(10, 10, 2))
    part = EdgePartition(np.zeros((10, 10), dtype=bool))
    assert noisiness(g, g, part) == (0.0, 0.0)


def test_noisiness_strictly_monotone_in_noise():
    rng = np.random.default_rng(1)
    smooth_img = np.tile(np.linspace(0, 1, 64), (64, 1))
    gt_grad = fd_gradient(smooth_img)
    part = edge_partition(smooth_img)
    noise = rng.normal(size=smooth_img.shape)
    means = [noisiness(gt_grad, fd_gradient(smooth_img + eps * noise), part)[0] for eps in (0.01, 0.02, 0.04)]
    assert means[0] < means[1] < means[2]


def test_noisiness_ignores_edge_pixels():
    g = np.zeros((8, 8, 2))
    m = g.copy()
    edge = np.zeros((8, 8), dtype=bool)
    edge[:, :2] = True
    m[:, :2] = 5.0
    assert noisiness(g, m, EdgePartition(edge)) == (0.0, 0.0)
    with pytest.raises(ValueError):
        noisiness(g, m, EdgePartition(np.ones((8, 8), dtype=bool)))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 3.0))
def test_noisiness_of_uniform_offset(c):
    gt = np.zeros((6, 6, 2))
    model = np.zeros((6, 6, 2))
    model[..., 0] = c
    mean, std = noisiness(gt, model, EdgePartition(np.zeros((6, 6), dtype=bool)))
    assert mean == pytest.approx(c) and std == pytest.approx(0.0, abs=1e-12)


def test_metric_report_row_order():
    r = MetricReport(1, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0)
    assert r.row() == [1, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
    assert list(MetricReport.FIELDS) == ["step", "mse", "l1", "sparse", "psnr", "ssim", "psnr_edge",
                                         "noisiness_mean", "noisiness_std"]
