import numpy as np
import pytest
from scipy.linalg import sqrtm

from wae_lab.errors import ConfigError
from wae_lab.metrics import (METRIC_COLUMNS, GaussianFit, append_metrics, box_blur, fd_features, feature_map,
                             fit_gaussian, frechet_distance, mean_squared_cost, read_metrics, sharpness)

KERNEL = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=float)


def _loop_laplace_variance(img):
    """Direct 9-term enumeration per output pixel."""
    h, w = img.shape
    acts = []
    for i in range(h - 2):
        for j in range(w - 2):
            acts.append(sum(KERNEL[a, b] * img[i + a, j + b] for a in range(3) for b in range(3)))
    return float(np.var(acts))


def test_constant_image_has_zero_sharpness():
    assert sharpness(np.full((3, 6, 6), 0.4)) == 0.0


def test_impulse_matches_hand_convolution():
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    assert sharpness(img[None]) == pytest.approx(_loop_laplace_variance(img), rel=1e-15)
    assert sharpness(img[None]) == pytest.approx(20 / 9, rel=1e-15)


def test_random_images_match_loop_oracle():
    rng = np.random.default_rng(0)
    imgs = rng.uniform(size=(4, 7, 9))
    expected = np.mean([_loop_laplace_variance(im) for im in imgs])
    assert sharpness(imgs) == pytest.approx(expected, rel=1e-12)


def test_checkerboard_sharper_than_blurred():
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)[None]
    board = board * 0.5 + 0.25 * np.eye(8)[None]
    assert sharpness(board) > sharpness(box_blur(board))


def test_sharpness_shift_and_scale():
    rng = np.random.default_rng(1)
    imgs = rng.uniform(size=(5, 10, 10)) * 0.5
    base = sharpness(imgs)
    assert sharpness(imgs + 0.3) == pytest.approx(base, rel=1e-12)
    assert sharpness(imgs * 1.7) == pytest.approx(1.7 ** 2 * base, rel=1e-12)


def test_sharpness_flat_rows_and_channels():
    rng = np.random.default_rng(2)
    imgs = rng.uniform(size=(3, 6, 6))
    assert sharpness(imgs.reshape(3, 36)) == sharpness(imgs)
    rgb = np.repeat(imgs[..., None], 3, axis=-1)
    assert sharpness(rgb) == pytest.approx(sharpness(imgs), rel=1e-14)


def test_sharpness_rejects_small_images():
    with pytest.raises(ConfigError):
        sharpness(np.zeros((1, 2, 5)))


# --- Frechet distance ---------------------------------------------------------------

def test_identical_fits_give_zero():
    rng = np.random.default_rng(3)
    fit = fit_gaussian(rng.normal(size=(50, 4)))
    assert frechet_distance(fit, fit) == pytest.approx(0.0, abs=1e-9)


def test_identity_covariances_give_squared_mean_shift():
    mu = np.array([1.0, -2.0, 0.5])
    a = GaussianFit(np.zeros(3), np.eye(3))
    b = GaussianFit(mu, np.eye(3))
    assert frechet_distance(a, b) == pytest.approx(mu @ mu, rel=1e-14)


def test_scalar_case():
    assert frechet_distance(GaussianFit([0.0], [[1.0]]), GaussianFit([0.0], [[4.0]])) == pytest.approx(1.0, rel=1e-14)


def _scipy_fd(a, b):
    root = sqrtm(a.covariance @ b.covariance)
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.covariance + b.covariance - 2 * np.real(root)))


def test_matches_scipy_sqrtm_and_is_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(50):
        d = int(rng.integers(1, 6))
        a = fit_gaussian(rng.normal(size=(30, d)) @ rng.normal(size=(d, d)))
        b = fit_gaussian(rng.normal(size=(30, d)) @ rng.normal(size=(d, d)) + rng.normal(size=d))
        assert frechet_distance(a, b) == pytest.approx(_scipy_fd(a, b), rel=1e-7, abs=1e-9)
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9


def test_rank_deficient_covariances():
    a = fit_gaussian(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-9)
    assert frechet_distance(a, GaussianFit(np.zeros(2), np.zeros((2, 2)))) >= 0


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        frechet_distance(GaussianFit([0.0], [[1.0]]), GaussianFit([0.0, 0.0], np.eye(2)))
    with pytest.raises(ConfigError):
        GaussianFit([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])


def test_fit_gaussian_examples():
    same = fit_gaussian(np.array([[1.0, 2.0], [1.0, 2.0]]))
    assert not same.covariance.any()
    fit = fit_gaussian(np.array([[0.0], [2.0]]))
    assert fit.mean.tolist() == [1.0]
    assert fit.covariance.tolist() == [[2.0]]
    with pytest.raises(ConfigError):
        fit_gaussian(np.zeros((1, 3)))


def test_fit_gaussian_concentration():
    fit = fit_gaussian(np.random.default_rng(5).normal(size=(100_000, 3)))
    assert np.linalg.norm(fit.mean) < 0.02
    assert np.abs(fit.covariance - np.eye(3)).max() < 0.05


# --- features and reporting ---------------------------------------------------------

def test_feature_maps():
    img = np.array([[[0.1, 0.2], [0.3, 0.4]]])
    np.testing.assert_array_equal(feature_map(img, "raw_pixels"), [[0.1, 0.2, 0.3, 0.4]])
    const = np.full((2, 28, 28), 0.7)
    pooled = feature_map(const, "pooled_pixels")
    assert pooled.shape == (2, 49)
    np.testing.assert_allclose(pooled, 0.7, rtol=1e-15)
    assert feature_map(np.zeros((3, 30, 30)), "pooled_pixels").shape == (3, 64)
    with pytest.raises(ConfigError):
        feature_map(const, "inception")


def test_fd_features_detects_a_shift():
    rng = np.random.default_rng(6)
    a = rng.uniform(size=(200, 8, 8))
    b = rng.uniform(size=(200, 8, 8))
    assert fd_features(a, b) < fd_features(a, b + 0.3)


def test_mean_squared_cost():
    assert mean_squared_cost([[0.0, 0.0], [1.0, 1.0]], [[1.0, 0.0], [1.0, 3.0]]) == 2.5


def test_metrics_csv(tmp_path):
    path = tmp_path / "metrics.csv"
    append_metrics(path, {"run_id": "r", "epoch": 1, "recon_train": 0.1})
    append_metrics(path, {"run_id": "r", "epoch": 2, "penalty": 1e-3})
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    rows = read_metrics(path)
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert float(rows[0]["recon_train"]) == 0.1 and rows[1]["recon_train"] == ""
    with pytest.raises(ConfigError):
        append_metrics(path, {"fid": 3.0})
