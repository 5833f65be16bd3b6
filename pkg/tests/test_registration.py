import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from crossreg.cloud import PointCloud, SimilarityTransform, apply_transform, uniform_downsample
from crossreg.coarse import normalize_query, scale_normalization_transform
from crossreg.errors import ConfigError, DataError, DegenerateGeometryError
from crossreg.registration import (
    GmmState,
    RegistrationConfig,
    _e_step,
    icp_register,
    init_gmm,
    jrmpc_register,
)
from crossreg.scoring import residual_error

from conftest import structured_cloud


def rotation_error_deg(r1, r2):
    cosang = np.clip((np.trace(r1.T @ r2) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cosang)))


def perturbed_pair(seed, angle_deg, noise_rel=0.01, n=700):
    """Region plus a noisy copy moved by a known rigid transform; returns
    (region, query, truth, region_radius)."""
    rng = np.random.default_rng(seed)
    region = structured_cloud(seed, n=n)
    radius = float(np.linalg.norm(region.points - region.points.mean(0), axis=1).max())
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(axis * np.radians(angle_deg)).as_matrix()
    truth = SimilarityTransform(rot, rng.uniform(-5, 5, 3), 1.0)
    noisy = region.points + rng.normal(0.0, noise_rel * radius, region.points.shape)
    query = apply_transform(PointCloud(noisy), truth.inverse())
    return region, query, truth, radius


def test_config_validation():
    for bad in (
        dict(n_components=0),
        dict(max_iterations=0),
        dict(tol=0.0),
        dict(outlier_weight=1.0),
        dict(downsample_max=0),
    ):
        with pytest.raises(ConfigError):
            RegistrationConfig(**bad)


# ---------------------------------------------------------------------------
# init_gmm
# ---------------------------------------------------------------------------

def test_init_single_component():
    cloud = structured_cloud(3, n=60)
    cfg = RegistrationConfig(n_components=1, outlier_weight=0.05)
    gmm = init_gmm(cloud, cloud, cfg)
    assert gmm.n_components == 1
    union = np.vstack([cloud.points, cloud.points])
    assert any(np.array_equal(gmm.means[0], p) for p in union)
    assert gmm.weights[0] == pytest.approx(0.95)
    assert gmm.weights.sum() + gmm.outlier_weight == pytest.approx(1.0, abs=1e-12)


def test_init_deterministic():
    cloud = structured_cloud(4, n=120)
    cfg = RegistrationConfig(n_components=20, seed=9)
    a = init_gmm(cloud, cloud, cfg)
    b = init_gmm(cloud, cloud, cfg)
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.variances, b.variances)


def test_init_variances_equal():
    cloud = structured_cloud(5, n=90)
    gmm = init_gmm(cloud, cloud, RegistrationConfig(n_components=10))
    assert np.unique(gmm.variances).size == 1


def test_init_clamps_component_count(caplog):
    cloud = PointCloud(np.random.default_rng(0).random((10, 3)))
    with caplog.at_level("WARNING"):
        gmm = init_gmm(cloud, cloud, RegistrationConfig(n_components=500))
    assert gmm.n_components == 20
    assert any("clamping" in r.message for r in caplog.records)


# ---------------------------------------------------------------------------
# jrmpc_register
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def reg_cfg():
    return RegistrationConfig(n_components=100, max_iterations=60, seed=0)


def test_self_registration(reg_cfg):
    region = structured_cloud(11, n=800)
    radius = float(np.linalg.norm(region.points - region.points.mean(0), axis=1).max())
    out = jrmpc_register(region, region, reg_cfg)
    angle_rad = np.radians(rotation_error_deg(out.transform.rotation, np.eye(3)))
    assert angle_rad < 1e-3
    assert np.linalg.norm(out.transform.translation) < 1e-3 * radius


def test_rotation_recovery_with_noise(reg_cfg):
    region, query, truth, radius = perturbed_pair(seed=12, angle_deg=15.0)
    out = jrmpc_register(region, query, reg_cfg)
    assert rotation_error_deg(out.transform.rotation, truth.rotation) < 2.0
    assert np.linalg.norm(out.transform.translation - truth.translation) < 0.02 * radius


def test_loglik_monotone_over_trials():
    cfg = RegistrationConfig(n_components=40, max_iterations=30, seed=1)
    for seed in range(20):
        region, query, _, _ = perturbed_pair(seed=seed, angle_deg=seed * 6.0, n=260)
        out = jrmpc_register(region, query, cfg)
        diffs = np.diff(out.loglik_trace)
        assert (diffs >= -1e-9).all(), f"seed {seed}: trace decreased by {diffs.min()}"


def test_rotation_stays_orthonormal(reg_cfg):
    region, query, _, _ = perturbed_pair(seed=14, angle_deg=40.0)
    out = jrmpc_register(region, query, reg_cfg)
    r = out.transform.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_responsibilities_sum_to_one(rng):
    cloud = structured_cloud(15, n=200)
    cfg = RegistrationConfig(n_components=30)
    gmm = init_gmm(cloud, cloud, cfg)
    radius = float(np.linalg.norm(cloud.points - cloud.points.mean(0), axis=1).max())
    outlier_mass = cfg.outlier_weight / (4.0 / 3.0 * np.pi * radius**3)
    alpha, total, _ = _e_step(cloud.points, gmm.means, gmm.variances, gmm.weights, outlier_mass)
    outlier_resp = outlier_mass / total
    sums = alpha.sum(axis=1) + outlier_resp
    assert np.abs(sums - 1.0).max() < 1e-12


def test_scale_passes_through_exactly(reg_cfg):
    query_original = structured_cloud(16, n=500)
    scale = 1.73
    pre = scale_normalization_transform(query_original, scale)
    query_n = normalize_query(query_original, scale)
    region = apply_transform(query_n, SimilarityTransform(np.eye(3), [0.5, 0.0, 0.0], 1.0))
    out = jrmpc_register(region, query_n, reg_cfg, pre_transform=pre)
    assert out.transform.scale == scale  # bitwise: EM never touches scale


def test_collinear_cloud_rejected(reg_cfg):
    line = PointCloud(np.outer(np.linspace(0, 1, 50), [1.0, 2.0, 0.5]))
    good = structured_cloud(17, n=100)
    with pytest.raises(DegenerateGeometryError, match="rank-deficient Procrustes"):
        jrmpc_register(line, good, reg_cfg)
    with pytest.raises(DegenerateGeometryError, match="rank-deficient Procrustes"):
        jrmpc_register(good, line, reg_cfg)


def test_too_few_points_rejected(reg_cfg):
    tiny = PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    with pytest.raises(DataError, match="fewer than 3"):
        jrmpc_register(tiny, structured_cloud(18), reg_cfg)


def test_downsampling_applied(reg_cfg):
    # registration of clouds above the cap must behave like the capped ones
    region, query, truth, _ = perturbed_pair(seed=19, angle_deg=10.0, n=3000)
    cfg = RegistrationConfig(n_components=100, max_iterations=40, downsample_max=1000, seed=2)
    out = jrmpc_register(region, query, cfg)
    assert rotation_error_deg(out.transform.rotation, truth.rotation) < 2.0


def test_downsample_transform_consistency():
    # registering downsampled clouds, then scoring on the originals, stays
    # within 10% of the run without downsampling
    region, query, _, _ = perturbed_pair(seed=20, angle_deg=18.0, n=3600)
    base = dict(n_components=100, max_iterations=60, seed=3)
    out_ds = jrmpc_register(region, query, RegistrationConfig(downsample_max=2000, **base))
    out_full = jrmpc_register(region, query, RegistrationConfig(downsample_max=4000, **base))
    r_ds = residual_error(region, query, out_ds.transform)
    r_full = residual_error(region, query, out_full.transform)
    assert abs(r_ds - r_full) <= 0.10 * max(r_ds, r_full)


# ---------------------------------------------------------------------------
# icp baseline
# ---------------------------------------------------------------------------

def test_icp_identity():
    cloud = structured_cloud(30, n=400)
    t = icp_register(cloud, cloud)
    assert rotation_error_deg(t.rotation, np.eye(3)) < 1e-6 * 180 / np.pi
    assert np.linalg.norm(t.translation) < 1e-6


def test_icp_small_rotation():
    region, query, truth, _ = perturbed_pair(seed=31, angle_deg=5.0, noise_rel=0.0)
    t = icp_register(region, query, max_iterations=80)
    assert rotation_error_deg(t.rotation, truth.rotation) < 0.5


def test_icp_large_rotation_no_crash():
    # 90 degrees is far outside the ICP basin; only require a valid output
    region, query, _, _ = perturbed_pair(seed=32, angle_deg=90.0, noise_rel=0.0)
    t = icp_register(region, query, max_iterations=40)
    assert abs(np.linalg.det(t.rotation) - 1.0) < 1e-9


def test_icp_collinear_rejected():
    line = PointCloud(np.outer(np.linspace(0, 1, 30), [1.0, 0.0, 0.0]))
    with pytest.raises(DegenerateGeometryError):
        icp_register(line, structured_cloud(33))
