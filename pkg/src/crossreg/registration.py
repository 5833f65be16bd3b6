"""Fine registration of a candidate region against the scale-normalized
query.

jrmpc_register fits one shared isotropic Gaussian mixture to both point
sets jointly: the region is gauge-fixed (its transform stays identity)
while the query's rigid transform is re-estimated every M-step by
weighted Procrustes. A fixed-weight uniform component over the joint
bounding volume absorbs outliers. Scale is never re-estimated: the
returned transform composes the caller's scale normalization with the
estimated rigid motion.

icp_register is the classic point-to-point baseline used only by the
comparison harness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cloud import PointCloud, SimilarityTransform, derive_seed, uniform_downsample
from .errors import ConfigError, DataError, DegenerateGeometryError, RegistrationError

log = logging.getLogger(__name__)

# Variance floor coefficient, relative to the joint bounding radius.
_VAR_FLOOR_REL = 1e-4

_TINY = 1e-300


@dataclass(frozen=True)
class RegistrationConfig:
    n_components: int = 300
    max_iterations: int = 100
    tol: float = 1e-6
    outlier_weight: float = 0.05
    downsample_max: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError(f"n_components must be >= 1, got {self.n_components}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if not (0.0 <= self.outlier_weight < 1.0):
            raise ConfigError(f"outlier_weight must be in [0, 1), got {self.outlier_weight}")
        if self.downsample_max < 1:
            raise ConfigError(f"downsample_max must be >= 1, got {self.downsample_max}")


@dataclass(frozen=True)
class GmmState:
    """Isotropic mixture shared by both point sets; weights plus the
    reserved outlier mass sum to 1."""

    means: np.ndarray       # (K, 3)
    variances: np.ndarray   # (K,)
    weights: np.ndarray     # (K,)
    outlier_weight: float

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class JrmpcResult:
    transform: SimilarityTransform
    gmm: GmmState
    loglik_trace: np.ndarray
    iterations: int
    converged: bool


@dataclass(frozen=True)
class RegistrationResult:
    """Registration outcome plus its residual and penalized scores."""

    transform: SimilarityTransform
    r_score: float
    final_score: float
    iterations: int
    loglik_trace: np.ndarray
    converged: bool


def _check_not_collinear(points: np.ndarray, label: str) -> None:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0.0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateGeometryError(f"rank-deficient Procrustes: {label} cloud is collinear")


def _weighted_kabsch(src: np.ndarray, dst: np.ndarray, w: np.ndarray):
    """Rotation/translation minimizing sum_i w_i ||R src_i + t - dst_i||^2."""
    total = w.sum()
    c_src = (w @ src) / total
    c_dst = (w @ dst) / total
    h = (src - c_src).T @ ((dst - c_dst) * w[:, None])
    u, _, vt = np.linalg.svd(h)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0:
        vt = vt.copy()
        vt[-1, :] *= -1.0
        r = vt.T @ u.T
    t = c_dst - r @ c_src
    return r, t


def init_gmm(region_ds: PointCloud, query_ds: PointCloud, cfg: RegistrationConfig) -> GmmState:
    """Seeded initialization: means drawn from the union of both clouds,
    one shared variance from the joint bounding radius, uniform weights."""
    union = np.vstack([region_ds.points, query_ds.points])
    k = cfg.n_components
    if k > union.shape[0]:
        log.warning("n_components %d exceeds combined point count %d; clamping", k, union.shape[0])
        k = union.shape[0]
    rng = np.random.default_rng(derive_seed(cfg.seed, 0))
    picks = np.sort(rng.choice(union.shape[0], size=k, replace=False))
    radius = float(np.linalg.norm(union - union.mean(axis=0), axis=1).max())
    if radius <= 0.0:
        raise DegenerateGeometryError("init_gmm: joint cloud has zero extent")
    variances = np.full(k, (radius / k ** (1.0 / 3.0)) ** 2)
    weights = np.full(k, (1.0 - cfg.outlier_weight) / k)
    return GmmState(
        means=union[picks].copy(),
        variances=variances,
        weights=weights,
        outlier_weight=cfg.outlier_weight,
    )


def _principal_axes(points: np.ndarray) -> np.ndarray:
    """Right-handed eigenbasis of the point covariance, columns ordered by
    descending eigenvalue."""
    centered = points - points.mean(axis=0)
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    basis = evecs[:, ::-1]
    if np.linalg.det(basis) < 0:
        basis = basis.copy()
        basis[:, -1] *= -1.0
    return basis


def _initial_pose(x: np.ndarray, y0: np.ndarray, rng: np.random.Generator):
    """Starting rotation/translation for the moving set.

    EM only converges from within a basin around the truth, so candidate
    starts are the identity plus the four proper alignments of the two
    clouds' principal axes; the start with the smallest nearest-neighbor
    residual on a subsample wins.
    """
    basis_x = _principal_axes(x)
    basis_y = _principal_axes(y0)
    c_x = x.mean(axis=0)
    c_y = y0.mean(axis=0)
    candidates = [(np.eye(3), np.zeros(3))]
    for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        flips = np.diag([s1, s2, s1 * s2]).astype(np.float64)
        rot = basis_x @ flips @ basis_y.T
        candidates.append((rot, c_x - rot @ c_y))

    n_probe = min(300, y0.shape[0])
    probe = y0[rng.choice(y0.shape[0], size=n_probe, replace=False)]
    tree = cKDTree(x)
    best = None
    best_cost = np.inf
    for rot, trans in candidates:
        cost = float(tree.query(probe @ rot.T + trans)[0].mean())
        if cost < best_cost:
            best_cost = cost
            best = (rot, trans)
    return best


def _e_step(points: np.ndarray, means, variances, weights, outlier_mass: float):
    """Responsibilities over the K components and the log-likelihood.

    outlier_mass is gamma times the fixed uniform density; the implicit
    outlier responsibility per point is outlier_mass / total so the
    per-point responsibilities (components + outlier) sum to one.
    """
    d2 = cdist(points, means, "sqeuclidean")
    norm = weights * np.power(2.0 * np.pi * variances, -1.5)
    dens = norm * np.exp(-0.5 * d2 / variances)
    total = dens.sum(axis=1) + outlier_mass
    loglik = float(np.log(total).sum())
    alpha = dens / total[:, None]
    return alpha, total, loglik


def jrmpc_register(
    region: PointCloud,
    query_normalized: PointCloud,
    cfg: RegistrationConfig,
    pre_transform: SimilarityTransform | None = None,
) -> JrmpcResult:
    """Joint-GMM EM registration of the (fixed) region and the (moving)
    scale-normalized query.

    Both clouds are first downsampled to cfg.downsample_max points. The
    returned transform maps the ORIGINAL query into scene coordinates:
    the estimated rigid motion composed with `pre_transform` (the
    upstream scale normalization, identity if omitted), so its scale
    equals the upstream scale exactly.
    """
    for cloud, label in ((region, "region"), (query_normalized, "query")):
        if len(cloud) < 3:
            raise DataError(f"jrmpc_register: {label} cloud has fewer than 3 points")
    region_ds = uniform_downsample(region, cfg.downsample_max, derive_seed(cfg.seed, 1))
    query_ds = uniform_downsample(query_normalized, cfg.downsample_max, derive_seed(cfg.seed, 2))
    _check_not_collinear(region_ds.points, "region")
    _check_not_collinear(query_ds.points, "query")

    gmm = init_gmm(region_ds, query_ds, cfg)
    means = gmm.means.copy()
    variances = gmm.variances.copy()
    weights = gmm.weights.copy()
    gamma = gmm.outlier_weight

    x = region_ds.points
    y0 = query_ds.points
    n = x.shape[0]

    union = np.vstack([x, y0])
    joint_radius = float(np.linalg.norm(union - union.mean(axis=0), axis=1).max())
    var_floor = (_VAR_FLOOR_REL * joint_radius) ** 2
    # Fixed uniform outlier density over the joint bounding sphere.
    volume = 4.0 / 3.0 * np.pi * joint_radius**3
    outlier_mass = gamma / volume if gamma > 0.0 else 0.0

    rot, trans = _initial_pose(x, y0, np.random.default_rng(derive_seed(cfg.seed, 3)))
    trace: list[float] = []
    converged = False
    prev_ll = None

    for it in range(1, cfg.max_iterations + 1):
        y = y0 @ rot.T + trans
        z = np.vstack([x, y])
        alpha, _, loglik = _e_step(z, means, variances, weights, outlier_mass)
        if not np.isfinite(loglik):
            raise RegistrationError(f"non-finite likelihood at iteration {it}")
        trace.append(loglik)
        if prev_ll is not None and abs(loglik - prev_ll) <= cfg.tol * abs(prev_ll):
            converged = True
            break
        prev_ll = loglik

        # M-step (a): rigid transform for the query set, region gauge-fixed.
        a_query = alpha[n:]
        per_comp = a_query / variances
        w = per_comp.sum(axis=1)
        if w.sum() > _TINY:
            targets = (per_comp @ means) / np.maximum(w, _TINY)[:, None]
            rot, trans = _weighted_kabsch(y0, targets, w)

        # M-step (b): mixture update over both sets with the new transform.
        y = y0 @ rot.T + trans
        z = np.vstack([x, y])
        mass = alpha.sum(axis=0)
        total_mass = mass.sum()
        if total_mass > _TINY:
            safe = np.maximum(mass, _TINY)
            means = (alpha.T @ z) / safe[:, None]
            sq = (z**2).sum(axis=1)
            spread = alpha.T @ sq - mass * (means**2).sum(axis=1)
            variances = np.maximum(spread / (3.0 * safe), var_floor)
            weights = (1.0 - gamma) * mass / total_mass

    transform = SimilarityTransform(rot, trans, 1.0)
    if pre_transform is not None:
        transform = transform.compose(pre_transform)
    return JrmpcResult(
        transform=transform,
        gmm=GmmState(means=means, variances=variances, weights=weights, outlier_weight=gamma),
        loglik_trace=np.asarray(trace),
        iterations=len(trace),
        converged=converged,
    )


def icp_register(
    region: PointCloud,
    query_normalized: PointCloud,
    max_iterations: int = 50,
    tol: float = 1e-6,
) -> SimilarityTransform:
    """Point-to-point ICP aligning the query onto the region.

    Nearest-neighbor correspondences, SVD rigid update, stops when the
    mean residual's relative change drops below tol. Baseline for the
    comparison harness; accuracy holds only near the truth (small
    rotations), as usual for ICP.
    """
    for cloud, label in ((region, "region"), (query_normalized, "query")):
        if len(cloud) < 3:
            raise DataError(f"icp_register: {label} cloud has fewer than 3 points")
    _check_not_collinear(region.points, "region")
    _check_not_collinear(query_normalized.points, "query")

    tree = cKDTree(region.points)
    y0 = query_normalized.points
    rot = np.eye(3)
    trans = np.zeros(3)
    prev = np.inf
    ones = np.ones(y0.shape[0])
    for _ in range(max_iterations):
        y = y0 @ rot.T + trans
        dists, idx = tree.query(y)
        mean_res = float(dists.mean())
        if abs(prev - mean_res) <= tol * max(mean_res, _TINY):
            break
        prev = mean_res
        rot, trans = _weighted_kabsch(y0, region.points[idx], ones)
    return SimilarityTransform(rot, trans, 1.0)
