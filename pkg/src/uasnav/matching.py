"""Landmark recognition: keypoints, descriptors, correspondence matching,
robust affine estimation, and the center-distance arrival test.

The pipeline is classical and fully seed-deterministic: a Harris-style
corner detector with non-maximum suppression, an upright 128-dim gradient
patch descriptor (bias falls out of differentiation, gain out of the L2
normalization), Lowe-ratio plus mutual-best matching, and RANSAC over
minimal 3-point affine solves refined by least squares. Descriptors are
not rotation-invariant; that is acceptable because the platform flies
north-oriented and rotation jitter stays within about ten degrees.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from .errors import (
    BoundsError,
    DegenerateGeometryError,
    InsufficientMatchesError,
    InvalidStateError,
)
from .grid import LandmarkId
from .raster import RasterImage, to_gray

logger = logging.getLogger(__name__)

DESCRIPTOR_DIM = 128
_PATCH = 16          # descriptor patch side in pixels (8x8 cells of 2x2 px)
_PATCH_PAD = _PATCH // 2 + 1
_MIN_IMAGE_SIDE = 32


@dataclass(frozen=True)
class Keypoint:
    """Sub-pixel corner location with its detector response."""

    x: float
    y: float
    response: float


@dataclass(frozen=True)
class Correspondence:
    query_index: int
    train_index: int
    query_kp: Keypoint
    train_kp: Keypoint
    distance: float
    passed_ratio_test: bool


@dataclass
class AffineTransform:
    """2x3 matrix mapping query pixel coordinates to train pixel coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DegenerateGeometryError("affine matrix has non-finite entries")
        if abs(np.linalg.det(m[:, :2])) < 1e-12:
            raise DegenerateGeometryError("affine linear part is singular")
        self.matrix = m

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 2].copy()

    @property
    def rotation(self) -> float:
        """Rotation angle of the linear part (radians), for similarity-like maps."""
        return float(np.arctan2(self.matrix[1, 0], self.matrix[0, 0]))


@dataclass
class MatchResult:
    """Outcome of matching one observation against one candidate landmark."""

    target: LandmarkId | None
    correspondences: list[Correspondence]
    inliers: int
    affine: AffineTransform | None
    center_distance_m: float | None
    inlier_mask: np.ndarray | None = None

    @property
    def n_matches(self) -> int:
        return len(self.correspondences)


@dataclass(frozen=True)
class MatchParams:
    """Thresholds for the full pipeline. Defaults were chosen on seeded
    synthetic-world experiments (see README); every one is a config key."""

    max_keypoints: int = 500
    ratio: float = 0.8
    inlier_tol_px: float = 3.0
    ransac_iterations: int = 500
    min_inliers: int = 30
    distance_threshold_m: float = 5.0
    rng_seed: int = 5

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError("ratio must be in (0, 1]")
        if self.max_keypoints < 1 or self.ransac_iterations < 1:
            raise ValueError("max_keypoints and ransac_iterations must be positive")
        if self.inlier_tol_px <= 0 or self.distance_threshold_m < 0 or self.min_inliers < 0:
            raise ValueError("bad threshold value")


@dataclass
class DescriptorSet:
    """Keypoints plus their descriptors for one image."""

    keypoints: list[Keypoint]
    descriptors: np.ndarray  # (n, 128) unit rows
    image_size: tuple[int, int]  # (width, height)

    def __len__(self) -> int:
        return len(self.keypoints)


def _as_gray(img: RasterImage | np.ndarray) -> np.ndarray:
    if isinstance(img, RasterImage):
        return to_gray(img)
    return np.asarray(img, dtype=np.float64)


def detect_keypoints(
    img: RasterImage | np.ndarray,
    max_keypoints: int = 500,
    nms_radius: int = 8,
    rel_threshold: float = 1e-4,
) -> list[Keypoint]:
    """Harris corners, strongest first, with non-maximum suppression.

    Candidates are local maxima of the corner response above a threshold
    relative to the global peak; a greedy pass then enforces the NMS radius
    in response order (ties broken by row, then column, so the output is
    deterministic). Peak positions get a clamped parabolic sub-pixel refine.
    """
    if max_keypoints < 1:
        raise ValueError("max_keypoints must be positive")
    gray = _as_gray(img).astype(np.float32)
    h, w = gray.shape
    if h < _MIN_IMAGE_SIDE or w < _MIN_IMAGE_SIDE:
        raise BoundsError(f"image {w}x{h} smaller than the {_MIN_IMAGE_SIDE} px detector window")

    smoothed = gaussian_filter(gray, sigma=1.0, mode="nearest")
    iy, ix = np.gradient(smoothed)
    sxx = gaussian_filter(ix * ix, sigma=1.5, mode="nearest")
    syy = gaussian_filter(iy * iy, sigma=1.5, mode="nearest")
    sxy = gaussian_filter(ix * iy, sigma=1.5, mode="nearest")
    response = sxx * syy - sxy * sxy - 0.04 * (sxx + syy) ** 2

    peak = response.max()
    if peak <= 1e-12:
        return []  # flat image: no gradient, no corners
    threshold = max(rel_threshold * peak, 1e-12)
    local_max = response == maximum_filter(response, size=2 * nms_radius + 1, mode="nearest")
    # keep the border clear so descriptor patches always fit
    local_max[:_PATCH_PAD, :] = False
    local_max[-_PATCH_PAD:, :] = False
    local_max[:, :_PATCH_PAD] = False
    local_max[:, -_PATCH_PAD:] = False
    ys, xs = np.nonzero(local_max & (response > threshold))
    if len(xs) == 0:
        return []
    order = np.lexsort((xs, ys, -response[ys, xs]))
    ys, xs = ys[order], xs[order]

    kept_x = np.empty(max_keypoints)
    kept_y = np.empty(max_keypoints)
    kept: list[Keypoint] = []
    r2 = float(nms_radius) ** 2
    for x, y in zip(xs, ys):
        m = len(kept)
        if m:
            dx = kept_x[:m] - x
            dy = kept_y[:m] - y
            if (dx * dx + dy * dy).min() < r2:
                continue
        sx = _parabolic_offset(response[y, x - 1], response[y, x], response[y, x + 1]) if 0 < x < w - 1 else 0.0
        sy = _parabolic_offset(response[y - 1, x], response[y, x], response[y + 1, x]) if 0 < y < h - 1 else 0.0
        kept_x[m] = x
        kept_y[m] = y
        kept.append(Keypoint(x=float(x) + sx, y=float(y) + sy, response=float(response[y, x])))
        if len(kept) >= max_keypoints:
            break
    return kept


def _parabolic_offset(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if abs(denom) < 1e-12:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def describe(
    img: RasterImage | np.ndarray,
    keypoints: list[Keypoint],
) -> tuple[np.ndarray, list[Keypoint]]:
    """Upright gradient patch descriptors, one unit-norm 128-vector each.

    A 16x16 gradient patch around the keypoint (sampled bilinearly from a
    smoothed gradient field) is average-pooled to 8x8 cells of (gx, gy) and
    L2-normalized. Differentiation removes intensity bias and the
    normalization removes gain, so descriptors are invariant to affine
    intensity changes by construction. Keypoints whose patch leaves the
    image (or has no gradient energy) are dropped and logged.
    """
    gray = _as_gray(img).astype(np.float32)
    h, w = gray.shape
    if not keypoints:
        return np.zeros((0, DESCRIPTOR_DIM)), []

    smoothed = gaussian_filter(gray, sigma=2.0, mode="nearest")
    gy, gx = np.gradient(smoothed)

    offsets = np.arange(_PATCH, dtype=np.float64) - (_PATCH - 1) / 2.0  # cell centers
    oy, ox = np.meshgrid(offsets, offsets, indexing="ij")

    xy = np.array([[kp.x, kp.y] for kp in keypoints])
    in_bounds = (
        (xy[:, 0] >= _PATCH_PAD)
        & (xy[:, 0] <= w - 1 - _PATCH_PAD)
        & (xy[:, 1] >= _PATCH_PAD)
        & (xy[:, 1] <= h - 1 - _PATCH_PAD)
    )
    dropped = int((~in_bounds).sum())

    sel = np.nonzero(in_bounds)[0]
    px = xy[sel, 0][:, None, None] + ox[None]
    py = xy[sel, 1][:, None, None] + oy[None]
    patch_gx = _bilinear(gx, px, py)
    patch_gy = _bilinear(gy, px, py)

    # 2x2 average pooling down to 8x8 cells, then interleave (gx, gy)
    def pool(p):
        k = p.reshape(len(sel), _PATCH // 2, 2, _PATCH // 2, 2)
        return k.mean(axis=(2, 4))

    vec = np.stack([pool(patch_gx), pool(patch_gy)], axis=-1).reshape(len(sel), DESCRIPTOR_DIM)
    vec = vec.astype(np.float64)
    norms = np.linalg.norm(vec, axis=1)
    has_energy = norms > 1e-9
    dropped += int((~has_energy).sum())
    vec = vec[has_energy] / norms[has_energy][:, None]

    kept = [keypoints[i] for i, ok in zip(sel, has_energy) if ok]
    if dropped:
        logger.debug("describe: dropped %d/%d keypoints (patch out of bounds or flat)", dropped, len(keypoints))
    return vec, kept


def _bilinear(plane: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = (px - x0).astype(plane.dtype)
    fy = (py - y0).astype(plane.dtype)
    x1 = np.minimum(x0 + 1, plane.shape[1] - 1)
    y1 = np.minimum(y0 + 1, plane.shape[0] - 1)
    top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def build_descriptor_set(img: RasterImage | np.ndarray, params: MatchParams) -> DescriptorSet:
    gray = _as_gray(img)
    kps = detect_keypoints(gray, max_keypoints=params.max_keypoints)
    desc, kept = describe(gray, kps)
    return DescriptorSet(keypoints=kept, descriptors=desc, image_size=(gray.shape[1], gray.shape[0]))


def match_descriptors(
    query: np.ndarray,
    train: np.ndarray,
    ratio: float = 0.8,
) -> list[tuple[int, int, float, bool]]:
    """Nearest-neighbor matches as (query_idx, train_idx, distance, ratio_ok).

    Each query keeps its nearest train neighbor when it beats the second
    nearest by the ratio and the pair is mutually best. With fewer than two
    train descriptors the ratio test cannot run; the nearest is kept with
    ratio_ok = False (documented degenerate path). Ties resolve to the
    lowest index, so output order is deterministic.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    query = np.asarray(query, dtype=np.float64)
    train = np.asarray(train, dtype=np.float64)
    if len(query) == 0 or len(train) == 0:
        return []

    d2 = (
        np.sum(query * query, axis=1)[:, None]
        + np.sum(train * train, axis=1)[None, :]
        - 2.0 * (query @ train.T)
    )
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)

    nearest = np.argmin(dist, axis=1)
    best_for_train = np.argmin(dist, axis=0)
    out = []
    degenerate = train.shape[0] < 2
    for qi in range(len(query)):
        ti = int(nearest[qi])
        if int(best_for_train[ti]) != qi:
            continue
        d1 = float(dist[qi, ti])
        if degenerate:
            out.append((qi, ti, d1, False))
            continue
        row = dist[qi]
        d2nd = float(np.partition(row, 1)[1])
        if d1 < ratio * d2nd:
            out.append((qi, ti, d1, True))
    return out


def match_sets(query: DescriptorSet, train: DescriptorSet, ratio: float = 0.8) -> list[Correspondence]:
    return [
        Correspondence(
            query_index=qi,
            train_index=ti,
            query_kp=query.keypoints[qi],
            train_kp=train.keypoints[ti],
            distance=d,
            passed_ratio_test=ok,
        )
        for qi, ti, d, ok in match_descriptors(query.descriptors, train.descriptors, ratio)
    ]


def estimate_affine_ransac(
    correspondences: list[Correspondence],
    inlier_tol_px: float = 3.0,
    iterations: int = 500,
    rng_seed: int = 0,
) -> tuple[AffineTransform, np.ndarray]:
    """RANSAC affine fit over minimal 3-point solves.

    All candidate models are solved in one batch; the winner is the model
    with the most inliers (the earliest iteration wins ties, matching the
    seed order), then refit by least squares on its full inlier set. The
    returned mask is re-evaluated under the refit model.
    """
    n = len(correspondences)
    if n < 3:
        raise InsufficientMatchesError(f"affine estimation needs >= 3 correspondences, got {n}")
    src = np.array([[c.query_kp.x, c.query_kp.y] for c in correspondences])
    dst = np.array([[c.train_kp.x, c.train_kp.y] for c in correspondences])

    rng = np.random.default_rng(rng_seed)
    samples = np.stack([rng.choice(n, size=3, replace=False) for _ in range(iterations)])

    ones = np.ones((n, 1))
    src_h = np.hstack([src, ones])            # (n, 3)
    mats = src_h[samples]                     # (iters, 3, 3)
    rhs = dst[samples]                        # (iters, 3, 2)
    dets = np.linalg.det(mats)
    valid = np.abs(dets) > 1e-6               # collinear samples are degenerate
    if not valid.any():
        raise DegenerateGeometryError("every sampled correspondence triple was collinear")

    params = np.linalg.solve(mats[valid], rhs[valid])      # (v, 3, 2)
    pred = np.einsum("nk,vkj->vnj", src_h, params)          # (v, n, 2)
    err = np.linalg.norm(pred - dst[None], axis=2)
    counts = np.full(iterations, -1, dtype=np.int64)
    counts[valid] = (err <= inlier_tol_px).sum(axis=1)
    best_iter = int(np.argmax(counts))                       # first max = earliest iteration
    best_params = params[int(valid[:best_iter + 1].sum()) - 1]
    best_mask = np.linalg.norm(src_h @ best_params - dst, axis=1) <= inlier_tol_px

    refit, _, _, _ = np.linalg.lstsq(src_h[best_mask], dst[best_mask], rcond=None)
    model = AffineTransform(refit.T)
    final_mask = np.linalg.norm(src_h @ refit - dst, axis=1) <= inlier_tol_px
    return model, final_mask


def center_distance(
    affine: AffineTransform,
    query_size: tuple[int, int],
    train_size: tuple[int, int],
    gsd: float,
) -> float:
    """Metric distance between the mapped query center and the train center."""
    qc = np.array([query_size[0] / 2.0, query_size[1] / 2.0])
    tc = np.array([train_size[0] / 2.0, train_size[1] / 2.0])
    return float(np.linalg.norm(affine.apply(qc[None])[0] - tc) * gsd)


def match_images(
    observation: DescriptorSet,
    candidate: DescriptorSet,
    params: MatchParams,
    gsd: float,
    target: LandmarkId | None = None,
) -> MatchResult:
    """Full per-candidate pipeline: match, robust affine, center distance.

    RANSAC failures (too few matches or degenerate geometry) produce a
    result with no affine rather than an exception, so ranking can proceed.
    """
    corr = match_sets(observation, candidate, params.ratio)
    affine = None
    mask = None
    inliers = 0
    cdist = None
    if len(corr) >= 3:
        try:
            affine, mask = estimate_affine_ransac(
                corr,
                inlier_tol_px=params.inlier_tol_px,
                iterations=params.ransac_iterations,
                rng_seed=params.rng_seed,
            )
            inliers = int(mask.sum())
            cdist = center_distance(affine, observation.image_size, candidate.image_size, gsd)
        except DegenerateGeometryError:
            affine, mask, inliers, cdist = None, None, 0, None
    return MatchResult(
        target=target,
        correspondences=corr,
        inliers=inliers,
        affine=affine,
        center_distance_m=cdist,
        inlier_mask=mask,
    )


def rank_neighbors(
    observation: RasterImage | np.ndarray | DescriptorSet,
    candidates: list[tuple[LandmarkId, DescriptorSet]],
    params: MatchParams,
    gsd: float,
) -> list[MatchResult]:
    """Match one observation against candidate landmark descriptor sets and
    rank by inlier count (the in-flight use matches the four cardinal
    neighbors of the last confirmed landmark).

    Ties break by smaller center distance, then candidate order; candidates
    without a model rank last. Deterministic.
    """
    if not candidates:
        raise InvalidStateError("rank_neighbors needs at least one candidate")
    if isinstance(observation, DescriptorSet):
        obs_set = observation
    else:
        obs_set = build_descriptor_set(observation, params)
    results = []
    for idx, (lid, dset) in enumerate(candidates):
        res = match_images(obs_set, dset, params, gsd, target=lid)
        results.append((res.inliers, res.center_distance_m, idx, res))
    results.sort(key=lambda t: (-t[0], t[1] if t[1] is not None else float("inf"), t[2]))
    return [r for _, _, _, r in results]


def arrival_check(result: MatchResult, distance_threshold_m: float, min_inliers: int) -> bool:
    """True iff the match has a model, enough inliers, and a center distance
    within the threshold. Monotone: more inliers or a smaller distance can
    never turn True into False."""
    return (
        result.affine is not None
        and result.inliers >= min_inliers
        and result.center_distance_m is not None
        and result.center_distance_m <= distance_threshold_m
    )
