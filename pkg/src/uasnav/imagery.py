"""Raster world model: synthetic orthophoto generation, landmark
descriptor crops, and perturbed nadir-view rendering.

The ground sample distance defaults to 0.25 m/px so a 640x480 observation
covers 160 m x 120 m: neighboring landmarks (40 m / 30 m away) stay inside
the current view's footprint, which is what makes neighbor matching see
overlapping texture. Synthetic worlds are built from noise octaves,
block-like parcels, and road bands so every observation window carries
hundreds of detectable corners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import CoverageError
from .grid import GridSpec, LandmarkId, landmark_position
from .raster import GeoRegistration, RasterImage

OBS_WIDTH = 640
OBS_HEIGHT = 480


@dataclass(frozen=True)
class Pose:
    """World position and heading (radians, 0 = north; positive rotates the
    view clockwise toward east). Reference missions fly north-oriented."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not -math.pi <= self.heading < math.pi:
            raise ValueError(f"heading must be in [-pi, pi), got {self.heading}")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PerturbationSpec:
    """Appearance/pose perturbation applied to a rendered observation.

    ``rotation_jitter`` and ``translation_jitter`` are magnitude bounds;
    the draws are uniform in angle and radius. Identity == all zeros with
    gain 1. Draw order per render is fixed: rotation, translation, noise.
    """

    gain: float = 1.0
    bias: float = 0.0
    noise_sigma: float = 0.0
    rotation_jitter: float = 0.0  # radians
    translation_jitter: float = 0.0  # meters
    rng_seed: int = 0

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.noise_sigma < 0 or self.rotation_jitter < 0 or self.translation_jitter < 0:
            raise ValueError("jitter magnitudes must be non-negative")

    @property
    def is_identity(self) -> bool:
        return (
            self.gain == 1.0
            and self.bias == 0.0
            and self.noise_sigma == 0.0
            and self.rotation_jitter == 0.0
            and self.translation_jitter == 0.0
        )


@dataclass(frozen=True)
class WorldSpec:
    """Synthesis parameters for the procedural orthophoto.

    Margins must cover at least the observation half-window (so every
    landmark can be cropped); the defaults leave extra room for rotated
    and translation-jittered footprints near boundary landmarks.
    """

    seed: int = 99
    gsd: float = 0.25
    margin_x_m: float = 100.0
    margin_y_m: float = 80.0

    def __post_init__(self):
        if self.gsd <= 0:
            raise ValueError("gsd must be positive")


def half_window_m(gsd: float) -> tuple[float, float]:
    return (OBS_WIDTH / 2.0) * gsd, (OBS_HEIGHT / 2.0) * gsd


def required_world_bounds(grid: GridSpec, gsd: float) -> tuple[float, float, float, float]:
    """Minimum (west, south, east, north) the world must cover: the grid
    extent expanded by one observation half-window on every side."""
    half_w, half_h = half_window_m(gsd)
    ox, oy = grid.origin
    ex, ey = grid.extent
    return ox - half_w, oy - half_h, ox + ex + half_w, oy + ey + half_h


def _check_world_coverage(world: RasterImage, reg: GeoRegistration, grid: GridSpec) -> None:
    west, south, east, north = required_world_bounds(grid, reg.gsd)
    corners = np.array([[west, north], [east, north], [west, south], [east, south]])
    p = reg.world_to_pixel(corners)
    if (
        p[:, 0].min() < 0
        or p[:, 1].min() < 0
        or p[:, 0].max() > world.width - 1
        or p[:, 1].max() > world.height - 1
    ):
        raise CoverageError(
            f"world raster {world.width}x{world.height} does not cover the grid "
            f"extent plus one observation half-window margin"
        )


def _value_noise(rng: np.random.Generator, shape: tuple[int, int], cell_px: int) -> np.ndarray:
    """Bilinear value noise in [0, 1] with the given lattice pitch."""
    h, w = shape
    coarse = rng.uniform(0.0, 1.0, (h // cell_px + 2, w // cell_px + 2))
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float64) / cell_px,
        np.arange(w, dtype=np.float64) / cell_px,
        indexing="ij",
    )
    return map_coordinates(coarse, [yy, xx], order=1, mode="nearest")


def _paint_parcels(rng: np.random.Generator, gray: np.ndarray) -> None:
    """Block-like parcels with contrasting fill and a darker rim; their
    corners dominate the detector response."""
    h, w = gray.shape
    pitch = 144
    for py0 in range(0, h - pitch, pitch):
        for px0 in range(0, w - pitch, pitch):
            if rng.random() >= 0.6:
                continue
            bw = int(rng.integers(40, 104))
            bh = int(rng.integers(36, 92))
            x0 = px0 + int(rng.integers(4, max(5, pitch - bw - 4)))
            y0 = py0 + int(rng.integers(4, max(5, pitch - bh - 4)))
            shade = float(rng.uniform(-48.0, 52.0))
            gray[y0:y0 + bh, x0:x0 + bw] += shade
            rim = -28.0 if shade > 0 else 24.0
            gray[y0:y0 + 2, x0:x0 + bw] += rim
            gray[y0 + bh - 2:y0 + bh, x0:x0 + bw] += rim
            gray[y0:y0 + bh, x0:x0 + 2] += rim
            gray[y0:y0 + bh, x0 + bw - 2:x0 + bw] += rim


def _paint_roads(rng: np.random.Generator, gray: np.ndarray) -> None:
    h, w = gray.shape
    for x in range(int(rng.integers(60, 320)), w - 16, 384):
        x0 = x + int(rng.integers(-40, 40))
        gray[:, x0:x0 + 12] = 54.0
        gray[:, x0 + 5:x0 + 7] += 26.0  # center line
    for y in range(int(rng.integers(60, 280)), h - 16, 320):
        y0 = y + int(rng.integers(-32, 32))
        gray[y0:y0 + 12, :] = 58.0
        gray[y0 + 5:y0 + 7, :] += 26.0


def build_world(grid: GridSpec, spec: WorldSpec = WorldSpec()) -> tuple[RasterImage, GeoRegistration]:
    """Deterministic procedural orthophoto covering the lattice plus margins.

    Pixel (0, 0) sits at the north-west corner; with the default grid,
    spacing, and gsd every landmark lands on an integer pixel, which keeps
    descriptor crops and identity renders bit-exact.
    """
    half_w, half_h = half_window_m(spec.gsd)
    if spec.margin_x_m < half_w or spec.margin_y_m < half_h:
        raise CoverageError(
            f"world margins ({spec.margin_x_m}, {spec.margin_y_m}) m are smaller than the "
            f"observation half-window ({half_w}, {half_h}) m"
        )
    ex, ey = grid.extent
    width = int(math.ceil((ex + 2 * spec.margin_x_m) / spec.gsd))
    height = int(math.ceil((ey + 2 * spec.margin_y_m) / spec.gsd))
    reg = GeoRegistration(
        gsd=spec.gsd,
        origin=(grid.origin[0] - spec.margin_x_m, grid.origin[1] + ey + spec.margin_y_m),
    )

    rng = np.random.default_rng(spec.seed)
    gray = np.full((height, width), 96.0)
    for cell, amp in ((256, 42.0), (96, 20.0), (32, 10.0)):
        gray += amp * (2.0 * _value_noise(rng, gray.shape, cell) - 1.0)
    _paint_parcels(rng, gray)
    _paint_roads(rng, gray)
    gray += rng.integers(-8, 9, gray.shape).astype(np.float64)
    gray = np.clip(gray, 8.0, 247.0)

    rgb = np.empty((height, width, 3))
    for ch, (lo, hi) in enumerate(((0.88, 1.10), (0.92, 1.12), (0.82, 1.04))):
        tint = lo + (hi - lo) * _value_noise(rng, gray.shape, 192)
        rgb[:, :, ch] = gray * tint
    pixels = np.rint(np.clip(rgb, 0.0, 255.0)).astype(np.uint8)

    world = RasterImage(pixels=pixels)
    _check_world_coverage(world, reg, grid)
    return world, reg


def ingest_world(world: RasterImage, reg: GeoRegistration, grid: GridSpec) -> tuple[RasterImage, GeoRegistration]:
    """Validate an externally supplied raster against the coverage contract."""
    _check_world_coverage(world, reg, grid)
    return world, reg


def landmark_descriptor_image(
    world: RasterImage,
    reg: GeoRegistration,
    grid: GridSpec,
    lid: LandmarkId,
) -> RasterImage:
    """640x480 north-up crop whose pixel (320, 240) is the landmark position
    (within half a pixel; the crop window is snapped to whole pixels so the
    bytes come straight from the world raster)."""
    center = reg.world_to_pixel(landmark_position(grid, lid))
    ix = int(np.rint(center[0]))
    iy = int(np.rint(center[1]))
    x0, y0 = ix - OBS_WIDTH // 2, iy - OBS_HEIGHT // 2
    if x0 < 0 or y0 < 0 or x0 + OBS_WIDTH > world.width or y0 + OBS_HEIGHT > world.height:
        raise CoverageError(
            f"descriptor window for landmark ({lid.col},{lid.row}) falls outside the world raster"
        )
    return RasterImage(pixels=world.pixels[y0:y0 + OBS_HEIGHT, x0:x0 + OBS_WIDTH].copy())


_OBS_GRID: tuple[np.ndarray, np.ndarray] | None = None


def _obs_grid() -> tuple[np.ndarray, np.ndarray]:
    global _OBS_GRID
    if _OBS_GRID is None:
        _OBS_GRID = np.meshgrid(
            np.arange(OBS_WIDTH, dtype=np.float64) - OBS_WIDTH / 2.0,
            np.arange(OBS_HEIGHT, dtype=np.float64) - OBS_HEIGHT / 2.0,
        )
    return _OBS_GRID


def _bilinear_sample(pixels: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Bilinear lookup; callers must have bounds-checked the coordinates.

    Sampling runs in float32 over flattened gathers (the rendering hot
    path); exact-integer coordinates still reproduce source bytes exactly
    because their interpolation weights are exactly 0/1.
    """
    h, w = pixels.shape[:2]
    x0f = np.floor(px)
    y0f = np.floor(py)
    fx = (px - x0f).astype(np.float32)
    fy = (py - y0f).astype(np.float32)
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    flat = pixels.reshape(h * w, -1)
    i00 = y0 * w + x0
    i01 = y0 * w + x1
    i10 = y1 * w + x0
    i11 = y1 * w + x1
    p00 = flat[i00].astype(np.float32)
    p01 = flat[i01].astype(np.float32)
    p10 = flat[i10].astype(np.float32)
    p11 = flat[i11].astype(np.float32)
    fx = fx[..., None]
    fy = fy[..., None]
    top = p00 * (1.0 - fx) + p01 * fx
    bot = p10 * (1.0 - fx) + p11 * fx
    out = top * (1.0 - fy) + bot * fy
    if pixels.ndim == 2:
        return out[..., 0]
    return out


def render_observation(
    world: RasterImage,
    reg: GeoRegistration,
    pose: Pose,
    perturb: PerturbationSpec = PerturbationSpec(),
    rng: np.random.Generator | None = None,
) -> RasterImage:
    """Simulated nadir camera frame at a world pose.

    The 640x480 window is centered on the (jittered) position, rotated by
    heading plus rotation jitter, bilinearly resampled from the world, then
    intensity-mapped (gain*v + bias, additive Gaussian noise, clamp to
    [0, 255]). Zero padding is never used: any sample outside the world
    raises CoverageError. Deterministic given the perturbation seed; pass
    ``rng`` to draw several renders from one stream.
    """
    if rng is None:
        rng = np.random.default_rng(perturb.rng_seed)

    theta = pose.heading
    if perturb.rotation_jitter > 0.0:
        theta += rng.uniform(-perturb.rotation_jitter, perturb.rotation_jitter)
    cx, cy = pose.x, pose.y
    if perturb.translation_jitter > 0.0:
        radius = rng.uniform(0.0, perturb.translation_jitter)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        cx += radius * math.cos(phi)
        cy += radius * math.sin(phi)

    du, dv = _obs_grid()
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    wx = cx + reg.gsd * (du * cos_t - dv * sin_t)
    wy = cy - reg.gsd * (du * sin_t + dv * cos_t)
    px = (wx - reg.origin[0]) / reg.gsd
    py = (reg.origin[1] - wy) / reg.gsd

    if (
        px.min() < 0.0
        or py.min() < 0.0
        or px.max() > world.width - 1
        or py.max() > world.height - 1
    ):
        raise CoverageError(
            f"observation footprint at ({cx:.1f}, {cy:.1f}) m, heading {theta:.3f} rad "
            f"exceeds the world raster"
        )

    values = _bilinear_sample(world.pixels, px, py).astype(np.float64)
    values = perturb.gain * values + perturb.bias
    if perturb.noise_sigma > 0.0:
        # one Gaussian draw per pixel, shared across channels
        noise = rng.normal(0.0, perturb.noise_sigma, values.shape[:2])
        values = values + (noise[..., None] if values.ndim == 3 else noise)
    return RasterImage(pixels=np.rint(np.clip(values, 0.0, 255.0)).astype(np.uint8))
