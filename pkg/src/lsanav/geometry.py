"""Panoramic 3x12 view grid: angle features, view features, discretisation.

Rows are elevations (-30, 0, +30 degrees), columns are headings in 30 degree
steps relative to the agent's current facing (column 0 is straight ahead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

N_ROWS = 3
N_COLS = 12
N_VIEWS = N_ROWS * N_COLS
STEP = math.radians(30.0)


@dataclass(frozen=True, order=True)
class ViewIndex:
    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < N_ROWS and 0 <= self.col < N_COLS):
            raise ValueError(f"view index out of range: ({self.row}, {self.col})")

    @property
    def flat(self) -> int:
        return self.row * N_COLS + self.col

    @classmethod
    def from_flat(cls, i: int) -> "ViewIndex":
        return cls(i // N_COLS, i % N_COLS)

    @property
    def heading(self) -> float:
        return self.col * STEP

    @property
    def elevation(self) -> float:
        return (self.row - 1) * STEP


def encode_angle(psi: float, omega: float, d_a: int = 128) -> Tensor:
    """(sin psi, cos psi, sin omega, cos omega) tiled ``d_a / 4`` times."""
    if d_a <= 0 or d_a % 4:
        raise ConfigError(f"angle feature width must be a positive multiple of 4, got {d_a}")
    quad = np.array([math.sin(psi), math.cos(psi), math.sin(omega), math.cos(omega)])
    return np.tile(quad, d_a // 4)


def decode_angle(angle: Tensor) -> tuple[float, float]:
    """Inverse of :func:`encode_angle` from the first quadruple, in (-pi, pi]."""
    return math.atan2(angle[0], angle[1]), math.atan2(angle[2], angle[3])


@dataclass(frozen=True)
class ViewFeature:
    image: Tensor
    angle: Tensor

    @property
    def combined(self) -> Tensor:
        return np.concatenate([self.image, self.angle])

    @property
    def width(self) -> int:
        return self.image.shape[0] + self.angle.shape[0]


def compose_view_feature(image: Tensor, psi: float, omega: float, d_a: int = 128,
                         d_i: int | None = None) -> ViewFeature:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 1 or (d_i is not None and image.shape[0] != d_i):
        raise ShapeError(f"image feature shape {image.shape} does not match width {d_i}")
    return ViewFeature(image, encode_angle(psi, omega, d_a))


def wrap_angle(a: float) -> float:
    """Map to [0, 2*pi)."""
    w = math.fmod(a, 2 * math.pi)
    if w < 0:
        w += 2 * math.pi
    return 0.0 if w >= 2 * math.pi else w


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def view_index_for_direction(psi: float, omega: float) -> ViewIndex:
    """Nearest grid cell for a relative heading/elevation (radians).

    Heading wraps; elevation beyond +-45 degrees clamps to the outer rows.
    """
    col = _round_half_up(wrap_angle(psi) / STEP) % N_COLS
    row = min(max(_round_half_up(omega / STEP), -1), 1) + 1
    return ViewIndex(row, col)


@dataclass(frozen=True)
class PanoramaGrid:
    """36 view features in row-major (row, col) order."""

    views: tuple[ViewFeature, ...]

    def __post_init__(self):
        if len(self.views) != N_VIEWS:
            raise ShapeError(f"panorama needs {N_VIEWS} views, got {len(self.views)}")
        di, da = self.views[0].image.shape[0], self.views[0].angle.shape[0]
        for v in self.views:
            if v.image.shape != (di,) or v.angle.shape != (da,):
                raise ShapeError("panorama views disagree on feature widths")

    @property
    def d_image(self) -> int:
        return self.views[0].image.shape[0]

    @property
    def d_angle(self) -> int:
        return self.views[0].angle.shape[0]

    def matrix(self) -> Tensor:
        """(36, D_I + D_A) stacked [image | angle] rows."""
        return np.stack([v.combined for v in self.views])

    def image_matrix(self) -> Tensor:
        return np.stack([v.image for v in self.views])

    def __getitem__(self, idx: ViewIndex) -> ViewFeature:
        return self.views[idx.flat]

    @classmethod
    def from_images(cls, images: Tensor, d_a: int) -> "PanoramaGrid":
        """Attach the grid's own angle features to a (36, D_I) image block."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 2 or images.shape[0] != N_VIEWS:
            raise ShapeError(f"expected ({N_VIEWS}, D_I) images, got {images.shape}")
        views = []
        for i in range(N_VIEWS):
            vi = ViewIndex.from_flat(i)
            views.append(ViewFeature(images[i].copy(), encode_angle(vi.heading, vi.elevation, d_a)))
        return cls(tuple(views))


def stop_view_feature(grid: PanoramaGrid) -> ViewFeature:
    """Max-pool of the 36 image features, paired with a zero angle feature."""
    return ViewFeature(grid.image_matrix().max(axis=0), np.zeros(grid.d_angle))


@dataclass(frozen=True)
class CandidateView:
    """A navigable direction; ``index is None`` marks the stop candidate."""

    index: ViewIndex | None
    neighbor: int | None
    psi: float
    omega: float
    feature: ViewFeature = field(repr=False)

    @property
    def is_stop(self) -> bool:
        return self.index is None


def candidate_matrix(candidates: Sequence[CandidateView]) -> Tensor:
    return np.stack([c.feature.combined for c in candidates])
