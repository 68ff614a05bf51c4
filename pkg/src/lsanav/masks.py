"""Local attention windows on the circular 3x12 view grid."""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geometry import N_COLS, N_ROWS, N_VIEWS, CandidateView, ViewIndex


@dataclass(frozen=True)
class MaskShape:
    """``rows x cols`` window, or full attention when both are ``None``."""

    rows: int | None = None
    cols: int | None = None

    def __post_init__(self):
        if (self.rows is None) != (self.cols is None):
            raise ConfigError("mask shape needs both rows and cols, or neither")
        if self.rows is not None:
            if self.rows not in (1, 3) or self.cols not in (3, 5, 7):
                raise ConfigError(f"unsupported mask shape {self.rows}x{self.cols}")

    @property
    def is_full(self) -> bool:
        return self.rows is None

    @property
    def label(self) -> str:
        return "none" if self.is_full else f"{self.rows}x{self.cols}"

    @classmethod
    def parse(cls, text: str | None) -> "MaskShape":
        if text is None or str(text).strip().lower() == "none":
            return cls()
        try:
            r, c = str(text).lower().split("x")
            return cls(int(r), int(c))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"cannot parse mask shape {text!r}; use 'none' or e.g. '3x3'") from None

    def __str__(self) -> str:
        return self.label


ABLATION_SHAPES = tuple(MaskShape.parse(s) for s in ("none", "1x3", "1x5", "1x7", "3x3", "3x5", "3x7"))


def circular_col_dist(a: int, b: int) -> int:
    d = abs(a - b) % N_COLS
    return min(d, N_COLS - d)


@dataclass(frozen=True)
class MaskMatrix:
    """Boolean (36, K) matrix; ``allowed[n, k]`` lets slot k attend view n.

    ``slots`` maps each column to its position in the candidate list.
    """

    allowed: np.ndarray
    slots: tuple[int, ...]

    @property
    def n_slots(self) -> int:
        return self.allowed.shape[1]

    def to_text(self) -> str:
        blocks = []
        for k, cand in enumerate(self.slots):
            grid = self.allowed[:, k].reshape(N_ROWS, N_COLS)
            lines = [f"slot {k} (candidate {cand})"]
            # print the top elevation first
            for r in range(N_ROWS - 1, -1, -1):
                lines.append(f"  row {r}: " + " ".join("#" if v else "." for v in grid[r]))
            blocks.append("\n".join(lines))
        return "\n".join(blocks) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "candidate", "view_row", "view_col", "allowed"])
        for k, cand in enumerate(self.slots):
            for n in range(N_VIEWS):
                vi = ViewIndex.from_flat(n)
                w.writerow([k, cand, vi.row, vi.col, int(self.allowed[n, k])])
        return buf.getvalue()


def window_column(center: ViewIndex, shape: MaskShape) -> np.ndarray:
    """Boolean length-36 column of views visible from ``center``."""
    if shape.is_full:
        return np.ones(N_VIEWS, dtype=bool)
    half_r, half_c = (shape.rows - 1) // 2, (shape.cols - 1) // 2
    rows = np.arange(N_VIEWS) // N_COLS
    cols = np.arange(N_VIEWS) % N_COLS
    dc = np.abs(cols - center.col)
    dc = np.minimum(dc, N_COLS - dc)
    return (np.abs(rows - center.row) <= half_r) & (dc <= half_c)


def build_mask(candidates: Sequence[CandidateView], shape: MaskShape,
               include_stop: bool = True) -> MaskMatrix:
    """Attendability matrix for the candidates that act as slots.

    The stop candidate has no grid position and sees all 36 views; with
    ``include_stop=False`` it is left out of the slot set entirely.
    """
    if not isinstance(shape, MaskShape):
        raise ConfigError(f"expected a MaskShape, got {shape!r}")
    cols, slots = [], []
    for pos, cand in enumerate(candidates):
        if cand.is_stop:
            if not include_stop:
                continue
            cols.append(np.ones(N_VIEWS, dtype=bool))
        else:
            cols.append(window_column(cand.index, shape))
        slots.append(pos)
    if not cols:
        raise ConfigError("mask needs at least one slot")
    return MaskMatrix(np.stack(cols, axis=1), tuple(slots))
