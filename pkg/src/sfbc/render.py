"""Minimal software rasterizer for pendulum frames.

Draws the scene the annotation prompts describe: a red stick pivoted at the
image center on a white background, rotated by the pendulum angle (theta = 0
points up), with a black dot at the stick's free end. Rendering is a pure
function of (state, dimensions); no windowing or GPU.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .pendulum import State

DEFAULT_SIZE = 256
MIN_SIZE = 64

BACKGROUND = (255, 255, 255)
STICK_COLOR = (204, 77, 77)
DOT_COLOR = (0, 0, 0)

# Scene proportions relative to min(width, height).
STICK_LENGTH_FRAC = 0.36
STICK_HALFWIDTH_FRAC = 0.022
DOT_RADIUS_FRAC = 0.05


@dataclass(frozen=True)
class Frame:
    """An RGB8 image; `pixels` is a (height, width, 3) uint8 array."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def render(s: State, width: int = DEFAULT_SIZE, height: int = DEFAULT_SIZE) -> Frame:
    """Rasterize one pendulum state."""
    if width < MIN_SIZE or height < MIN_SIZE:
        raise ValueError(f"frame dimensions must be >= {MIN_SIZE}, got {width}x{height}")

    scale = min(width, height)
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    length = STICK_LENGTH_FRAC * scale
    halfwidth = max(1.0, STICK_HALFWIDTH_FRAC * scale)
    dot_radius = max(2.0, DOT_RADIUS_FRAC * scale)

    # Benchmark convention: positive theta rotates counterclockwise when the
    # y axis points up, so in image coordinates (y down) the free end sits at
    # (cx - L sin, cy - L cos).
    ax = -np.sin(s.theta)
    ay = -np.cos(s.theta)
    tip_x = cx + length * ax
    tip_y = cy + length * ay

    ys, xs = np.mgrid[0:height, 0:width]
    vx = xs - cx
    vy = ys - cy
    along = vx * ax + vy * ay
    across = vx * -ay + vy * ax
    stick = (along >= 0.0) & (along <= length) & (np.abs(across) <= halfwidth)
    dot = (xs - tip_x) ** 2 + (ys - tip_y) ** 2 <= dot_radius**2

    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[:, :] = BACKGROUND
    pixels[stick] = STICK_COLOR
    pixels[dot] = DOT_COLOR
    return Frame(width, height, pixels)


def write_png(frame: Frame, path: str | Path) -> None:
    Image.fromarray(frame.pixels, mode="RGB").save(str(path), format="PNG")


def write_ppm(frame: Frame, path: str | Path) -> None:
    """Uncompressed binary PPM (P6), the lossless fallback format."""
    with open(path, "wb") as fh:
        fh.write(f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def png_bytes(frame: Frame) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(frame.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
