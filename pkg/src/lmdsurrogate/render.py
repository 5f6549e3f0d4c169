"""PNG rendering of (phi, cA, cB) panels with the phi = 0.5 contour in black."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .fields import FieldState
from .qoi import extract_interface

# linear ramp from dark blue (value 0) to yellow (value 1), fixed range [0, 1]
COLOR_LOW = np.array([20, 30, 110], dtype=np.float64)
COLOR_HIGH = np.array([250, 230, 40], dtype=np.float64)
CONTOUR = np.array([0, 0, 0], dtype=np.uint8)
GAP_COLOR = np.array([255, 255, 255], dtype=np.uint8)


def colormap(values) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)[..., None]
    return np.rint(COLOR_LOW + (COLOR_HIGH - COLOR_LOW) * v).astype(np.uint8)


def contour_mask(phi, scale: int) -> np.ndarray:
    """Pixels hit by the phi = 0.5 contour.

    Cell (r, c) covers pixels [r*scale, (r+1)*scale) x [c*scale, (c+1)*scale);
    a contour point at grid coordinate y (in cells) lands on pixel row
    floor((y + 0.5) * scale).
    """
    H, W = phi.shape
    mask = np.zeros((H * scale, W * scale), dtype=bool)
    for pl in extract_interface(phi, 1.0).polylines:
        pts = pl.points
        for p, q in zip(pts[:-1], pts[1:]):
            n = max(int(np.ceil(np.abs(q - p).max() * scale * 2)), 1)
            t = np.linspace(0.0, 1.0, n + 1)[:, None]
            seg = p + (q - p) * t
            cols = np.floor((seg[:, 0] + 0.5) * scale).astype(int) % (W * scale)
            rows = np.clip(np.floor((seg[:, 1] + 0.5) * scale).astype(int), 0, H * scale - 1)
            mask[rows, cols] = True
    return mask


def render_panels(state: FieldState, scale: int = 4, gap: int = 4) -> np.ndarray:
    """H*scale x (3*W*scale + 2*gap) x 3 uint8 image."""
    mask = contour_mask(state.phi, scale)
    panels = []
    for a in (state.phi, state.cA, state.cB):
        img = colormap(np.kron(a, np.ones((scale, scale))))
        img[mask] = CONTOUR
        panels.append(img)
    H = panels[0].shape[0]
    sep = np.broadcast_to(GAP_COLOR, (H, gap, 3))
    return np.concatenate([panels[0], sep, panels[1], sep, panels[2]], axis=1)


def render_field(state: FieldState, path, scale: int = 4) -> None:
    Image.fromarray(render_panels(state, scale)).save(path, format="PNG", optimize=False, compress_level=6)
