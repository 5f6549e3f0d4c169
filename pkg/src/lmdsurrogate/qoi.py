"""Morphology quantities of interest and surrogate-vs-reference error metrics.

Solid is ``phi >= 0.5`` throughout. Contours are the ``phi = 0.5`` level set,
found by marching squares on the grid nodes, with node ``(r, c)`` at
``(x, y) = (c * dx, r * dx)`` and columns periodic.
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .fields import FieldState, relative_l2

LEVEL = 0.5
QOI_NAMES = ("perimeter", "mean_abs_curvature", "penetration_depth", "vol_A", "vol_B", "mean_ligament_height")
CSV_HEADER = ("time",) + QOI_NAMES


class CurvatureError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class Polyline:
    """Ordered contour points (n x 2, physical units, x unwrapped across the seam).

    For a closed polyline the last point repeats the first, shifted by a
    whole number of periods when the curve winds around the cylinder.
    """

    points: np.ndarray
    closed: bool
    period: float


@dataclass
class InterfaceContour:
    polylines: list[Polyline]

    def __len__(self):
        return len(self.polylines)


# ---------------------------------------------------------------- marching squares

# corner bits: 1 = top-left, 2 = top-right, 4 = bottom-right, 8 = bottom-left
# edges: "t" top, "r" right, "b" bottom, "l" left
_CASES = {
    0: [], 15: [],
    1: [("l", "t")], 14: [("l", "t")],
    2: [("t", "r")], 13: [("t", "r")],
    3: [("l", "r")], 12: [("l", "r")],
    4: [("r", "b")], 11: [("r", "b")],
    6: [("t", "b")], 9: [("t", "b")],
    7: [("l", "b")], 8: [("l", "b")],
}


def _edge_key(r, c, e, W):
    if e == "t":
        return ("h", r, c % W)
    if e == "b":
        return ("h", r + 1, c % W)
    if e == "l":
        return ("v", r, c % W)
    return ("v", r, (c + 1) % W)


def extract_interface(phi, dx: float = 1.0) -> InterfaceContour:
    """Sub-cell ``phi = 0.5`` contour with periodic columns.

    Saddle cells are split according to the mean of their four corners.
    """
    phi = np.asarray(phi, dtype=np.float64)
    H, W = phi.shape
    ext = np.concatenate([phi, phi[:, :1]], axis=1)
    above = ext >= LEVEL
    period = W * dx

    def crossing(r, c, e):
        """Crossing point on edge ``e`` of cell (r, c) in that cell's unwrapped frame."""
        if e in ("t", "b"):
            rr = r if e == "t" else r + 1
            a, b = ext[rr, c], ext[rr, c + 1]
            return np.array([(c + (LEVEL - a) / (b - a)) * dx, rr * dx])
        cc = c if e == "l" else c + 1
        a, b = ext[r, cc], ext[r + 1, cc]
        return np.array([cc * dx, (r + (LEVEL - a) / (b - a)) * dx])

    # segments are stored individually: on narrow grids two cells can join the same pair of edges
    segs_at: dict[tuple, list[int]] = {}
    segments = []
    for r in range(H - 1):
        for c in range(W):
            code = (int(above[r, c]) | int(above[r, c + 1]) << 1
                    | int(above[r + 1, c + 1]) << 2 | int(above[r + 1, c]) << 3)
            if code in (5, 10):
                centre_above = ext[r:r + 2, c:c + 2].mean() >= LEVEL
                # 5: TL and BR above; 10: TR and BL above. The centre joins the
                # corners on its own side, so the opposite pair gets cut off.
                if (code == 5) == centre_above:
                    segs = [("t", "r"), ("l", "b")]
                else:
                    segs = [("l", "t"), ("r", "b")]
            else:
                segs = _CASES[code]
            for e1, e2 in segs:
                k1, k2 = _edge_key(r, c, e1, W), _edge_key(r, c, e2, W)
                segs_at.setdefault(k1, []).append(len(segments))
                segs_at.setdefault(k2, []).append(len(segments))
                segments.append(((k1, crossing(r, c, e1)), (k2, crossing(r, c, e2))))

    used = [False] * len(segments)

    def walk(start, sid):
        # follow segments, carrying the periodic offset between cell frames
        (ka, pa), (kb, pb) = segments[sid]
        if ka != start:
            (ka, pa), (kb, pb) = (kb, pb), (ka, pa)
        pts = [pa, pb]
        used[sid] = True
        offset = np.zeros(2)
        cur = kb
        while True:
            if cur == start:
                return pts, True
            nxt = [i for i in segs_at[cur] if not used[i]]
            if not nxt:
                return pts, False
            sid = nxt[0]
            used[sid] = True
            (ka, pa), (kb, pb) = segments[sid]
            if ka != cur:
                (ka, pa), (kb, pb) = (kb, pb), (ka, pa)
            offset = pts[-1] - pa
            offset[0] = np.round(offset[0] / period) * period
            offset[1] = 0.0
            pts.append(pb + offset)
            cur = kb

    polylines = []
    # open chains start at edges touched by a single segment (top/bottom rows of the grid)
    for k in sorted(segs_at):
        ids = segs_at[k]
        if len(ids) == 1 and not used[ids[0]]:
            pts, closed = walk(k, ids[0])
            polylines.append(Polyline(np.array(pts), closed, period))
    for k in sorted(segs_at):
        for sid in segs_at[k]:
            if not used[sid]:
                pts, closed = walk(k, sid)
                polylines.append(Polyline(np.array(pts), closed, period))
    return InterfaceContour(polylines)


# ---------------------------------------------------------------- geometry

def perimeter(contour: InterfaceContour) -> float:
    return float(sum(np.linalg.norm(np.diff(pl.points, axis=0), axis=1).sum() for pl in contour.polylines))


def _resample(points: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    L = s[-1]
    n = max(int(round(L / spacing)), 2)
    t = np.linspace(0.0, L, n + 1)
    return np.stack([np.interp(t, s, points[:, 0]), np.interp(t, s, points[:, 1])], axis=1)


def menger_curvature(p0, p1, p2) -> np.ndarray:
    """Unsigned curvature of the circle through three points (arrays of shape n x 2)."""
    a = np.linalg.norm(p1 - p0, axis=-1)
    b = np.linalg.norm(p2 - p1, axis=-1)
    c = np.linalg.norm(p2 - p0, axis=-1)
    cross = (p1[..., 0] - p0[..., 0]) * (p2[..., 1] - p0[..., 1]) - (p1[..., 1] - p0[..., 1]) * (p2[..., 0] - p0[..., 0])
    denom = a * b * c
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(denom > 0, 2.0 * np.abs(cross) / denom, 0.0)  # 4 * area = 2 |cross|
    return k


def mean_abs_curvature(contour: InterfaceContour, dx: float = 1.0) -> float:
    """Mean |Menger curvature| over all contours resampled at spacing ``dx``.

    Endpoints of open polylines are excluded.
    """
    ks = []
    for pl in contour.polylines:
        if len(pl.points) < 3:
            continue
        rs = _resample(pl.points, dx)
        if pl.closed:
            shift = rs[-1] - rs[0]
            ring = np.concatenate([[rs[-2] - shift], rs])
            ks.append(menger_curvature(ring[:-2], ring[1:-1], ring[2:]))
        elif len(rs) >= 3:
            ks.append(menger_curvature(rs[:-2], rs[1:-1], rs[2:]))
    if not ks:
        raise CurvatureError("curvature undefined: no polyline with at least 3 points")
    return float(np.concatenate(ks).mean())


# ---------------------------------------------------------------- field QoIs

def _deepest_liquid_rows(phi: np.ndarray) -> np.ndarray:
    """Per column, the largest row index with phi < 0.5 (-1 where none)."""
    liquid = phi < LEVEL
    H = phi.shape[0]
    rev = liquid[::-1]
    has = rev.any(axis=0)
    return np.where(has, H - 1 - rev.argmax(axis=0), -1)


def deepest_liquid_row(phi) -> int:
    """Largest row index holding any liquid cell, -1 for an all-solid field."""
    return int(_deepest_liquid_rows(np.asarray(phi)).max())


def interface_rows(phi) -> np.ndarray:
    """Per column, the first solid row from the top (H where the column has no solid)."""
    solid = np.asarray(phi) >= LEVEL
    H = solid.shape[0]
    return np.where(solid.any(axis=0), solid.argmax(axis=0), H)


def penetration_depth(state: FieldState, r0: int) -> float:
    d = deepest_liquid_row(state.phi)
    return max(d - r0, 0) * state.dx


def species_volumes(state: FieldState) -> tuple[float, float]:
    solid = state.phi >= LEVEL
    a = state.dx**2
    return float(state.cA[solid].sum() * a), float(state.cB[solid].sum() * a)


def mean_ligament_height(state: FieldState) -> float:
    """Mean over columns of the solid cell count strictly above that column's deepest liquid cell."""
    phi = state.phi
    deepest = _deepest_liquid_rows(phi)
    solid = phi >= LEVEL
    rows = np.arange(phi.shape[0])[:, None]
    counts = (solid & (rows < deepest[None, :])).sum(axis=0)
    counts = counts[counts > 0]
    return float(counts.mean() * state.dx) if counts.size else 0.0


@dataclass
class QoiRecord:
    time: float
    perimeter: float
    mean_abs_curvature: float
    penetration_depth: float
    vol_A: float
    vol_B: float
    mean_ligament_height: float

    def values(self) -> tuple[float, ...]:
        return astuple(self)[1:]


def qoi_record(state: FieldState, r0: int) -> QoiRecord:
    contour = extract_interface(state.phi, state.dx)
    try:
        kappa = mean_abs_curvature(contour, state.dx)
    except CurvatureError:
        kappa = 0.0
    va, vb = species_volumes(state)
    return QoiRecord(state.time, perimeter(contour), kappa, penetration_depth(state, r0),
                     va, vb, mean_ligament_height(state))


def qoi_series(trajectory: Iterable[FieldState], r0: int) -> list[QoiRecord]:
    return [qoi_record(s, r0) for s in trajectory]


def series_array(series: Sequence[QoiRecord]) -> np.ndarray:
    return np.array([astuple(r) for r in series], dtype=np.float64).reshape(-1, len(CSV_HEADER))


def qoi_errors(pred: Sequence[QoiRecord], ref: Sequence[QoiRecord], time_tol: float = 1e-9) -> dict[str, float]:
    """Per-QoI relative L2 of ``pred`` against ``ref`` linearly interpolated onto pred times.

    Prediction times outside the reference span are dropped; an empty overlap
    raises AlignmentError.
    """
    P = series_array(pred)
    R = series_array(ref)
    R = R[np.argsort(R[:, 0], kind="stable")]
    t = P[:, 0]
    lo, hi = R[0, 0] - time_tol, R[-1, 0] + time_tol
    keep = (t >= lo) & (t <= hi)
    if not keep.any():
        raise AlignmentError(f"prediction times [{t.min()}, {t.max()}] do not overlap reference [{R[0, 0]}, {R[-1, 0]}]")
    P = P[keep]
    out = {}
    for j, name in enumerate(QOI_NAMES, start=1):
        ref_j = np.interp(P[:, 0], R[:, 0], R[:, j])
        out[name] = relative_l2(P[:, j], ref_j)
    return out


# ---------------------------------------------------------------- CSV

def fmt9(v: float) -> str:
    return np.format_float_positional(float(v), precision=9, unique=False, fractional=False, trim="k")


def write_qoi_csv(series: Sequence[QoiRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in series:
            w.writerow([fmt9(v) for v in astuple(rec)])


def read_qoi_csv(path) -> list[QoiRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    return [QoiRecord(*(float(v) for v in row)) for row in rows[1:] if row]


class QoiExtractor(TransformerMixin, BaseEstimator):
    """Map a trajectory (sequence of FieldState) to an n x 7 QoI matrix (time first)."""

    def __init__(self, r0: int = 16):
        self.r0 = r0

    def fit(self, X, y=None):
        self.n_features_out_ = len(CSV_HEADER)
        return self

    def transform(self, X):
        return series_array(qoi_series(X, self.r0))

    def get_feature_names_out(self, input_features=None):
        return np.array(CSV_HEADER, dtype=object)
