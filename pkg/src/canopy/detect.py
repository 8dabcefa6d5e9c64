"""Peak finding over confidence maps and overlap-discarding tiled inference.

Peak rule: pixel p is a detection iff its value passes the threshold and
it beats every other pixel q in the square window of side 2d+1 centered
on p -- strictly for q earlier than p in row-major order, ties allowed
for later q.  That makes exactly one pixel of any tied plateau survive
(the row-major first) and guarantees no two detections lie within
Chebyshev distance d.  Threshold: absolute mode keeps values >= t_abs;
relative mode keeps values strictly above t_rel * max(map), so an
all-zero map yields no detections.

Tiled inference splits a large raster into read windows that overlap by
a margin; after the network runs, only each window's keep region is
retained, and the keep regions partition the raster exactly.  Peak
finding then runs on its own overlapping grid over the stitched
confidence raster with the same keep rule (the relative threshold uses
the stitched map's global maximum, so results do not depend on grid
placement or processing order).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from . import tensor as T
from .data import PointSet, RasterTile, normalize_window, points_to_geographic
from .model import ModelParams, forward
from .tensor import Tensor


@dataclass
class PeakParams:
    d: int = 3  # minimum Chebyshev distance between peaks
    mode: str = "absolute"  # "absolute" | "relative"
    t_abs: float = 0.2
    t_rel: float = 0.5

    def validate(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d}")
        if self.mode not in ("absolute", "relative"):
            raise ValueError(f"mode must be 'absolute' or 'relative', got {self.mode!r}")
        if self.mode == "relative" and not 0.0 < self.t_rel < 1.0:
            raise ValueError(f"t_rel must lie in (0, 1), got {self.t_rel}")

    def to_dict(self):
        return {"d": int(self.d), "mode": self.mode,
                "t_abs": float(self.t_abs), "t_rel": float(self.t_rel)}

    @classmethod
    def from_dict(cls, d):
        p = cls(d=int(d["d"]), mode=d["mode"], t_abs=float(d["t_abs"]),
                t_rel=float(d["t_rel"]))
        p.validate()
        return p


def find_peaks(conf, params: PeakParams, relative_max=None) -> PointSet:
    """Detect peaks in a 2D confidence map; returns pixel-frame points
    sorted by (y, x), each carrying its confidence value.

    relative_max overrides the map maximum used by relative mode (tiled
    inference passes the stitched raster's global maximum).
    """
    params.validate()
    m = np.asarray(conf, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("find_peaks expects a 2D map")
    if not np.all(np.isfinite(m)):
        raise ValueError("confidence map contains non-finite values")
    m = m + 0.0  # canonicalize -0.0

    if params.mode == "absolute":
        above = m >= params.t_abs
    else:
        gmax = float(m.max() if relative_max is None else relative_max)
        above = m > params.t_rel * gmax

    d = int(params.d)
    size = 2 * d + 1
    local_max = m >= maximum_filter(m, size=size, mode="constant", cval=-np.inf)
    cand_y, cand_x = np.nonzero(local_max & above)

    h, w = m.shape
    ys, xs = [], []
    for y, x in zip(cand_y, cand_x):
        y0, y1 = max(0, y - d), min(h, y + d + 1)
        x0, x1 = max(0, x - d), min(w, x + d + 1)
        win = m[y0:y1, x0:x1]
        ok = True
        for ty, tx in zip(*np.nonzero(win == m[y, x])):
            qy, qx = y0 + ty, x0 + tx
            if (qy, qx) < (y, x):
                ok = False
                break
        if ok:
            ys.append(y)
            xs.append(x)
    xy = np.stack([np.asarray(xs, np.float64), np.asarray(ys, np.float64)], axis=1) \
        if ys else np.zeros((0, 2))
    conf_vals = m[np.asarray(ys, int), np.asarray(xs, int)] if ys else np.zeros(0)
    return PointSet(xy, "pixel", None, conf_vals)


# ---------------------------------------------------------------------------
# tile grids


@dataclass
class TileGrid:
    """Overlapping read windows whose keep regions partition the raster.

    Interior keep regions are inset by `overlap` from their read window;
    at raster borders the discarded margin shrinks to zero so coverage
    stays exact.  A raster no larger than one tile becomes a single
    window with read == keep.
    """

    tile_size: int = 2112
    overlap: int = 32

    def validate(self):
        if self.overlap < 0:
            raise ValueError("overlap must be >= 0")
        if self.tile_size <= 2 * self.overlap:
            raise ValueError(
                f"tile_size must exceed 2*overlap, got {self.tile_size} vs 2*{self.overlap}"
            )

    def split(self, n):
        """1D decomposition: list of (read0, read1, keep0, keep1)."""
        self.validate()
        t, v = self.tile_size, self.overlap
        if n <= t:
            return [(0, n, 0, n)]
        step = t - 2 * v
        out = []
        keep_start = 0
        while True:
            if keep_start == 0:
                keep_end = t - v
                read = (0, t)
            elif keep_start + step + v >= n:
                keep_end = n
                read = (keep_start - v, n)
            else:
                keep_end = keep_start + step
                read = (keep_start - v, keep_end + v)
            out.append((read[0], read[1], keep_start, keep_end))
            if keep_end == n:
                return out
            keep_start = keep_end

    def windows(self, h, w):
        """2D products: list of ((ry0,ry1,rx0,rx1), (ky0,ky1,kx0,kx1))."""
        rows = self.split(h)
        cols = self.split(w)
        out = []
        for ry0, ry1, ky0, ky1 in rows:
            for rx0, rx1, kx0, kx1 in cols:
                out.append(((ry0, ry1, rx0, rx1), (ky0, ky1, kx0, kx1)))
        return out


def pad_to_multiple(arr, multiple, axes=(-2, -1)):
    """Symmetric-pad trailing axes up to the next multiple (reflection that
    includes the edge pixel, applied repeatedly for tiny inputs)."""
    arr = np.asarray(arr)
    target = [int(np.ceil(arr.shape[a] / multiple)) * multiple for a in axes]
    while any(arr.shape[a] < t for a, t in zip(axes, target)):
        pads = [(0, 0)] * arr.ndim
        for a, t in zip(axes, target):
            need = t - arr.shape[a]
            if need > 0:
                pads[a % arr.ndim] = (0, min(need, arr.shape[a]))
        arr = np.pad(arr, pads, mode="symmetric")
    return arr


def tiled_confidence(tile: RasterTile, forward_fn, grid: TileGrid,
                     size_multiple=16, jobs=1):
    """Stitched confidence raster from per-window forward passes.

    forward_fn maps a normalized (5, h, w) window to an (h, w) confidence
    map.  Windows are padded at the bottom/right (symmetric reflection)
    up to size_multiple before the forward pass and cropped after.
    """
    h, w = tile.height, tile.width
    out = np.empty((h, w), np.float32)
    wins = grid.windows(h, w)

    def run(win):
        (ry0, ry1, rx0, rx1), (ky0, ky1, kx0, kx1) = win
        x5 = normalize_window(tile, ry0, ry1, rx0, rx1)
        padded = pad_to_multiple(x5, size_multiple)
        conf = np.asarray(forward_fn(padded))[: ry1 - ry0, : rx1 - rx0]
        out[ky0:ky1, kx0:kx1] = conf[ky0 - ry0 : ky1 - ry0, kx0 - rx0 : kx1 - rx0]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(run, wins))
    else:
        for win in wins:
            run(win)
    return out


def model_forward_fn(params: ModelParams):
    """Single-window inference closure for tiled_confidence."""

    def fn(x5):
        with T.no_grad():
            return forward(params, Tensor(x5[None]), mode="infer").confidence.data[0, 0]

    return fn


def tiled_peaks(conf, params: PeakParams, grid: TileGrid, jobs=1) -> PointSet:
    """find_peaks over an overlapping grid with keep-window filtering.

    Requires grid.overlap >= params.d so that every keep-region decision
    sees the same neighborhood it would in the whole map; the relative
    threshold uses the global maximum of the stitched map.
    """
    params.validate()
    if grid.overlap < params.d:
        raise ValueError(
            f"peak grid overlap ({grid.overlap}) must be >= minimum peak distance ({params.d})"
        )
    conf = np.asarray(conf)
    gmax = float(conf.max()) if params.mode == "relative" else None
    results = []

    def run(win):
        (ry0, ry1, rx0, rx1), (ky0, ky1, kx0, kx1) = win
        ps = find_peaks(conf[ry0:ry1, rx0:rx1], params, relative_max=gmax)
        if not len(ps):
            return np.zeros((0, 3))
        xs = ps.xy[:, 0] + rx0
        ys = ps.xy[:, 1] + ry0
        keep = (ys >= ky0) & (ys < ky1) & (xs >= kx0) & (xs < kx1)
        return np.stack([xs[keep], ys[keep], ps.confidence[keep]], axis=1)

    wins = grid.windows(*conf.shape)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run, wins))
    else:
        results = [run(w) for w in wins]
    merged = np.concatenate(results, axis=0) if results else np.zeros((0, 3))
    order = np.lexsort((merged[:, 0], merged[:, 1]))  # by (y, x)
    merged = merged[order]
    return PointSet(merged[:, :2], "pixel", None, merged[:, 2])


def detect_tiled(tile: RasterTile, params: ModelParams, peak_params: PeakParams,
                 grid: TileGrid | None = None, peak_grid: TileGrid | None = None,
                 jobs=1):
    """Full pipeline on one raster: tiled network inference, tiled peak
    finding, conversion to geographic coordinates.

    Returns (points, confidence_raster); points are geographic with
    per-point confidences, sorted by pixel (y, x).
    """
    grid = grid if grid is not None else TileGrid(2112, 32)
    peak_grid = peak_grid if peak_grid is not None else TileGrid(256, 32)
    conf = tiled_confidence(tile, model_forward_fn(params), grid,
                            size_multiple=16, jobs=jobs)
    pixel_pts = tiled_peaks(conf, peak_params, peak_grid, jobs=jobs)
    geo = points_to_geographic(pixel_pts, tile)
    return geo, conf
