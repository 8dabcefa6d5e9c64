"""Raster and annotation handling: I/O, normalization, targets, augmentation.

Coordinate conventions used everywhere in this package:
  * pixel coordinates are (x, y) with x along width and y along height;
    an integer coordinate is the center of that pixel,
  * geographic coordinates assume a north-up geotransform, so
    geo = (origin_x + x * pixel_size, origin_y - y * pixel_size)
    and pixel (0, 0) sits exactly at (origin_x, origin_y).

Raster file format: one UTF-8 JSON header (magic, version, width, height,
band roles, dtype u8|f32, geotransform, crs), a single NUL separator,
then band-sequential little-endian payload.  Round-trips are bit-exact.

Points file format: CSV with a leading comment line
    # frame=pixel|geographic, crs=<id>
followed by an "x,y" or "x,y,confidence" header and one row per point.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CrsMismatchError, PointsFormatError, RasterFormatError

BAND_ROLES = ("R", "G", "B", "N", "V")

# Channel centering for the R,G,B bands (standard published ImageNet/VGG
# means); stored in the weight container so data prep and model agree.
RGB_MEANS = (123.68, 116.779, 103.939)
NIR_OFFSET = 127.5
NDVI_SCALE = 127.5

RASTER_MAGIC = "canopy-raster"
RASTER_VERSION = 1


@dataclass
class GeoTransform:
    origin_x: float
    origin_y: float
    pixel_size: float  # meters per pixel, north-up

    def pixel_to_geo(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        out = np.empty_like(xy)
        out[..., 0] = self.origin_x + xy[..., 0] * self.pixel_size
        out[..., 1] = self.origin_y - xy[..., 1] * self.pixel_size
        return out

    def geo_to_pixel(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        out = np.empty_like(xy)
        out[..., 0] = (xy[..., 0] - self.origin_x) / self.pixel_size
        out[..., 1] = (self.origin_y - xy[..., 1]) / self.pixel_size
        return out


@dataclass
class RasterTile:
    """Multi-band pixel grid with georeferencing.

    bands is an ordered list of (role, 2D float32 grid); R,G,B,N hold DN
    values in [0, 255] and V (NDVI) lies in [-1, 1].
    """

    bands: list
    geotransform: GeoTransform
    crs: Optional[str] = None

    @property
    def height(self):
        return self.bands[0][1].shape[0]

    @property
    def width(self):
        return self.bands[0][1].shape[1]

    @property
    def roles(self):
        return [r for r, _ in self.bands]

    def band(self, role):
        for r, g in self.bands:
            if r == role:
                return g
        raise ValueError(f"raster has no band with role {role!r}")

    def has_band(self, role):
        return any(r == role for r, _ in self.bands)

    def validate(self):
        shapes = {g.shape for _, g in self.bands}
        if len(shapes) != 1:
            raise ValueError(f"bands disagree on shape: {sorted(shapes)}")
        for r, g in self.bands:
            if r not in BAND_ROLES:
                raise ValueError(f"unknown band role {r!r}")
            if r == "V":
                if g.min() < -1.0 - 1e-6 or g.max() > 1.0 + 1e-6:
                    raise ValueError("V band outside [-1, 1]")
            elif g.min() < 0 or g.max() > 255:
                raise ValueError(f"band {r} outside DN range [0, 255]")


@dataclass
class PointSet:
    """2D points in pixel or geographic coordinates, optional confidences."""

    xy: np.ndarray  # (n, 2) float64
    frame: str = "pixel"  # "pixel" | "geographic"
    crs: Optional[str] = None
    confidence: Optional[np.ndarray] = None

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if self.frame not in ("pixel", "geographic"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if self.confidence.shape[0] != self.xy.shape[0]:
                raise ValueError("confidence length != number of points")

    def __len__(self):
        return self.xy.shape[0]


def points_to_pixel(points: PointSet, tile: RasterTile) -> PointSet:
    """Express points in the tile's pixel frame (checks CRS agreement)."""
    if points.frame == "pixel":
        return points
    if points.crs is not None and tile.crs is not None and points.crs != tile.crs:
        raise CrsMismatchError(f"points crs {points.crs!r} != raster crs {tile.crs!r}")
    return PointSet(tile.geotransform.geo_to_pixel(points.xy), "pixel", tile.crs,
                    points.confidence)


def points_to_geographic(points: PointSet, tile: RasterTile) -> PointSet:
    if points.frame == "geographic":
        return points
    return PointSet(tile.geotransform.pixel_to_geo(points.xy), "geographic", tile.crs,
                    points.confidence)


# ---------------------------------------------------------------------------
# derived bands and normalization


def compute_ndvi(r_band, n_band):
    """(N - R) / (N + R) per pixel; defined as 0 where N + R == 0."""
    r = np.asarray(r_band, dtype=np.float64)
    n = np.asarray(n_band, dtype=np.float64)
    if r.shape != n.shape:
        raise ValueError(f"band shape mismatch: {r.shape} vs {n.shape}")
    denom = n + r
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom == 0.0, 0.0, (n - r) / denom)
    return v.astype(np.float32)


def normalize_window(tile: RasterTile, y0, y1, x0, x1):
    """normalize() restricted to a pixel window (NDVI is per-pixel, so this
    equals slicing the full normalized stack)."""
    for role in ("R", "G", "B", "N"):
        if not tile.has_band(role):
            raise ValueError(f"normalize requires band {role!r}")
    r = tile.band("R")[y0:y1, x0:x1]
    g = tile.band("G")[y0:y1, x0:x1]
    b = tile.band("B")[y0:y1, x0:x1]
    n = tile.band("N")[y0:y1, x0:x1]
    if tile.has_band("V"):
        v = tile.band("V")[y0:y1, x0:x1]
    else:
        v = compute_ndvi(r, n)
    out = np.empty((5, y1 - y0, x1 - x0), np.float32)
    out[0] = r - np.float32(RGB_MEANS[0])
    out[1] = g - np.float32(RGB_MEANS[1])
    out[2] = b - np.float32(RGB_MEANS[2])
    out[3] = n - np.float32(NIR_OFFSET)
    out[4] = v * np.float32(NDVI_SCALE)
    return out


def normalize(tile: RasterTile):
    """Band-normalized planar stack (5, H, W): R,G,B zero-centered by the
    fixed channel means, N shifted by -127.5, NDVI scaled by 127.5."""
    return normalize_window(tile, 0, tile.height, 0, tile.width)


def denormalize(stack):
    """Inverse of normalize(); returns dict of R,G,B,N,V grids."""
    stack = np.asarray(stack)
    return {
        "R": stack[0] + np.float32(RGB_MEANS[0]),
        "G": stack[1] + np.float32(RGB_MEANS[1]),
        "B": stack[2] + np.float32(RGB_MEANS[2]),
        "N": stack[3] + np.float32(NIR_OFFSET),
        "V": stack[4] / np.float32(NDVI_SCALE),
    }


# ---------------------------------------------------------------------------
# training targets


def build_target(points, h, w, sigma_px):
    """Target confidence map: per-pixel max over per-point Gaussians.

    C(x, y) = max_i exp(-((x-x_i)^2 + (y-y_i)^2) / (2 sigma^2)).
    points may be a PointSet in the pixel frame or an (n, 2) array of
    (x, y); real-valued (sub-pixel) locations are allowed.
    """
    if sigma_px <= 0:
        raise ValueError("sigma_px must be positive")
    if isinstance(points, PointSet):
        if points.frame != "pixel":
            raise ValueError("build_target expects pixel-frame points")
        pts = points.xy
    else:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    acc = np.zeros((h, w), np.float64)
    if len(pts):
        yy = np.arange(h, dtype=np.float64)[:, None]
        xx = np.arange(w, dtype=np.float64)[None, :]
        s2 = 2.0 * float(sigma_px) ** 2
        for px, py in pts:
            np.maximum(acc, np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / s2), out=acc)
    return acc.astype(np.float32)


def build_attention_mask(target, tau):
    """Binary mask: 1 where the target confidence exceeds tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return (np.asarray(target) > tau).astype(np.float32)


def sigma_px_for(tile_or_pixel_size, sigma_m):
    ps = tile_or_pixel_size
    if isinstance(ps, RasterTile):
        ps = ps.geotransform.pixel_size
    return float(sigma_m) / float(ps)


# ---------------------------------------------------------------------------
# eightfold augmentation


def _transform_points(xy, n, k, flip):
    """Point images under k CCW quarter-turns then optional horizontal flip,
    for an n x n tile in pixel-center coordinates."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    x, y = xy[:, 0].copy(), xy[:, 1].copy()
    last = n - 1
    for _ in range(k % 4):
        x, y = y, last - x
    if flip:
        x = last - x
    return np.stack([x, y], axis=1)


def augment_stack(arr, xy):
    """All 8 dihedral variants of a square image stack and its points.

    arr: (..., H, W) with H == W.  Returns a list of (array, points)
    pairs ordered [rot0, rot90, rot180, rot270, rot0+flip, ...]; the
    first member is the unmodified input.
    """
    arr = np.asarray(arr)
    h, w = arr.shape[-2], arr.shape[-1]
    if h != w:
        raise ValueError(f"augmentation requires a square tile, got {h}x{w}")
    out = []
    for flip in (False, True):
        for k in range(4):
            img = np.rot90(arr, k, axes=(-2, -1))
            if flip:
                img = np.flip(img, axis=-1)
            out.append((np.ascontiguousarray(img), _transform_points(xy, h, k, flip)))
    return out


def augment_eightfold(tile: RasterTile, points: PointSet):
    """augment_stack lifted to (RasterTile, PointSet) pairs."""
    if tile.height != tile.width:
        raise ValueError(f"augmentation requires a square tile, got {tile.height}x{tile.width}")
    pts = points_to_pixel(points, tile)
    stack = np.stack([g for _, g in tile.bands])
    roles = tile.roles
    out = []
    for img, xy in augment_stack(stack, pts.xy):
        bands = [(r, img[i]) for i, r in enumerate(roles)]
        t = RasterTile(bands, tile.geotransform, tile.crs)
        out.append((t, PointSet(xy, "pixel", tile.crs, pts.confidence)))
    return out


# ---------------------------------------------------------------------------
# train/validation split


def split_train_val(items, fraction=0.10, seed=0):
    """Deterministic tile-level split; validation size is ceil(n*fraction).

    Returns (train, val) lists preserving nothing of the input order
    beyond the seeded permutation, disjoint and exhaustive.
    """
    items = list(items)
    n = len(items)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_val = min(n, math.ceil(n * fraction))
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [items[i] for i in range(n) if i not in val_idx]
    val = [items[i] for i in range(n) if i in val_idx]
    return train, val


# ---------------------------------------------------------------------------
# raster file I/O


def save_raster(tile: RasterTile, path, dtype=None):
    """Write the native raster format.  dtype "u8" stores 8-bit DN (all
    band values must already be integral in [0,255]); "f32" stores raw
    float32.  Default: u8 when lossless, f32 otherwise."""
    tile.validate()
    grids = [g for _, g in tile.bands]
    if dtype is None:
        lossless_u8 = all(
            r != "V" and np.all(g == np.round(g)) and g.min() >= 0 and g.max() <= 255
            for r, g in tile.bands
        )
        dtype = "u8" if lossless_u8 else "f32"
    if dtype not in ("u8", "f32"):
        raise ValueError(f"dtype must be 'u8' or 'f32', got {dtype!r}")
    if dtype == "u8":
        for r, g in tile.bands:
            if r == "V" or not np.all(g == np.round(g)):
                raise ValueError("u8 storage requires integral DN bands (no V band)")
    header = {
        "magic": RASTER_MAGIC,
        "version": RASTER_VERSION,
        "width": tile.width,
        "height": tile.height,
        "bands": tile.roles,
        "dtype": dtype,
        "geotransform": {
            "origin_x": tile.geotransform.origin_x,
            "origin_y": tile.geotransform.origin_y,
            "pixel_size": tile.geotransform.pixel_size,
        },
        "crs": tile.crs,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        f.write(b"\0")
        for g in grids:
            if dtype == "u8":
                f.write(np.ascontiguousarray(g, dtype=np.uint8).tobytes())
            else:
                f.write(np.ascontiguousarray(g, dtype="<f4").tobytes())


def load_raster(path) -> RasterTile:
    with open(path, "rb") as f:
        blob = f.read()
    sep = blob.find(b"\0")
    if sep < 0:
        raise RasterFormatError("raster file has no header separator")
    try:
        header = json.loads(blob[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RasterFormatError(f"bad raster header: {e}") from e
    if header.get("magic") != RASTER_MAGIC:
        raise RasterFormatError("not a raster file (magic mismatch)")
    if header.get("version") != RASTER_VERSION:
        raise RasterFormatError(f"unsupported raster version {header.get('version')}")
    w, h = header["width"], header["height"]
    roles = header["bands"]
    for r in roles:
        if r not in BAND_ROLES:
            raise RasterFormatError(f"unknown band role {r!r}")
    dtype = header["dtype"]
    if dtype not in ("u8", "f32"):
        raise RasterFormatError(f"unknown dtype {dtype!r}")
    itemsize = 1 if dtype == "u8" else 4
    expect = len(roles) * w * h * itemsize
    payload = blob[sep + 1 :]
    if len(payload) != expect:
        raise RasterFormatError(
            f"payload length {len(payload)} != expected {expect} (truncated or trailing bytes)"
        )
    bands = []
    for i, r in enumerate(roles):
        raw = payload[i * w * h * itemsize : (i + 1) * w * h * itemsize]
        if dtype == "u8":
            g = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float32)
        else:
            g = np.frombuffer(raw, dtype="<f4").reshape(h, w).copy()
        bands.append((r, g))
    gt = header["geotransform"]
    tile = RasterTile(
        bands,
        GeoTransform(gt["origin_x"], gt["origin_y"], gt["pixel_size"]),
        header.get("crs"),
    )
    tile.validate()
    return tile


# ---------------------------------------------------------------------------
# points file I/O


def save_points(points: PointSet, path):
    with open(path, "w", encoding="utf-8") as f:
        crs_part = f", crs={points.crs}" if points.crs else ""
        f.write(f"# frame={points.frame}{crs_part}\n")
        if points.confidence is not None:
            f.write("x,y,confidence\n")
            for (x, y), c in zip(points.xy, points.confidence):
                f.write(f"{float(x)!r},{float(y)!r},{float(c)!r}\n")
        else:
            f.write("x,y\n")
            for x, y in points.xy:
                f.write(f"{float(x)!r},{float(y)!r}\n")


def load_points(path) -> PointSet:
    frame = None
    crs = None
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for part in line[1:].split(","):
                    part = part.strip()
                    if part.startswith("frame="):
                        frame = part[len("frame="):].strip()
                    elif part.startswith("crs="):
                        crs = part[len("crs="):].strip() or None
                continue
            if header is None:
                header = [c.strip().lower() for c in line.split(",")]
                if header not in (["x", "y"], ["x", "y", "confidence"]):
                    raise PointsFormatError(
                        f"{path}:{lineno}: header must be 'x,y' or 'x,y,confidence', got {line!r}"
                    )
                continue
            cells = line.split(",")
            if len(cells) != len(header):
                raise PointsFormatError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as e:
                raise PointsFormatError(f"{path}:{lineno}: {e}") from e
    if header is None:
        raise PointsFormatError(f"{path}: no header line found")
    if frame is None:
        frame = "pixel"
    if frame not in ("pixel", "geographic"):
        raise PointsFormatError(f"{path}: unknown frame {frame!r}")
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, len(header))
    conf = arr[:, 2] if len(header) == 3 else None
    return PointSet(arr[:, :2], frame, crs, conf)


# ---------------------------------------------------------------------------
# dataset directories


def load_dataset(directory):
    """Load a dataset directory into [(RasterTile, PointSet in pixel frame)].

    Prefers manifest.json ({"scenes": [{"raster":..., "points":...}]});
    otherwise pairs every *.rast file with the same-stem .csv.
    """
    directory = os.fspath(directory)
    manifest_path = os.path.join(directory, "manifest.json")
    pairs = []
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        for scene in manifest["scenes"]:
            pairs.append((os.path.join(directory, scene["raster"]),
                          os.path.join(directory, scene["points"])))
    else:
        for name in sorted(os.listdir(directory)):
            if name.endswith(".rast"):
                stem = name[: -len(".rast")]
                pairs.append((os.path.join(directory, name),
                              os.path.join(directory, stem + ".csv")))
    if not pairs:
        raise RasterFormatError(f"no dataset found under {directory}")
    out = []
    for rpath, ppath in pairs:
        tile = load_raster(rpath)
        pts = points_to_pixel(load_points(ppath), tile)
        out.append((tile, pts))
    return out
