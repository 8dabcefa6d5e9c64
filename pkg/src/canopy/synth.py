"""Deterministic synthetic urban-canopy scenes with exact ground truth.

Scenes render soft-edged tree canopies (green-dominant RGB, elevated
NIR) over a pavement background with grass patches, roof rectangles,
and optional shadow ellipses, then add DN noise and quantize to 8-bit.
Canopy cores sit well above NDVI 0.3 while pavement and roofs stay
below 0.1, so the detection task is learnable at desk scale and the
planted centers provide exact evaluation ground truth.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import GeoTransform, PointSet, RasterTile, save_points, save_raster


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 256
    pixel_size: float = 0.6  # meters
    n_trees: int = 18
    radius_range_m: tuple = (1.5, 3.6)
    min_separation_px: float = 9.0
    pavement: tuple = (128, 126, 122)  # DN triples
    grass: tuple = (96, 142, 88)
    roof: tuple = (152, 90, 80)
    tree: tuple = (62, 112, 58)
    nir_boost: float = 0.8  # scales vegetation NIR above its red DN
    shadow_prob: float = 0.35
    shadow_offset_px: tuple = (2.5, 1.8)
    noise_sigma: float = 2.0
    n_grass: int = 3
    n_roofs: int = 3
    origin: tuple = (500000.0, 3800000.0)
    crs: str = "EPSG:26911"
    seed: int = 0

    def validate(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("scene must be at least 16x16")
        if self.radius_range_m[0] <= 0 or self.radius_range_m[0] > self.radius_range_m[1]:
            raise ValueError(f"bad radius range {self.radius_range_m}")
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.pixel_size <= 0:
            raise ValueError("pixel_size must be positive")


def _nir_for(rgb, factor):
    return float(rgb[0]) * factor


def _place_trees(rng, spec: SceneSpec, radii_px):
    margin = radii_px + 2.0
    if spec.n_trees and (2 * margin.max() >= min(spec.width, spec.height) - 1):
        raise ValueError(
            f"scene {spec.width}x{spec.height} too small for canopy radius "
            f"{radii_px.max():.1f}px plus margin"
        )
    centers = []
    attempts = 0
    limit = 800 * max(spec.n_trees, 1)
    for i in range(spec.n_trees):
        while True:
            attempts += 1
            if attempts > limit:
                raise ValueError(
                    f"could not place {spec.n_trees} trees with separation "
                    f"{spec.min_separation_px}px after {limit} attempts"
                )
            x = rng.uniform(margin[i], spec.width - 1 - margin[i])
            y = rng.uniform(margin[i], spec.height - 1 - margin[i])
            if all((x - cx) ** 2 + (y - cy) ** 2 >= spec.min_separation_px ** 2
                   for cx, cy in centers):
                centers.append((x, y))
                break
    return np.asarray(centers, dtype=np.float64).reshape(-1, 2)


def generate_scene(spec: SceneSpec):
    """Render one scene; returns (RasterTile with R,G,B,N bands, PointSet of
    exact tree centers in the pixel frame).  Identical specs (including
    seed) produce identical bytes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    img = np.empty((4, h, w), np.float64)  # R, G, B, N
    for c in range(3):
        img[c] = spec.pavement[c]
    img[3] = _nir_for(spec.pavement, 0.95)

    for _ in range(spec.n_grass):
        gw = rng.integers(w // 6, w // 2)
        gh = rng.integers(h // 6, h // 2)
        gx = rng.integers(0, w - gw)
        gy = rng.integers(0, h - gh)
        sel = (slice(gy, gy + gh), slice(gx, gx + gw))
        for c in range(3):
            img[c][sel] = spec.grass[c]
        img[3][sel] = _nir_for(spec.grass, 1.0 + 0.45 * spec.nir_boost)

    for _ in range(spec.n_roofs):
        rw = rng.integers(w // 8, w // 3)
        rh = rng.integers(h // 8, h // 3)
        rx = rng.integers(0, w - rw)
        ry = rng.integers(0, h - rh)
        sel = (slice(ry, ry + rh), slice(rx, rx + rw))
        for c in range(3):
            img[c][sel] = spec.roof[c]
        img[3][sel] = _nir_for(spec.roof, 0.7)

    radii_px = rng.uniform(spec.radius_range_m[0], spec.radius_range_m[1],
                           size=spec.n_trees) / spec.pixel_size
    centers = _place_trees(rng, spec, radii_px)

    # shadows first so canopies draw over their own shadow edge
    shadow_draws = rng.uniform(size=spec.n_trees)
    for i, (cx, cy) in enumerate(centers):
        if shadow_draws[i] > spec.shadow_prob:
            continue
        r = radii_px[i]
        sx = cx + spec.shadow_offset_px[0]
        sy = cy + spec.shadow_offset_px[1]
        mask = (((xx - sx) / (1.15 * r)) ** 2 + ((yy - sy) / (0.85 * r)) ** 2) <= 1.0
        for c in range(3):
            img[c][mask] *= 0.55
        img[3][mask] *= 0.6

    tree_nir = _nir_for(spec.tree, 1.0 + 2.75 * spec.nir_boost)
    phases = rng.uniform(0, 2 * np.pi, size=spec.n_trees)
    tints = rng.uniform(0.85, 1.15, size=spec.n_trees)
    for i, (cx, cy) in enumerate(centers):
        r = radii_px[i]
        dx, dy = xx - cx, yy - cy
        rho = np.sqrt(dx * dx + dy * dy)
        theta = np.arctan2(dy, dx)
        r_eff = r * (1.0 + 0.06 * np.sin(3 * theta + phases[i]))
        f = np.clip(1.0 - (rho / r_eff) ** 2, 0.0, 1.0) ** 0.6
        colors = [min(255.0, spec.tree[c] * tints[i]) for c in range(3)]
        colors.append(min(255.0, tree_nir * tints[i]))
        for c in range(4):
            img[c] = img[c] * (1.0 - f) + colors[c] * f

    img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(np.round(img), 0, 255).astype(np.float32)

    gt = GeoTransform(spec.origin[0], spec.origin[1], spec.pixel_size)
    tile = RasterTile([(r, img[i]) for i, r in enumerate("RGBN")], gt, spec.crs)
    return tile, PointSet(centers, "pixel", spec.crs)


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def generate_dataset(n_scenes, spec: SceneSpec, out_dir, log=None):
    """Write n_scenes scenes (seed + i each) plus a checksummed manifest.

    Scene origins are offset so rasters occupy disjoint geographic
    extents.  Returns the manifest dict.
    """
    os.makedirs(out_dir, exist_ok=True)
    scenes = []
    for i in range(n_scenes):
        ox = spec.origin[0] + i * 2.0 * spec.width * spec.pixel_size
        sc = replace(spec, seed=spec.seed + i, origin=(ox, spec.origin[1]))
        tile, pts = generate_scene(sc)
        rname = f"scene_{i:03d}.rast"
        pname = f"scene_{i:03d}.csv"
        save_raster(tile, os.path.join(out_dir, rname), dtype="u8")
        save_points(pts, os.path.join(out_dir, pname))
        scenes.append(
            {
                "raster": rname,
                "points": pname,
                "n_trees": len(pts),
                "seed": sc.seed,
                "sha256_raster": _sha256(os.path.join(out_dir, rname)),
                "sha256_points": _sha256(os.path.join(out_dir, pname)),
            }
        )
        if log is not None:
            log(f"scene {i}: {len(pts)} trees -> {rname}")
    manifest = {
        "format_version": 1,
        "n_scenes": n_scenes,
        "spec": asdict(spec),
        "scenes": scenes,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest


def verify_manifest(directory):
    """Recompute file checksums against manifest.json; returns mismatches."""
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    bad = []
    for scene in manifest["scenes"]:
        for key, name in (("sha256_raster", scene["raster"]),
                          ("sha256_points", scene["points"])):
            if _sha256(os.path.join(directory, name)) != scene[key]:
                bad.append(name)
    return bad
