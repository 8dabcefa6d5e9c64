"""Synthetic scene generator: determinism, spectral properties, dataset I/O."""

import numpy as np
import pytest
from dataclasses import replace

from canopy.data import compute_ndvi, load_dataset
from canopy.synth import SceneSpec, generate_dataset, generate_scene, verify_manifest

SMALL = SceneSpec(width=96, height=96, n_trees=6, n_grass=1, n_roofs=1, seed=5)


def ndvi_of(tile):
    return compute_ndvi(tile.band("R"), tile.band("N"))


class TestGenerateScene:
    def test_no_trees_no_grass_low_ndvi(self):
        spec = replace(SMALL, n_trees=0, n_grass=0)
        tile, pts = generate_scene(spec)
        assert len(pts) == 0
        assert ndvi_of(tile).max() < 0.1

    def test_same_seed_identical_bytes(self, tmp_path):
        from canopy.data import save_raster

        t1, p1 = generate_scene(SMALL)
        t2, p2 = generate_scene(SMALL)
        np.testing.assert_array_equal(p1.xy, p2.xy)
        f1, f2 = tmp_path / "a.rast", tmp_path / "b.rast"
        save_raster(t1, f1, dtype="u8")
        save_raster(t2, f2, dtype="u8")
        assert f1.read_bytes() == f2.read_bytes()

    def test_different_seed_differs(self):
        t1, _ = generate_scene(SMALL)
        t2, _ = generate_scene(replace(SMALL, seed=6))
        assert not np.array_equal(t1.band("R"), t2.band("R"))

    def test_min_separation_holds(self):
        spec = replace(SMALL, width=192, height=192, n_trees=20, min_separation_px=8.0)
        _, pts = generate_scene(spec)
        assert len(pts) == 20
        d = pts.xy[:, None, :] - pts.xy[None, :, :]
        dist = np.sqrt((d ** 2).sum(-1)) + np.eye(20) * 1e9
        assert dist.min() >= 8.0

    def test_canopy_cores_are_green(self):
        tile, pts = generate_scene(SMALL)
        v = ndvi_of(tile)
        yy, xx = np.mgrid[0 : tile.height, 0 : tile.width]
        inside = np.zeros_like(v, dtype=bool)
        for x, y in pts.xy:
            inside |= (xx - x) ** 2 + (yy - y) ** 2 <= 2.0 ** 2
        assert v[inside].mean() > 0.3

    def test_canopy_background_ndvi_gap(self):
        tile, pts = generate_scene(replace(SMALL, seed=9))
        v = ndvi_of(tile)
        yy, xx = np.mgrid[0 : tile.height, 0 : tile.width]
        inside = np.zeros_like(v, dtype=bool)
        near = np.zeros_like(v, dtype=bool)
        for x, y in pts.xy:
            r2 = (xx - x) ** 2 + (yy - y) ** 2
            inside |= r2 <= 2.5 ** 2
            near |= r2 <= 12.0 ** 2
        outside = ~near
        assert v[inside].mean() - v[outside].mean() >= 0.2

    def test_trees_fully_inside_bounds(self):
        spec = replace(SMALL, n_trees=12, seed=11)
        tile, pts = generate_scene(spec)
        assert (pts.xy[:, 0] >= 0).all() and (pts.xy[:, 0] < tile.width).all()
        assert (pts.xy[:, 1] >= 0).all() and (pts.xy[:, 1] < tile.height).all()

    def test_infeasible_placement_raises(self):
        spec = replace(SMALL, width=48, height=48, n_trees=60, min_separation_px=12.0)
        with pytest.raises(ValueError, match="could not place"):
            generate_scene(spec)

    def test_dn_values_are_integral_u8(self):
        tile, _ = generate_scene(SMALL)
        for role in "RGBN":
            g = tile.band(role)
            assert g.min() >= 0 and g.max() <= 255
            np.testing.assert_array_equal(g, np.round(g))


class TestGenerateDataset:
    def test_files_manifest_and_round_trip(self, tmp_path):
        out = tmp_path / "ds"
        manifest = generate_dataset(8, SMALL, out)
        assert len(manifest["scenes"]) == 8
        names = {p.name for p in out.iterdir()}
        assert "manifest.json" in names
        assert sum(n.endswith(".rast") for n in names) == 8
        assert sum(n.endswith(".csv") for n in names) == 8

        assert verify_manifest(out) == []

        pairs = load_dataset(out)
        assert len(pairs) == 8
        for (tile, pts), scene in zip(pairs, manifest["scenes"]):
            assert len(pts) == scene["n_trees"]
            assert tile.width == SMALL.width

    def test_scene_seeds_advance(self, tmp_path):
        manifest = generate_dataset(3, SMALL, tmp_path / "ds")
        assert [s["seed"] for s in manifest["scenes"]] == [5, 6, 7]

    def test_checksum_detects_corruption(self, tmp_path):
        out = tmp_path / "ds"
        generate_dataset(2, SMALL, out)
        victim = out / "scene_001.rast"
        blob = bytearray(victim.read_bytes())
        blob[-1] ^= 0xFF
        victim.write_bytes(bytes(blob))
        assert verify_manifest(out) == ["scene_001.rast"]
