"""Train a desk-width network on a handful of small scenes (~2 minutes).

Run: python3 demos/04_train_small.py
"""

from dataclasses import replace

from canopy.data import points_to_pixel
from canopy.detect import PeakParams, detect_tiled
from canopy.metrics import metrics_report
from canopy.synth import SceneSpec, generate_scene
from canopy.train import TrainConfig, train

spec = SceneSpec(width=64, height=64, n_trees=4, n_grass=1, n_roofs=1,
                 radius_range_m=(1.5, 2.7), min_separation_px=10.0)
scenes = [generate_scene(replace(spec, seed=30 + i)) for i in range(10)]
held_out = [generate_scene(replace(spec, seed=90 + i)) for i in range(4)]
print(f"{len(scenes)} training scenes of {spec.width}px, "
      f"{sum(len(p) for _, p in scenes)} trees total")

cfg = TrainConfig(epochs=60, lr=1e-3, width_scale=1 / 32, seed=1)
params, report = train(scenes, cfg)
print(f"\ntrained {cfg.epochs} epochs at width x{cfg.width_scale}; "
      f"best val loss {report.best_val_loss:.5f} at epoch {report.best_epoch}")
for e in (1, 10, 30, cfg.epochs):
    print(f"  epoch {e:3d}: train {report.train_loss[e-1]:.5f} "
          f"val {report.val_loss[e-1]:.5f}")

peaks = PeakParams(d=3, mode="relative", t_rel=0.4)
pairs = []
for tile, gt in held_out:
    pts, _ = detect_tiled(tile, params, peaks)
    pix = points_to_pixel(pts, tile)
    ps = tile.geotransform.pixel_size
    pairs.append(((pix.xy * ps, pix.confidence), gt.xy * ps))
rep = metrics_report(pairs, max_dist=6.0)
print(f"\nheld-out detection: precision {rep.precision:.3f}, recall {rep.recall:.3f}, "
      f"F {rep.f_score:.3f}, RMSE {rep.rmse:.2f} m")
print("(the production recipe trains much longer and tunes the peak parameters;",
      "see the acceptance suite)")
