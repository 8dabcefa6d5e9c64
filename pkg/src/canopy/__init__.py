"""Tree detection in multispectral aerial rasters via confidence-map
regression: a self-contained numpy/numba stack covering training,
peak-detection tuning, matching-based evaluation, and tiled inference
over large rasters."""

from . import tensor
from .data import (GeoTransform, PointSet, RasterTile, augment_eightfold,
                   build_attention_mask, build_target, compute_ndvi, load_dataset,
                   load_points, load_raster, normalize, save_points, save_raster,
                   split_train_val)
from .detect import PeakParams, TileGrid, detect_tiled, find_peaks, tiled_confidence
from .metrics import (MatchResult, MetricsReport, compute_ap, compute_prf,
                      compute_rmse, match_points, metrics_report)
from .model import (ModelOutput, ModelParams, build_model, forward, load_weights,
                    save_weights)
from .optim import Adam
from .synth import SceneSpec, generate_dataset, generate_scene
from .tensor import Tensor, backward, no_grad
from .train import TrainConfig, TrainReport, combined_loss, train
from .tune import TuneConfig, TuneResult, tune

__version__ = "0.1.0"
