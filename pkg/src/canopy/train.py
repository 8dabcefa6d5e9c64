"""Training loop: combined loss, shuffled batches, eightfold augmentation
of the train split, per-epoch validation, best-validation checkpointing.

Determinism: everything is derived from TrainConfig.seed -- the split,
the subsample, the initial weights, and each epoch's shuffle -- so two
runs with the same config produce identical reports and weights.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import (build_attention_mask, build_target, normalize, sigma_px_for,
                   split_train_val)
from .errors import NumericError
from .model import ModelParams, build_model, forward, save_weights
from .optim import Adam
from .tensor import Tensor


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    alpha: float = 0.01  # weight of the attention BCE term
    tau: float = 0.001  # attention mask threshold on the target map
    sigma_m: float = 1.8  # Gaussian radius of target peaks, meters
    val_fraction: float = 0.10
    seed: int = 0
    subsample_fraction: float = 1.0  # fraction of the train split actually used
    width_scale: float = 1.0  # channel-plan scale; < 1 for desk-scale runs
    bce_clamp: float = 1e-7

    def validate(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        for name in ("beta1", "beta2", "epsilon", "alpha", "tau", "sigma_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("val_fraction", "subsample_fraction", "width_scale"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1  # 1-based; earliest epoch achieving the minimum
    best_val_loss: float = math.inf
    checkpoint_path: str | None = None
    val_indices: list = field(default_factory=list)  # into the input dataset
    n_train_tiles: int = 0

    def to_dict(self):
        return asdict(self)


def combined_loss(pred, att, target, mask, alpha, clamp=1e-7):
    """L = MSE(pred, target) + alpha * BCE(att, mask)."""
    return T.add(T.mse_loss(pred, target), T.scale(T.bce_loss(att, mask, clamp), alpha))


def subsample_count(n_train, fraction):
    """Tiles kept when subsampling the train split: floor, but at least 1."""
    return max(1, math.floor(n_train * fraction))


def _prepare(tile, pts, sigma_m, tau):
    x5 = normalize(tile)
    sp = sigma_px_for(tile, sigma_m)
    tgt = build_target(pts, tile.height, tile.width, sp)
    return x5, tgt, build_attention_mask(tgt, tau), pts.xy


def _batched_val_loss(params, val_prepped, cfg):
    total = 0.0
    count = 0
    with T.no_grad():
        for i in range(0, len(val_prepped), cfg.batch_size):
            chunk = val_prepped[i : i + cfg.batch_size]
            x = np.stack([c[0] for c in chunk])
            tgt = np.stack([c[1] for c in chunk])[:, None]
            msk = np.stack([c[2] for c in chunk])[:, None]
            out = forward(params, Tensor(x), mode="infer")
            loss = combined_loss(out.confidence, out.attention, tgt, msk,
                                 cfg.alpha, cfg.bce_clamp)
            total += float(loss.data) * len(chunk)
            count += len(chunk)
    return total / count


def train(dataset, config: TrainConfig, checkpoint_path=None, log=None,
          initial_params: ModelParams | None = None):
    """Train on [(RasterTile, PointSet-pixel)] tiles; returns (params, report).

    Tiles must be square with equal sizes divisible by 16 (256x256 in the
    production recipe).  The train split is augmented eightfold (4
    rotations x optional horizontal flip); validation tiles are used
    unaugmented.  The returned parameters are the best-validation-loss
    snapshot, also written to checkpoint_path when given.
    """
    config.validate()
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    sizes = {(t.height, t.width) for t, _ in dataset}
    if len(sizes) != 1:
        raise ValueError(f"all tiles must share one size, got {sorted(sizes)}")
    (h, w), = sizes
    if h != w:
        raise ValueError(f"tiles must be square, got {h}x{w}")
    if h % 16:
        raise ValueError(f"tile size must be divisible by 16, got {h}")

    idx_train, idx_val = split_train_val(range(len(dataset)), config.val_fraction,
                                         config.seed)
    if config.subsample_fraction < 1.0:
        keep = subsample_count(len(idx_train), config.subsample_fraction)
        sub_rng = np.random.default_rng([config.seed, 1])
        idx_train = [idx_train[i] for i in sorted(sub_rng.permutation(len(idx_train))[:keep])]
    if not idx_train or not idx_val:
        raise ValueError(
            f"degenerate split: {len(idx_train)} train / {len(idx_val)} val tiles"
        )

    train_prepped = [_prepare(*dataset[i], config.sigma_m, config.tau) for i in idx_train]
    val_prepped = [_prepare(*dataset[i], config.sigma_m, config.tau) for i in idx_val]

    params = initial_params if initial_params is not None else build_model(
        seed=config.seed, width_scale=config.width_scale)
    opt = Adam(dict(params.trainable()), lr=config.lr, beta1=config.beta1,
               beta2=config.beta2, eps=config.epsilon)

    report = TrainReport(val_indices=list(idx_val), n_train_tiles=len(idx_train),
                         checkpoint_path=None if checkpoint_path is None else str(checkpoint_path))
    best_params = None

    examples = [(ti, k) for ti in range(len(train_prepped)) for k in range(8)]
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(len(examples))
        epoch_loss = 0.0
        seen = 0
        for b0 in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[b0 : b0 + config.batch_size]]
            xs, tgts, msks = [], [], []
            for ti, k in batch:
                x5, tgt, msk, xy = train_prepped[ti]
                if k == 0:
                    xs.append(x5)
                    tgts.append(tgt)
                    msks.append(msk)
                else:
                    flip, rot = divmod(k, 4)
                    stacked = np.rot90(np.stack([tgt, msk]), rot, axes=(-2, -1))
                    xv = np.rot90(x5, rot, axes=(-2, -1))
                    if flip:
                        stacked = np.flip(stacked, axis=-1)
                        xv = np.flip(xv, axis=-1)
                    xs.append(np.ascontiguousarray(xv))
                    tgts.append(np.ascontiguousarray(stacked[0]))
                    msks.append(np.ascontiguousarray(stacked[1]))
            x = Tensor(np.stack(xs))
            tgt = np.stack(tgts)[:, None]
            msk = np.stack(msks)[:, None]
            out = forward(params, x, mode="train")
            loss = combined_loss(out.confidence, out.attention, tgt, msk,
                                 config.alpha, config.bce_clamp)
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            epoch_loss += lv * len(batch)
            seen += len(batch)

        train_loss = epoch_loss / seen
        val_loss = _batched_val_loss(params, val_prepped, config)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_params = params.copy()
            if checkpoint_path is not None:
                save_weights(best_params, checkpoint_path)
        if log is not None:
            log(f"epoch {epoch}/{config.epochs}: train {train_loss:.6f} "
                f"val {val_loss:.6f} best {report.best_val_loss:.6f} @ {report.best_epoch}")

    return best_params, report
