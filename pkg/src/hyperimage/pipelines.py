"""Training and prediction flows: stage-1 regression, siamese ranking,
hyper-image extraction, stage-2 training and the two baselines."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
from skimage.transform import resize

from .grid import (assemble_hyper_image, extract_grid, make_geometry, read_hyper_image,
                   write_hyper_image)
from .imageops import isotropic_rescale, lcn
from .net import (Model, NetworkSpec, OptimizerState, ShapeError, backward, balanced_class_weights,
                  build_network, compute_loss, copy_params, forward, get_spec, sgd_update)


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    spec: str = "desk-synthetic-stage-1"
    epochs: int = 80
    patience: int = 20
    batch_size: int = 128
    seed: int = 0
    lr: float = 0.005
    decay: float = 1e-5
    momentum: float = 0.9
    plateau_patience: int = 10
    plateau_factor: float = 10.0
    class_weighting: bool = False
    augment: bool = False
    delta: float = 3.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.patience >= self.epochs:
            raise ValueError(f"patience {self.patience} must be below epochs {self.epochs}")

    @classmethod
    def stage1(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 80, "patience": 20, **kw})

    @classmethod
    def stage2(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 200, "patience": 40, **kw})

    def optimizer(self) -> OptimizerState:
        return OptimizerState(lr=self.lr, decay=self.decay, momentum=self.momentum,
                              plateau_patience=self.plateau_patience, plateau_factor=self.plateau_factor)

    def resolve_spec(self, input_shape=None) -> NetworkSpec:
        spec = get_spec(self.spec)
        return spec.with_input(input_shape) if input_shape is not None else spec


@dataclass
class RunReport:
    config: dict
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, lr
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False
    test_metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def lr_trace(self) -> list[float]:
        return [e["lr"] for e in self.epochs]

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        d["lr_trace"] = self.lr_trace
        if not timing:
            d.pop("wall_clock")
        return d

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=2)

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for e in self.epochs:
            w.writerow([e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]), repr(e["lr"])])
        return buf.getvalue()


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 7, int(epoch)]))


def train_loop(config: TrainConfig, n_train: int, step, validate, param_sets) -> RunReport:
    """Shuffled mini-batch epochs with early stopping; best weights restored.

    ``step(indices, rng, state)`` applies one update and returns the batch loss;
    ``validate()`` returns the validation loss; ``param_sets`` are the live
    parameter lists snapshotted at the best epoch.
    """
    if n_train == 0:
        raise ValueError("empty training set")
    t0 = time.perf_counter()
    report = RunReport(config=asdict(config))
    state = config.optimizer()
    best = None
    for epoch in range(config.epochs):
        rng = _epoch_rng(config.seed, epoch)
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                loss = step(idx, rng, state)
            except FloatingPointError as e:
                raise DivergenceError(str(e), epoch) from e
            if not np.isfinite(loss):
                raise DivergenceError("non-finite training loss", epoch)
            total += loss * len(idx)
        val = float(validate())
        if not np.isfinite(val):
            raise DivergenceError("non-finite validation loss", epoch)
        report.epochs.append({"epoch": epoch, "train_loss": total / n_train, "val_loss": val,
                              "lr": state.effective_lr()})
        if val < report.best_val_loss:
            report.best_val_loss, report.best_epoch = val, epoch
            best = [copy_params(p) for p in param_sets]
        state.observe_validation(val)
        if epoch - report.best_epoch >= config.patience:
            report.stopped_early = True
            break
    for live, saved in zip(param_sets, best):
        live[:] = saved
    report.wall_clock = time.perf_counter() - t0
    return report


def _flip(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mask = rng.random(len(x)) < 0.5
    x = x.copy()
    x[mask] = x[mask, :, ::-1]
    return x


def _batched_loss(model: Model, x, y, weights, delta, batch_size=256) -> float:
    if len(x) == 0:
        raise ValueError("empty validation set")
    pred = model.predict(x, batch_size)
    return compute_loss(model.spec.loss, pred, np.asarray(y).reshape(pred.shape), delta, weights)[0]


def fit(spec: NetworkSpec, x_train, y_train, x_val, y_val, config: TrainConfig,
        meta: dict | None = None, start_at_median: bool = False) -> tuple[Model, RunReport]:
    """Supervised training under the spec's loss (mae or bce)."""
    x_train = np.asarray(x_train)
    y_train = np.asarray(y_train, dtype=np.float64).reshape(len(x_train), -1)
    y_val = np.asarray(y_val, dtype=np.float64).reshape(len(x_val), -1)
    if len(x_train) == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(y_train)):
        raise ValueError("training labels must be finite")
    model = Model(spec, build_network(spec, config.seed), dict(meta or {}))
    if start_at_median:
        # start the output at the best constant mae predictor
        model.params[-1]["b"][:] = np.median(y_train, axis=0)
    w_train = w_val = None
    if config.class_weighting:
        w_train = balanced_class_weights(y_train[:, 0])[:, None]
        w_val = balanced_class_weights(y_val[:, 0])[:, None]

    def step(idx, rng, state):
        xb = model._prepare(x_train[idx])
        if config.augment:
            xb = _flip(xb, rng)
        trace = forward(spec, model.params, xb, "train", rng)
        wb = None if w_train is None else w_train[idx]
        loss, g = compute_loss(spec.loss, trace.outputs[-1], y_train[idx], config.delta, wb)
        grads, _ = backward(spec, model.params, trace, g)
        sgd_update(model.params, grads, state)
        return loss

    report = train_loop(config, len(x_train), step,
                        lambda: _batched_loss(model, x_val, y_val, w_val, config.delta), [model.params])
    return model, report


def train_stage1_regression(patches, labels, val_patches, val_labels, config: TrainConfig,
                            meta: dict | None = None):
    """Patch-level score regression; inputs are preprocessed upstream."""
    patches = np.asarray(patches)
    if len(patches) == 0:
        raise ValueError("empty training set")
    spec = config.resolve_spec(patches.shape[1:])
    return fit(spec, patches, labels, val_patches, val_labels, config, meta)


# -- siamese ranking -------------------------------------------------------------------

@dataclass
class RankingModel:
    """Shared-weight channel plus the scoring head applied to C1 - C2.

    d(a, b) = h(C(a) - C(b)) - h(C(b) - C(a)), so d(a, b) = -d(b, a) exactly.
    """
    channel: Model
    head: Model

    def channels(self, x):
        x = self.channel._prepare(x)
        return forward(self.channel.spec, self.channel.params, x).outputs[-1].reshape(len(x), -1)

    def score(self, a, b, batch_size: int = 256) -> np.ndarray:
        out = []
        for i in range(0, len(a), batch_size):
            ca, cb = self.channels(a[i:i + batch_size]), self.channels(b[i:i + batch_size])
            h = forward(self.head.spec, self.head.params, np.concatenate([ca - cb, cb - ca])).outputs[-1]
            n = len(ca)
            out.append((h[:n] - h[n:]).reshape(-1))
        return np.concatenate(out) if out else np.zeros(0)

    def loss(self, a, b, y, delta: float = 3.0) -> float:
        return compute_loss("pairwise-rank", self.score(a, b), np.asarray(y, dtype=np.float64), delta)[0]

    def margin_rate(self, a, b, y, delta: float = 3.0) -> float:
        return float(np.mean(np.asarray(y) * self.score(a, b) >= delta))


def _check_pair_labels(y):
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("pair labels must be -1 or +1")
    if np.all(y == y.flat[0]):
        raise ValueError("pair stream carries a single label; both +1 and -1 are required")


def train_stage1_ranking(a, b, y, val_a, val_b, val_y, config: TrainConfig,
                         head_spec: str | NetworkSpec | None = None, meta: dict | None = None):
    """Train the channel network through the margin hinge on d(C1, C2)."""
    a, b = np.asarray(a), np.asarray(b)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(a) == 0:
        raise ValueError("empty training set")
    _check_pair_labels(y)
    spec = config.resolve_spec(a.shape[1:])
    channel = Model(spec, build_network(spec, config.seed), dict(meta or {}))
    d = int(np.prod(forward(spec, channel.params, a[:1] * 0.0).outputs[-1].shape[1:]))
    if head_spec is None:
        head_spec = config.spec.replace("forgery-channel", "forgery-rank-head")
    hs = get_spec(head_spec) if isinstance(head_spec, str) else head_spec
    hs = hs.with_input((d,))
    head = Model(hs, build_network(hs, config.seed + 1))
    model = RankingModel(channel, head)
    joint = channel.params + head.params
    n_ch = len(channel.params)

    def step(idx, rng, state):
        xa, xb = channel._prepare(a[idx]), channel._prepare(b[idx])
        if config.augment:
            flip = rng.random(len(idx)) < 0.5
            xa, xb = xa.copy(), xb.copy()
            xa[flip], xb[flip] = xa[flip, :, ::-1], xb[flip, :, ::-1]
        n = len(idx)
        tc = forward(spec, channel.params, np.concatenate([xa, xb]), "train", rng)
        c = tc.outputs[-1].reshape(2 * n, -1)
        diff = c[:n] - c[n:]
        th = forward(hs, head.params, np.concatenate([diff, -diff]), "train", rng)
        h = th.outputs[-1]
        dscore = h[:n] - h[n:]
        loss, g = compute_loss("pairwise-rank", dscore, y[idx, None], config.delta)
        gh, gin = backward(hs, head.params, th, np.concatenate([g, -g]), need_input_grad=True)
        gdiff = gin[:n] - gin[n:]
        gc, _ = backward(spec, channel.params, tc, np.concatenate([gdiff, -gdiff]).reshape(tc.outputs[-1].shape))
        sgd_update(joint, gc + gh, state)
        return loss

    def validate():
        return model.loss(val_a, val_b, val_y, config.delta)

    report = train_loop(config, len(a), step, validate, [joint])
    channel.params[:] = joint[:n_ch]
    head.params[:] = joint[n_ch:]
    report.extra["val_margin_rate"] = model.margin_rate(val_a, val_b, val_y, config.delta)
    return model, report


# -- hyper-images ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetProfile:
    """Image bounds (M, N), patch size and grid used for one dataset."""
    name: str
    max_h: int
    max_w: int
    sz: int
    n_py: int
    n_px: int
    channels: int = 1
    normalize: str = "none"  # "lcn" or "none"

    def prepare(self, image: np.ndarray) -> np.ndarray:
        img = isotropic_rescale(np.asarray(image, dtype=np.float64), self.max_h, self.max_w)
        if img.ndim == 2:
            img = img[..., None]
        return lcn(img) if self.normalize == "lcn" else img

    def patches(self, image: np.ndarray) -> np.ndarray:
        """(n_py, n_px, sz, sz, C) grid of a prepared image."""
        img = self.prepare(image)
        g = make_geometry(img.shape[0], img.shape[1], self.sz, self.n_py, self.n_px)
        return extract_grid(img, g)


def _features_and_outputs(model: Model, x: np.ndarray, batch_size: int = 256):
    feats, outs = [], []
    for i in range(0, len(x), batch_size):
        t = forward(model.spec, model.params, model._prepare(x[i:i + batch_size]))
        h = t.outputs[-2]
        feats.append(np.maximum(h.reshape(h.shape[0], -1), 0.0))
        outs.append(t.outputs[-1].reshape(len(h), -1))
    return np.concatenate(feats), np.concatenate(outs)


def check_stage2_compatible(profile: DatasetProfile, feature_dim: int, stage2_spec: NetworkSpec):
    expected = (profile.n_py, profile.n_px, feature_dim)
    if tuple(stage2_spec.input_shape) != expected:
        raise ShapeError(f"profile {profile.name} yields hyper-images {expected} but the stage-2 spec "
                         f"expects {tuple(stage2_spec.input_shape)}")


def extract_hyper_dataset(images, stage1: Model, profile: DatasetProfile, cache_dir=None, ids=None,
                          stage2_spec: NetworkSpec | None = None, with_patch_average: bool = False):
    """Hyper-images (N, U, V, D) for a list of images; optional HYPI caches.

    With ``with_patch_average`` also returns the per-image mean of stage-1
    outputs over the same grid (one forward pass serves both).
    """
    if stage2_spec is not None:
        check_stage2_compatible(profile, stage1.feature_dim, stage2_spec)
    hypers, averages = [], []
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
    for k, image in enumerate(images):
        grid = profile.patches(image)
        U, V = grid.shape[:2]
        feats, outs = _features_and_outputs(stage1, grid.reshape((U * V,) + grid.shape[2:]))
        hyper = assemble_hyper_image(grid, lambda flat, f=feats: f, batched=True)
        hypers.append(hyper)
        averages.append(float(outs[:, 0].mean()))
        if cache_dir is not None:
            name = ids[k] if ids is not None else f"{k:06d}"
            write_hyper_image(Path(cache_dir) / f"{name}.hypi", hyper)
    out = np.stack(hypers) if hypers else np.zeros((0, profile.n_py, profile.n_px, stage1.feature_dim))
    return (out, np.array(averages)) if with_patch_average else out


def load_hyper_cache(cache_dir, ids) -> np.ndarray:
    return np.stack([read_hyper_image(Path(cache_dir) / f"{i}.hypi") for i in ids])


def train_stage2(hypers, labels, val_hypers, val_labels, config: TrainConfig):
    """Image-level training on hyper-images; no input normalisation."""
    hypers = np.asarray(hypers)
    if len(hypers) == 0:
        raise ValueError("empty training set")
    if np.any(hypers < 0):
        raise ValueError("hyper-images must be non-negative")
    spec = config.resolve_spec(hypers.shape[1:])
    # small raw inputs: from a zero output the first updates kill whole ReLU layers
    return fit(spec, hypers, labels, val_hypers, val_labels, config, start_at_median=spec.loss == "mae")


def predict_two_stage(image, stage1: Model, stage2: Model, profile: DatasetProfile) -> float:
    hyper = extract_hyper_dataset([image], stage1, profile, stage2_spec=stage2.spec)
    return float(stage2.predict(hyper)[0, 0])


def predict_patch_average(image, stage1: Model, profile: DatasetProfile) -> float:
    grid = profile.patches(image)
    flat = grid.reshape((-1,) + grid.shape[2:])
    return float(stage1.predict(flat)[:, 0].mean())


def prepare_end_to_end(images, spec: NetworkSpec) -> np.ndarray:
    """Rescale each image to the spec's fixed input shape."""
    h, w, c = spec.input_shape
    out = []
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 2:
            img = img[..., None]
        if img.shape[:2] != (h, w):
            img = resize(img, (h, w, img.shape[2]), order=1, anti_aliasing=False, preserve_range=True)
        out.append(img)
    return np.stack(out)


def train_end_to_end(images, labels, val_images, val_labels, config: TrainConfig,
                     meta: dict | None = None):
    """Single-network baseline on whole images."""
    spec = config.resolve_spec()
    x = prepare_end_to_end(images, spec)
    xv = prepare_end_to_end(val_images, spec)
    return fit(spec, x, labels, xv, val_labels, config, meta)
