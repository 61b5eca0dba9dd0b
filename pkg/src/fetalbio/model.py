"""Heatmap landmark regression network and its training loop.

One network is trained per measurement kind. Two architectures share the
same forward contract (``(B, 1, H, W) -> (B, 2, H / stride, W / stride)``):

* ``multi_resolution_full``: parallel high-to-low resolution streams with
  repeated cross-resolution exchange, fused into one stream by a two-layer
  head.
* ``tiny_encoder_decoder``: a small U-Net run at heatmap resolution, small
  enough to train on a CPU in minutes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from ._validation import check_image
from .augment import AugmentConfig, augment_sample
from .core import AnnotatedImage, LandmarkPair, MeasurementKind, Point2D
from .dod import OrientationModel, order_pairs
from .exceptions import DomainError, SkipSample, TrainingError
from .heatmap import DecodedPair, HeatmapConfig, HeatmapStack, decode_maps, encode_array

log = logging.getLogger(__name__)

VARIANTS = ("tiny_encoder_decoder", "multi_resolution_full")
ORIENTATION_MODES = ("dynamic", "fixed_horizontal", "fixed_vertical", "none")


@dataclass(frozen=True)
class RegressorSpec:
    variant: str = "tiny_encoder_decoder"
    input_size: int = 256
    output_stride: int = 4
    channels: tuple = (16, 32, 48, 64)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        s = self.output_stride
        if s < 1 or s & (s - 1):
            raise DomainError("output_stride must be a power of two")
        if self.input_size % s:
            raise DomainError("input_size must be a multiple of output_stride")
        if len(self.channels) != 4:
            raise DomainError("channels must list four stage widths")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def output_size(self) -> int:
        return self.input_size // self.output_stride


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    optimizer: str = "adam"
    initial_lr: float = 1e-4
    lr_drop_factor: float = 0.2
    lr_drop_epochs: tuple = (10, 40, 90, 150)
    seed: int = 0
    orientation_mode: str = "dynamic"
    ordering: str = "abs"
    origin: str = "corner"

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_epochs", tuple(int(e) for e in self.lr_drop_epochs))
        drops = self.lr_drop_epochs
        # drops past the last epoch are allowed so a shortened run keeps its schedule
        if any(b <= a for a, b in zip(drops, drops[1:])) or (drops and drops[0] < 2):
            raise DomainError("lr_drop_epochs must be strictly increasing and >= 2")
        if not self.initial_lr > 0:
            raise DomainError("initial_lr must be positive")
        if self.optimizer.lower() != "adam":
            raise DomainError("only the Adam optimizer is supported")
        if self.orientation_mode not in ORIENTATION_MODES:
            raise DomainError(f"orientation_mode must be one of {ORIENTATION_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")


def learning_rate(epoch: int, config: TrainConfig) -> float:
    """Learning rate in effect during 1-based ``epoch``."""
    drops = sum(1 for e in config.lr_drop_epochs if epoch >= e)
    return config.initial_lr * config.lr_drop_factor**drops


def fingerprint(*objs) -> str:
    blob = json.dumps([_jsonable(o) for o in objs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(o):
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    if isinstance(o, OrientationModel):
        return o.to_dict()
    return o


# --------------------------------------------------------------------------
# networks


def _conv_bn(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class _Stem(nn.Sequential):
    """Stride-2 convolutions down to the heatmap resolution."""

    def __init__(self, cin, cout, stride):
        layers, c = [], cin
        for _ in range(int(math.log2(stride))):
            layers.append(_conv_bn(c, cout, 2))
            c = cout
        layers.append(_conv_bn(c, cout))
        super().__init__(*layers)


class TinyEncoderDecoder(nn.Module):
    def __init__(self, spec: RegressorSpec):
        super().__init__()
        c0, c1, c2, c3 = spec.channels
        self.stem = _Stem(1, c0, spec.output_stride)
        self.enc1 = _conv_bn(c0, c1)
        self.enc2 = _conv_bn(c1, c2)
        self.enc3 = _conv_bn(c2, c3)
        self.dec2 = _conv_bn(c3 + c2, c2)
        self.dec1 = _conv_bn(c2 + c1, c1)
        self.dec0 = _conv_bn(c1 + c0, c0)
        self.head = nn.Conv2d(c0, 2, 1)

    @staticmethod
    def _down(x):
        return F.max_pool2d(x, 2, ceil_mode=True)

    @staticmethod
    def _up(x, like):
        return F.interpolate(x, size=like.shape[-2:], mode="bilinear", align_corners=False)

    def forward(self, x):
        s0 = self.stem(x)
        s1 = self.enc1(self._down(s0))
        s2 = self.enc2(self._down(s1))
        s3 = self.enc3(self._down(s2))
        d2 = self.dec2(torch.cat([self._up(s3, s2), s2], 1))
        d1 = self.dec1(torch.cat([self._up(d2, s1), s1], 1))
        d0 = self.dec0(torch.cat([self._up(d1, s0), s0], 1))
        return self.head(d0)


class _Residual(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(c, c, 3, padding=1, bias=False),
            nn.BatchNorm2d(c),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=1, bias=False),
            nn.BatchNorm2d(c),
        )

    def forward(self, x):
        return F.relu(x + self.body(x))


class _Exchange(nn.Module):
    """One multi-resolution module: per-branch residual blocks, then fusion."""

    def __init__(self, widths):
        super().__init__()
        self.branches = nn.ModuleList(_Residual(c) for c in widths)
        self.fuse = nn.ModuleList()
        for i, ci in enumerate(widths):
            row = nn.ModuleList()
            for j, cj in enumerate(widths):
                if j == i:
                    row.append(nn.Identity())
                elif j > i:
                    row.append(nn.Sequential(nn.Conv2d(cj, ci, 1, bias=False), nn.BatchNorm2d(ci)))
                else:
                    steps = []
                    c = cj
                    for k in range(i - j):
                        last = k == i - j - 1
                        cout = ci if last else cj
                        steps += [nn.Conv2d(c, cout, 3, 2, 1, bias=False), nn.BatchNorm2d(cout)]
                        if not last:
                            steps.append(nn.ReLU(inplace=True))
                        c = cout
                    row.append(nn.Sequential(*steps))
            self.fuse.append(row)

    def forward(self, xs):
        xs = [b(x) for b, x in zip(self.branches, xs)]
        out = []
        for i, row in enumerate(self.fuse):
            acc = 0
            for j, f in enumerate(row):
                y = f(xs[j])
                if j > i:
                    y = F.interpolate(y, size=xs[i].shape[-2:], mode="bilinear", align_corners=False)
                acc = acc + y
            out.append(F.relu(acc))
        return out


class MultiResolutionNet(nn.Module):
    """Four parallel resolution streams fused into a single heatmap stream."""

    def __init__(self, spec: RegressorSpec, n_modules: int = 2):
        super().__init__()
        widths = spec.channels
        self.stem = _Stem(1, widths[0], spec.output_stride)
        self.transitions = nn.ModuleList(
            _conv_bn(widths[i], widths[i + 1], 2) for i in range(3)
        )
        self.modules_ = nn.ModuleList(_Exchange(widths) for _ in range(n_modules))
        total = sum(widths)
        self.head = nn.Sequential(
            nn.Conv2d(total, total, 1, bias=False),
            nn.BatchNorm2d(total),
            nn.ReLU(inplace=True),
            nn.Conv2d(total, 2, 1),
        )

    def forward(self, x):
        xs = [self.stem(x)]
        for t in self.transitions:
            xs.append(t(xs[-1]))
        for m in self.modules_:
            xs = m(xs)
        size = xs[0].shape[-2:]
        fused = torch.cat(
            [xs[0]] + [F.interpolate(y, size=size, mode="bilinear", align_corners=False) for y in xs[1:]],
            1,
        )
        return self.head(fused)


def build_network(spec: RegressorSpec) -> nn.Module:
    if spec.variant == "tiny_encoder_decoder":
        return TinyEncoderDecoder(spec)
    return MultiResolutionNet(spec)


# --------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True, eq=False)
class Prepared:
    """An image resized into the square network canvas.

    ``ratio`` maps original pixels to canvas pixels; ``extent`` is the
    ``(width, height)`` the original occupies inside the canvas.
    """

    canvas: np.ndarray
    ratio: float
    extent: tuple


def preprocess(image, input_size: int) -> Prepared:
    """Resize the longest side to ``input_size``, pad bottom/right, standardize."""
    image = check_image(image)
    h, w = image.shape
    ratio = input_size / max(h, w)
    if ratio != 1:
        nw, nh = max(1, round(w * ratio)), max(1, round(h * ratio))
        image = np.asarray(
            Image.fromarray(image.astype(np.float32), mode="F").resize((nw, nh), Image.BILINEAR),
            dtype=float,
        )
    std = image.std()
    image = (image - image.mean()) / (std if std > 0 else 1.0)
    canvas = np.zeros((input_size, input_size))
    canvas[: image.shape[0], : image.shape[1]] = image
    return Prepared(canvas, ratio, (w * ratio, h * ratio))


def forward(net: nn.Module, image, spec: RegressorSpec) -> HeatmapStack:
    """Heatmaps for one already-preprocessed ``input_size`` square image."""
    image = check_image(image)
    if image.shape != (spec.input_size, spec.input_size):
        raise DomainError(f"expected a {spec.input_size}x{spec.input_size} input, got {image.shape}")
    net.eval()
    with torch.no_grad():
        out = net(torch.from_numpy(image).float()[None, None])
    return HeatmapStack(out[0].double().numpy(), spec.output_stride)


# --------------------------------------------------------------------------
# training


@dataclass
class Checkpoint:
    spec: RegressorSpec
    train_config: TrainConfig
    heatmap_config: HeatmapConfig
    augment_config: AugmentConfig
    measurement: MeasurementKind
    weights: dict
    epoch: int
    history: dict
    orientation: Optional[OrientationModel] = None
    orientation_path: Optional[str] = None
    resume_state: Optional[dict] = None
    config_fingerprint: str = ""
    metadata: dict = field(default_factory=dict)

    def network(self) -> nn.Module:
        net = build_network(self.spec)
        net.load_state_dict(self.weights)
        net.eval()
        return net

    @property
    def best_val_loss(self) -> float:
        return self.history["val_loss"][self.epoch - 1]

    def metadata_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "train_config": asdict(self.train_config),
            "heatmap_config": asdict(self.heatmap_config),
            "augment_config": asdict(self.augment_config),
            "measurement": self.measurement.value,
            "epoch": self.epoch,
            "history": self.history,
            "orientation": None if self.orientation is None else self.orientation.to_dict(),
            "orientation_path": self.orientation_path,
            "config_fingerprint": self.config_fingerprint,
            "metadata": self.metadata,
        }

    def save(self, path) -> Path:
        """Write ``<path>.pt`` (parameters) and ``<path>.json`` (metadata)."""
        path = Path(path).with_suffix("")
        torch.save({"weights": self.weights, "resume_state": self.resume_state}, path.with_suffix(".pt"))
        path.with_suffix(".json").write_text(json.dumps(self.metadata_dict(), indent=2, sort_keys=True))
        return path.with_suffix(".pt")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path).with_suffix("")
        meta = json.loads(path.with_suffix(".json").read_text())
        blob = torch.load(path.with_suffix(".pt"), weights_only=False)
        tc = meta["train_config"]
        ac = meta["augment_config"]
        return cls(
            spec=RegressorSpec(**meta["spec"]),
            train_config=TrainConfig(**tc),
            heatmap_config=HeatmapConfig(**meta["heatmap_config"]),
            augment_config=AugmentConfig(
                tuple(ac["rotation_range_deg"]), tuple(ac["scale_range_pct"]),
                ac["max_resample_attempts"], ac["seed"],
            ),
            measurement=MeasurementKind.parse(meta["measurement"]),
            weights=blob["weights"],
            epoch=meta["epoch"],
            history=meta["history"],
            orientation=None if meta["orientation"] is None else OrientationModel.from_dict(meta["orientation"]),
            orientation_path=meta.get("orientation_path"),
            resume_state=blob.get("resume_state"),
            config_fingerprint=meta["config_fingerprint"],
            metadata=meta.get("metadata", {}),
        )


def orientation_for_mode(mode: str, dod_model: Optional[OrientationModel], kind=None):
    if mode == "dynamic":
        if dod_model is None:
            raise DomainError("orientation_mode='dynamic' needs a fitted orientation model")
        return dod_model
    if mode == "fixed_horizontal":
        return OrientationModel.fixed((1.0, 0.0), kind)
    if mode == "fixed_vertical":
        return OrientationModel.fixed((0.0, 1.0), kind)
    return None


@dataclass(frozen=True, eq=False)
class _Sample:
    canvas: np.ndarray
    points: np.ndarray  # (2, 2) in canvas pixels, label order for this mode
    extent: tuple
    pair: LandmarkPair


def _prepare(images, kind, spec, orientation, config) -> list:
    out = []
    for im in images:
        prep = preprocess(im.pixels, spec.input_size)
        pair = im.pair(kind)
        pts = pair.as_array() * prep.ratio
        if orientation is not None:
            pts = order_pairs(pts[None], orientation, config.ordering, config.origin, prep.extent)[0]
        cpair = LandmarkPair(Point2D(*pts[0]), Point2D(*pts[1]), kind)
        out.append(_Sample(prep.canvas, pts, prep.extent, cpair))
    return out


def _check_kind(images, kind):
    if not images:
        raise TrainingError("no training records")
    if kind is None:
        kinds = {p.measurement for im in images for p in im.landmarks}
        if len(kinds) != 1:
            raise TrainingError(
                f"dataset mixes measurement kinds {sorted(k.value for k in kinds)}; train one network per kind"
            )
        kind = kinds.pop()
    kind = MeasurementKind.parse(kind)
    missing = [im.image_id for im in images if not im.has(kind)]
    if missing:
        raise TrainingError(f"{len(missing)} images lack {kind.value} landmarks, e.g. {missing[0]!r}")
    return kind


def _evaluate(net, samples, spec, hm_config, batch_size=32):
    """Mean heatmap loss and per-landmark pixel errors on unaugmented samples."""
    net.eval()
    losses, errors = [], []
    with torch.no_grad():
        for k in range(0, len(samples), batch_size):
            chunk = samples[k : k + batch_size]
            x = torch.from_numpy(np.stack([s.canvas for s in chunk])).float()[:, None]
            t = torch.from_numpy(
                np.stack([encode_array(s.points, spec.input_size, spec.input_size, hm_config) for s in chunk])
            ).float()
            out = net(x)
            losses.append(F.mse_loss(out, t, reduction="none").mean(dim=(1, 2, 3)).numpy())
            for s, maps in zip(chunk, out.double().numpy()):
                coords, _, _ = decode_maps(maps, spec.output_stride)
                errors.append(np.hypot(*(coords - s.points).T))
    return float(np.concatenate(losses).mean()), np.concatenate(errors)


def train(
    train_images: Sequence[AnnotatedImage],
    val_images: Sequence[AnnotatedImage],
    dod_model: Optional[OrientationModel],
    config: TrainConfig = TrainConfig(),
    spec: RegressorSpec = RegressorSpec(),
    heatmap_config: Optional[HeatmapConfig] = None,
    augment_config: AugmentConfig = AugmentConfig(),
    measurement=None,
    resume: Optional[Checkpoint] = None,
    progress=None,
) -> Checkpoint:
    """Train a heatmap regressor for one measurement kind.

    Every epoch augments each training sample (rotation, scale, relabelling
    per ``config.orientation_mode``), minimizes the heatmap MSE with Adam
    under the step schedule, and records the training loss, validation loss
    and validation median landmark error. Samples whose augmentations all
    fail are skipped for that epoch and counted.

    The returned checkpoint holds the weights of the epoch with the lowest
    validation median error, plus the final training state for resuming.

    Raises
    ------
    TrainingError
        On an empty or mixed-kind dataset, or a non-finite loss.
    """
    kind = _check_kind(list(train_images), measurement)
    if not val_images:
        raise TrainingError("no validation records")
    _check_kind(list(val_images), kind)
    hm_config = heatmap_config or HeatmapConfig.default_for(stride=spec.output_stride)
    if hm_config.stride != spec.output_stride:
        raise DomainError("heatmap stride must equal the network output stride")
    orientation = orientation_for_mode(config.orientation_mode, dod_model, kind)

    torch.manual_seed(config.seed)
    net = build_network(spec)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.initial_lr)
    train_set = _prepare(train_images, kind, spec, orientation, config)
    val_set = _prepare(val_images, kind, spec, orientation, config)

    history = {k: [] for k in ("epoch", "lr", "train_loss", "val_loss", "val_median_px_error", "skipped")}
    best_epoch, best_err, best_weights = 0, math.inf, None
    start = 1
    if resume is not None:
        state = resume.resume_state
        if state is None:
            raise DomainError("checkpoint carries no resume state")
        net.load_state_dict(state["weights"])
        optimizer.load_state_dict(state["optimizer"])
        history = copy.deepcopy(state["history"])
        best_epoch, best_err = state["best_epoch"], state["best_err"]
        best_weights = copy.deepcopy(resume.weights)
        start = state["epoch"] + 1

    for epoch in range(start, config.epochs + 1):
        lr = learning_rate(epoch, config)
        for g in optimizer.param_groups:
            g["lr"] = lr
        rng = np.random.default_rng([config.seed, augment_config.seed, epoch])
        order = rng.permutation(len(train_set))
        net.train()
        batch_losses, skipped = [], 0
        for k in range(0, len(order), config.batch_size):
            xs, ts = [], []
            for idx in order[k : k + config.batch_size]:
                s = train_set[idx]
                try:
                    img, pair, _ = augment_sample(
                        s.canvas, s.pair, None, augment_config, rng
                    )
                except SkipSample:
                    skipped += 1
                    continue
                pts = pair.as_array()
                if orientation is not None:
                    pts = order_pairs(pts[None], orientation, config.ordering, config.origin, s.extent)[0]
                xs.append(img)
                ts.append(encode_array(pts, spec.input_size, spec.input_size, hm_config))
            if not xs:
                continue
            x = torch.from_numpy(np.stack(xs)).float()[:, None]
            t = torch.from_numpy(np.stack(ts)).float()
            optimizer.zero_grad()
            loss = F.mse_loss(net(x), t)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {k // config.batch_size}")
            loss.backward()
            optimizer.step()
            batch_losses.append(loss.item())

        val_loss, errors = _evaluate(net, val_set, spec, hm_config)
        med = float(np.median(errors))
        history["epoch"].append(epoch)
        history["lr"].append(lr)
        history["train_loss"].append(float(np.mean(batch_losses)) if batch_losses else float("nan"))
        history["val_loss"].append(val_loss)
        history["val_median_px_error"].append(med)
        history["skipped"].append(skipped)
        if med < best_err:
            best_epoch, best_err = epoch, med
            best_weights = copy.deepcopy(net.state_dict())
        if progress is not None:
            progress(epoch, history)
        log.debug("epoch %d lr %.2g loss %.5f val %.5f med %.2fpx", epoch, lr, history["train_loss"][-1], val_loss, med)

    resume_state = {
        "weights": copy.deepcopy(net.state_dict()),
        "optimizer": copy.deepcopy(optimizer.state_dict()),
        "history": copy.deepcopy(history),
        "epoch": config.epochs,
        "best_epoch": best_epoch,
        "best_err": best_err,
    }
    return Checkpoint(
        spec=spec,
        train_config=config,
        heatmap_config=hm_config,
        augment_config=augment_config,
        measurement=kind,
        weights=best_weights,
        epoch=best_epoch,
        history=history,
        orientation=orientation,
        resume_state=resume_state,
        config_fingerprint=fingerprint(spec, config, hm_config, augment_config, orientation),
        metadata={
            "n_train": len(train_set),
            "n_val": len(val_set),
            "input_size": spec.input_size,
            "best_val_median_px_error": best_err,
        },
    )


@dataclass(frozen=True, eq=False)
class Prediction:
    points: np.ndarray  # (2, 2) in original image pixels
    confidence: tuple
    low_confidence: tuple
    measurement: MeasurementKind

    @property
    def pair(self) -> LandmarkPair:
        return DecodedPair(self.points, self.confidence, self.low_confidence, self.measurement).pair


def predict(image, checkpoint: Checkpoint, net: Optional[nn.Module] = None, subpixel=False) -> Prediction:
    """Landmarks for one image, in its original pixel coordinates."""
    net = net or checkpoint.network()
    prep = preprocess(image, checkpoint.spec.input_size)
    stack = forward(net, prep.canvas, checkpoint.spec)
    coords, peaks, flat = decode_maps(stack.maps, stack.stride, subpixel)
    return Prediction(
        coords / prep.ratio,
        tuple(float(p) for p in peaks),
        tuple(bool(f) for f in flat),
        checkpoint.measurement,
    )


class LandmarkRegressor(BaseEstimator):
    """Estimator wrapper around :func:`train` and :func:`predict`.

    ``fit(images, pairs)`` takes raw 2D images and their landmark pairs (one
    measurement kind); ``predict(images)`` returns ``(n, 2, 2)`` landmark
    coordinates in each image's own pixel frame.
    """

    def __init__(
        self,
        orientation_mode="dynamic",
        input_size=128,
        output_stride=4,
        channels=(16, 32, 48, 64),
        epochs=30,
        batch_size=4,
        learning_rate=1e-3,
        lr_drop_epochs=(21,),
        sigma=2.0,
        validation_fraction=0.2,
        random_state=0,
    ):
        self.orientation_mode = orientation_mode
        self.input_size = input_size
        self.output_stride = output_stride
        self.channels = channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_drop_epochs = lr_drop_epochs
        self.sigma = sigma
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, images, pairs):
        from .dod import GmmFitConfig, fit_orientation

        pairs = list(pairs)
        if len(images) != len(pairs):
            raise DomainError("images and pairs differ in length")
        data = [AnnotatedImage(im, [p], image_id=str(i)) for i, (im, p) in enumerate(zip(images, pairs))]
        n_val = max(1, int(round(self.validation_fraction * len(data))))
        if len(data) - n_val < 1:
            raise TrainingError("need at least two records to hold out a validation set")
        order = np.random.default_rng(self.random_state).permutation(len(data))
        val, tr = [data[i] for i in order[:n_val]], [data[i] for i in order[n_val:]]
        dod_model = None
        if self.orientation_mode == "dynamic":
            dod_model = fit_orientation(
                [d.landmarks[0] for d in tr], [d.pixels.shape[::-1] for d in tr], GmmFitConfig(seed=self.random_state)
            )
        spec = RegressorSpec(input_size=self.input_size, output_stride=self.output_stride, channels=tuple(self.channels))
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            initial_lr=self.learning_rate,
            lr_drop_epochs=tuple(self.lr_drop_epochs),
            seed=self.random_state,
            orientation_mode=self.orientation_mode,
        )
        hm = HeatmapConfig.default_for(self.sigma, self.output_stride)
        self.checkpoint_ = train(tr, val, dod_model, config, spec, hm, AugmentConfig(seed=self.random_state))
        self.orientation_ = self.checkpoint_.orientation
        self.history_ = self.checkpoint_.history
        self.network_ = self.checkpoint_.network()
        return self

    def predict(self, images) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return np.stack([predict(im, self.checkpoint_, self.network_).points for im in images])
