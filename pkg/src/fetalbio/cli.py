"""Command-line experiment harness.

Every command reads one YAML config (see ``configs/synthetic_ofd.yaml``),
accepts ``--set section.key=value`` overrides and writes its outputs plus a
``fingerprint.json`` into a run directory named ``<timestamp>-<fingerprint>``
under ``output_dir`` (or into ``--out`` when given).

Exit codes: 0 success, 1 internal error, 2 invalid input, 3 missing
prerequisite (such as an image scale).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .augment import AugmentConfig
from .core import AnnotatedImage, MeasurementKind
from .data import (
    SyntheticConfig,
    convert_hc_masks,
    convert_via,
    generate_synthetic,
    load_image,
    load_point_annotations,
    make_split,
    write_synthetic,
)
from .dod import GmmFitConfig, fit_orientation
from .exceptions import BiometryError, DomainError, ScaleRecoveryError, TrainingError
from .heatmap import HeatmapConfig
from .measure import RulerTemplate, compute_measurement, recover_scale
from .metrics import (
    MeasurementSet,
    agreement_report,
    bland_altman_points,
    plot_bland_altman,
    write_report_csv,
    write_report_json,
)
from .model import (
    ORIENTATION_MODES,
    Checkpoint,
    RegressorSpec,
    TrainConfig,
    fingerprint,
    predict,
    train,
)

log = logging.getLogger("fetalbio")

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID, EXIT_MISSING = 0, 1, 2, 3
SCALE_SOURCES = ("metadata", "recover", "auto")
CURVE_COLUMNS = ("epoch", "train_loss", "val_median_px_error")

DEFAULTS = {
    "measurement": "OFD",
    "output_dir": "runs",
    "data": {
        "train": None,
        "val": None,
        "test": None,
        "val_fraction": 0.2,
        "split_seed": 0,
        "train_db": None,
        "test_db": None,
    },
    "dod": {"max_iterations": 500, "log_likelihood_tolerance": 1e-10, "covariance_floor": 1e-6, "seed": 0},
    "regressor": {"variant": "tiny_encoder_decoder", "input_size": 256, "output_stride": 4, "channels": [16, 32, 48, 64]},
    "train": {
        "epochs": 200,
        "batch_size": 16,
        "optimizer": "adam",
        "initial_lr": 1e-4,
        "lr_drop_factor": 0.2,
        "lr_drop_epochs": [10, 40, 90, 150],
        "seed": 0,
        "orientation_modes": ["dynamic"],
        "ordering": "abs",
        "origin": "corner",
    },
    "augment": {"rotation_range_deg": [-180, 180], "scale_range_pct": [-5, 5], "max_resample_attempts": 10, "seed": 0},
    "heatmap": {"sigma": 2.0, "truncation_radius": None},
    "scale": {"source": "auto", "ruler": None},
    "synth": {},
}

PATH_KEYS = (("data", "train"), ("data", "val"), ("data", "test"), ("scale", "ruler"))


class InvalidInput(Exception):
    exit_code = EXIT_INVALID


class MissingPrerequisite(Exception):
    exit_code = EXIT_MISSING


# --------------------------------------------------------------------------
# config


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _apply_override(cfg, item):
    if "=" not in item:
        raise InvalidInput(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    node = cfg
    *parents, leaf = key.split(".")
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise InvalidInput(f"override {key!r} descends into a non-section")
    node[leaf] = yaml.safe_load(raw)


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the YAML file, then ``key=value`` overrides.

    Relative paths in the file are resolved against the file's directory.
    """
    cfg = copy.deepcopy(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InvalidInput(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise InvalidInput("config file must hold a mapping")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InvalidInput(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, loaded)
        base = path.parent
    for item in overrides:
        _apply_override(cfg, item)
    for section, key in PATH_KEYS:
        v = cfg[section].get(key)
        if isinstance(v, str) and v:
            cfg[section][key] = str((base / v).resolve()) if not Path(v).is_absolute() else v
    out = Path(cfg["output_dir"])
    cfg["output_dir"] = str(out if out.is_absolute() else (base / out).resolve())
    if cfg["scale"]["source"] not in SCALE_SOURCES:
        raise InvalidInput(f"scale.source must be one of {SCALE_SOURCES}")
    return cfg


def _require_paths(cfg, *keys):
    for section, key in keys:
        v = cfg[section].get(key)
        if not v:
            raise InvalidInput(f"config needs {section}.{key}")
        if not Path(v).exists():
            raise InvalidInput(f"{section}.{key} not found: {v}")


def _run_dir(cfg, out, fp) -> Path:
    if out:
        run = Path(out)
    else:
        run = Path(cfg["output_dir"]) / f"{time.strftime('%Y%m%d-%H%M%S')}-{fp}"
    run.mkdir(parents=True, exist_ok=True)
    return run


def _write_fingerprint(run, command, cfg, fp, **extra):
    blob = {"command": command, "fingerprint": fp, "version": __version__, "config": cfg, **extra}
    (run / "fingerprint.json").write_text(json.dumps(blob, indent=2, sort_keys=True, default=str))
    (run / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))


# --------------------------------------------------------------------------
# builders


def _kind(cfg):
    try:
        return MeasurementKind.parse(cfg["measurement"])
    except (DomainError, ValueError) as e:
        raise InvalidInput(str(e)) from None


def _gmm_config(cfg):
    return GmmFitConfig(**cfg["dod"])


def _spec(cfg):
    r = dict(cfg["regressor"])
    r["channels"] = tuple(r["channels"])
    return RegressorSpec(**r)


def _train_config(cfg, mode):
    t = {k: v for k, v in cfg["train"].items() if k != "orientation_modes"}
    t["lr_drop_epochs"] = tuple(t["lr_drop_epochs"] or ())
    return TrainConfig(orientation_mode=mode, **t)


def _augment_config(cfg):
    a = dict(cfg["augment"])
    return AugmentConfig(tuple(a["rotation_range_deg"]), tuple(a["scale_range_pct"]), a["max_resample_attempts"], a["seed"])


def _heatmap_config(cfg, stride):
    h = cfg["heatmap"]
    sigma = float(h["sigma"])
    radius = h.get("truncation_radius")
    return HeatmapConfig(sigma, stride, 3 * sigma if radius is None else float(radius))


def _load_manifest(path, kind, source_id=""):
    res = load_point_annotations(path, source_id=source_id)
    for line, reason in res.rejected:
        log.warning("%s line %d rejected: %s", path, line, reason)
    images = [
        AnnotatedImage(im.pixels, [im.pair(kind)], im.mm_per_pixel, im.subject_id, im.source_id, im.image_id, im.metadata)
        for im in res.images
        if im.has(kind)
    ]
    return sorted(images, key=lambda im: im.image_id)


def _training_split(cfg, kind):
    _require_paths(cfg, ("data", "train"))
    train_images = _load_manifest(cfg["data"]["train"], kind)
    if not train_images:
        raise TrainingError("no training records")
    if cfg["data"].get("val"):
        _require_paths(cfg, ("data", "val"))
        val_images = _load_manifest(cfg["data"]["val"], kind)
    else:
        split = make_split(train_images, cfg["data"]["val_fraction"], cfg["data"]["split_seed"])
        train_images, val_images = split.select(train_images, "train"), split.select(train_images, "test")
    if not val_images:
        raise TrainingError("no validation records")
    return train_images, val_images


def _db_name(cfg, key):
    name = cfg["data"].get(f"{key}_db")
    path = cfg["data"].get(key)
    return name or (Path(path).stem if path else "")


# --------------------------------------------------------------------------
# commands


def cmd_fit_dod(args, cfg) -> int:
    kind = _kind(cfg)
    _require_paths(cfg, ("data", "train"))
    images = _load_manifest(cfg["data"]["train"], kind)
    if not images:
        raise TrainingError("no training records")
    model = fit_orientation([im.pair(kind) for im in images], [im.pixels.shape[::-1] for im in images], _gmm_config(cfg))
    fp = fingerprint(cfg["dod"], cfg["data"]["train"], kind.value)
    run = _run_dir(cfg, args.out, fp)
    path = model.save(run / f"orientation_{kind.value}.json")
    _write_fingerprint(run, "fit-dod", cfg, fp, n_train=len(images))
    print(json.dumps({"orientation_model": str(path), "direction": list(model.direction), "angle_deg": model.angle_deg}))
    return EXIT_OK


def _write_curves(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CURVE_COLUMNS)
        for row in zip(*(history[c] for c in CURVE_COLUMNS)):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def plot_convergence(results, path):
    """Training loss and validation error per epoch, one line per mode.

    Dotted vertical lines mark each mode's best epoch.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for i, (mode, ck) in enumerate(results.items()):
        colour = f"C{i}"
        h = ck.history
        axes[0].plot(h["epoch"], h["train_loss"], color=colour, label=mode)
        axes[1].plot(h["epoch"], h["val_median_px_error"], color=colour, label=mode)
        for ax in axes:
            ax.axvline(ck.epoch, color=colour, ls=":", lw=1)
    axes[0].set_ylabel("training loss")
    axes[0].set_yscale("log")
    axes[1].set_ylabel("validation median error [px]")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_train(args, cfg) -> int:
    kind = _kind(cfg)
    modes = args.modes.split(",") if args.modes else list(cfg["train"]["orientation_modes"])
    bad = [m for m in modes if m not in ORIENTATION_MODES]
    if bad or not modes:
        raise InvalidInput(f"orientation modes must be from {ORIENTATION_MODES}, got {modes}")
    resume = None
    if args.resume:
        resume = Checkpoint.load(args.resume)
        modes = [resume.train_config.orientation_mode]
        if resume.measurement != kind:
            raise InvalidInput(f"checkpoint is for {resume.measurement.value}, config asks for {kind.value}")
    train_images, val_images = _training_split(cfg, kind)
    spec = _spec(cfg)
    hm = _heatmap_config(cfg, spec.output_stride)
    aug = _augment_config(cfg)
    fp = fingerprint(spec, hm, aug, cfg["train"], cfg["dod"], cfg["data"], kind.value, modes)
    run = _run_dir(cfg, args.out, fp)

    dod_model, dod_path = None, None
    if "dynamic" in modes:
        if resume is not None and resume.orientation is not None:
            dod_model = resume.orientation
        else:
            dod_model = fit_orientation(
                [im.pair(kind) for im in train_images], [im.pixels.shape[::-1] for im in train_images], _gmm_config(cfg)
            )
        dod_path = dod_model.save(run / f"orientation_{kind.value}.json")

    results = {}
    for mode in modes:
        tc = _train_config(cfg, mode)

        def progress(epoch, h, mode=mode):
            log.info("[%s] epoch %d loss %.5f val %.2f px", mode, epoch, h["train_loss"][-1], h["val_median_px_error"][-1])

        ck = train(train_images, val_images, dod_model, tc, spec, hm, aug, kind, resume=resume, progress=progress)
        if mode == "dynamic":
            ck.orientation_path = str(dod_path)
        ck.metadata.update(train_db=_db_name(cfg, "train"), orientation_mode=mode, run_fingerprint=fp)
        ck.save(run / f"model_{kind.value}_{mode}.pt")
        _write_curves(run / f"curves_{kind.value}_{mode}.csv", ck.history)
        results[mode] = ck
    plot_convergence(results, run / f"convergence_{kind.value}.png")
    summary = {
        mode: {
            "best_epoch": ck.epoch,
            "best_val_median_px_error": ck.metadata["best_val_median_px_error"],
            "final_val_median_px_error": ck.history["val_median_px_error"][-1],
        }
        for mode, ck in results.items()
    }
    _write_fingerprint(run, "train", cfg, fp, summary=summary, n_train=len(train_images), n_val=len(val_images))
    print(json.dumps({"run_dir": str(run), "summary": summary}, indent=2))
    return EXIT_OK


def _template(cfg_or_path):
    path = cfg_or_path["scale"]["ruler"] if isinstance(cfg_or_path, dict) else cfg_or_path
    if not path:
        return None
    if not Path(path).is_file():
        raise InvalidInput(f"ruler template not found: {path}")
    return RulerTemplate.load(path)


def resolve_scale(pixels, metadata_scale, source, template):
    """``(mm_per_pixel, scale_source)`` under the requested policy.

    Raises
    ------
    MissingPrerequisite
        When the policy finds no scale.
    """
    if source in ("metadata", "auto") and metadata_scale is not None:
        return float(metadata_scale), "metadata"
    if source in ("recover", "auto") and template is not None:
        try:
            return recover_scale(pixels, template), "recovered"
        except ScaleRecoveryError as e:
            raise MissingPrerequisite(f"no scale available: {e}") from None
    raise MissingPrerequisite("no scale available")


def _evaluate_one(images, kind, checkpoint, source, template):
    """Per-image (id, ground-truth mm, predicted mm, scale source, points)."""
    net = checkpoint.network() if checkpoint is not None else None
    rows = []
    for im in images:
        scale, src = resolve_scale(im.pixels, im.mm_per_pixel, source, template)
        truth = im.pair(kind)
        pred = truth if checkpoint is None else predict(im.pixels, checkpoint, net).pair
        gt_mm = compute_measurement(truth, scale, kind, src).length_mm
        pr = compute_measurement(pred, scale, kind, src)
        rows.append((im.image_id, gt_mm, pr.length_mm, src, pr.landmarks.as_array().ravel().tolist()))
    return rows


def cmd_evaluate(args, cfg) -> int:
    source = args.scale_source or cfg["scale"]["source"]
    template = _template(cfg)
    tests = [str(Path(t).resolve()) for t in args.test] if args.test else []
    if not tests:
        _require_paths(cfg, ("data", "test"))
        tests = [cfg["data"]["test"]]
    for t in tests:
        if not Path(t).is_file():
            raise InvalidInput(f"test manifest not found: {t}")
    if args.checkpoint:
        for c in args.checkpoint:
            if not Path(c).with_suffix(".json").is_file():
                raise InvalidInput(f"checkpoint not found: {c}")
        models = [(Checkpoint.load(c), c) for c in args.checkpoint]
        jobs = [(ck.measurement, ck, ck.metadata.get("orientation_mode", ck.train_config.orientation_mode)) for ck, _ in models]
        train_db = args.train_db or models[0][0].metadata.get("train_db", "")
    else:
        # ground truth fed back as the prediction: a self-agreement check
        jobs = [(_kind(cfg), None, "ground_truth")]
        train_db = args.train_db or _db_name(cfg, "train")
    method = args.method

    fp = fingerprint(cfg["scale"], source, tests, [str(c) for c in args.checkpoint or []], args.ci_mode)
    run = _run_dir(cfg, args.out, fp)
    report_rows, pred_rows = [], []
    for test in tests:
        test_db = args.test_db if (args.test_db and len(tests) == 1) else Path(test).stem
        for kind, ck, label in jobs:
            images = _load_manifest(test, kind)
            if len(images) < 2:
                raise InvalidInput(f"{test}: fewer than two {kind.value} records")
            rows = _evaluate_one(images, kind, ck, source, template)
            ids = [r[0] for r in rows]
            gt = np.array([r[1] for r in rows])
            pr = np.array([r[2] for r in rows])
            m1, m2 = MeasurementSet(gt, ids), MeasurementSet(pr, ids)
            rep = agreement_report(m1, m2, args.ci_mode)
            report_rows.append(rep.row(train_db=train_db, test_db=test_db, method=method or label, measurement=kind.value))
            ba = bland_altman_points(m1, m2, args.ci_mode)
            plot_bland_altman(ba, run / f"bland_altman_{test_db}_{kind.value}_{method or label}.png",
                              title=f"{kind.value}: {train_db} -> {test_db}")
            for image_id, g, p, src, pts in rows:
                pred_rows.append([test_db, kind.value, method or label, image_id, g, p, src, *pts])
    write_report_csv(report_rows, run / "report.csv")
    write_report_json(report_rows, run / "report.json")
    with open(run / "predictions.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["test_db", "measurement", "method", "image", "truth_mm", "predicted_mm", "scale_source", "x1", "y1", "x2", "y2"])
        w.writerows(pred_rows)
    _write_fingerprint(run, "evaluate", cfg, fp, tests=tests, checkpoints=[str(c) for c in args.checkpoint or []])
    print(json.dumps({"run_dir": str(run), "report": report_rows}, indent=2, default=float))
    return EXIT_OK


def cmd_measure(args, cfg) -> int:
    if not Path(args.image).is_file():
        raise InvalidInput(f"image not found: {args.image}")
    if not Path(args.checkpoint).with_suffix(".json").is_file():
        raise InvalidInput(f"checkpoint not found: {args.checkpoint}")
    source = args.scale_source or cfg["scale"]["source"]
    template = _template(args.ruler) if args.ruler else _template(cfg)
    pixels = load_image(args.image)
    ck = Checkpoint.load(args.checkpoint)
    scale, src = resolve_scale(pixels, args.mm_per_pixel, source, template)
    pred = predict(pixels, ck)
    result = compute_measurement(pred.pair, scale, ck.measurement, src)
    out = result.to_dict()
    out.update(
        image=str(args.image),
        confidence=list(pred.confidence),
        low_confidence=list(pred.low_confidence),
        config_fingerprint=ck.config_fingerprint,
    )
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    scfg = SyntheticConfig.from_dict(cfg["synth"])
    fp = fingerprint(scfg)
    run = _run_dir(cfg, args.out, fp)
    images = generate_synthetic(scfg)
    csv_path = write_synthetic(images, run)
    extra = {}
    if scfg.ruler:
        extra["ruler_template"] = str(scfg.ruler_template().save(run / "ruler.png"))
    _write_fingerprint(run, "synth", cfg, fp, n_images=len(images), **extra)
    print(json.dumps({"run_dir": str(run), "annotations": str(csv_path), "n_images": len(images), **extra}))
    return EXIT_OK


def cmd_convert_via(args, cfg) -> int:
    if not Path(args.via_json).is_file():
        raise InvalidInput(f"VIA export not found: {args.via_json}")
    rejected = convert_via(args.via_json, args.output, args.measurement_key, args.default_kind)
    for fname, reason in rejected:
        log.warning("%s: %s", fname, reason)
    print(json.dumps({"output": str(args.output), "rejected": len(rejected)}))
    return EXIT_OK


def _hc18_pairs(directory, pixel_csv):
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInput(f"not a directory: {directory}")
    scales = {}
    if pixel_csv:
        with open(pixel_csv, newline="") as f:
            for row in csv.DictReader(f):
                name = row.get("filename") or row.get("image")
                value = row.get("pixel size(mm)") or row.get("mm_per_pixel")
                if name and value:
                    scales[name] = float(value)
    pairs = []
    for mask in sorted(directory.glob("*_Annotation.png")):
        image = mask.with_name(mask.name.replace("_Annotation", ""))
        if not image.is_file():
            log.warning("no image for mask %s", mask.name)
            continue
        subject = image.stem.split("_")[0]
        pairs.append((image, mask, subject, scales.get(image.name)))
    if not pairs:
        raise InvalidInput(f"no '*_Annotation.png' masks with matching images in {directory}")
    return pairs


def cmd_convert_hc_masks(args, cfg) -> int:
    skipped = convert_hc_masks(_hc18_pairs(args.directory, args.pixel_size_csv), args.output)
    for image, reason in skipped:
        log.warning("%s skipped: %s", image, reason)
    print(json.dumps({"output": str(args.output), "skipped": len(skipped)}))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fetalbio", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", "-c", help="YAML experiment config")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--out", help="output directory (default: a new run directory)")
        sp.set_defaults(func=func)
        return sp

    add("fit-dod", cmd_fit_dod, "fit the orientation model on the training manifest")
    sp = add("train", cmd_train, "train one regressor per orientation mode")
    sp.add_argument("--modes", help=f"comma-separated subset of {','.join(ORIENTATION_MODES)}")
    sp.add_argument("--resume", help="checkpoint (.pt) to continue training from")

    sp = add("evaluate", cmd_evaluate, "agreement report and Bland-Altman plots on test manifests")
    sp.add_argument("--checkpoint", action="append", help="trained model; repeat for several measurements")
    sp.add_argument("--test", action="append", help="test manifest; repeat for cross-dataset rows")
    sp.add_argument("--train-db")
    sp.add_argument("--test-db")
    sp.add_argument("--method")
    sp.add_argument("--ci-mode", choices=("mean_abs", "classical"), default="mean_abs")
    sp.add_argument("--scale-source", choices=SCALE_SOURCES)

    sp = add("measure", cmd_measure, "measure one image and print the result as JSON")
    sp.add_argument("image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scale-source", choices=SCALE_SOURCES)
    sp.add_argument("--mm-per-pixel", type=float, help="scale from image metadata")
    sp.add_argument("--ruler", help="ruler template sidecar (.json)")

    add("synth", cmd_synth, "generate a synthetic dataset")

    sp = add("convert-via", cmd_convert_via, "convert a VIA point export to the annotation CSV")
    sp.add_argument("via_json")
    sp.add_argument("output")
    sp.add_argument("--measurement-key", default="measurement")
    sp.add_argument("--default-kind")

    sp = add("convert-hc-masks", cmd_convert_hc_masks, "derive OFD/BPD annotations from HC18-style masks")
    sp.add_argument("directory")
    sp.add_argument("output")
    sp.add_argument("--pixel-size-csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = load_config(args.config, args.overrides)
        return args.func(args, cfg)
    except (InvalidInput, MissingPrerequisite) as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ScaleRecoveryError as e:
        print(f"error: no scale available: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingError, DomainError, BiometryError, TypeError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
