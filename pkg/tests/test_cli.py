import csv
import json

import numpy as np
import pytest
import yaml

from fetalbio.cli import main
from fetalbio.core import MeasurementKind
from fetalbio.data import SyntheticConfig, generate_synthetic, load_point_annotations, save_image, write_synthetic
from fetalbio.dod import OrientationModel
from fetalbio.model import Checkpoint

TINY = [
    "regressor.input_size=64",
    "regressor.channels=[4,6,8,8]",
    "train.epochs=2",
    "train.batch_size=4",
    "train.initial_lr=0.001",
    "train.lr_drop_epochs=[]",
]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def sets(items):
    return [x for item in items for x in ("--set", item)]


@pytest.fixture(scope="module")
def datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    head = generate_synthetic(SyntheticConfig(n_images=12, image_size=64, size_range=(0.2, 0.3), seed=2, ruler=True,
                                              mm_per_pixel=0.1, ruler_spacing_px=10, ruler_width=9))
    out = {"head": write_synthetic(head, root / "head")}
    out["ruler"] = SyntheticConfig(image_size=64, ruler=True, mm_per_pixel=0.1, ruler_width=9).ruler_template().save(root / "ruler.png")
    cfg = {"measurement": "OFD", "output_dir": str(root / "runs"), "data": {"train": "head/annotations.csv", "test": "head/annotations.csv"}}
    (root / "head.yaml").write_text(yaml.safe_dump(cfg))
    out["config"] = root / "head.yaml"
    out["root"] = root
    return out


def test_synth_writes_pngs_and_csv(tmp_path, capsys):
    argv = ["synth", "--set", "synth.n_images=100", "--set", "synth.image_size=32", "--set", "synth.size_range=[0.2,0.3]"]
    code, out, _ = run(capsys, *argv, "--out", tmp_path / "a")
    assert code == 0
    assert len(list((tmp_path / "a" / "images").glob("*.png"))) == 100
    rows = list(csv.reader(open(tmp_path / "a" / "annotations.csv")))
    assert len(rows) == 1 + 100 * 2
    assert len({r[0] for r in rows[1:]}) == 100
    assert run(capsys, *argv, "--out", tmp_path / "b")[0] == 0
    assert (tmp_path / "a" / "annotations.csv").read_bytes() == (tmp_path / "b" / "annotations.csv").read_bytes()
    fp = json.loads((tmp_path / "a" / "fingerprint.json").read_text())
    assert fp["command"] == "synth" and len(fp["fingerprint"]) == 16


def test_fit_dod_femur_direction(tmp_path, capsys):
    femur = generate_synthetic(SyntheticConfig(n_images=200, image_size=48, shape="rod_femur", size_range=(0.2, 0.3), seed=3))
    manifest = write_synthetic(femur, tmp_path / "femur")
    axis = np.mean([im.pair("FL").as_array()[1] - im.pair("FL").as_array()[0] for im in femur], axis=0)
    argv = ["fit-dod", "--set", "measurement=FL", "--set", f"data.train={manifest}"]
    code, out, _ = run(capsys, *argv, "--out", tmp_path / "a")
    assert code == 0
    model = OrientationModel.load(tmp_path / "a" / "orientation_FL.json")
    d = model.direction
    cos = abs(d @ axis) / np.hypot(*d) / np.hypot(*axis)
    assert np.degrees(np.arccos(min(cos, 1.0))) < 2.0
    run(capsys, *argv, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "orientation_FL.json").read_bytes() == (tmp_path / "b" / "orientation_FL.json").read_bytes()


def test_fit_dod_empty_manifest(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("image,measurement,x1,y1,x2,y2,subject_id,mm_per_pixel\n")
    code, _, err = run(capsys, "fit-dod", "--set", f"data.train={tmp_path / 'empty.csv'}", "--out", tmp_path / "o")
    assert code == 2 and "no training records" in err


def test_invalid_inputs(tmp_path, capsys):
    assert run(capsys, "fit-dod", "--config", tmp_path / "missing.yaml")[0] == 2
    assert run(capsys, "fit-dod", "--set", "data.train=/nonexistent.csv")[0] == 2
    assert run(capsys, "synth", "--set", "synth.shape=cube", "--out", tmp_path)[0] == 2
    assert run(capsys, "synth", "--set", "noequals", "--out", tmp_path)[0] == 2


@pytest.fixture(scope="module")
def trained(datasets, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("train")
    code = main(["train", "--config", str(datasets["config"]), "--modes", "dynamic,none", "--out", str(run_dir)] + sets(TINY))
    assert code == 0
    return run_dir


def test_train_outputs(trained):
    for mode in ("dynamic", "none"):
        rows = list(csv.reader(open(trained / f"curves_OFD_{mode}.csv")))
        assert rows[0] == ["epoch", "train_loss", "val_median_px_error"]
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        ck = Checkpoint.load(trained / f"model_OFD_{mode}.pt")
        assert ck.metadata["orientation_mode"] == mode
    assert (trained / "convergence_OFD.png").stat().st_size > 0
    dyn = Checkpoint.load(trained / "model_OFD_dynamic.pt")
    assert OrientationModel.load(dyn.orientation_path).to_dict() == dyn.orientation.to_dict()
    assert json.loads((trained / "fingerprint.json").read_text())["summary"].keys() == {"dynamic", "none"}


def test_train_resume(datasets, trained, tmp_path, capsys):
    argv = ["train", "--config", datasets["config"], *sets(TINY[:-3]), "--set", "train.batch_size=4",
            "--set", "train.initial_lr=0.001", "--set", "train.lr_drop_epochs=[]"]
    code, *_ = run(capsys, *argv, "--set", "train.epochs=3", "--modes", "none", "--out", tmp_path / "full")
    assert code == 0
    code, *_ = run(capsys, *argv, "--set", "train.epochs=3", "--resume", trained / "model_OFD_none.pt", "--out", tmp_path / "res")
    assert code == 0
    full = Checkpoint.load(tmp_path / "full" / "model_OFD_none.pt").history
    resumed = Checkpoint.load(tmp_path / "res" / "model_OFD_none.pt").history
    assert full == resumed


def test_evaluate_ground_truth_is_perfect(datasets, tmp_path, capsys):
    code, out, _ = run(capsys, "evaluate", "--config", datasets["config"], "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert len(rows) == 1
    for k in ("bias", "ci95", "mean_l1", "median_l1"):
        assert float(rows[0][k]) == 0.0
    assert list(rows[0]) == ["train_db", "test_db", "method", "measurement", "n", "bias", "ci95", "mean_l1", "median_l1", "ci_mode"]
    assert list(tmp_path.glob("bland_altman_*.png"))


def test_evaluate_cross_dataset_rows(datasets, trained, tmp_path, capsys):
    other = datasets["root"] / "head_copy.csv"
    other.write_text((datasets["head"]).read_text())
    (datasets["root"] / "images").mkdir(exist_ok=True)
    for p in (datasets["head"].parent / "images").glob("*.png"):
        (datasets["root"] / "images" / p.name).write_bytes(p.read_bytes())
    code, out, _ = run(
        capsys, "evaluate", "--config", datasets["config"], "--checkpoint", trained / "model_OFD_dynamic.pt",
        "--test", datasets["head"], "--test", other, "--train-db", "A", "--out", tmp_path,
    )
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert [(r["train_db"], r["test_db"], r["measurement"]) for r in rows] == [("A", "annotations", "OFD"), ("A", "head_copy", "OFD")]
    assert all(int(r["n"]) == 12 for r in rows)
    assert float(rows[0]["mean_l1"]) == pytest.approx(float(rows[1]["mean_l1"]))


def test_measure_scale_sources(datasets, trained, capsys):
    ck = trained / "model_OFD_dynamic.pt"
    image = datasets["head"].parent / "images" / "00000.png"
    code, out, _ = run(capsys, "measure", image, "--checkpoint", ck, "--scale-source", "recover", "--ruler", datasets["ruler"])
    assert code == 0
    res = json.loads(out)
    assert res["scale_source"] == "recovered" and res["mm_per_pixel"] == pytest.approx(0.1, abs=1e-12)
    assert res["length_mm"] == pytest.approx(res["length_px"] * 0.1)
    assert {"landmarks", "length_px", "length_mm", "scale_source", "kind"} <= set(res)
    code, out, _ = run(capsys, "measure", image, "--checkpoint", ck, "--mm-per-pixel", "0.25")
    assert code == 0 and json.loads(out)["scale_source"] == "metadata"
    code, _, err = run(capsys, "measure", image, "--checkpoint", ck, "--scale-source", "metadata")
    assert code == 3 and "no scale available" in err
    blank = datasets["root"] / "blank.png"
    save_image(np.zeros((64, 64)), blank)
    code, _, err = run(capsys, "measure", blank, "--checkpoint", ck, "--scale-source", "recover", "--ruler", datasets["ruler"])
    assert code == 3 and "no scale available" in err


def test_measure_recovered_length_matches_truth(datasets, trained, capsys):
    # with the ground-truth pair the recovered-scale measurement equals the generator length
    images = load_point_annotations(datasets["head"]).images
    from fetalbio.cli import resolve_scale
    from fetalbio.measure import RulerTemplate, compute_measurement

    template = RulerTemplate.load(datasets["ruler"])
    for im in images:
        scale, src = resolve_scale(im.pixels, None, "auto", template)
        res = compute_measurement(im.pair(MeasurementKind.OFD), scale, scale_source=src)
        assert res.length_mm == pytest.approx(im.pair("OFD").length() * im.mm_per_pixel, rel=1e-12)


def test_convert_via_cli(tmp_path, capsys):
    via = {"x": {"filename": "a.png", "regions": [
        {"shape_attributes": {"name": "point", "cx": 1, "cy": 2}, "region_attributes": {"measurement": "FL"}},
        {"shape_attributes": {"name": "point", "cx": 5, "cy": 6}, "region_attributes": {"measurement": "FL"}}]}}
    (tmp_path / "via.json").write_text(json.dumps(via))
    code, out, _ = run(capsys, "convert-via", tmp_path / "via.json", tmp_path / "out.csv")
    assert code == 0 and json.loads(out)["rejected"] == 0
    rows = list(csv.reader(open(tmp_path / "out.csv")))
    assert rows[1][:6] == ["a.png", "FL", "1.0", "2.0", "5.0", "6.0"]


def test_convert_hc_masks_cli(tmp_path, capsys):
    yy, xx = np.mgrid[0:96, 0:96]
    mask = (((xx - 48) / 30.0) ** 2 + ((yy - 45) / 20.0) ** 2 <= 1) * 255.0
    save_image(np.zeros((96, 96)), tmp_path / "001_HC.png")
    save_image(mask, tmp_path / "001_HC_Annotation.png")
    (tmp_path / "px.csv").write_text("filename,pixel size(mm),head circumference (mm)\n001_HC.png,0.12,100\n")
    code, out, _ = run(capsys, "convert-hc-masks", tmp_path, tmp_path / "hc.csv", "--pixel-size-csv", tmp_path / "px.csv")
    assert code == 0
    res = load_point_annotations(tmp_path / "hc.csv")
    im = res.images[0]
    assert im.mm_per_pixel == 0.12 and im.subject_id == "001"
    assert im.pair("OFD").length() == pytest.approx(60, abs=1.0)
    assert run(capsys, "convert-hc-masks", tmp_path / "nothing", tmp_path / "x.csv")[0] == 2
