import numpy as np
import pytest

from slcmask.cli import EXIT_DATA, EXIT_MISMATCH, EXIT_OK, EXIT_USAGE, main
from slcmask.data.corpus import load_image, save_image
from slcmask.geometry import Annotation, Box, read_annotations, write_annotations
from slcmask.slc import measured_layer_receptive_fields

TINY = """\
synth.image_extent = 32, 32
synth.ship_count = 2, 3
synth.length = 8.0, 14.0
synth.width = 3.0, 5.0
synth.count = 5
augment.enabled = false
anchors.strides = 4, 8
anchors.base_scales = 12, 24
pipeline.backbone_channels = 4, 8, 8, 8
pipeline.backbone_strides = 1, 2, 2, 2
pipeline.pyramid_stages = 3, 4
pipeline.fpn_channels = 8
pipeline.rpn_pre_nms = 200
pipeline.train_rois = 100
pipeline.infer_rois = 100
pipeline.rpn_anchors_per_image = 32
pipeline.rois_per_image = 16
pipeline.roi_align_size = 7
pipeline.mask_size = 14
pipeline.mask_head_convs = 2
pipeline.mask_channels = 4
pipeline.box_hidden = 16
pipeline.box_roi_size = 4
pipeline.epochs = 1
pipeline.lr = 0.01
pipeline.batch_size = 2
"""


def tree_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


# ------------------------------------------------------------------ synth
def test_synth_replays_byte_identically(tmp_path, capsys):
    args = ["--synth.count=10", "--seed=7", "synth"]
    assert main(args + [str(tmp_path / "a")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "images: 10  train:test = 8:2 (4.00:1)" in out
    assert main(args + [str(tmp_path / "b")]) == EXIT_OK
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    manifest = (tmp_path / "a" / "manifest.txt").read_text()
    assert "#   seed = 7" in manifest


def test_synth_zero_count(tmp_path, capsys):
    assert main(["--synth.count=0", "synth", str(tmp_path)]) == EXIT_OK
    assert "images: 0" in capsys.readouterr().out
    body = [ln for ln in (tmp_path / "manifest.txt").read_text().splitlines() if not ln.startswith("#")]
    assert body == []


# ------------------------------------------------------------------ rf
def rf_rows(text):
    return [tuple(int(v) for v in ln.split()[1:3]) for ln in text.splitlines()[1:4]]


def test_rf_reports_analytic_and_measured(capsys):
    assert main(["rf", "2", "3"]) == EXIT_OK
    assert rf_rows(capsys.readouterr().out) == [(3, 3), (7, 7), (13, 13)]
    assert main(["rf", "1", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert rf_rows(out) == [(3, 3), (5, 5), (7, 7)]
    assert "fused 1,2,3: analytic 7, measured 7" in out


def test_rf_off_by_one_measurement_fails(capsys):
    def broken(r1, r2):
        a, b, c = measured_layer_receptive_fields(r1, r2)
        return a, b, c + 1

    assert main(["rf", "2", "3"], measure=broken) == EXIT_MISMATCH
    assert "MISMATCH" in capsys.readouterr().out


@pytest.mark.parametrize("args", [["rf", "2", "3", "--fused=1,x"], ["rf", "2", "3", "--fused=2,4"], ["rf", "0", "3"], ["rf"]])
def test_rf_usage_errors(args):
    assert main(args) == EXIT_USAGE


# ------------------------------------------------------------------ tile
def harbour(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (3, 300, 400)) / 255.0
    save_image(str(tmp_path / "big.png"), img)
    return load_image(str(tmp_path / "big.png"))


def test_tile_single_centre(tmp_path, capsys):
    img = harbour(tmp_path)
    (tmp_path / "c.txt").write_text("200 150\n")
    out = tmp_path / "tiles"
    assert main(["--tiles.size=128", "tile", str(tmp_path / "big.png"), str(tmp_path / "c.txt"), str(out)]) == EXIT_OK
    assert "kept 1 of 1" in capsys.readouterr().out
    np.testing.assert_array_equal(load_image(str(out / "tile0000.png")), img[:, 86:214, 136:264])


def test_tile_skips_outside_centre_and_remaps_exactly(tmp_path, caplog):
    harbour(tmp_path)
    (tmp_path / "c.txt").write_text("100 100\n9999 5\n")
    m = np.zeros((300, 400), bool)
    m[90:97, 80:111] = True
    ann = Annotation.from_mask(m)
    with open(tmp_path / "a.txt", "w") as fh:
        write_annotations(fh, [Box(0, 0, 400, 300)], [(0, ann)])
    out = tmp_path / "tiles"
    args = ["--tiles.size=64", "tile", str(tmp_path / "big.png"), str(tmp_path / "c.txt"), str(out)]
    assert main(args + ["--annotations", str(tmp_path / "a.txt")]) == EXIT_OK
    assert "outside" in caplog.text
    assert sorted(p.name for p in out.iterdir()) == ["tile0000.png", "tiles.txt"]
    with open(out / "tiles.txt") as fh:
        tiles, insts = read_annotations(fh)
    assert len(tiles) == 1 and len(insts) == 1
    tid, cls, box, crop = insts[0]
    assert (tid, cls) == (0, ann.class_id)
    # tile frame back to image frame
    x1, y1 = int(tiles[0].x1 + box.x1), int(tiles[0].y1 + box.y1)
    assert (x1, y1, x1 + crop.shape[1], y1 + crop.shape[0]) == (80, 90, 111, 97)
    back = np.zeros_like(m)
    back[y1 : y1 + crop.shape[0], x1 : x1 + crop.shape[1]] = crop
    np.testing.assert_array_equal(back, m)


# ------------------------------------------------------------------ train / eval
@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "tiny.cfg").write_text(TINY)
    cfg = ["--config", str(root / "tiny.cfg")]
    assert main(cfg + ["synth", str(root / "corpus")]) == EXIT_OK
    assert main(cfg + ["train", str(root / "corpus"), str(root / "ckpt")]) == EXIT_OK
    return root, cfg


def test_train_writes_checkpoint_and_logs(trained):
    root, _ = trained
    names = {p.name for p in (root / "ckpt").iterdir()}
    assert {"weights.slct", "manifest.json", "loss.csv", "run.cfg"} <= names
    log = (root / "ckpt" / "loss.csv").read_text().splitlines()
    assert log[0] == "# resolved config:"
    assert any(ln.startswith("epoch,iter,") for ln in log)


def test_eval_report_columns(trained, capsys):
    root, cfg = trained
    out = root / "report"
    assert main(cfg + ["eval", str(root / "corpus"), str(root / "ckpt"), "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0].split() == ["Network", "R(%)", "AP(%)", "R^bb(%)", "AP^bb(%)"]
    csv = [ln for ln in (out / "report.csv").read_text().splitlines() if not ln.startswith("#")]
    assert csv[0] == "Network,R(%),AP(%),R^bb(%),AP^bb(%)"
    assert len(csv) == 2


def test_corrupt_inputs_exit_3(trained, tmp_path):
    root, cfg = trained
    weights = root / "ckpt" / "weights.slct"
    broken = tmp_path / "ckpt"
    broken.mkdir()
    for p in (root / "ckpt").iterdir():
        (broken / p.name).write_bytes(p.read_bytes())
    (broken / "weights.slct").write_bytes(weights.read_bytes()[:50])
    assert main(cfg + ["eval", str(root / "corpus"), str(broken)]) == EXIT_DATA
    (tmp_path / "corpus").mkdir()
    (tmp_path / "corpus" / "manifest.txt").write_text("garbage line\n")
    assert main(cfg + ["train", str(tmp_path / "corpus"), str(tmp_path / "out")]) == EXIT_DATA


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["--slc.bogus=1", "synth", str(tmp_path)]) == EXIT_USAGE
    assert "unknown key" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "none.cfg"), "synth", str(tmp_path)]) == EXIT_USAGE
    assert main(["--preset", "nope", "synth", str(tmp_path)]) == EXIT_USAGE
    assert main(["--slc.fused_layers=2", "synth", str(tmp_path)]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
