import json
from pathlib import Path

import pytest

from wmspot import geometry
from wmspot.cli import main
from wmspot.dataset import Manifest, ManifestRecord
from wmspot.geometry import RotatedBox
from wmspot.metrics import DetectionPrediction, PagePredictions, write_predictions
from wmspot.render import PageAnnotation
from wmspot.sampling import PageParams


def one_page_manifest(tmp_path, word="significance", boxes=None, grid=1):
    boxes = boxes if boxes is not None else [RotatedBox(0.2, 0.4, 0.8, 0.5, 0.3)]
    ann = PageAnnotation("doc1", PageParams(0.3, grid, 0.3, 0, word), boxes, word)
    rec = ManifestRecord("doc1", "images/doc1.png", "doc1.png", "0" * 64, 400, 300, ann)
    path = tmp_path / "manifest.json"
    Manifest("fixture", {}, ["f.ttf"], [word], [rec]).write(path)
    return path


def preds_file(tmp_path, pages, name="preds.json"):
    path = tmp_path / name
    write_predictions(path, pages)
    return path


@pytest.fixture
def generated(workspace, tmp_path):
    out = tmp_path / "gen"
    assert main(["generate", str(workspace), "--out", str(out)]) == 0
    return out


def test_generate_ten_pages(generated):
    manifest = Manifest.read(generated / "manifest.json")
    assert len(manifest.records) == 10
    assert len(list((generated / "images").glob("*.png"))) == 10


def test_generate_twice_identical(workspace, tmp_path, generated):
    again = tmp_path / "gen2"
    assert main(["generate", str(workspace), "--out", str(again)]) == 0
    assert (again / "manifest.json").read_bytes() == (generated / "manifest.json").read_bytes()
    for img in (generated / "images").iterdir():
        assert (again / "images" / img.name).read_bytes() == img.read_bytes()


def test_generate_epochs(workspace, tmp_path):
    out = tmp_path / "ep"
    assert main(["generate", str(workspace), "--out", str(out), "--epochs", "2"]) == 0
    m0 = Manifest.read(out / "epoch_000" / "manifest.json")
    m1 = Manifest.read(out / "epoch_001" / "manifest.json")
    assert [r.sha256 for r in m0.records] != [r.sha256 for r in m1.records]


def test_missing_font_dir(workspace, tmp_path, capsys):
    cfg = json.loads(workspace.read_text())
    cfg["fonts_dir"] = str(tmp_path / "no_such_fonts")
    workspace.write_text(json.dumps(cfg))
    assert main(["generate", str(workspace)]) == 2
    assert "no_such_fonts" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    (tmp_path / "c.json").write_text("{oops")
    assert main(["generate", str(tmp_path / "c.json")]) == 2
    assert main(["generate", str(tmp_path / "missing.json")]) == 2


def test_page_failure_logged(workspace, tmp_path, capsys):
    (workspace.parent / "pages" / "page9999.png").write_bytes(b"not a png")
    out = tmp_path / "fail"
    assert main(["generate", str(workspace), "--out", str(out)]) == 1
    assert "page9999.png" in (out / "errors.log").read_text()


def test_io_failure_exit_code(workspace, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate", str(workspace), "--out", str(blocker / "sub")]) == 3


def test_usage_errors():
    assert main([]) == 2
    assert main(["eval-det"]) == 2


def test_stats_constant_grid(tmp_path, capsys):
    boxes = [RotatedBox(0.1 * i, 0.1, 0.1 * i + 0.05, 0.15) for i in range(9)]
    manifest = one_page_manifest(tmp_path, boxes=boxes, grid=3)
    text = tmp_path / "text.json"
    text.write_text(json.dumps({"doc1": [[0, 0, 1, 1]]}))
    assert main(["stats", str(manifest), "--text-boxes", str(text)]) == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["mean"] == stats["median"] == 9.0
    assert stats["std"] == 0.0
    assert stats["overlap_mean"] == pytest.approx(100.0)
    assert "100.00" in capsys.readouterr().out


def test_stats_empty_split(tmp_path, capsys):
    path = tmp_path / "m.json"
    Manifest("empty", {}, [], [], []).write(path)
    assert main(["stats", str(path), "--out", str(tmp_path / "s.json")]) == 0
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["total"] == 0 and stats["mean"] == 0.0
    assert "warning" in capsys.readouterr().err


def test_stats_corrupt_manifest(tmp_path):
    (tmp_path / "m.json").write_text("[]")
    assert main(["stats", str(tmp_path / "m.json")]) == 2


def test_eval_det_perfect_and_empty(generated, tmp_path, capsys):
    manifest = Manifest.read(generated / "manifest.json")
    perfect = [PagePredictions(r.image_id, [DetectionPrediction(b, 1.0) for b in r.annotation.boxes])
               for r in manifest.records]
    out = tmp_path / "report.json"
    assert main(["eval-det", str(generated / "manifest.json"), str(preds_file(tmp_path, perfect)), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.count("100.00") == 6
    report = json.loads(out.read_text())
    assert all(report[k] == 1.0 for k in ("mAP", "AP@50", "AP@75", "mAR", "AR@50", "AR@75"))
    empty = preds_file(tmp_path, [], "empty.json")
    assert main(["eval-det", str(generated / "manifest.json"), str(empty), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert all(report[k] == 0.0 for k in ("mAP", "AP@50", "AP@75", "mAR", "AR@50", "AR@75"))


def test_eval_det_two_box_fixture(tmp_path):
    truths = [RotatedBox(0.1, 0.1, 0.4, 0.4), RotatedBox(0.5, 0.1, 0.6, 0.2)]
    manifest = one_page_manifest(tmp_path, boxes=truths, grid=2)
    preds = [PagePredictions("doc1", [DetectionPrediction(RotatedBox(0.175, 0.1, 0.475, 0.4), 0.9),
                                      DetectionPrediction(RotatedBox(0.7, 0.7, 0.8, 0.8), 0.8)])]
    out = tmp_path / "r.json"
    assert main(["eval-det", str(manifest), str(preds_file(tmp_path, preds)), "--out", str(out)]) == 0
    # 400x300 page: the horizontal shift still gives IoU 0.6
    assert json.loads(out.read_text())["AP@50"] == pytest.approx(51 / 101, abs=1e-12)


def test_eval_det_orphans(tmp_path, capsys):
    manifest = one_page_manifest(tmp_path)
    preds = preds_file(tmp_path, [PagePredictions("ghost", [])])
    assert main(["eval-det", str(manifest), str(preds)]) == 2
    assert "ghost" in capsys.readouterr().err


def test_eval_rec_exact(tmp_path, capsys):
    manifest = one_page_manifest(tmp_path, word="draft")
    preds = preds_file(tmp_path, [PagePredictions("doc1", [], "draft")])
    assert main(["eval-rec", str(manifest), str(preds)]) == 0
    assert "1.0000 ± 0.0000" in capsys.readouterr().out


def test_eval_rec_dropped_letter(tmp_path, capsys):
    manifest = one_page_manifest(tmp_path)
    preds = preds_file(tmp_path, [PagePredictions("doc1", [], "significane")])
    out = tmp_path / "rec.json"
    assert main(["eval-rec", str(manifest), str(preds), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mean"] == pytest.approx(11 / 12)
    assert "0.9167" in capsys.readouterr().out


def test_eval_rec_vote(tmp_path, capsys):
    manifest = one_page_manifest(tmp_path, word="draft")
    box = RotatedBox(0.2, 0.4, 0.8, 0.5, 0.3)
    texts = ["draft", "draft", "draft"]
    preds = preds_file(tmp_path, [PagePredictions("doc1", [DetectionPrediction(box, 0.5, t) for t in texts])])
    out = tmp_path / "rec.json"
    assert main(["eval-rec", str(manifest), str(preds), "--vote", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mean"] == 1.0
    mixed = preds_file(tmp_path, [PagePredictions("doc1", [DetectionPrediction(box, s, t) for s, t in
                                                          [(0.9, "drat"), (0.5, "draft"), (0.4, "draft")]])], "m.json")
    assert main(["eval-rec", str(manifest), str(mixed), "--vote", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mean"] == 1.0
    # without voting the top-scored box text is used
    assert main(["eval-rec", str(manifest), str(mixed), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mean"] == pytest.approx(0.8)


def test_eval_rec_missing_text_scores_zero(tmp_path, capsys):
    manifest = one_page_manifest(tmp_path, word="draft")
    preds = preds_file(tmp_path, [])
    out = tmp_path / "rec.json"
    assert main(["eval-rec", str(manifest), str(preds), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["documents"] == {"doc1": 0.0}
    assert "warning" in capsys.readouterr().err


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") >= 5 and "[FAIL]" not in out


def test_selfcheck_detects_corrupt_iou(monkeypatch, capsys):
    real = geometry.rotated_iou
    monkeypatch.setattr(geometry, "rotated_iou", lambda a, b, w=1.0, h=1.0: 0.9 * real(a, b, w, h))
    assert main(["selfcheck", "--suite", "iou_oracle"]) == 1
    captured = capsys.readouterr()
    assert "rotated_iou" in captured.out and "iou_oracle" in captured.err


def test_selfcheck_detects_corrupt_gradient(monkeypatch, capsys):
    from wmspot import kernels
    real = kernels.variance_loss_grad
    monkeypatch.setattr(kernels, "variance_loss_grad", lambda b: 1.01 * real(b))
    assert main(["selfcheck", "--suite", "gradients"]) == 1
    assert "variance_loss_grad" in capsys.readouterr().out
