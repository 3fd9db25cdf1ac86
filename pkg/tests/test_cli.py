"""End-to-end command line behavior via an in-process runner."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from boardmine import dataset_io, preprocess
from boardmine.cli import main
from boardmine.dataset_io import load_manifest, write_detections
from boardmine.types import Detection
from conftest import labelstudio_task, make_board_image, write_export

BOARD_RECT = (20, 20, 180, 140)

# percent-unit rectangles, all fully inside BOARD_RECT of a 200x160 image
TASKS = [
    (
        "board1.png",
        [
            {"x": 15, "y": 15, "width": 10, "height": 12.5, "label": "Capacitor"},
            {"x": 50, "y": 50, "width": 20, "height": 25, "label": "IC"},
        ],
    ),
    ("board2.png", [{"x": 30, "y": 30, "width": 15, "height": 12.5, "label": "Resistor"}]),
    (
        "board3.png",
        [
            {"x": 20, "y": 25, "width": 10, "height": 12.5, "label": "Capacitor"},
            {"x": 60, "y": 40, "width": 10, "height": 12.5, "label": "Diode"},
        ],
    ),
]


def build_dataset(root: Path) -> tuple[Path, Path]:
    images_dir = root / "images"
    images_dir.mkdir()
    tasks = []
    for name, rects in TASKS:
        preprocess.save_image(images_dir / name, make_board_image(200, 160, BOARD_RECT))
        tasks.append(labelstudio_task(name, rects))
    export = root / "export.json"
    write_export(export, tasks)
    return export, images_dir


def run(args, **kwargs):
    return CliRunner().invoke(main, [str(a) for a in args], **kwargs)


@pytest.fixture
def dataset(tmp_path):
    export, images_dir = build_dataset(tmp_path)
    return tmp_path, export, images_dir


@pytest.fixture
def ingested(dataset):
    """Dataset plus a manifest with board3 in the val split."""
    root, export, images_dir = dataset
    out = root / "out"
    result = run(
        ["--output-dir", out, "ingest", export, "--images-dir", images_dir, "--val", "board3.png"]
    )
    assert result.exit_code == 0, result.output
    return root, images_dir, out / "manifest.json"


class TestIngest:
    def test_ingests_all_tasks(self, dataset):
        root, export, images_dir = dataset
        result = run(["--output-dir", root / "out", "ingest", export, "--images-dir", images_dir])
        assert result.exit_code == 0, result.output
        assert "3 record(s)" in result.output
        manifest = load_manifest(root / "out" / "manifest.json")
        assert len(manifest.records) == 3
        assert all(r.split == "train" for r in manifest.records)

    def test_val_flag_assigns_split(self, ingested):
        _, _, manifest_path = ingested
        splits = {r.image_path: r.split for r in load_manifest(manifest_path).records}
        assert splits == {"board1.png": "train", "board2.png": "train", "board3.png": "val"}

    def test_comma_separated_val_names(self, dataset):
        root, export, images_dir = dataset
        result = run(
            [
                "--output-dir",
                root / "out",
                "ingest",
                export,
                "--images-dir",
                images_dir,
                "--val",
                "board2.png,board3.png",
            ]
        )
        assert result.exit_code == 0, result.output
        manifest = load_manifest(root / "out" / "manifest.json")
        val = {r.image_path for r in manifest.records if r.split == "val"}
        assert val == {"board2.png", "board3.png"}

    def test_unknown_val_name_warns(self, dataset):
        root, export, images_dir = dataset
        result = run(
            [
                "--output-dir",
                root / "out",
                "ingest",
                export,
                "--images-dir",
                images_dir,
                "--val",
                "nope.png",
            ]
        )
        assert result.exit_code == 0, result.output
        assert "warning" in result.output and "nope.png" in result.output

    def test_missing_image_file_fails(self, dataset):
        root, export, images_dir = dataset
        (images_dir / "board2.png").unlink()
        result = run(["--output-dir", root / "out", "ingest", export, "--images-dir", images_dir])
        assert result.exit_code == 1
        assert "board2.png" in result.output

    def test_empty_export_warns_but_succeeds(self, tmp_path):
        export = tmp_path / "export.json"
        write_export(export, [])
        images_dir = tmp_path / "images"
        images_dir.mkdir()
        result = run(["--output-dir", tmp_path / "out", "ingest", export, "--images-dir", images_dir])
        assert result.exit_code == 0, result.output
        assert "no tasks" in result.output
        assert load_manifest(tmp_path / "out" / "manifest.json").records == ()

    def test_malformed_export_fails_with_location(self, tmp_path):
        export = tmp_path / "export.json"
        export.write_text("[{]", encoding="utf-8")
        images_dir = tmp_path / "images"
        images_dir.mkdir()
        result = run(["--output-dir", tmp_path / "out", "ingest", export, "--images-dir", images_dir])
        assert result.exit_code == 1
        assert "export.json" in result.output


class TestConvert:
    def test_writes_label_and_class_files(self, ingested):
        root, _, manifest_path = ingested
        out = root / "conv"
        result = run(["--output-dir", out, "convert", manifest_path])
        assert result.exit_code == 0, result.output
        names = sorted(p.name for p in (out / "labels").glob("*.txt"))
        assert names == ["board1.txt", "board2.txt", "board3.txt"]
        classes = (out / "classes.txt").read_text(encoding="utf-8").splitlines()
        assert classes[0] == "capacitor"
        assert len(classes) == 8

    def test_label_content_round_trips(self, ingested):
        root, _, manifest_path = ingested
        out = root / "conv"
        run(["--output-dir", out, "convert", manifest_path])
        manifest = load_manifest(manifest_path)
        record = next(r for r in manifest.records if r.image_path == "board2.png")
        text = (out / "labels" / "board2.txt").read_text(encoding="utf-8")
        parsed = dataset_io.parse_yolo_labels(text, manifest.class_table)
        assert [a.label.name for a in parsed] == [a.label.name for a in record.annotations]


class TestStats:
    def test_writes_reports_and_prints_table(self, ingested):
        root, _, manifest_path = ingested
        out = root / "stats"
        result = run(["--output-dir", out, "stats", manifest_path])
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "histogram.json").read_text(encoding="utf-8"))
        assert payload["counts"]["train"]["capacitor"] == 1
        assert payload["counts"]["val"]["capacitor"] == 1
        assert payload["counts"]["train"]["resistor"] == 1
        summary = json.loads((out / "split_summary.json").read_text(encoding="utf-8"))
        assert summary["image_counts"] == {"train": 2, "val": 1}
        assert "images: train=2 val=1 total=3" in result.output
        assert "capacitor" in result.output


class TestRoi:
    def test_matches_direct_library_calls(self, ingested):
        root, images_dir, manifest_path = ingested
        out = root / "roi"
        result = run(["--output-dir", out, "roi", manifest_path, "--images-dir", images_dir])
        assert result.exit_code == 0, result.output

        manifest = load_manifest(manifest_path)
        for record in manifest.records:
            image = preprocess.load_image(images_dir / record.image_path)
            rect = preprocess.segment_board_roi(image)
            crop, kept = preprocess.crop_and_remap(image, rect, record.annotations)
            stem = Path(record.image_path).stem
            saved = preprocess.load_image(out / "images" / record.image_path)
            assert np.array_equal(saved, crop)
            expected = dataset_io.write_yolo_labels(kept)
            got = (out / "labels" / f"{stem}.txt").read_text(encoding="utf-8")
            assert got == expected

        cropped = load_manifest(out / "manifest.json")
        assert all(r.width == 160 and r.height == 120 for r in cropped.records)

    def test_input_images_not_mutated(self, ingested):
        root, images_dir, manifest_path = ingested
        before = {p.name: p.read_bytes() for p in images_dir.glob("*.png")}
        run(["--output-dir", root / "roi", "roi", manifest_path, "--images-dir", images_dir])
        after = {p.name: p.read_bytes() for p in images_dir.glob("*.png")}
        assert before == after

    def test_blank_image_fails_with_file_name(self, ingested):
        root, images_dir, manifest_path = ingested
        preprocess.save_image(images_dir / "board1.png", np.zeros((160, 200, 3), np.uint8))
        result = run(["--output-dir", root / "roi", "roi", manifest_path, "--images-dir", images_dir])
        assert result.exit_code == 1
        assert "board1.png" in result.output

    def test_negative_margin_is_usage_error(self, ingested):
        root, images_dir, manifest_path = ingested
        result = run(
            [
                "--output-dir",
                root / "roi",
                "roi",
                manifest_path,
                "--images-dir",
                images_dir,
                "--margin",
                "-1",
            ]
        )
        assert result.exit_code == 2


class TestAugment:
    def test_empty_plan_writes_nothing(self, ingested):
        root, images_dir, manifest_path = ingested
        out = root / "aug"
        result = run(
            [
                "--output-dir",
                out,
                "augment",
                manifest_path,
                "--images-dir",
                images_dir,
                "--target-min",
                "0",
            ]
        )
        assert result.exit_code == 0, result.output
        assert "nothing to augment" in result.output
        assert not (out / "images").exists()
        assert not (out / "manifest.json").exists()

    def test_augments_until_target_met(self, ingested):
        root, images_dir, manifest_path = ingested
        out = root / "aug"
        result = run(
            [
                "--output-dir",
                out,
                "augment",
                manifest_path,
                "--images-dir",
                images_dir,
                "--target-min",
                "2",
            ]
        )
        assert result.exit_code == 0, result.output
        combined = load_manifest(out / "manifest.json")
        assert len(combined.records) > 3
        # absent classes cannot be manufactured
        assert "transformer" in result.output and "warning" in result.output

        plan = json.loads((out / "plan.json").read_text(encoding="utf-8"))
        for image, ops in plan["ops_by_image"].items():
            for op in ops:
                name = preprocess.augmented_name(image, preprocess.AugmentOp(op))
                assert (out / "images" / name).is_file()
                record = next(r for r in combined.records if r.image_path == name)
                pixels = preprocess.load_image(out / "images" / name)
                assert pixels.shape[:2] == (record.height, record.width)


class TestEval:
    def make_detections(self, manifest_path: Path, det_dir: Path) -> None:
        det_dir.mkdir(exist_ok=True)
        manifest = load_manifest(manifest_path)
        for record in manifest.records:
            if record.split != "val":
                continue
            stem = Path(record.image_path).stem
            detections = [Detection(a.label, a.box, 0.9) for a in record.annotations]
            (det_dir / f"{stem}.txt").write_text(write_detections(detections), encoding="utf-8")

    def test_perfect_detections_score_one(self, ingested):
        root, _, manifest_path = ingested
        det_dir = root / "det"
        self.make_detections(manifest_path, det_dir)
        out = root / "eval"
        result = run(
            ["--output-dir", out, "eval", manifest_path, "--detections-dir", det_dir]
        )
        assert result.exit_code == 0, result.output
        assert "P=1.0000 R=1.0000 mAP@.5=1.0000 mAP@.5:.95=1.0000" in result.output
        report = json.loads((out / "eval_report.json").read_text(encoding="utf-8"))
        assert report["map_50"] == 1.0
        md = (out / "eval_report.md").read_text(encoding="utf-8")
        assert md.splitlines()[0] == "| Precision | Recall | mAP | mAP-95 |"

    def test_missing_detection_file_warns(self, ingested):
        root, _, manifest_path = ingested
        det_dir = root / "det"
        det_dir.mkdir()
        result = run(
            ["--output-dir", root / "eval", "eval", manifest_path, "--detections-dir", det_dir]
        )
        assert result.exit_code == 0, result.output
        assert "warning: no detection file for board3.png" in result.output
        assert "R=0.0000" in result.output

    def test_unparseable_detection_file_fails_with_location(self, ingested):
        root, _, manifest_path = ingested
        det_dir = root / "det"
        det_dir.mkdir()
        (det_dir / "board3.txt").write_text("0 not-a-number 0.5 0.5 0.1 0.1\n", encoding="utf-8")
        result = run(
            ["--output-dir", root / "eval", "eval", manifest_path, "--detections-dir", det_dir]
        )
        assert result.exit_code == 1
        assert "board3.txt" in result.output
        assert "line 1" in result.output

    def test_stray_detection_file_warns(self, ingested):
        root, _, manifest_path = ingested
        det_dir = root / "det"
        self.make_detections(manifest_path, det_dir)
        (det_dir / "nothere.txt").write_text("", encoding="utf-8")
        result = run(
            ["--output-dir", root / "eval", "eval", manifest_path, "--detections-dir", det_dir]
        )
        assert result.exit_code == 0, result.output
        assert "nothere.txt" in result.output

    def test_thresholds_must_include_half(self, ingested):
        root, _, manifest_path = ingested
        det_dir = root / "det"
        self.make_detections(manifest_path, det_dir)
        result = run(
            [
                "--output-dir",
                root / "eval",
                "eval",
                manifest_path,
                "--detections-dir",
                det_dir,
                "--iou-thresholds",
                "0.6,0.7",
            ]
        )
        assert result.exit_code == 2
        assert "0.5" in result.output

    def test_jobs_do_not_change_report(self, ingested):
        root, _, manifest_path = ingested
        det_dir = root / "det"
        self.make_detections(manifest_path, det_dir)
        outputs = []
        for jobs, out_name in (("1", "eval1"), ("4", "eval4")):
            out = root / out_name
            result = run(
                [
                    "--output-dir",
                    out,
                    "--jobs",
                    jobs,
                    "eval",
                    manifest_path,
                    "--detections-dir",
                    det_dir,
                ]
            )
            assert result.exit_code == 0, result.output
            outputs.append((out / "eval_report.json").read_bytes())
        assert outputs[0] == outputs[1]


class TestInventory:
    def write_board(self, det_dir: Path, name: str, lines: str) -> None:
        det_dir.mkdir(exist_ok=True)
        (det_dir / name).write_text(lines, encoding="utf-8")

    def test_capacitor_contributes_three_elements(self, tmp_path):
        det_dir = tmp_path / "det"
        self.write_board(det_dir, "b1.txt", "0 0.900000 0.500000 0.500000 0.100000 0.100000\n")
        out = tmp_path / "inv"
        result = run(["--output-dir", out, "inventory", det_dir])
        assert result.exit_code == 0, result.output
        csv_text = (out / "inventory" / "b1.csv").read_text(encoding="utf-8")
        rows = dict(
            line.split(",")[:2] for line in csv_text.splitlines()[1:]
        )
        assert rows == {"Nb": "1", "Pd": "1", "Ta": "1"}
        aggregate = json.loads((out / "inventory" / "aggregate.json").read_text(encoding="utf-8"))
        assert aggregate["boards"] == ["b1"]
        assert aggregate["elements"]["Ta"]["contributing_component_count"] == 1

    def test_empty_directory_produces_empty_aggregate(self, tmp_path):
        det_dir = tmp_path / "det"
        det_dir.mkdir()
        out = tmp_path / "inv"
        result = run(["--output-dir", out, "inventory", det_dir])
        assert result.exit_code == 0, result.output
        aggregate = json.loads((out / "inventory" / "aggregate.json").read_text(encoding="utf-8"))
        assert aggregate["elements"] == {}
        assert "0 board(s)" in result.output

    def test_confidence_floor_excludes_detections(self, tmp_path):
        det_dir = tmp_path / "det"
        self.write_board(det_dir, "b1.txt", "0 0.400000 0.500000 0.500000 0.100000 0.100000\n")
        out = tmp_path / "inv"
        result = run(["--output-dir", out, "inventory", det_dir, "--floor", "0.5"])
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "inventory" / "b1.json").read_text(encoding="utf-8"))
        assert payload["elements"] == {}
        assert payload["confidence_floor"] == 0.5

    def test_floor_outside_range_is_usage_error(self, tmp_path):
        det_dir = tmp_path / "det"
        det_dir.mkdir()
        result = run(["--output-dir", tmp_path / "inv", "inventory", det_dir, "--floor", "1.5"])
        assert result.exit_code == 2

    def test_broken_mapping_config_is_usage_error(self, tmp_path):
        det_dir = tmp_path / "det"
        det_dir.mkdir()
        mapping = tmp_path / "mapping.json"
        mapping.write_text('{"categories": {"caps": ["Xx"]}, "classes": {}}', encoding="utf-8")
        result = run(
            ["--output-dir", tmp_path / "inv", "inventory", det_dir, "--mapping", mapping]
        )
        assert result.exit_code == 2
        assert "mapping.json" in result.output


class TestConfigAndEnvironment:
    def test_unknown_config_key_is_usage_error(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text('{"worker_count": 4}', encoding="utf-8")
        det_dir = tmp_path / "det"
        det_dir.mkdir()
        result = run(["--config", config, "inventory", det_dir])
        assert result.exit_code == 2
        assert "worker_count" in result.output

    def test_invalid_jobs_is_usage_error(self, tmp_path):
        det_dir = tmp_path / "det"
        det_dir.mkdir()
        result = run(["--jobs", "0", "inventory", det_dir])
        assert result.exit_code == 2

    def test_config_supplies_defaults_and_flags_win(self, dataset, tmp_path):
        root, export, images_dir = dataset
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"output_dir": str(root / "from_config")}), encoding="utf-8")

        result = run(["--config", config, "ingest", export, "--images-dir", images_dir])
        assert result.exit_code == 0, result.output
        assert (root / "from_config" / "manifest.json").is_file()

        result = run(
            [
                "--config",
                config,
                "--output-dir",
                root / "from_flag",
                "ingest",
                export,
                "--images-dir",
                images_dir,
            ]
        )
        assert result.exit_code == 0, result.output
        assert (root / "from_flag" / "manifest.json").is_file()

    def test_environment_variable_sets_output_dir(self, dataset):
        root, export, images_dir = dataset
        target = root / "from_env"
        result = run(
            ["ingest", export, "--images-dir", images_dir],
            env={"BOARDMINE_OUTPUT_DIR": str(target)},
        )
        assert result.exit_code == 0, result.output
        assert (target / "manifest.json").is_file()

    def test_config_floor_applies_to_inventory(self, tmp_path):
        det_dir = tmp_path / "det"
        det_dir.mkdir()
        (det_dir / "b1.txt").write_text(
            "0 0.400000 0.500000 0.500000 0.100000 0.100000\n", encoding="utf-8"
        )
        config = tmp_path / "config.json"
        config.write_text('{"confidence_floor": 0.5}', encoding="utf-8")
        out = tmp_path / "inv"
        result = run(["--config", config, "--output-dir", out, "inventory", det_dir])
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "inventory" / "b1.json").read_text(encoding="utf-8"))
        assert payload["elements"] == {}


class TestDeterminism:
    def run_pipeline(self, root: Path, export: Path, images_dir: Path, out: Path) -> None:
        steps = [
            ["--output-dir", out, "ingest", export, "--images-dir", images_dir, "--val", "board3.png"],
            ["--output-dir", out / "stats", "stats", out / "manifest.json"],
            ["--output-dir", out / "roi", "roi", out / "manifest.json", "--images-dir", images_dir],
            [
                "--output-dir",
                out / "aug",
                "augment",
                out / "manifest.json",
                "--images-dir",
                images_dir,
                "--target-min",
                "2",
            ],
        ]
        det_dir = root / f"det_{out.name}"
        det_dir.mkdir(exist_ok=True)
        manifest = None
        for step in steps:
            result = run(step)
            assert result.exit_code == 0, result.output
            if manifest is None:
                manifest = load_manifest(out / "manifest.json")
                for record in manifest.records:
                    if record.split != "val":
                        continue
                    stem = Path(record.image_path).stem
                    detections = [Detection(a.label, a.box, 0.9) for a in record.annotations]
                    (det_dir / f"{stem}.txt").write_text(
                        write_detections(detections), encoding="utf-8"
                    )
        for step in (
            ["--output-dir", out / "eval", "eval", out / "manifest.json", "--detections-dir", det_dir],
            ["--output-dir", out / "inv", "inventory", det_dir],
        ):
            result = run(step)
            assert result.exit_code == 0, result.output

    def test_repeated_runs_are_byte_identical(self, dataset):
        root, export, images_dir = dataset
        out_a, out_b = root / "out_a", root / "out_b"
        self.run_pipeline(root, export, images_dir, out_a)
        self.run_pipeline(root, export, images_dir, out_b)

        files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
        assert files_a == files_b
        assert files_a
        for rel in files_a:
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel
