"""Batch command line tying the toolkit into one pipeline.

Subcommands cover the full flow: ingest an annotation export into a
manifest, convert it to label files, report dataset statistics, crop board
regions, augment rare classes, score detections, and tally
critical-raw-material contributions. Defaults may come from a JSON config
file; explicit flags win. Exit codes: 0 success (warnings allowed), 1 input
error, 2 config or usage error.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence, TypeVar

import click

from . import crm, dataset_io, evaluation, preprocess, stats
from .types import DatasetManifest, ImageRecord

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_OUTPUT_DIR = Path("out")
CONTEXT_SETTINGS = {
    "auto_envvar_prefix": "BOARDMINE",
    "help_option_names": ["-h", "--help"],
}
_CONFIG_KEYS = {
    "output_dir",
    "jobs",
    "lenient",
    "iou_thresholds",
    "confidence_floor",
    "mapping",
}


@dataclass
class RunConfig:
    """Effective settings after merging config-file defaults and flags."""

    output_dir: Path
    jobs: int
    lenient: bool
    iou_thresholds: tuple[float, ...]
    confidence_floor: float
    mapping_path: Path | None


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, payload: Any) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_manifest(path: Path) -> DatasetManifest:
    try:
        return dataset_io.load_manifest(path)
    except (ValueError, KeyError, OSError) as exc:
        raise click.ClickException(f"{path}: {exc}")


def _record_stems(manifest: DatasetManifest) -> dict[str, ImageRecord]:
    """Map image-name stems to records, rejecting collisions up front."""
    stems: dict[str, ImageRecord] = {}
    for record in manifest.records:
        stem = Path(record.image_path).stem
        if stem in stems:
            raise click.ClickException(
                f"image name stem {stem!r} is not unique "
                f"({stems[stem].image_path} vs {record.image_path})"
            )
        stems[stem] = record
    return stems


def _map_items(items: Sequence[T], fn: Callable[[T], R], jobs: int) -> list[R]:
    """Order-preserving map, parallel when jobs > 1."""
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _validate_thresholds(values: Sequence[Any], origin: str) -> tuple[float, ...]:
    try:
        thresholds = tuple(sorted({float(v) for v in values}))
    except (TypeError, ValueError):
        raise click.UsageError(f"{origin}: IoU thresholds must be numbers")
    if not thresholds:
        raise click.UsageError(f"{origin}: IoU threshold list is empty")
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise click.UsageError(f"{origin}: IoU threshold {t} outside (0, 1)")
    if 0.5 not in thresholds:
        raise click.UsageError(f"{origin}: IoU thresholds must include 0.5")
    return thresholds


def _build_config(
    config_path: Path | None,
    output_dir: Path | None,
    jobs: int | None,
    lenient: bool,
) -> RunConfig:
    data: dict[str, Any] = {}
    if config_path is not None:
        try:
            loaded = json.loads(_read_text(config_path))
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"{config_path}: invalid config JSON: {exc}")
        if not isinstance(loaded, dict):
            raise click.UsageError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(loaded) - _CONFIG_KEYS)
        if unknown:
            raise click.UsageError(
                f"{config_path}: unknown config key(s): {', '.join(unknown)}"
            )
        data = loaded

    if output_dir is None:
        output_dir = Path(str(data.get("output_dir", DEFAULT_OUTPUT_DIR)))
    if jobs is None:
        jobs = data.get("jobs", 1)
    if not isinstance(jobs, int) or isinstance(jobs, bool) or jobs < 1:
        raise click.UsageError(f"jobs must be a positive integer, got {jobs!r}")
    lenient = bool(lenient or data.get("lenient", False))

    raw_thresholds = data.get("iou_thresholds")
    if raw_thresholds is None:
        thresholds = evaluation.DEFAULT_IOU_THRESHOLDS
    elif isinstance(raw_thresholds, list):
        thresholds = _validate_thresholds(raw_thresholds, str(config_path))
    else:
        raise click.UsageError(f"{config_path}: iou_thresholds must be a list")

    floor = data.get("confidence_floor", 0.0)
    if (
        isinstance(floor, bool)
        or not isinstance(floor, (int, float))
        or not 0.0 <= float(floor) <= 1.0
    ):
        raise click.UsageError(f"confidence_floor must be in [0, 1], got {floor!r}")

    mapping = data.get("mapping")
    mapping_path = None
    if mapping is not None:
        mapping_path = Path(str(mapping))
        if not mapping_path.is_file():
            raise click.UsageError(f"mapping config not found: {mapping_path}")

    return RunConfig(
        output_dir=Path(output_dir),
        jobs=jobs,
        lenient=lenient,
        iou_thresholds=thresholds,
        confidence_floor=float(floor),
        mapping_path=mapping_path,
    )


@click.group(context_settings=CONTEXT_SETTINGS)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON config file with default settings; flags override it.",
)
@click.option(
    "--output-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help=f"Directory for all outputs [default: {DEFAULT_OUTPUT_DIR}].",
)
@click.option("--jobs", type=int, default=None, help="Parallel worker count [default: 1].")
@click.option(
    "--lenient",
    is_flag=True,
    default=False,
    help="Clamp out-of-range coordinates and confidences instead of failing.",
)
@click.pass_context
def main(
    ctx: click.Context,
    config_path: Path | None,
    output_dir: Path | None,
    jobs: int | None,
    lenient: bool,
) -> None:
    """Board-component dataset, evaluation, and material-inventory toolkit."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    ctx.obj = _build_config(config_path, output_dir, jobs, lenient)


@main.command()
@click.argument("export_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--images-dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory holding the exported images.",
)
@click.option(
    "--val",
    "val_names",
    multiple=True,
    help="Image file name assigned to the val split (repeatable or comma-separated).",
)
@click.pass_obj
def ingest(cfg: RunConfig, export_path: Path, images_dir: Path, val_names: tuple[str, ...]) -> None:
    """Convert an annotation-tool JSON export into a dataset manifest."""
    try:
        manifest = dataset_io.parse_labelstudio_export(
            _read_text(export_path), lenient=cfg.lenient
        )
    except dataset_io.LabelParseError as exc:
        raise click.ClickException(f"{export_path}: {exc}")

    val: set[str] = set()
    for chunk in val_names:
        val.update(part.strip() for part in chunk.split(",") if part.strip())
    known_names = {record.image_path for record in manifest.records}
    for name in sorted(val - known_names):
        click.echo(f"warning: --val image {name!r} is not in the export")

    records = []
    for record in manifest.records:
        image_file = images_dir / record.image_path
        if not image_file.is_file():
            raise click.ClickException(f"missing image file: {image_file}")
        split = "val" if record.image_path in val else "train"
        records.append(replace(record, split=split))
    manifest = DatasetManifest(tuple(records), manifest.class_table)

    if not manifest.records:
        click.echo("warning: export contained no tasks; manifest is empty")
    findings = dataset_io.validate_manifest(manifest)
    for finding in findings:
        click.echo(f"{finding.severity}: {finding.code}: {finding.message}")

    out_path = _ensure_dir(cfg.output_dir) / "manifest.json"
    dataset_io.save_manifest(manifest, out_path)
    click.echo(f"wrote {out_path} ({len(manifest.records)} record(s))")
    if any(finding.severity == "error" for finding in findings):
        raise click.ClickException("manifest failed validation")


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_obj
def convert(cfg: RunConfig, manifest_path: Path) -> None:
    """Write one label file per image plus a class-name list."""
    manifest = _load_manifest(manifest_path)
    stems = _record_stems(manifest)
    labels_dir = _ensure_dir(cfg.output_dir / "labels")
    for stem, record in stems.items():
        _write_text(labels_dir / f"{stem}.txt", dataset_io.write_yolo_labels(record.annotations))
    _write_text(
        cfg.output_dir / "classes.txt",
        "".join(f"{label.name}\n" for label in manifest.class_table),
    )
    click.echo(f"wrote {len(stems)} label file(s) under {labels_dir}")


@main.command("stats")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_obj
def stats_cmd(cfg: RunConfig, manifest_path: Path) -> None:
    """Report per-class instance counts and split sizes."""
    manifest = _load_manifest(manifest_path)
    hist = stats.class_histogram(manifest)
    summary = stats.split_summary(manifest)
    out = _ensure_dir(cfg.output_dir)
    table = stats.histogram_table(hist)
    _write_json(out / "histogram.json", stats.histogram_to_dict(hist))
    _write_text(out / "histogram.txt", table)
    _write_json(out / "split_summary.json", stats.split_summary_to_dict(summary))
    click.echo(table, nl=False)
    counts = summary.image_counts
    parts = [f"{split}={counts[split]}" for split in counts]
    click.echo("images: " + " ".join(parts) + f" total={sum(counts.values())}")
    if summary.unannotated_images:
        click.echo(f"warning: {len(summary.unannotated_images)} image(s) have no annotations")
    for split in summary.empty_splits:
        click.echo(f"warning: split '{split}' has no images")


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--images-dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory holding the manifest's images.",
)
@click.option(
    "--margin",
    type=int,
    default=0,
    show_default=True,
    help="Pixels of background context kept around the detected board.",
)
@click.pass_obj
def roi(cfg: RunConfig, manifest_path: Path, images_dir: Path, margin: int) -> None:
    """Crop every image to its board region and remap annotations."""
    if margin < 0:
        raise click.UsageError("--margin must be >= 0")
    manifest = _load_manifest(manifest_path)
    stems = _record_stems(manifest)
    out_images = _ensure_dir(cfg.output_dir / "images")
    out_labels = _ensure_dir(cfg.output_dir / "labels")

    def process(record: ImageRecord) -> tuple[ImageRecord, Any]:
        image_file = images_dir / record.image_path
        if not image_file.is_file():
            raise click.ClickException(f"missing image file: {image_file}")
        image = preprocess.load_image(image_file)
        try:
            rect = preprocess.segment_board_roi(image, margin=margin)
        except preprocess.BoardNotFoundError as exc:
            raise click.ClickException(f"{image_file}: {exc}")
        crop, kept = preprocess.crop_and_remap(image, rect, record.annotations)
        new_record = ImageRecord(
            record.image_path, rect.width, rect.height, record.split, tuple(kept)
        )
        return new_record, crop

    results = _map_items(manifest.records, process, cfg.jobs)
    new_records = []
    for new_record, crop in results:
        preprocess.save_image(out_images / new_record.image_path, crop)
        stem = Path(new_record.image_path).stem
        _write_text(
            out_labels / f"{stem}.txt", dataset_io.write_yolo_labels(new_record.annotations)
        )
        new_records.append(new_record)
    dataset_io.save_manifest(
        DatasetManifest(tuple(new_records), manifest.class_table),
        cfg.output_dir / "manifest.json",
    )
    click.echo(f"cropped {len(stems)} image(s) into {out_images}")


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--images-dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory holding the manifest's images.",
)
@click.option(
    "--target-min",
    type=int,
    required=True,
    help="Minimum projected train-split instance count per class.",
)
@click.pass_obj
def augment(cfg: RunConfig, manifest_path: Path, images_dir: Path, target_min: int) -> None:
    """Flip and rotate train images until rare classes reach a target count."""
    if target_min < 0:
        raise click.UsageError("--target-min must be >= 0")
    manifest = _load_manifest(manifest_path)
    _record_stems(manifest)
    plan = stats.plan_augmentation(manifest, target_min)
    for name, deficit in plan.shortfall.items():
        click.echo(
            f"warning: class '{name}' remains {deficit} instance(s) short; "
            "no train image contains it"
        )
    if not plan.ops_by_image:
        click.echo("nothing to augment; no files written")
        return

    out_images = _ensure_dir(cfg.output_dir / "images")
    out_labels = _ensure_dir(cfg.output_dir / "labels")
    quarter_turns = {preprocess.AugmentOp.ROT90, preprocess.AugmentOp.ROT270}
    work = [
        (record, plan.ops_by_image[record.image_path])
        for record in manifest.records
        if record.image_path in plan.ops_by_image
    ]

    def process(item: tuple[ImageRecord, tuple[preprocess.AugmentOp, ...]]) -> list:
        record, ops = item
        image_file = images_dir / record.image_path
        if not image_file.is_file():
            raise click.ClickException(f"missing image file: {image_file}")
        image = preprocess.load_image(image_file)
        outputs = []
        for op in ops:
            pixels, annotations = preprocess.augment(image, record.annotations, op)
            if op in quarter_turns:
                width, height = record.height, record.width
            else:
                width, height = record.width, record.height
            name = preprocess.augmented_name(record.image_path, op)
            outputs.append(
                (ImageRecord(name, width, height, record.split, tuple(annotations)), pixels)
            )
        return outputs

    results = _map_items(work, process, cfg.jobs)
    new_records = list(manifest.records)
    written = 0
    for outputs in results:
        for new_record, pixels in outputs:
            preprocess.save_image(out_images / new_record.image_path, pixels)
            stem = Path(new_record.image_path).stem
            _write_text(
                out_labels / f"{stem}.txt",
                dataset_io.write_yolo_labels(new_record.annotations),
            )
            new_records.append(new_record)
            written += 1
    dataset_io.save_manifest(
        DatasetManifest(tuple(new_records), manifest.class_table),
        cfg.output_dir / "manifest.json",
    )
    _write_json(cfg.output_dir / "plan.json", stats.plan_to_dict(plan))
    click.echo(f"wrote {written} augmented image(s) into {out_images}")


@main.command("eval")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--detections-dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory of per-image detection files (<image stem>.txt).",
)
@click.option(
    "--iou-thresholds",
    "thresholds_text",
    default=None,
    help="Comma-separated IoU thresholds; must include 0.5.",
)
@click.pass_obj
def eval_cmd(
    cfg: RunConfig, manifest_path: Path, detections_dir: Path, thresholds_text: str | None
) -> None:
    """Score detection files against the manifest's validation split."""
    if thresholds_text is not None:
        parts = [part.strip() for part in thresholds_text.split(",") if part.strip()]
        thresholds = _validate_thresholds(parts, "--iou-thresholds")
    else:
        thresholds = cfg.iou_thresholds

    manifest = _load_manifest(manifest_path)
    val_records = [record for record in manifest.records if record.split == "val"]
    if not val_records:
        raise click.ClickException("manifest has no validation images to evaluate")
    stems = _record_stems(DatasetManifest(tuple(val_records), manifest.class_table))

    gt_by_image = {stem: list(record.annotations) for stem, record in stems.items()}
    det_by_image = {}
    for stem in sorted(stems):
        det_file = detections_dir / f"{stem}.txt"
        if not det_file.is_file():
            click.echo(
                f"warning: no detection file for {stems[stem].image_path}; "
                "assuming zero detections"
            )
            det_by_image[stem] = []
            continue
        try:
            det_by_image[stem] = dataset_io.parse_detections(
                _read_text(det_file), manifest.class_table, lenient=cfg.lenient
            )
        except dataset_io.LabelParseError as exc:
            raise click.ClickException(f"{det_file}: {exc}")
    for stray in sorted(p.name for p in detections_dir.glob("*.txt") if p.stem not in stems):
        click.echo(f"warning: detection file {stray} matches no validation image")

    report = evaluation.evaluate(gt_by_image, det_by_image, thresholds=thresholds, jobs=cfg.jobs)
    if not report.operating_point.precision_defined:
        click.echo("warning: no detections at all; precision is undefined (reported as 0)")
    out = _ensure_dir(cfg.output_dir)
    _write_text(out / "eval_report.json", evaluation.report_to_json(report))
    _write_text(out / "eval_report.md", evaluation.report_to_markdown(report))
    click.echo(evaluation.summary_line(report))


@main.command("inventory")
@click.argument("detections_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option(
    "--mapping",
    "mapping_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON material-mapping config; defaults to the built-in mapping.",
)
@click.option(
    "--floor",
    type=float,
    default=None,
    help="Minimum detection confidence counted [default: 0.0].",
)
@click.pass_obj
def inventory_cmd(
    cfg: RunConfig, detections_dir: Path, mapping_path: Path | None, floor: float | None
) -> None:
    """Tally critical-raw-material contributions per board and in aggregate."""
    mapping_path = mapping_path or cfg.mapping_path
    if mapping_path is not None:
        try:
            mapping = crm.load_mapping(_read_text(mapping_path))
        except crm.MappingError as exc:
            raise click.UsageError(f"{mapping_path}: {exc}")
    else:
        mapping = crm.default_mapping()
    if floor is None:
        floor = cfg.confidence_floor
    if not 0.0 <= floor <= 1.0:
        raise click.UsageError(f"--floor {floor} outside [0, 1]")

    boards = []
    for det_file in sorted(detections_dir.glob("*.txt")):
        try:
            detections = dataset_io.parse_detections(_read_text(det_file), lenient=cfg.lenient)
        except dataset_io.LabelParseError as exc:
            raise click.ClickException(f"{det_file}: {exc}")
        boards.append(crm.inventory(detections, mapping, floor, board_id=det_file.stem))
    total = crm.aggregate(boards) if boards else crm.inventory([], mapping, floor)

    out = _ensure_dir(cfg.output_dir / "inventory")
    for inv in boards:
        board = inv.boards[0]
        _write_json(out / f"{board}.json", crm.inventory_to_dict(inv))
        _write_text(out / f"{board}.csv", crm.inventory_to_csv(inv))
    _write_json(out / "aggregate.json", crm.inventory_to_dict(total))
    _write_text(out / "aggregate.csv", crm.inventory_to_csv(total))
    click.echo(
        f"inventoried {len(boards)} board(s); "
        f"{len(total.element_counts)} element(s) with contributions"
    )


if __name__ == "__main__":
    main()
