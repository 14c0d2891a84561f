"""Command-line entry point wiring the toolkit into batch workflows.

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr; results go to files or stdout as flagged. Every subcommand is
deterministic given its inputs and flags, and never mutates input files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import __version__
from .dataset import (
    Dataset,
    DatasetError,
    SupervisionLevel,
    grade_sample,
    load_dataset,
    save_dataset,
    validate_consistency,
)
from .geometry import translate_polygon
from .losses import ExternalLossInputs, LevelComponents, LossWeights, hybrid_loss, level_loss
from .metrics import evaluate
from .pseudobox import DEFAULT_EXPAND_RATIO, pseudo_bbox_level_h, pseudo_bbox_level_n, pseudo_offset
from .raster import mask_to_rle, rasterize_polygon, translate_mask
from .reconstruct import DEFAULT_EPSILON_PX, export_obj, reconstruct_dataset
from .synth import SynthesisError, degrade_dataset, generate_scenes, load_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _write_json(obj, path) -> None:
    if path == "-":
        json.dump(obj, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def _cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    dataset = generate_scenes(cfg, jobs=args.jobs)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} images to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_grade(args) -> int:
    dataset = load_dataset(args.input)
    counts = {level.name: 0 for level in SupervisionLevel}
    rows = []
    for r in dataset.records:
        level = grade_sample(r)
        counts[level.name] += 1
        rows.append((r.image_id, level.name, len(r.instances)))
    print(f"{'image_id':<24} {'level':<5} instances")
    for image_id, level, n in rows:
        print(f"{image_id:<24} {level:<5} {n}")
    print("counts: " + " ".join(f"{k}={v}" for k, v in counts.items()))
    if args.report:
        _write_json(
            {
                "images": [{"id": i, "level": lv, "instances": n} for i, lv, n in rows],
                "counts": counts,
            },
            args.report,
        )
    return EXIT_OK


def _cmd_validate(args) -> int:
    dataset = load_dataset(args.input)
    total = 0
    out = []
    for r in dataset.records:
        report = validate_consistency(r, args.tol)
        total += len(report.findings)
        out.append(
            {
                "id": r.image_id,
                "findings": [f.__dict__ for f in report.findings],
                "notes": list(report.notes),
            }
        )
    print(f"{total} finding(s) across {len(dataset)} image(s)")
    if args.report:
        _write_json({"images": out, "total_findings": total}, args.report)
    return EXIT_OK


def _cmd_degrade(args) -> int:
    dataset = load_dataset(args.input)
    degraded = degrade_dataset(dataset, args.frac_oh, args.frac_h, args.seed)
    save_dataset(degraded, args.out)
    print(f"wrote degraded dataset to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_pbc(args) -> int:
    dataset = load_dataset(args.input)
    images = []
    for r in dataset.records:
        boxes = []
        for k, inst in enumerate(r.instances):
            if inst.footprint is None:
                raise DatasetError(f"image {r.image_id!r}, instance {k}: footprint required")
            if args.level == "n":
                box = pseudo_bbox_level_n(inst.footprint, args.expand_ratio, r.width, r.height)
            else:
                if r.pose is None:
                    raise DatasetError(f"image {r.image_id!r}: pose required for level h")
                if inst.height is None:
                    raise DatasetError(
                        f"image {r.image_id!r}, instance {k}: height required for level h"
                    )
                v = pseudo_offset(inst.height, r.pose.scale_s, r.pose.tan_theta, r.pose.phi)
                box = pseudo_bbox_level_h(inst.footprint, v, r.width, r.height)
            boxes.append([box.x_min, box.y_min, box.x_max, box.y_max])
        images.append({"id": r.image_id, "boxes": boxes})
    _write_json({"images": images}, args.out)
    return EXIT_OK


def _cmd_footprint(args) -> int:
    dataset = load_dataset(args.input)
    if args.mode == "polygon":
        records = []
        derived = 0
        kept = 0
        for r in dataset.records:
            instances = []
            for inst in r.instances:
                if inst.roof is not None and inst.offset is not None:
                    instances.append(
                        replace(inst, footprint=translate_polygon(inst.roof, inst.offset))
                    )
                    derived += 1
                else:
                    instances.append(inst)
                    kept += 1
            records.append(replace(r, instances=tuple(instances)))
        out = Dataset(records=tuple(records), metadata=dict(dataset.metadata), extra=dict(dataset.extra))
        save_dataset(out, args.out)
        print(f"derived {derived} footprint(s), kept {kept} as-is", file=sys.stderr)
    else:
        images = []
        for r in dataset.records:
            insts = []
            for k, inst in enumerate(r.instances):
                if inst.roof is None or inst.offset is None:
                    raise DatasetError(
                        f"image {r.image_id!r}, instance {k}: raster mode needs roof and offset"
                    )
                roof_mask = rasterize_polygon(inst.roof, r.width, r.height)
                fp_mask = translate_mask(roof_mask, inst.offset)
                insts.append(
                    {
                        "width": fp_mask.width,
                        "height": fp_mask.height,
                        "rle": mask_to_rle(fp_mask),
                    }
                )
            images.append({"id": r.image_id, "instances": insts})
        _write_json({"images": images}, args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    pred = load_dataset(args.pred)
    gt = load_dataset(args.gt)
    result = evaluate(pred, gt, iou_threshold=args.iou, jobs=args.jobs)
    agg = result.aggregate
    print(
        f"F1={agg.f1:.4f} precision={agg.precision:.4f} recall={agg.recall:.4f} "
        f"(TP={agg.tp} FP={agg.fp} FN={agg.fn})"
    )
    print(f"EPE={agg.epe:.4f} px over {agg.epe_pairs} pair(s)")
    print(
        f"height MAE={agg.height_mae:.4f} RMSE={agg.height_rmse:.4f} m "
        f"over {agg.height_pairs} pair(s)"
    )
    print(
        f"off-nadir MAE={agg.offnadir_mae_deg:.4f} deg, "
        f"offset-angle MAE={agg.offsetangle_mae_deg:.4f} deg "
        f"over {agg.angle_images} image(s)"
    )
    if args.report:
        _write_json(
            {
                "aggregate": agg.to_json(),
                "per_image": {
                    image_id: rep.to_json()
                    for image_id, rep in sorted(result.per_image.items())
                },
            },
            args.report,
        )
    return EXIT_OK


def _load_weights(path) -> LossWeights:
    if path is None:
        return LossWeights()
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    known = set(LossWeights.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise DatasetError(f"unknown loss weight keys: {sorted(unknown)}")
    return LossWeights(**obj)


def _cmd_loss(args) -> int:
    weights = _load_weights(args.weights)
    with open(args.components, encoding="utf-8") as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise DatasetError("components file must be a JSON array of samples")
    graded = []
    rows = []
    for k, entry in enumerate(entries):
        entry = dict(entry)
        try:
            level = SupervisionLevel[entry.pop("level")]
        except KeyError as e:
            raise DatasetError(f"sample {k}: bad or missing level {e}") from e
        ext_keys = {"l_rp", "l_rc", "l_mh", "l_o"}
        ext = {key: float(entry.pop(key)) for key in list(entry) if key in ext_keys}
        comp_keys = {"l_f", "l_h", "l_ona", "l_ova"}
        comps = {key: float(entry.pop(key)) for key in list(entry) if key in comp_keys}
        if entry:
            raise DatasetError(f"sample {k}: unknown component keys {sorted(entry)}")
        components = LevelComponents(
            external=ExternalLossInputs(**ext) if ext else None, **comps
        )
        try:
            value = level_loss(level, components, weights)
        except ValueError as e:
            raise DatasetError(f"sample {k}: {e}") from e
        graded.append((level, components))
        rows.append((k, level.name, value))
    total = hybrid_loss(graded, weights)
    print(f"{'sample':<8} {'level':<5} loss")
    for k, name, value in rows:
        print(f"{k:<8} {name:<5} {value:.6f}")
    print(f"total hybrid loss: {total:.6f}")
    if args.report:
        _write_json(
            {
                "samples": [{"index": k, "level": nm, "loss": v} for k, nm, v in rows],
                "total": total,
            },
            args.report,
        )
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    dataset = load_dataset(args.input)
    result = reconstruct_dataset(
        dataset,
        epsilon=args.epsilon,
        default_height=args.default_height,
        default_scale_s=args.scale,
        jobs=args.jobs,
    )
    for sk in result.skipped:
        print(
            f"skipped image {sk.image_id!r} instance {sk.instance_index}: {sk.reason}",
            file=sys.stderr,
        )
    export_obj(result.meshes, args.out)
    print(
        f"wrote {len(result.meshes)} prism(s) to {args.out} "
        f"({len(result.skipped)} skipped)",
        file=sys.stderr,
    )
    return EXIT_OK


def _add_jobs(sp) -> None:
    sp.add_argument("--jobs", type=int, default=1, help="per-image parallelism bound")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="offnadir", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def new_command(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--version", action="version", version=f"offnadir {__version__}")
        return sp

    sp = new_command("synth", "generate a seeded synthetic dataset")
    sp.add_argument("--config", required=True, help="SynthConfig JSON file")
    sp.add_argument("--out", required=True, help="output dataset JSON")
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    _add_jobs(sp)
    sp.set_defaults(func=_cmd_synth)

    sp = new_command("grade", "report per-image supervision levels")
    sp.add_argument("--in", dest="input", required=True, help="dataset JSON")
    sp.add_argument("--report", default=None, help="optional report JSON path")
    sp.set_defaults(func=_cmd_grade)

    sp = new_command("validate", "check offset/height/pose consistency")
    sp.add_argument("--in", dest="input", required=True, help="dataset JSON")
    sp.add_argument("--tol", type=float, default=1e-6, help="tolerance in pixels")
    sp.add_argument("--report", default=None, help="optional report JSON path")
    sp.set_defaults(func=_cmd_validate)

    sp = new_command("degrade", "strip annotations into mixed supervision levels")
    sp.add_argument("--in", dest="input", required=True, help="fully annotated dataset JSON")
    sp.add_argument("--out", required=True, help="output dataset JSON")
    sp.add_argument("--frac-oh", type=float, required=True, help="fraction kept fully annotated")
    sp.add_argument("--frac-h", type=float, required=True, help="fraction reduced to height-only")
    sp.add_argument("--seed", type=int, default=0, help="assignment seed")
    sp.set_defaults(func=_cmd_degrade)

    sp = new_command("pbc", "compute pseudo building bboxes")
    sp.add_argument("--in", dest="input", required=True, help="dataset JSON")
    sp.add_argument("--out", required=True, help="output boxes JSON")
    sp.add_argument("--level", choices=("h", "n"), default="h",
                    help="h: footprint+height+pose; n: footprint enlargement")
    sp.add_argument("--expand-ratio", type=float, default=DEFAULT_EXPAND_RATIO,
                    help="per-side enlargement ratio for level n")
    sp.set_defaults(func=_cmd_pbc)

    sp = new_command("footprint", "derive footprints from roofs and offsets")
    sp.add_argument("--in", dest="input", required=True, help="dataset JSON")
    sp.add_argument("--out", required=True, help="output path")
    sp.add_argument("--mode", choices=("polygon", "raster"), default="polygon")
    sp.set_defaults(func=_cmd_footprint)

    sp = new_command("eval", "evaluate predictions against ground truth")
    sp.add_argument("--pred", required=True, help="prediction dataset JSON")
    sp.add_argument("--gt", required=True, help="ground-truth dataset JSON")
    sp.add_argument("--iou", type=float, default=0.5, help="matching IoU threshold")
    sp.add_argument("--report", default=None, help="optional report JSON path")
    _add_jobs(sp)
    sp.set_defaults(func=_cmd_eval)

    sp = new_command("loss", "compute level and hybrid losses from components")
    sp.add_argument("--components", required=True, help="JSON array of graded samples")
    sp.add_argument("--weights", default=None, help="optional weights JSON (defaults embedded)")
    sp.add_argument("--report", default=None, help="optional report JSON path")
    sp.set_defaults(func=_cmd_loss)

    sp = new_command("reconstruct", "export prism models as OBJ")
    sp.add_argument("--in", dest="input", required=True, help="dataset JSON")
    sp.add_argument("--out", required=True, help="output OBJ path")
    sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON_PX,
                    help="simplification tolerance in pixels")
    sp.add_argument("--default-height", type=float, default=None,
                    help="height for instances without one")
    sp.add_argument("--scale", type=float, default=None,
                    help="pixels-per-meter fallback when a record has no pose")
    _add_jobs(sp)
    sp.set_defaults(func=_cmd_reconstruct)

    return parser


def run(argv=None) -> int:
    """Dispatch a CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    try:
        return args.func(args)
    except (DatasetError, SynthesisError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
