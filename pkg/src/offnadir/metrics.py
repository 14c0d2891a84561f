"""Instance-level evaluation: IoU matching, detection P/R/F1, offset EPE,
height MAE/RMSE, and image-pose angle errors.

Matching is greedy in descending prediction score against footprint masks
(IoU >= threshold, one-to-one). Aggregation across images is micro:
global TP/FP/FN counts and error means pooled over all matched pairs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .dataset import Dataset, SampleRecord
from .geometry import Polygon2D, bbox_intersection, bbox_of
from .raster import BitMask, rasterize_polygon


def mask_iou(a: BitMask, b: BitMask) -> float:
    """Intersection over union of two same-grid masks; 0/0 counts as 0."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"grid mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int((a.data & b.data).sum())
    union = a.popcount() + b.popcount() - inter
    return inter / union if union > 0 else 0.0


def polygon_iou(a: Polygon2D, b: Polygon2D, grid) -> float:
    """IoU of two polygons rasterized on a (width, height) grid."""
    w, h = grid
    return mask_iou(rasterize_polygon(a, w, h), rasterize_polygon(b, w, h))


@dataclass(frozen=True)
class MatchResult:
    """One-to-one matching; pairs are (pred index, gt index, iou)."""

    pairs: tuple = ()
    unmatched_preds: tuple = ()
    unmatched_gts: tuple = ()

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_preds)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gts)


def _footprint_masks(instances, grid):
    w, h = grid
    masks = []
    boxes = []
    for inst in instances:
        if inst.footprint is None:
            raise ValueError("matching needs a footprint on every instance")
        masks.append(rasterize_polygon(inst.footprint, w, h))
        boxes.append(bbox_of(inst.footprint))
    return masks, boxes


def match_instances(preds, gts, iou_threshold: float = 0.5, grid=(512, 512)) -> MatchResult:
    """Greedy score-descending matching of predictions to ground truth.

    Each prediction (ties broken by input order) claims the unmatched
    ground-truth instance of highest footprint-mask IoU, if that IoU
    reaches the threshold.
    """
    preds = list(preds)
    gts = list(gts)
    pred_masks, pred_boxes = _footprint_masks(preds, grid)
    gt_masks, gt_boxes = _footprint_masks(gts, grid)
    order = sorted(
        range(len(preds)),
        key=lambda i: -(preds[i].score if preds[i].score is not None else 1.0),
    )
    taken = [False] * len(gts)
    pairs = []
    matched_preds = set()
    for i in order:
        best_iou = 0.0
        best_j = -1
        for j in range(len(gts)):
            if taken[j]:
                continue
            if bbox_intersection(pred_boxes[i], gt_boxes[j]) is None:
                continue
            iou = mask_iou(pred_masks[i], gt_masks[j])
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            taken[best_j] = True
            pairs.append((i, best_j, best_iou))
            matched_preds.add(i)
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_preds=tuple(i for i in range(len(preds)) if i not in matched_preds),
        unmatched_gts=tuple(j for j in range(len(gts)) if not taken[j]),
    )


def detection_prf(m: MatchResult):
    """(precision, recall, f1) with the 0/0 -> 0 convention."""
    tp, fp, fn = m.tp, m.fp, m.fn
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def _paired_values(m: MatchResult, preds, gts, getter):
    out = []
    for i, j, _ in m.pairs:
        pv = getter(preds[i])
        gv = getter(gts[j])
        if pv is None or gv is None:
            continue
        out.append((pv, gv))
    return out


def offset_epe(m: MatchResult, preds, gts):
    """Mean end-point error over matched pairs with offsets on both sides.

    Returns (epe, n_pairs); n_pairs == 0 flags an empty mean (epe 0).
    """
    pairs = _paired_values(m, preds, gts, lambda inst: inst.offset)
    if not pairs:
        return 0.0, 0
    total = sum(math.hypot(p.dx - g.dx, p.dy - g.dy) for p, g in pairs)
    return total / len(pairs), len(pairs)


def height_errors(m: MatchResult, preds, gts):
    """(mae, rmse, n_pairs) of height over matched pairs with both heights."""
    pairs = _paired_values(m, preds, gts, lambda inst: inst.height)
    if not pairs:
        return 0.0, 0.0, 0
    diffs = [p - g for p, g in pairs]
    mae = sum(abs(d) for d in diffs) / len(diffs)
    rmse = math.sqrt(sum(d * d for d in diffs) / len(diffs))
    return mae, rmse, len(pairs)


def angle_errors(pred_poses, gt_poses):
    """Image-pose MAEs in degrees: (off-nadir, offset angle).

    The off-nadir error compares arctangents; the offset-angle error is the
    circular difference. Empty input yields (0, 0).
    """
    pred_poses = list(pred_poses)
    gt_poses = list(gt_poses)
    if len(pred_poses) != len(gt_poses):
        raise ValueError(f"length mismatch: {len(pred_poses)} vs {len(gt_poses)}")
    if not pred_poses:
        return 0.0, 0.0
    ona = 0.0
    ova = 0.0
    for p, g in zip(pred_poses, gt_poses):
        ona += abs(math.atan(p.tan_theta) - math.atan(g.tan_theta))
        d = abs(p.phi - g.phi) % (2.0 * math.pi)
        ova += min(d, 2.0 * math.pi - d)
    n = len(pred_poses)
    return math.degrees(ona / n), math.degrees(ova / n)


@dataclass(frozen=True)
class EvalReport:
    """Matched-instance error summary; counts qualify the error means."""

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    epe: float
    epe_pairs: int
    height_mae: float
    height_rmse: float
    height_pairs: int
    offnadir_mae_deg: float
    offsetangle_mae_deg: float
    angle_images: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EvalResult:
    aggregate: EvalReport
    per_image: dict


def _match_record(pred: SampleRecord, gt: SampleRecord, iou_threshold: float):
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(
            f"image {gt.image_id!r}: prediction grid {pred.width}x{pred.height} "
            f"!= ground truth {gt.width}x{gt.height}"
        )
    grid = (gt.width, gt.height)
    return match_instances(pred.instances, gt.instances, iou_threshold, grid)


def _report_from(m, pred_insts, gt_insts, pose_pairs) -> EvalReport:
    precision, recall, f1 = detection_prf(m)
    epe, epe_pairs = offset_epe(m, pred_insts, gt_insts)
    mae, rmse, h_pairs = height_errors(m, pred_insts, gt_insts)
    ona, ova = angle_errors([p for p, _ in pose_pairs], [g for _, g in pose_pairs])
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        tp=m.tp,
        fp=m.fp,
        fn=m.fn,
        epe=epe,
        epe_pairs=epe_pairs,
        height_mae=mae,
        height_rmse=rmse,
        height_pairs=h_pairs,
        offnadir_mae_deg=ona,
        offsetangle_mae_deg=ova,
        angle_images=len(pose_pairs),
    )


def evaluate(
    pred_dataset: Dataset,
    gt_dataset: Dataset,
    iou_threshold: float = 0.5,
    jobs: int = 1,
) -> EvalResult:
    """Evaluate predictions against ground truth, image id by image id.

    Both datasets must cover exactly the same image ids. Angle errors use
    only images where both records carry a pose.
    """
    preds = pred_dataset.by_id()
    gts = gt_dataset.by_id()
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))
        surplus = sorted(set(preds) - set(gts))
        raise ValueError(
            f"image id mismatch: missing from predictions {missing[:5]}, "
            f"unexpected in predictions {surplus[:5]}"
        )
    ids = sorted(gts)

    def run_one(image_id):
        return _match_record(preds[image_id], gts[image_id], iou_threshold)

    if jobs > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            matches = dict(zip(ids, pool.map(run_one, ids)))
    else:
        matches = {image_id: run_one(image_id) for image_id in ids}

    per_image = {}
    tp = fp = fn = 0
    epe_sum, epe_n = 0.0, 0
    h_abs_sum, h_sq_sum, h_n = 0.0, 0.0, 0
    pose_pairs = []
    for image_id in ids:
        m = matches[image_id]
        p_rec, g_rec = preds[image_id], gts[image_id]
        img_poses = []
        if p_rec.pose is not None and g_rec.pose is not None:
            img_poses.append((p_rec.pose, g_rec.pose))
            pose_pairs.append((p_rec.pose, g_rec.pose))
        per_image[image_id] = _report_from(m, p_rec.instances, g_rec.instances, img_poses)
        tp += m.tp
        fp += m.fp
        fn += m.fn
        for p, g in _paired_values(m, p_rec.instances, g_rec.instances, lambda x: x.offset):
            epe_sum += math.hypot(p.dx - g.dx, p.dy - g.dy)
            epe_n += 1
        for p, g in _paired_values(m, p_rec.instances, g_rec.instances, lambda x: x.height):
            h_abs_sum += abs(p - g)
            h_sq_sum += (p - g) ** 2
            h_n += 1

    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    ona, ova = angle_errors([p for p, _ in pose_pairs], [g for _, g in pose_pairs])
    aggregate = EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        epe=epe_sum / epe_n if epe_n else 0.0,
        epe_pairs=epe_n,
        height_mae=h_abs_sum / h_n if h_n else 0.0,
        height_rmse=math.sqrt(h_sq_sum / h_n) if h_n else 0.0,
        height_pairs=h_n,
        offnadir_mae_deg=ona,
        offsetangle_mae_deg=ova,
        angle_images=len(pose_pairs),
    )
    return EvalResult(aggregate=aggregate, per_image=per_image)
