"""CLEAR-MOT matching and scores, plus mostly-tracked / mostly-lost and match rates."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..boxes import iou_matrix
from .alignment import AlignedFrames

MT_FRACTION = 0.8
ML_FRACTION = 0.2


@dataclass(frozen=True, eq=False)
class FrameMatches:
    """Per-frame ``(gt id, pred id, iou)`` matches with unmatched ids and identity switches."""

    matches: list  # per frame: list of (g, p, iou)
    missed: list  # per frame: gt ids without a match
    false: list  # per frame: pred ids without a match
    switches: list  # per frame: gt ids whose matched prediction changed
    gt_frames: dict  # gt id -> frames present
    pred_frames: dict


def _assign(iou: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Largest matching among pairs with IOU >= threshold, then largest total IOU."""
    valid = iou >= threshold
    if not valid.any():
        return []
    # each valid pair is worth more than any IOU sum can make up for
    n = min(iou.shape)
    weight = np.where(valid, iou + n + 1.0, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if valid[r, c]]


def match_frames(frames: AlignedFrames, threshold: float = 0.3) -> FrameMatches:
    """Carry-over then optimal matching per frame; switches against the last matched prediction."""
    last: dict = {}
    prev: dict = {}  # gt -> pred matched in the previous frame
    out_m, out_fn, out_fp, out_sw = [], [], [], []
    gt_frames: dict = defaultdict(int)
    pred_frames: dict = defaultdict(int)
    for gids, gb, pids, pb in zip(frames.gt_ids, frames.gt_boxes, frames.pred_ids, frames.pred_boxes):
        for g in gids:
            gt_frames[g] += 1
        for p in pids:
            pred_frames[p] += 1
        iou = iou_matrix(gb, pb).reshape(len(gids), len(pids))
        gpos = {g: i for i, g in enumerate(gids)}
        ppos = {p: j for j, p in enumerate(pids)}
        pairs = []
        used_g, used_p = set(), set()
        for g, p in prev.items():
            if g in gpos and p in ppos and iou[gpos[g], ppos[p]] >= threshold:
                pairs.append((gpos[g], ppos[p]))
                used_g.add(gpos[g])
                used_p.add(ppos[p])
        rg = [i for i in range(len(gids)) if i not in used_g]
        rp = [j for j in range(len(pids)) if j not in used_p]
        if rg and rp:
            sub = iou[np.ix_(rg, rp)]
            pairs += [(rg[a], rp[b]) for a, b in _assign(sub, threshold)]
        matched, switched = [], []
        cur = {}
        for i, j in sorted(pairs):
            g, p = gids[i], pids[j]
            if g in last and last[g] != p:
                switched.append(g)
            last[g] = p
            cur[g] = p
            matched.append((g, p, float(iou[i, j])))
        prev = cur
        mg = {m[0] for m in matched}
        mp = {m[1] for m in matched}
        out_m.append(matched)
        out_fn.append([g for g in gids if g not in mg])
        out_fp.append([p for p in pids if p not in mp])
        out_sw.append(switched)
    return FrameMatches(out_m, out_fn, out_fp, out_sw, dict(gt_frames), dict(pred_frames))


@dataclass(frozen=True)
class ClearMot:
    tp: int
    fn: int
    fp: int
    switches: int
    n_gt_boxes: int
    n_gt_objects: int
    n_pred_objects: int
    mota: float
    motp: float
    recall: float
    precision: float
    gt_pct: float
    pred_pct: float
    mt_pct: float
    pt_pct: float
    ml_pct: float
    switches_per_gt: float


def clearmot(m: FrameMatches) -> ClearMot:
    tp = sum(len(x) for x in m.matches)
    fn = sum(len(x) for x in m.missed)
    fp = sum(len(x) for x in m.false)
    sw = sum(len(x) for x in m.switches)
    n_gt = tp + fn
    ious = [c[2] for x in m.matches for c in x]
    hits: dict = defaultdict(int)
    pred_hit = set()
    for x in m.matches:
        for g, p, _ in x:
            hits[g] += 1
            pred_hit.add(p)
    n_obj = len(m.gt_frames)
    frac = np.array([hits[g] / n for g, n in m.gt_frames.items()], dtype=float)
    mt = int(np.sum(frac >= MT_FRACTION))
    ml = int(np.sum(frac <= ML_FRACTION))
    pct = (lambda k, n: 100.0 * k / n if n else 0.0)
    return ClearMot(
        tp, fn, fp, sw, n_gt, n_obj, len(m.pred_frames),
        mota=100.0 * (1.0 - (fn + fp + sw) / n_gt) if n_gt else (0.0 if fp else 100.0),
        motp=100.0 * float(np.mean(ious)) if ious else 0.0,
        recall=pct(tp, tp + fn),
        precision=pct(tp, tp + fp),
        gt_pct=pct(sum(1 for g in m.gt_frames if hits[g] > 0), n_obj),
        pred_pct=pct(sum(1 for p in m.pred_frames if p in pred_hit), len(m.pred_frames)),
        mt_pct=pct(mt, n_obj),
        pt_pct=pct(n_obj - mt - ml, n_obj),
        ml_pct=pct(ml, n_obj),
        switches_per_gt=sw / n_obj if n_obj else 0.0,
    )
