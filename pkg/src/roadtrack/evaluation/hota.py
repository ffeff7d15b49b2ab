"""Higher Order Tracking Accuracy with bird's-eye IOU similarity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..boxes import iou_matrix
from .alignment import HOTA_THRESHOLDS, AlignedFrames

_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class HotaResult:
    thresholds: np.ndarray
    hota: np.ndarray  # per threshold, percent
    deta: np.ndarray
    assa: np.ndarray
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray

    @property
    def HOTA(self) -> float:
        return float(np.mean(self.hota))

    @property
    def DetA(self) -> float:
        return float(np.mean(self.deta))

    @property
    def AssA(self) -> float:
        return float(np.mean(self.assa))

    def at(self, alpha: float) -> float:
        k = int(np.argmin(np.abs(self.thresholds - alpha)))
        if abs(self.thresholds[k] - alpha) > 1e-9:
            raise KeyError(f"threshold {alpha} was not evaluated")
        return float(self.hota[k])


def hota(frames: AlignedFrames, thresholds=HOTA_THRESHOLDS) -> HotaResult:
    """HOTA, DetA and AssA for each threshold.

    Matching follows the reference recipe: a global alignment score between
    every gt/pred id pair is accumulated over all frames, each frame is matched
    once by maximising alignment-weighted similarity, and each threshold then
    keeps the matched pairs whose similarity reaches it.
    """
    alphas = np.asarray(thresholds, dtype=float)
    gt_index = {g: i for i, g in enumerate(dict.fromkeys(g for ids in frames.gt_ids for g in ids))}
    pr_index = {p: i for i, p in enumerate(dict.fromkeys(p for ids in frames.pred_ids for p in ids))}
    ng, npred = len(gt_index), len(pr_index)
    sims = []
    potential = np.zeros((ng, npred))
    gt_count = np.zeros(ng)
    pr_count = np.zeros(npred)
    for gids, gb, pids, pb in zip(frames.gt_ids, frames.gt_boxes, frames.pred_ids, frames.pred_boxes):
        gi = np.array([gt_index[g] for g in gids], dtype=int)
        pi = np.array([pr_index[p] for p in pids], dtype=int)
        sim = iou_matrix(gb, pb).reshape(len(gi), len(pi))
        sims.append((gi, pi, sim))
        gt_count[gi] += 1
        pr_count[pi] += 1
        if len(gi) and len(pi):
            denom = sim.sum(0)[None, :] + sim.sum(1)[:, None] - sim
            ratio = np.zeros_like(sim)
            np.divide(sim, denom, out=ratio, where=denom > _EPS)
            potential[gi[:, None], pi[None, :]] += ratio
    align = potential / np.maximum(1.0, gt_count[:, None] + pr_count[None, :] - potential)

    na = len(alphas)
    tp = np.zeros(na)
    fn = np.zeros(na)
    fp = np.zeros(na)
    matches = np.zeros((na, ng, npred))
    for gi, pi, sim in sims:
        if len(gi) == 0 or len(pi) == 0:
            fn += len(gi)
            fp += len(pi)
            continue
        score = align[gi[:, None], pi[None, :]] * sim
        rows, cols = linear_sum_assignment(-score)
        s = sim[rows, cols]
        for a, alpha in enumerate(alphas):
            ok = s >= alpha - _EPS
            r, c = rows[ok], cols[ok]
            n = len(r)
            tp[a] += n
            fn[a] += len(gi) - n
            fp[a] += len(pi) - n
            matches[a, gi[r], pi[c]] += 1

    deta = np.zeros(na)
    assa = np.zeros(na)
    for a in range(na):
        m = matches[a]
        ass_iou = m / np.maximum(1.0, gt_count[:, None] + pr_count[None, :] - m)
        assa[a] = np.sum(m * ass_iou) / max(1.0, tp[a])
        deta[a] = tp[a] / max(1.0, tp[a] + fn[a] + fp[a])
    hota_v = np.sqrt(deta * assa)
    return HotaResult(alphas, 100 * hota_v, 100 * deta, 100 * assa, tp, fn, fp)
