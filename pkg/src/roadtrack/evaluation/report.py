"""Tracking evaluation entry point and report serialisation."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

from ..exceptions import ParseError, SchemaMismatch
from ..tracking.fusion import Tracklet
from .alignment import AlignedFrames, EvalConfig, align
from .clearmot import ClearMot, FrameMatches, clearmot, match_frames
from .hota import HotaResult, hota

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "pipeline", "scene", "HOTA", "DetA", "AssA", "MOTA", "MOTP", "Rec", "Prec", "GT%", "Pred%", "MT", "ML", "Sw/GT",
)


@dataclass(frozen=True)
class MetricsReport:
    HOTA: float
    DetA: float
    AssA: float
    MOTA: float
    MOTP: float
    recall: float
    precision: float
    GT_pct: float
    Pred_pct: float
    MT_pct: float
    ML_pct: float
    switches_per_gt: float
    switches: int
    tp: int
    fn: int
    fp: int
    n_gt_objects: int
    n_pred_objects: int
    n_frames: int
    hota_by_threshold: dict = field(default_factory=dict)
    pipeline: str = ""
    scene: str = ""

    def hota_at(self, alpha: float) -> float:
        return self.hota_by_threshold[f"{alpha:.2f}"]

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> dict:
        return {
            "pipeline": self.pipeline, "scene": self.scene, "HOTA": self.HOTA, "DetA": self.DetA, "AssA": self.AssA,
            "MOTA": self.MOTA, "MOTP": self.MOTP, "Rec": self.recall, "Prec": self.precision, "GT%": self.GT_pct,
            "Pred%": self.Pred_pct, "MT": self.MT_pct, "ML": self.ML_pct, "Sw/GT": self.switches_per_gt,
        }


@dataclass(frozen=True, eq=False)
class Evaluation:
    report: MetricsReport
    frames: AlignedFrames
    matches: FrameMatches
    clear: ClearMot
    hota: HotaResult


def evaluate(
    gt: Sequence[Tracklet],
    pred: Sequence[Tracklet],
    config: EvalConfig = EvalConfig(),
    pipeline: str = "",
    scene: str = "",
) -> Evaluation:
    """Align at the resample rate over the common window, then score CLEAR-MOT and HOTA."""
    frames = align(gt, pred, config.resample_rate)
    if pred and gt and len(frames) == 0:
        log.warning("ground truth and predictions do not overlap in time")
    m = match_frames(frames, config.iou_threshold)
    c = clearmot(m)
    h = hota(frames, config.hota_thresholds)
    rep = MetricsReport(
        HOTA=h.HOTA, DetA=h.DetA, AssA=h.AssA, MOTA=c.mota, MOTP=c.motp, recall=c.recall, precision=c.precision,
        GT_pct=c.gt_pct, Pred_pct=c.pred_pct, MT_pct=c.mt_pct, ML_pct=c.ml_pct, switches_per_gt=c.switches_per_gt,
        switches=c.switches, tp=c.tp, fn=c.fn, fp=c.fp, n_gt_objects=c.n_gt_objects, n_pred_objects=c.n_pred_objects,
        n_frames=len(frames), hota_by_threshold={f"{a:.2f}": float(v) for a, v in zip(h.thresholds, h.hota)},
        pipeline=pipeline, scene=scene,
    )
    return Evaluation(rep, frames, m, c, h)


def reports_to_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def reports_from_json(text: str) -> list[MetricsReport]:
    return [MetricsReport(**d) for d in json.loads(text)]


def table_to_csv(rows: Sequence[dict]) -> str:
    """Summary table: one row per report, numbers to six significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([row[c] if isinstance(row[c], str) else f"{row[c]:.6g}" for c in CSV_COLUMNS])
    return buf.getvalue()


def table_from_csv(text: str) -> list[dict]:
    """Parse a summary table written by :func:`table_to_csv`."""
    lines = list(csv.reader(io.StringIO(text)))
    if not lines or tuple(lines[0]) != CSV_COLUMNS:
        raise SchemaMismatch(f"expected header {','.join(CSV_COLUMNS)}")
    out = []
    for n, cells in enumerate(lines[1:], start=2):
        if len(cells) != len(CSV_COLUMNS):
            raise ParseError(f"expected {len(CSV_COLUMNS)} columns, got {len(cells)}", line=n)
        try:
            out.append({c: v if c in ("pipeline", "scene") else float(v) for c, v in zip(CSV_COLUMNS, cells)})
        except ValueError as e:
            raise ParseError(str(e), line=n) from e
    return out


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    return table_to_csv([r.row() for r in reports])
