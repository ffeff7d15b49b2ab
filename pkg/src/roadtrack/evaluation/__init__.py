"""Tracking metrics, detection AP and cross-camera data-quality measures."""
from .alignment import HOTA_THRESHOLDS, AlignedFrames, EvalConfig, align, overlap_window, resample_ground_truth
from .clearmot import ClearMot, FrameMatches, clearmot, match_frames
from .crosscam import CrossCameraPairs, ccde, ccpe, cross_camera_pairs, total_variation
from .detection import AP_THRESHOLDS, PRCurve, average_precision
from .dimensions import DimensionStats, dimension_error_stats
from .hota import HotaResult, hota
from .report import (
    Evaluation, MetricsReport, evaluate, reports_from_json, reports_to_csv, reports_to_json, table_from_csv, table_to_csv,
)
from .timespace import TimeSpacePoint, emit_timespace, lane_index

__all__ = [
    "AP_THRESHOLDS", "AlignedFrames", "ClearMot", "CrossCameraPairs", "DimensionStats", "EvalConfig", "Evaluation",
    "FrameMatches", "HOTA_THRESHOLDS", "HotaResult", "MetricsReport", "PRCurve", "TimeSpacePoint", "align",
    "average_precision", "ccde", "ccpe", "clearmot", "cross_camera_pairs", "dimension_error_stats", "emit_timespace",
    "evaluate", "hota", "lane_index", "match_frames", "overlap_window", "reports_from_json", "reports_to_csv",
    "reports_to_json", "resample_ground_truth", "table_from_csv", "table_to_csv", "total_variation",
]
