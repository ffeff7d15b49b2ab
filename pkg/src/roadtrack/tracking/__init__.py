"""Online roadway tracking, detection fusion and tracklet stitching."""
from .association import BYTE_HIGH, BYTE_LOW, Association, associate_byte, associate_kiou
from .fusion import DF_IOU, StitchParams, Tracklet, fuse_detections, link_cost, merge_tracklets, stitch_tracklets
from .kalman import KalmanParams, TrackState, kalman_predict, kalman_update, mark_missed, new_track
from .pipeline import FUSIONS, TRACKERS, MultiCameraTracker, TrackerConfig, consumed_frames, tick_times, track_scene

__all__ = [
    "Association", "BYTE_HIGH", "BYTE_LOW", "DF_IOU", "FUSIONS", "KalmanParams", "MultiCameraTracker",
    "StitchParams", "TRACKERS", "consumed_frames", "TrackState", "TrackerConfig", "Tracklet", "associate_byte", "associate_kiou",
    "fuse_detections", "kalman_predict", "kalman_update", "link_cost", "mark_missed", "merge_tracklets",
    "new_track", "stitch_tracklets", "tick_times", "track_scene",
]
