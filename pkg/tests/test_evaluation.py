import csv
import itertools
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadtrack.boxes import Box3D
from roadtrack.evaluation import (
    AlignedFrames,
    EvalConfig,
    ccde,
    ccpe,
    clearmot,
    cross_camera_pairs,
    dimension_error_stats,
    emit_timespace,
    evaluate,
    hota,
    lane_index,
    match_frames,
    resample_ground_truth,
    reports_from_json,
    reports_to_json,
    total_variation,
)
from roadtrack.evaluation.detection import average_precision
from roadtrack.exceptions import ValidationError, ZeroDistance
from roadtrack.geometry import CameraProjection, CameraTransform, Homography
from roadtrack.timesync import pairwise_offset
from roadtrack.tracking import Tracklet

DATA = Path(__file__).parent / "data"


def box(x, y=6.0, l=12.0, w=6.0, direction="EB"):
    return Box3D(float(x), float(y), float(l), float(w), 5.0, direction, "sedan")


def rect_iou(a: Box3D, b: Box3D) -> float:
    """Footprint IOU written out for same-direction boxes."""
    def rect(q):
        s = 1 if q.direction == "EB" else -1
        xs = sorted((q.x, q.x + s * q.l))
        return xs[0], xs[1], q.y - q.w / 2, q.y + q.w / 2

    ax0, ax1, ay0, ay1 = rect(a)
    bx0, bx1, by0, by1 = rect(b)
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    union = a.l * a.w + b.l * b.w - inter
    return inter / union


def track(tid, t, x, y=6.0, dims=(12.0, 6.0, 5.0)):
    t = np.asarray(t, dtype=float)
    return Tracklet(tid, "EB", "sedan", t, np.broadcast_to(np.asarray(x, dtype=float), t.shape),
                    np.full(len(t), y), dims)


# random tiny instances and brute-force references

def random_instance(rng, max_obj=3, max_frames=6):
    n_frames = int(rng.integers(1, max_frames + 1))
    n_gt = int(rng.integers(1, max_obj + 1))
    n_pr = int(rng.integers(0, max_obj + 1))
    frames = []
    for _ in range(n_frames):
        g = {f"g{i}": box(rng.uniform(0, 20), rng.uniform(4, 10), rng.uniform(10, 16), rng.uniform(5, 7))
             for i in range(n_gt) if rng.random() < 0.85}
        p = {f"p{i}": box(rng.uniform(0, 20), rng.uniform(4, 10), rng.uniform(10, 16), rng.uniform(5, 7))
             for i in range(n_pr) if rng.random() < 0.85}
        frames.append((g, p))
    if not any(g for g, _ in frames):
        frames[0][0]["g0"] = box(rng.uniform(0, 20))
    return frames


def partial_matchings(gids, pids):
    """Every one-to-one partial assignment of gids to pids."""
    for cols in itertools.product([None] + list(pids), repeat=len(gids)):
        used = [c for c in cols if c is not None]
        if len(used) == len(set(used)):
            yield [(g, p) for g, p in zip(gids, cols) if p is not None]


def clearmot_reference(frames, thr):
    last, prev = {}, {}
    tp = fn = fp = sw = 0
    ious = []
    hits = {}
    gt_count, pr_count, pred_hit = {}, {}, set()
    for g, p in frames:
        for k in g:
            gt_count[k] = gt_count.get(k, 0) + 1
        for k in p:
            pr_count[k] = pr_count.get(k, 0) + 1
        kept = [(a, b) for a, b in prev.items() if a in g and b in p and rect_iou(g[a], p[b]) >= thr]
        rg = [a for a in g if a not in {x for x, _ in kept}]
        rp = [b for b in p if b not in {y for _, y in kept}]
        best, best_key = [], (0, 0.0)
        for m in partial_matchings(rg, rp):
            if any(rect_iou(g[a], p[b]) < thr for a, b in m):
                continue
            key = (len(m), sum(rect_iou(g[a], p[b]) for a, b in m))
            if key[0] > best_key[0] or (key[0] == best_key[0] and key[1] > best_key[1] + 1e-12):
                best, best_key = m, key
        pairs = kept + best
        cur = {}
        for a, b in pairs:
            if a in last and last[a] != b:
                sw += 1
            last[a] = b
            cur[a] = b
            hits[a] = hits.get(a, 0) + 1
            pred_hit.add(b)
            ious.append(rect_iou(g[a], p[b]))
        prev = cur
        tp += len(pairs)
        fn += len(g) - len(pairs)
        fp += len(p) - len(pairs)
    n_obj = len(gt_count)
    frac = [hits.get(k, 0) / n for k, n in gt_count.items()]
    return dict(
        tp=tp, fn=fn, fp=fp, switches=sw,
        mota=100 * (1 - (fn + fp + sw) / (tp + fn)),
        motp=100 * float(np.mean(ious)) if ious else 0.0,
        mt_pct=100 * sum(f >= 0.8 for f in frac) / n_obj,
        ml_pct=100 * sum(f <= 0.2 for f in frac) / n_obj,
        gt_pct=100 * sum(hits.get(k, 0) > 0 for k in gt_count) / n_obj,
        pred_pct=100 * len(pred_hit) / len(pr_count) if pr_count else 0.0,
    )


def hota_reference(frames, alpha):
    """HOTA at one threshold with each frame's matching found by enumeration."""
    sims = [{(a, b): rect_iou(g[a], p[b]) for a in g for b in p} for g, p in frames]
    gt_count, pr_count, pot = {}, {}, {}
    for (g, p), sim in zip(frames, sims):
        for a in g:
            gt_count[a] = gt_count.get(a, 0) + 1
        for b in p:
            pr_count[b] = pr_count.get(b, 0) + 1
        for (a, b), s in sim.items():
            den = sum(sim[a, q] for q in p) + sum(sim[q, b] for q in g) - s
            if den > 0:
                pot[a, b] = pot.get((a, b), 0.0) + s / den
    align = {k: v / max(1.0, gt_count[k[0]] + pr_count[k[1]] - v) for k, v in pot.items()}
    tp = fn = fp = 0
    matched = {}
    for (g, p), sim in zip(frames, sims):
        best, best_score = [], -1.0
        for m in partial_matchings(list(g), list(p)):
            score = sum(align.get((a, b), 0.0) * sim[a, b] for a, b in m)
            if score > best_score + 1e-12:
                best, best_score = m, score
        ok = [(a, b) for a, b in best if sim[a, b] >= alpha]
        tp += len(ok)
        fn += len(g) - len(ok)
        fp += len(p) - len(ok)
        for k in ok:
            matched[k] = matched.get(k, 0) + 1
    assa = sum(n * n / (gt_count[a] + pr_count[b] - n) for (a, b), n in matched.items()) / max(1, tp)
    deta = tp / max(1, tp + fn + fp)
    return 100 * math.sqrt(deta * assa), 100 * deta, 100 * assa


def test_metrics_match_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        frames = random_instance(rng)
        aligned = AlignedFrames.from_frames(frames)
        c = clearmot(match_frames(aligned, 0.3))
        ref = clearmot_reference(frames, 0.3)
        for key, value in ref.items():
            assert getattr(c, key) == pytest.approx(value, abs=1e-9), key
        h = hota(aligned, (0.3, 0.5))
        for k, alpha in enumerate((0.3, 0.5)):
            hv, dv, av = hota_reference(frames, alpha)
            assert h.hota[k] == pytest.approx(hv, abs=1e-9)
            assert h.deta[k] == pytest.approx(dv, abs=1e-9)
            assert h.assa[k] == pytest.approx(av, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_count_identities(seed):
    aligned = AlignedFrames.from_frames(random_instance(np.random.default_rng(seed)))
    c = clearmot(match_frames(aligned, 0.3))
    n = c.tp + c.fn
    assert c.recall == pytest.approx(100 * c.tp / n)
    if c.tp + c.fp:
        assert c.precision == pytest.approx(100 * c.tp / (c.tp + c.fp))
    assert c.mota == pytest.approx(100 * (1 - (c.fn + c.fp + c.switches) / n))
    assert c.mt_pct + c.pt_pct + c.ml_pct == pytest.approx(100.0)
    assert c.mota <= 100
    for v in (c.recall, c.precision, c.gt_pct, c.pred_pct, c.mt_pct, c.ml_pct):
        assert 0 <= v <= 100


# scripted matching cases

def test_identical_sets_are_perfect():
    frames = [({"a": box(k), "b": box(k + 40)}, {1: box(k), 2: box(k + 40)}) for k in range(5)]
    aligned = AlignedFrames.from_frames(frames)
    c = clearmot(match_frames(aligned))
    assert (c.tp, c.fn, c.fp, c.switches) == (10, 0, 0, 0)
    assert (c.mota, c.mt_pct, c.ml_pct, c.switches_per_gt) == (100.0, 100.0, 0.0, 0.0)
    assert np.all(hota(aligned).hota == pytest.approx(100.0))


def test_swapped_ids_count_two_switches():
    frames = []
    for k in range(6):
        g = {"a": box(0.0, 6.0), "b": box(0.0, 18.0)}
        p = {1: box(0.0, 6.0), 2: box(0.0, 18.0)} if k < 3 else {2: box(0.0, 6.0), 1: box(0.0, 18.0)}
        frames.append((g, p))
    c = clearmot(match_frames(AlignedFrames.from_frames(frames)))
    assert c.switches == 2 and c.switches_per_gt == 1.0


def test_empty_predictions():
    gt = [track(1, np.arange(10) / 30, 0.0), track(2, np.arange(10) / 30, 50.0)]
    ev = evaluate(gt, [])
    assert ev.clear.fn == 20 and ev.clear.tp == 0
    assert ev.report.MOTA <= 0 and ev.report.recall == 0 and ev.report.GT_pct == 0


def test_half_dropout():
    frames = [({"a": box(0.0), "b": box(40.0)}, {1: box(0.0), 2: box(40.0)} if k % 2 else {}) for k in range(10)]
    c = clearmot(match_frames(AlignedFrames.from_frames(frames)))
    assert c.recall == 50.0 and c.mt_pct == 0.0


def test_pred_pct_with_false_tracks():
    frames = [({"a": box(0.0)}, {1: box(0.0), 2: box(100.0), 3: box(200.0), 4: box(300.0)}) for _ in range(4)]
    c = clearmot(match_frames(AlignedFrames.from_frames(frames)))
    assert c.pred_pct == 25.0 and c.gt_pct == 100.0


def test_fragmented_track_halves_association():
    frames = [({"a": box(0.0)}, {1 if k < 5 else 2: box(0.0)}) for k in range(10)]
    h = hota(AlignedFrames.from_frames(frames))
    np.testing.assert_allclose(h.assa, 50.0)
    np.testing.assert_allclose(h.deta, 100.0)
    assert h.HOTA == pytest.approx(100 * math.sqrt(0.5))


def test_eval_config_validation():
    with pytest.raises(ValidationError):
        EvalConfig(hota_thresholds=(0.5, 0.3))
    with pytest.raises(ValidationError):
        EvalConfig(iou_threshold=1.5)
    assert len(EvalConfig().hota_thresholds) == 19


def test_report_json_round_trip():
    gt = [track(1, np.arange(30) / 30, 100 * np.arange(30) / 30)]
    rep = evaluate(gt, gt, pipeline="p", scene="s").report
    assert reports_from_json(reports_to_json([rep])) == [rep]
    assert rep.HOTA == pytest.approx(100) and rep.MOTA == 100


# ground-truth resampling

def test_resample_constant_velocity_is_linear():
    t = np.arange(0, 3.01, 0.1)
    gt = {7: [(a, box(10 + 80 * a, 6.0)) for a in t]}
    out = resample_ground_truth(gt)[0]
    np.testing.assert_allclose(out.x, 10 + 80 * out.t, atol=1e-8)
    np.testing.assert_allclose(np.diff(out.t), 1 / 30)


def test_resample_three_annotations_linear_passthrough():
    gt = {1: [(0.0, box(0.0)), (1.0, box(10.0)), (2.0, box(30.0))]}
    out = resample_ground_truth(gt)[0]
    np.testing.assert_allclose(out.x, np.interp(out.t, [0, 1, 2], [0, 10, 30]), atol=1e-12)


def test_resample_cubic_motion():
    t = np.arange(0, 4.01, 0.05)
    f = lambda s: 3 + 20 * s + 1.5 * s ** 2 - 0.4 * s ** 3
    out = resample_ground_truth({1: [(a, box(f(a))) for a in t]})[0]
    np.testing.assert_allclose(out.x, f(out.t), atol=1e-6)


# detection AP

def _ap_reference(dets, gts, thr):
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    taken, flags = set(), []
    for i in order:
        key, b, _ = dets[i]
        cands = [(rect_iou(b, g), j) for j, (k, g) in enumerate(gts) if k == key]
        best = max(cands, default=(0.0, -1))
        ok = best[1] >= 0 and best[0] >= thr and best[1] not in taken
        if ok:
            taken.add(best[1])
        flags.append(ok)
    prec = [sum(flags[: r + 1]) / (r + 1) for r in range(len(flags))]
    rec = [sum(flags[: r + 1]) / len(gts) for r in range(len(flags))]
    ap, prev = 0.0, 0.0
    for r in range(len(flags)):
        if rec[r] > prev:
            ap += (rec[r] - prev) * max(prec[r:])
            prev = rec[r]
    return ap


def test_ap_perfect_detections():
    gts = [(0, box(0.0)), (0, box(40.0)), (1, box(5.0))]
    curves = average_precision([(k, b, 0.9) for k, b in gts], gts)
    assert all(c.ap == 1.0 for c in curves.values())


def test_ap_duplicate_is_false_positive():
    gts = [(0, box(0.0))]
    curves = average_precision([(0, box(0.0), 0.9), (0, box(0.5), 0.8)], gts)
    for c in curves.values():
        np.testing.assert_allclose(c.precision, [1.0, 0.5])
        assert c.ap == 1.0


def test_ap_matches_exhaustive_reference():
    rng = np.random.default_rng(11)
    for _ in range(100):
        gts = [(int(rng.integers(2)), box(rng.uniform(0, 40), rng.uniform(4, 10))) for _ in range(3)]
        dets = [(int(rng.integers(2)), box(rng.uniform(0, 40), rng.uniform(4, 10)), float(rng.uniform()))
                for _ in range(5)]
        curves = average_precision(dets, gts)
        for thr, c in curves.items():
            assert c.ap == pytest.approx(_ap_reference(dets, gts, thr), abs=1e-12)
        aps = [curves[t].ap for t in sorted(curves)]
        assert all(a >= b for a, b in zip(aps, aps[1:]))


# dimension statistics

def _fixture_pairs():
    with open(DATA / "dimension_pairs.csv") as fh:
        rows = list(csv.DictReader(fh))
    dims = ("length", "width", "height")
    return [(r["class"], [float(r[f"{d}_annotated"]) for d in dims], [float(r[f"{d}_true"]) for d in dims])
            for r in rows]


def test_dimension_fixture_overall():
    s = dimension_error_stats(_fixture_pairs())["overall"]
    np.testing.assert_allclose(s.mean, [-0.5, -0.1, -0.2], atol=0.05)
    np.testing.assert_allclose(s.std, [1.1, 0.3, 0.6], atol=0.05)


def test_dimension_simple_cases():
    s = dimension_error_stats([("semi", (20, 6, 6), (19, 6.5, 5))])
    np.testing.assert_allclose(s["semi"].mean, [1.0, -0.5, 1.0])
    s = dimension_error_stats([("van", (17, 6, 7), (17, 6, 7))] * 3)
    np.testing.assert_allclose(s["overall"].mean, 0.0)
    with pytest.raises(ValidationError):
        dimension_error_stats([])


# cross-camera quality measures

def _two_camera_obs(offset=0.0, speed=100.0):
    ta, tb = np.arange(0, 90) / 30, np.arange(30, 120) / 30
    obs = [(1, "a", float(s), speed * s, 6.0, "EB") for s in ta]
    # camera b reports its times ``offset`` seconds late
    obs += [(1, "b", float(s + offset), speed * s, 6.0, "EB") for s in tb]
    return obs


def test_ccde_zero_for_identical_annotations():
    pairs = cross_camera_pairs(_two_camera_obs(0.0))
    assert ccde(pairs) == (0.0, 0.0)


def test_ccde_clock_offset_and_correction():
    obs = _two_camera_obs(0.1)
    dx, dy = ccde(cross_camera_pairs(obs))
    assert dx == pytest.approx(10.0, abs=1e-6) and dy == 0.0
    a = {1: np.array([(o[2], o[3]) for o in obs if o[1] == "a"])}
    b = {1: np.array([(o[2], o[3]) for o in obs if o[1] == "b"])}
    shift = pairwise_offset(a, b)
    fixed = [(v, c, t + shift if c == "b" else t, x, y, d) for v, c, t, x, y, d in obs]
    assert ccde(cross_camera_pairs(fixed))[0] < dx
    assert ccde(cross_camera_pairs(fixed))[0] == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(20, 120))
def test_ccde_symmetric_and_nonnegative(offset, speed):
    pairs = cross_camera_pairs(_two_camera_obs(offset, speed))
    d = ccde(pairs)
    assert d[0] >= 0 and d[1] >= 0
    assert ccde(pairs.swapped()) == pytest.approx(d)


def _affine_transform(cam, scale=8.0):
    p = np.array([[scale, 0, 0, 100.0], [0, scale, 0, 50.0], [0, 0, 0, 1.0]])
    proj = CameraProjection(p)
    h = Homography(np.linalg.inv(proj.plane_homography))
    return CameraTransform(cam, "EB", h, proj)


def test_ccpe_scales_misalignment_by_pixels_per_foot():
    obs = [(1, "a", t, 10.0 + 100 * t + 1.0, 6.0, "EB") for t in (0.0, 0.5, 1.0)]
    obs += [(1, "b", t, 10.0 + 100 * t, 6.0, "EB") for t in (0.0, 0.5, 1.0)]
    pairs = cross_camera_pairs(obs)
    tfs = {("a", "EB"): _affine_transform("a"), ("b", "EB"): _affine_transform("b")}
    assert ccpe(pairs, tfs) == pytest.approx(8.0)
    self_pairs = cross_camera_pairs([o for o in obs if o[1] == "b"] + [(1, "c", *o[2:]) for o in obs if o[1] == "b"])
    assert ccpe(self_pairs, {("c", "EB"): _affine_transform("c"), ("b", "EB"): _affine_transform("b")}) == 0.0


def test_ccpe_matches_direct_projection(synthetic_camera):
    proj = CameraProjection(synthetic_camera)
    tf = CameraTransform("b", "EB", Homography(np.linalg.inv(proj.plane_homography)), proj)
    rng = np.random.default_rng(3)
    t = np.sort(rng.uniform(0, 1, 20))
    xa, ya = 40 + 30 * t, 10 + rng.normal(0, 2, 20)
    xb, yb = 40 + 30 * t + rng.normal(0, 1, 20), 10 + rng.normal(0, 2, 20)
    obs = [(1, "a", s, x, y, "EB") for s, x, y in zip(t, xa, ya)]
    obs += [(1, "b", s, x, y, "EB") for s, x, y in zip(t, xb, yb)]
    pairs = cross_camera_pairs(obs)
    a_to_b = (pairs.cam_a == "a")
    sub = type(pairs)(*(getattr(pairs, f)[a_to_b] for f in
                        ("vid", "cam_a", "cam_b", "direction", "t", "xa", "ya", "xb", "yb")))

    def direct(x, y):
        hom = synthetic_camera @ np.array([x, y, 0.0, 1.0])
        return hom[:2] / hom[2]

    expect = np.mean([np.linalg.norm(direct(a, b) - direct(c, d))
                      for a, b, c, d in zip(sub.xa, sub.ya, sub.xb, sub.yb)])
    assert ccpe(sub, {("b", "EB"): tf}) == pytest.approx(expect, abs=1e-6)


def test_total_variation_cases():
    assert total_variation([0, 5, 10, 20]) == 1.0
    assert total_variation([0, 10, 5, 15]) == pytest.approx(25 / 15)
    with pytest.raises(ZeroDistance):
        total_variation([3, 3, 3])
    with pytest.raises(ValidationError):
        total_variation([1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_total_variation_at_least_one(x):
    if max(x) - min(x) > 1e-6:
        assert total_variation(x) >= 1 - 1e-12


# time-space series

def test_lane_binning():
    assert lane_index(0.0) == 1 and lane_index(6.0) == 1 and lane_index(11.99) == 1
    assert lane_index(12.0) == 2 and lane_index(-6.0) == 1 and lane_index(-30.0) == 3


def test_timespace_all_true_positives():
    frames = AlignedFrames.from_frames([({"a": box(k)}, {1: box(k)}) for k in range(4)], np.arange(4) / 30)
    pts = emit_timespace(frames, match_frames(frames))
    assert len(pts) == 4 and {p.status for p in pts} == {"TP"}


def test_timespace_low_iou_gives_parallel_fp_and_fn():
    frames = AlignedFrames.from_frames([({"a": box(k)}, {1: box(k + 9.0)}) for k in range(4)], np.arange(4) / 30)
    pts = emit_timespace(frames, match_frames(frames, 0.3))
    fn = [p for p in pts if p.status == "FN"]
    fp = [p for p in pts if p.status == "FP"]
    assert len(fn) == len(fp) == 4 and not [p for p in pts if p.status == "TP"]
    np.testing.assert_allclose([q.x - p.x for p, q in zip(fn, fp)], 9.0)
    assert {p.lane for p in pts} == {1}
