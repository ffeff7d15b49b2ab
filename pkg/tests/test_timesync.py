import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadtrack.exceptions import (
    DisconnectedChain,
    NonMonotoneTrackWarning,
    NoSharedObjects,
    OutOfDomain,
    TooFewObservations,
    ZeroDuration,
)
from roadtrack.timesync import (
    RESIDUAL_BOUND,
    ClockSynchronizer,
    FrameStamp,
    TrajectorySplineRegressor,
    WeightedObservation,
    chain_offsets,
    estimate_residuals,
    fit_spline,
    pairwise_offset,
    shift_annotations,
    weighted_residual,
)


def obs_from(t, x, y=None, w=1.0, camera="c", frames=None):
    y = np.zeros_like(x) if y is None else y
    frames = range(len(t)) if frames is None else frames
    return [WeightedObservation(float(a), float(b), float(c), w, camera, int(f)) for a, b, c, f in zip(t, x, y, frames)]


def test_frame_stamp_sum():
    s = FrameStamp("c1", 3, 100.0, 0.25, -0.01)
    assert s.t_corrected == pytest.approx(100.24)


def test_identical_tracks_zero_offset():
    t = np.arange(0, 2, 1 / 30)
    tr = {1: obs_from(t, 100 * t)}
    assert pairwise_offset(tr, tr) == 0.0


def test_known_offset_constant_speed():
    # camera b reports 0.1 s early (o_b = 0.1), both quantised to 0.01 s
    t_true = np.arange(0, 3, 1 / 30) + 0.004
    x = 100 * t_true
    ta = np.floor(t_true / 0.01) * 0.01
    tb = np.floor((t_true - 0.1) / 0.01) * 0.01
    a = {1: obs_from(ta[:60], x[:60])}
    b = {1: obs_from(tb[30:], x[30:])}
    assert pairwise_offset(a, b) == pytest.approx(0.1, abs=0.012)


def test_disjoint_ranges():
    t = np.linspace(0, 1, 10)
    with pytest.raises(NoSharedObjects):
        pairwise_offset({1: obs_from(t, 10 * t)}, {1: obs_from(t, 10 * t + 50)})


def test_non_monotone_object_skipped():
    t = np.linspace(0, 2, 21)
    zig = np.concatenate([np.linspace(0, 10, 11), np.linspace(9, 0, 10)])
    good = {1: obs_from(t, 10 * t), 2: obs_from(t, zig)}
    with pytest.warns(NonMonotoneTrackWarning):
        assert pairwise_offset(good, good) == 0.0


def test_exact_hit_takes_earliest_frame():
    # stopped vehicle: x = 5 held over two frames; sample at x = 5 must take the earlier time
    a = {1: np.array([[0.0, 0.0], [1.0, 5.0], [2.0, 5.0], [3.0, 10.0]])}
    b = {1: np.array([[0.0, 0.0], [1.0, 5.0], [2.0, 5.0], [3.0, 10.0]])}
    b[1][:, 0] += 0.5
    assert pairwise_offset(a, b, samples_per_object=3) == pytest.approx(-0.5)


def test_chain_offsets():
    assert chain_offsets([], cameras=["c0"]) == {"c0": 0.0}
    got = chain_offsets([("c1", "c0", 0.1), ("c2", "c1", -0.05)])
    assert got == pytest.approx({"c0": 0.0, "c1": 0.1, "c2": 0.05})
    with pytest.raises(DisconnectedChain):
        chain_offsets([("c1", "c0", 0.1)], cameras=["c0", "c1", "c2"])


def test_spline_cubic_exact():
    t = np.linspace(0, 2, 61)
    x = 3 * t ** 3 - t + 5
    s = fit_spline(obs_from(t, x), knot_budget=4)
    assert s.knot_count <= 4
    tt = np.linspace(0, 2, 500)
    np.testing.assert_allclose(s.x(tt), 3 * tt ** 3 - tt + 5, atol=1e-6)


def test_spline_constant():
    t = np.linspace(0, 3, 40)
    s = fit_spline(obs_from(t, np.full_like(t, 7.0), np.full_like(t, -3.0)))
    np.testing.assert_allclose(s.x(t), 7.0, atol=1e-9)
    assert weighted_residual(s, obs_from(t, np.full_like(t, 7.0), np.full_like(t, -3.0))) < 1e-18
    assert s.knot_count <= 6


def test_spline_errors_and_domain():
    with pytest.raises(TooFewObservations):
        fit_spline(obs_from(np.arange(3.0), np.arange(3.0)))
    with pytest.raises(ZeroDuration):
        fit_spline(obs_from(np.zeros(5), np.arange(5.0)))
    s = fit_spline(obs_from(np.linspace(0, 1, 10), np.arange(10.0)))
    with pytest.raises(OutOfDomain):
        s.x(1.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_spline_nested_budgets(seed, m):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 6, 120))
    x = 30 * t + 5 * np.sin(2 * t) + rng.normal(0, 0.5, t.size)
    obs = [WeightedObservation(a, b, 0.0, w) for a, b, w in zip(t, x, rng.uniform(1, 10, t.size))]
    coarse = fit_spline(obs, knot_budget=m - 1)
    fine = fit_spline(obs, knot_budget=2 * m - 1)
    single = fit_spline(obs, knot_budget=0)
    assert fine.knot_count == 2 * m - 1
    assert weighted_residual(fine, obs) <= weighted_residual(coarse, obs) * (1 + 1e-9) + 1e-9
    assert weighted_residual(coarse, obs) <= weighted_residual(single, obs) * (1 + 1e-9) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 20.0))
def test_knot_cap(duration):
    t = np.linspace(0, duration, max(int(duration * 30), 10))
    s = fit_spline(obs_from(t, t ** 2))
    assert s.knot_count <= 2 * duration


def _frames_for(spline_obj, t_frames, x_frames, cam="c"):
    return {(cam, j): [(1, WeightedObservation(tf, xf, 0.0, 8.0, cam, j))] for j, (tf, xf) in enumerate(zip(t_frames, x_frames))}


def test_residuals_zero_on_spline():
    t = np.linspace(0, 4, 121)
    x = 50 * t + 2 * t ** 2
    s = fit_spline(obs_from(t, x))
    eps = estimate_residuals({1: s}, _frames_for(1, t[10:20], x[10:20]))
    assert all(abs(e) < 1e-9 for e in eps.values())


def test_residual_recovers_shift_and_clamps():
    t = np.linspace(0, 4, 121)
    s = fit_spline(obs_from(t, 100 * t))
    frames = {("c", 0): [(1, WeightedObservation(2.0, 100 * 2.02, 0, 8.0))],
              ("c", 1): [(1, WeightedObservation(2.5, 100 * 2.58, 0, 8.0))],
              ("c", 2): [(2, WeightedObservation(2.5, 0.0, 0, 8.0))]}
    eps = estimate_residuals({1: s}, frames)
    assert eps[("c", 0)] == pytest.approx(0.02, abs=0.005)
    assert eps[("c", 1)] == pytest.approx(1 / 30 + 0.01, abs=1e-4)
    assert abs(eps[("c", 1)]) <= RESIDUAL_BOUND
    assert eps[("c", 2)] == 0.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=20), st.floats(5, 150))
def test_residuals_bounded(shifts, speed):
    t = np.linspace(0, 5, 151)
    s = fit_spline(obs_from(t, speed * t))
    frames = {("c", j): [(1, WeightedObservation(1.0 + 0.1 * j, speed * (1.0 + 0.1 * j + d), 0, 5.0))] for j, d in enumerate(shifts)}
    eps = estimate_residuals({1: s}, frames)
    assert all(abs(e) <= RESIDUAL_BOUND for e in eps.values())


def test_shift_annotations_cases():
    t = np.linspace(0, 2, 30)
    s = fit_spline(obs_from(t, 10 * t))
    w = 4.0
    on = WeightedObservation(1.0, 10.0, 0.0, w)
    far = WeightedObservation(1.0, 10.0 + 10 / w, 0.0, w)  # 10 px away
    near = WeightedObservation(1.0, 10.0 - 0.5 / w, 0.0, w)  # 0.5 px away
    out, shifts = shift_annotations({1: [on, far, near]}, {1: s}, 2)
    a, b, c = out[1]
    assert a.x == pytest.approx(10.0, abs=1e-9)
    assert (far.x - b.x) * w == pytest.approx(2.0, abs=1e-9)
    assert c.x == pytest.approx(10.0, abs=1e-9)
    assert shifts[1] == pytest.approx(2.0, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 2), st.floats(-30, 30), st.floats(-5, 5), st.floats(0.5, 20)), min_size=1, max_size=15),
       st.sampled_from([1, 2, 3]))
def test_shift_bounded(rows, max_px):
    t = np.linspace(0, 2, 30)
    s = fit_spline(obs_from(t, 10 * t))
    obs = [WeightedObservation(a, b, c, w) for a, b, c, w in rows]
    out, _ = shift_annotations({1: obs}, {1: s}, max_px)
    for o, n in zip(obs, out[1]):
        assert abs(n.x - o.x) * o.weight <= max_px + 1e-9
        assert abs(n.y - o.y) * o.wy <= max_px + 1e-9


def test_regressor_and_synchronizer():
    t = np.linspace(0, 2, 40)
    reg = TrajectorySplineRegressor().fit(t, np.column_stack([5 * t, np.ones_like(t)]))
    np.testing.assert_allclose(reg.predict([1.0]), [[5.0, 1.0]], atol=1e-9)
    assert "knot_budget" in reg.get_params()

    # two cameras, camera b 0.2 s behind; a single vehicle at 80 ft/s
    t_true = np.arange(0, 4, 1 / 30)
    x = 80 * t_true
    a = obs_from(t_true[:80], x[:80], camera="a")
    b = obs_from(t_true[40:] - 0.2, x[40:], camera="b", frames=range(len(t_true) - 40))
    sync = ClockSynchronizer().fit({7: a + b})
    assert sync.offsets_["a"] == 0.0
    assert sync.offsets_["b"] == pytest.approx(0.2, abs=1e-6)
    fixed = sync.transform([FrameStamp("b", 0, t_true[40] - 0.2)])
    assert fixed[0].t_corrected == pytest.approx(t_true[40], abs=1e-4)
