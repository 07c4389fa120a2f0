import pytest

from streamsim.analysis import (
    THRESHOLDS,
    UNKNOWN,
    burst_cdf,
    classify,
    estimate_buffer,
    estimate_fast_start,
    estimate_throttle_factor,
    find_rate_knee,
    group_bursts,
)
from streamsim.transport import DATA, DOWN, REQUEST, UP, PacketRecord


def rec(time, payload, kind=DATA, conn=1):
    return PacketRecord(time, DOWN if payload else UP, payload, kind, conn)


def burst_trace(payload=125_000, steady=6250, t_burst=1.0, t_end=50.0, step=0.1):
    """Initial full-rate fill followed by a steady trickle."""
    out = []
    t = 0.0
    while t < t_burst - 1e-9:
        out.append(rec(round(t, 6), payload))
        t += step
    while t < t_end - 1e-9:
        out.append(rec(round(t, 6), steady))
        t += step
    return out


def test_bursts_group_on_packet_gaps():
    records = [
        rec(0.00, 100),
        rec(0.01, 200),
        rec(0.02, 300),
        rec(1.00, 400),
        rec(1.01, 500),
        rec(1.50, 0, kind=REQUEST),  # control records never join bursts
        rec(3.00, 600),
    ]
    bursts = group_bursts(records, gap_s=0.05)
    assert [(b.start, b.end, b.nbytes, b.packets) for b in bursts] == [
        (0.0, 0.02, 600, 3),
        (1.0, 1.01, 900, 2),
        (3.0, 3.0, 600, 1),
    ]


def test_burst_cdf_steps_by_thirds():
    bursts = group_bursts(
        [rec(0.0, 1), rec(10.0, 2), rec(20.0, 3)], gap_s=0.05
    )
    sizes, intervals = burst_cdf(bursts)
    assert sizes == [(1, pytest.approx(1 / 3)), (2, pytest.approx(2 / 3)), (3, pytest.approx(1.0))]
    assert [v for v, _ in intervals] == [10.0, 10.0]
    assert intervals[-1][1] == pytest.approx(1.0)


def test_rate_knee_lands_on_the_first_slow_window():
    records = burst_trace()
    assert find_rate_knee(records) == pytest.approx(2.0)


def test_rate_knee_none_for_flat_or_short_traces():
    flat = [rec(t / 10, 1000) for t in range(0, 100)]
    assert find_rate_knee(flat) is None
    assert find_rate_knee([rec(0.0, 1000)]) is None


def test_throttle_factor_on_a_synthetic_pace():
    # steady 7812 B per 100 ms is 624,960 bps, a 1.25x pace over 500 kbps
    records = burst_trace(steady=7812, t_burst=2.0, t_end=30.0)
    factor = estimate_throttle_factor(records, avg_rate_bps=500_000)
    assert factor == pytest.approx(1.25, rel=0.01)


def test_throttle_factor_honours_explicit_exclusion():
    records = [rec(float(t), 6250) for t in range(0, 40)]
    factor = estimate_throttle_factor(records, 500_000, fast_start_exclusion=0.0)
    # 6250 B/s == 50 kbps over a 500 kbps encoding is a 0.1 ratio
    assert factor == pytest.approx(0.1, rel=0.05)


def test_throttle_factor_error_cases():
    with pytest.raises(ValueError):
        estimate_throttle_factor([], 500_000)
    with pytest.raises(ValueError):
        estimate_throttle_factor([rec(0.0, 100)], 0)
    with pytest.raises(ValueError):
        estimate_throttle_factor([rec(0.0, 100)], 500_000, fast_start_exclusion=0.0)


def test_fast_start_estimate_finds_the_elbow():
    records = burst_trace()  # 1.25 MB burst, then exactly the encoding rate
    est = estimate_fast_start(records, avg_rate_bps=500_000)
    assert est.nbytes == 1_250_000
    assert est.media_s == pytest.approx(20.0, rel=1e-6)
    assert est.end_time == pytest.approx(0.9)


def test_fast_start_estimate_needs_data():
    with pytest.raises(ValueError):
        estimate_fast_start([rec(0.0, 100)], 500_000)


def test_buffer_replay_tracks_received_minus_consumed():
    schedule = [100] * 10  # 1 kB of media over 10 s
    records = [rec(0.0, 500), rec(1.0, 300), rec(2.0, 200)]
    series = estimate_buffer(records, schedule, start_of_playback=0.0)
    assert [(t, b, pytest.approx(m)) for t, b, m in [
        (0.0, 500, 5.0),
        (1.0, 700, 7.0),
        (2.0, 800, 8.0),
    ]] == [(t, b, m) for t, b, m in series]


def test_buffer_replay_freezes_the_playhead_on_a_stall():
    schedule = [100] * 10
    records = [rec(0.0, 100), rec(5.0, 900)]
    series = estimate_buffer(records, schedule, start_of_playback=0.0)
    # only 1 s of media existed, so the playhead stalls at 1.0 until t = 5
    t, buffered, media = series[-1]
    assert (t, buffered) == (5.0, 900)
    assert media == pytest.approx(9.0)


def test_classifier_returns_unknown_on_empty_trace():
    result = classify([], avg_rate_bps=500_000, path_bandwidth_bps=6_000_000)
    assert result.label == UNKNOWN
    assert result.confidence == 0.0


def test_classifier_thresholds_are_complete():
    expected = {
        "burst_gap_s",
        "silent_gap_s",
        "knee_window_s",
        "knee_drop_frac",
        "ads_per_min",
        "encoding_band",
        "throttle_band",
        "early_margin_s",
        "min_requests",
        "request_regularity",
        "fc_bandwidth_frac",
        "span_coverage",
    }
    assert expected == set(THRESHOLDS)
