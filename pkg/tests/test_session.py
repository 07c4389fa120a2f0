import random
import statistics

import pytest

from streamsim.analysis import group_bursts
from streamsim.session import (
    DASH,
    ENCODING_RATE,
    FAST_CACHING,
    ON_OFF,
    PER_BURST,
    PERSISTENT,
    THROTTLE,
    DeadlockError,
    QualityLevel,
    StreamingSession,
    TechniqueSpec,
    VideoSpec,
    dash_pick_quality,
)
from streamsim.transport import (
    CLOSE_FIN,
    CLOSE_RST,
    DATA,
    PathSpec,
    ZERO_WINDOW_AD,
    ZERO_WINDOW_PROBE,
)

PATH = PathSpec(6_000_000, rtt_s=0.05)


def run(video, technique, path=PATH, **kw):
    session = StreamingSession(video, technique, path, **kw)
    metrics = session.run()
    return session, metrics


def kinds_of(session):
    return [r.kind for r in session.transport.records]


def assert_conserved(session, metrics):
    assert metrics.received_total == pytest.approx(
        metrics.consumed_bytes + metrics.wasted_bytes, abs=1e-6
    )
    assert metrics.received_total == sum(metrics.connection_bytes.values())
    assert all(b >= -1e-9 for _, b, _ in metrics.buffer_series)


LADDER = (
    QualityLevel(200_000, "lo", 5.0),
    QualityLevel(400_000, "mid", 5.0),
    QualityLevel(800_000, "hi", 5.0),
)


def ladder_video(duration_s=60, rate_bps=400_000):
    return VideoSpec.constant(duration_s, rate_bps, ladder=LADDER)


# -- basics ----------------------------------------------------------------


def test_fast_start_is_unthrottled_then_playback_begins():
    video = VideoSpec.constant(60, 400_000)
    _, m = run(video, TechniqueSpec(ENCODING_RATE, fast_start_s=10.0))
    # 500 kB at the 750 kB/s path rate, plus one request round trip
    assert m.startup_s == pytest.approx(0.72, abs=0.02)
    assert m.fast_start_end_t == m.startup_s
    assert m.watched_s == pytest.approx(60.0)
    assert m.stalls == []


def test_every_technique_conserves_bytes():
    video = VideoSpec.constant(60, 500_000)
    specs = [
        TechniqueSpec(ENCODING_RATE, fast_start_s=5.0),
        TechniqueSpec(THROTTLE, fast_start_s=5.0, throttle_factor=1.25),
        TechniqueSpec(THROTTLE, fast_start_s=5.0, throttle_factor=1.25, burst_size=65_536),
        TechniqueSpec(ON_OFF, fast_start_s=20.0, low_watermark_s=5.0, high_watermark_s=20.0),
        TechniqueSpec(
            ON_OFF,
            fast_start_s=20.0,
            low_watermark_s=5.0,
            high_watermark_s=20.0,
            connection_mode=PER_BURST,
        ),
        TechniqueSpec(FAST_CACHING, fast_start_s=5.0),
    ]
    for spec in specs:
        session, m = run(video, spec)
        assert_conserved(session, m)
        assert m.watched_s == pytest.approx(60.0), spec.kind
    session, m = run(ladder_video(), TechniqueSpec(DASH, fast_start_s=5.0, dash_target_s=20.0))
    assert_conserved(session, m)


def test_full_watch_ends_with_fin_partial_with_rst():
    video = VideoSpec.constant(60, 400_000)
    session, m = run(video, TechniqueSpec(ENCODING_RATE, fast_start_s=5.0))
    assert kinds_of(session)[-1] == CLOSE_FIN

    session, m = run(
        video, TechniqueSpec(ENCODING_RATE, fast_start_s=5.0), watched_fraction=0.5
    )
    assert m.watched_s == pytest.approx(30.0)
    assert kinds_of(session)[-1] == CLOSE_RST
    # the buffered surplus is abandoned, not played
    assert m.wasted_bytes > 0


# -- wire signatures per technique ----------------------------------------


def test_encoding_rate_fills_the_receive_buffer_and_advertises():
    video = VideoSpec.constant(120, 500_000)
    session, m = run(video, TechniqueSpec(ENCODING_RATE, fast_start_s=5.0))
    ads = kinds_of(session).count(ZERO_WINDOW_AD)
    assert ads / (m.delivery_end_t / 60.0) >= 10.0
    # delivery is stretched across most of the session
    assert m.delivery_end_t >= 0.9 * m.duration_s


def test_throttle_paces_at_factor_times_encoding_rate():
    video = VideoSpec.constant(120, 500_000)
    session, m = run(video, TechniqueSpec(THROTTLE, fast_start_s=5.0, throttle_factor=1.25))
    a, b = m.fast_start_end_t + 5.0, m.delivery_end_t
    steady = sum(
        r.payload for r in session.transport.records if r.kind == DATA and a < r.time <= b
    )
    rate = steady * 8.0 / (b - a)
    assert rate == pytest.approx(1.25 * 500_000, rel=0.05)
    # pacing below the path rate keeps the receive window open
    assert kinds_of(session).count(ZERO_WINDOW_AD) <= 2


def test_bursty_throttle_spaces_bursts_by_size_over_rate():
    video = VideoSpec.constant(120, 500_000)
    spec = TechniqueSpec(THROTTLE, fast_start_s=5.0, throttle_factor=1.25, burst_size=65_536)
    session, m = run(video, spec)
    bursts = group_bursts(session.transport.records)
    steady = [b for b in bursts if b.start > m.fast_start_end_t + 2.0]
    spacing = statistics.median(
        steady[i + 1].start - steady[i].start for i in range(len(steady) - 1)
    )
    assert spacing == pytest.approx(65_536 * 8.0 / (1.25 * 500_000), abs=0.02)
    assert statistics.median(b.nbytes for b in steady) == 65_536


def test_on_off_persistent_keeps_one_connection_with_probes():
    video = VideoSpec.constant(120, 500_000)
    spec = TechniqueSpec(
        ON_OFF, fast_start_s=30.0, low_watermark_s=5.0, high_watermark_s=30.0
    )
    session, m = run(video, spec)
    assert m.connection_count == 1
    assert kinds_of(session).count(ZERO_WINDOW_PROBE) >= 2
    bursts = group_bursts(session.transport.records)
    gaps = [bursts[i + 1].start - bursts[i].end for i in range(len(bursts) - 1)]
    assert max(gaps) >= 10.0


def test_on_off_per_burst_opens_a_connection_per_refill():
    video = VideoSpec.constant(120, 500_000)
    spec = TechniqueSpec(
        ON_OFF,
        fast_start_s=30.0,
        low_watermark_s=5.0,
        high_watermark_s=30.0,
        connection_mode=PER_BURST,
    )
    session, m = run(video, spec)
    # 90 s of media beyond the initial fill, ~25 s of media per refill
    assert 4 <= m.connection_count <= 6
    assert kinds_of(session).count(CLOSE_RST) == m.connection_count
    assert kinds_of(session).count(ZERO_WINDOW_PROBE) == 0


def test_fast_caching_downloads_at_path_speed():
    video = VideoSpec.constant(60, 1_000_000)
    session, m = run(video, TechniqueSpec(FAST_CACHING, fast_start_s=5.0))
    # 7.5 MB over a 750 kB/s path: done in a sixth of the playback time
    assert m.delivery_end_t < 0.25 * m.duration_s
    assert m.wasted_bytes == 0.0
    assert m.watched_s == pytest.approx(60.0)


def test_capped_store_reconnects_and_rerequests_from_the_keyframe():
    video = VideoSpec.constant(60, 800_000, keyframe_spacing=350_000)
    spec = TechniqueSpec(
        THROTTLE,
        fast_start_s=5.0,
        throttle_factor=2.0,
        buffer_cap=1_000_000,
        keyframe_waste=True,
        reopen_headroom=200_000,
    )
    session, m = run(video, spec)
    assert m.connection_count >= 3
    assert all(b <= 1_000_000 + 1e-6 for _, b, _ in m.buffer_series)
    # every reconnect resends the partial key frame already delivered
    assert m.wasted_bytes > 0
    assert m.received_total > video.total_bytes
    assert_conserved(session, m)


# -- DASH ------------------------------------------------------------------


def test_dash_requests_every_segment_and_adapts_upward():
    session, m = run(
        ladder_video(), TechniqueSpec(DASH, fast_start_s=5.0, dash_target_s=20.0)
    )
    # 12 segments; the first at the playlist default, the rest at the top level
    assert m.dash_quality_history == [0] + [2] * 11
    assert m.received_total == 125_000 + 11 * 500_000
    assert m.stalls == []
    assert_conserved(session, m)


def test_dash_holds_the_lowest_level_on_a_narrow_path():
    session, m = run(
        ladder_video(),
        TechniqueSpec(DASH, fast_start_s=5.0, dash_target_s=20.0),
        path=PathSpec(300_000, rtt_s=0.05),
    )
    assert set(m.dash_quality_history) == {0}
    assert m.watched_s == pytest.approx(60.0)


def test_dash_buffer_stays_near_target():
    session, m = run(
        ladder_video(120), TechniqueSpec(DASH, fast_start_s=5.0, dash_target_s=20.0)
    )
    seg = LADDER[0].segment_s
    tail = [bm for t, _, bm in m.buffer_series if t > 40.0 and t < m.delivery_end_t]
    assert tail
    assert max(tail) <= 20.0 + seg + 1e-6


def test_dash_refetch_replaces_recent_unplayed_segments():
    video = ladder_video()
    spec = TechniqueSpec(
        DASH, fast_start_s=5.0, dash_target_s=20.0, dash_refetch_depth=2
    )
    session = StreamingSession(video, spec, PATH)
    session._segments = [(0.0, 5.0, 125_000), (5.0, 5.0, 125_000), (10.0, 5.0, 125_000)]
    session.playhead = 2.5
    session.received = 375_000
    session._dash_refetch(2)  # jump to the 800 kbps level
    # two newest unplayed segments re-downloaded, old copies kept on the books
    assert session.wasted == 2 * 500_000
    assert session.received == 375_000 + 2 * 500_000
    assert [n for _, _, n in session._segments] == [125_000] * 3


def test_dash_refetch_can_bill_the_replaced_copies_instead():
    video = ladder_video()
    spec = TechniqueSpec(
        DASH,
        fast_start_s=5.0,
        dash_target_s=20.0,
        dash_refetch_depth=2,
        dash_replaced_counts_waste=True,
    )
    session = StreamingSession(video, spec, PATH)
    session._segments = [(0.0, 5.0, 125_000), (5.0, 5.0, 125_000), (10.0, 5.0, 125_000)]
    session.playhead = 2.5
    session.received = 375_000
    session._dash_refetch(2)
    assert session.wasted == 2 * 125_000
    assert [n for _, _, n in session._segments] == [125_000, 500_000, 500_000]


def test_dash_pick_quality_takes_highest_affordable_level():
    assert dash_pick_quality(LADDER, 6_000_000, 1.0) == 2
    assert dash_pick_quality(LADDER, 450_000, 1.0) == 1
    assert dash_pick_quality(LADDER, 450_000, 0.5) == 0
    # nothing affordable: fall back to the cheapest level
    assert dash_pick_quality(LADDER, 50_000, 1.0) == 0
    with pytest.raises(ValueError):
        dash_pick_quality([], 1e6, 1.0)


# -- degradation and guards ------------------------------------------------


def test_underprovisioned_path_stalls_but_finishes():
    video = VideoSpec.constant(60, 500_000)
    session, m = run(
        video,
        TechniqueSpec(ENCODING_RATE, fast_start_s=5.0),
        path=PathSpec(400_000, rtt_s=0.05),
    )
    assert len(m.stalls) >= 1
    assert m.stall_total_s > 5.0
    assert m.watched_s == pytest.approx(60.0)
    assert m.duration_s > 70.0
    assert_conserved(session, m)


def test_deadlock_guard_trips_when_nothing_moves():
    video = VideoSpec.constant(60, 500_000)
    with pytest.raises(DeadlockError):
        run(
            video,
            TechniqueSpec(ENCODING_RATE, fast_start_s=30.0),
            path=PathSpec(1_000, rtt_s=0.05),
            max_sim_time=5.0,
        )


def test_same_seed_reproduces_the_trace_exactly():
    video = VideoSpec.constant(60, 500_000)
    spec = TechniqueSpec(THROTTLE, fast_start_s=5.0, throttle_factor=1.25, burst_size=65_536)
    path = PathSpec(6_000_000, rtt_s=0.05, jitter=0.1)
    traces = []
    for _ in range(2):
        session, _ = run(video, spec, path=path, seed=7)
        traces.append([(r.time, r.kind, r.payload) for r in session.transport.records])
    assert traces[0] == traces[1]
    session, _ = run(video, spec, path=path, seed=8)
    assert [(r.time, r.kind, r.payload) for r in session.transport.records] != traces[0]


# -- parameter validation --------------------------------------------------


def test_technique_validation_rejects_bad_specs():
    bad = [
        TechniqueSpec("TELEPATHY"),
        TechniqueSpec(ENCODING_RATE, fast_start_s=-1.0),
        TechniqueSpec(THROTTLE, throttle_factor=1.0),
        TechniqueSpec(THROTTLE, throttle_factor=2.0, burst_size=0),
        TechniqueSpec(THROTTLE, throttle_factor=2.0, burst_size=1, buffer_cap=100),
        TechniqueSpec(ON_OFF, low_watermark_s=5.0),
        TechniqueSpec(ON_OFF, low_watermark_s=20.0, high_watermark_s=5.0),
        TechniqueSpec(ON_OFF, low_watermark_s=1.0, high_watermark_s=5.0, connection_mode="BOTH"),
        TechniqueSpec(DASH),
        TechniqueSpec(DASH, dash_target_s=10.0, dash_safety=0.0),
    ]
    for spec in bad:
        with pytest.raises(ValueError):
            spec.validate()


def test_session_argument_validation():
    video = VideoSpec.constant(10, 100_000)
    with pytest.raises(ValueError):
        StreamingSession(video, TechniqueSpec(ENCODING_RATE), PATH, watched_fraction=0.0)
    with pytest.raises(ValueError):
        StreamingSession(video, TechniqueSpec(ENCODING_RATE), PATH, watched_fraction=1.5)
    with pytest.raises(ValueError):
        StreamingSession(video, TechniqueSpec(ENCODING_RATE), PATH, tick_s=0.0)


def test_video_spec_schedule_arithmetic():
    video = VideoSpec.constant(60, 500_000)
    assert video.total_bytes == 3_750_000
    assert video.cum_bytes(0) == 0.0
    assert video.cum_bytes(60) == 3_750_000.0
    assert video.cum_bytes(1.5) == pytest.approx(1.5 * 62_500)
    assert video.media_time(video.cum_bytes(17.3)) == pytest.approx(17.3)
    assert video.bytes_between(10.0, 20.0) == pytest.approx(625_000)

    vbr = VideoSpec.vbr(60, 500_000, amplitude=0.4)
    assert vbr.total_bytes == 3_750_000
    assert max(vbr.schedule) > min(vbr.schedule)

    with pytest.raises(ValueError):
        VideoSpec([])
    with pytest.raises(ValueError):
        VideoSpec([-1, 5])
    with pytest.raises(ValueError):
        VideoSpec.vbr(60, 500_000, amplitude=1.5)


def test_randomized_sessions_always_balance_the_books():
    rng = random.Random(11)
    for trial in range(8):
        duration = rng.choice([30, 45, 60])
        rate = rng.choice([250_000, 500_000, 1_000_000])
        video = VideoSpec.constant(duration, rate)
        spec = rng.choice(
            [
                TechniqueSpec(ENCODING_RATE, fast_start_s=rng.choice([0.0, 5.0])),
                TechniqueSpec(
                    THROTTLE,
                    fast_start_s=5.0,
                    throttle_factor=rng.choice([1.25, 2.0]),
                    burst_size=rng.choice([None, 65_536]),
                ),
                TechniqueSpec(
                    ON_OFF,
                    fast_start_s=10.0,
                    low_watermark_s=2.0,
                    high_watermark_s=10.0,
                    connection_mode=rng.choice([PERSISTENT, PER_BURST]),
                ),
                TechniqueSpec(FAST_CACHING, fast_start_s=2.0),
            ]
        )
        session, m = run(
            video,
            spec,
            path=PathSpec(6_000_000, rtt_s=0.05, jitter=rng.choice([0.0, 0.1])),
            watched_fraction=rng.choice([0.5, 1.0]),
            seed=trial,
        )
        assert_conserved(session, m)
        assert m.watched_s > 0, f"trial {trial}"
