"""Packet-trace analysis: burst statistics, rate estimators, and a rule
cascade that recovers the delivery technique from a timeline alone.

The classifier formalizes what an engineer does by eye on a throughput plot:
look for multiple connections separated by silence, zero-window chatter,
the ratio of steady throughput to the encoding rate, request periodicity,
and whether the download finishes well before playback.  Thresholds are
fitted constants; they were tuned against simulated traces of all five
techniques and are deliberately loose enough to survive ~10% timing jitter.
"""

from bisect import bisect_right
from dataclasses import dataclass, field

from .transport import (
    DATA,
    REQUEST,
    ZERO_WINDOW_AD,
    ZERO_WINDOW_PROBE,
)

THRESHOLDS = {
    "burst_gap_s": 0.050,        # records closer than this belong to one burst
    "silent_gap_s": 10.0,        # on-off style silence between bursts/connections
    "knee_window_s": 2.0,        # throughput window for fast-start knee detection
    "knee_drop_frac": 0.8,       # knee = first window below this fraction of max
    "ads_per_min": 10.0,         # zero-window ads considered "frequent"
    "encoding_band": (0.9, 1.1),  # throughput/encoding-rate ratio for steady pacing
    "throttle_band": (1.1, 3.5),
    "early_margin_s": 15.0,      # media seconds still buffered when download ends
    "min_requests": 5,
    "request_regularity": 0.6,   # fraction of request gaps near the median
    "fc_bandwidth_frac": 0.8,
    "span_coverage": 0.85,       # data span / trace span for the fallback rule
}

ENCODING_RATE = "ENCODING_RATE"
THROTTLE = "THROTTLE"
ON_OFF_PERSISTENT = "ON_OFF_PERSISTENT"
ON_OFF_PER_BURST = "ON_OFF_PER_BURST"
FAST_CACHING = "FAST_CACHING"
DASH = "DASH"
UNKNOWN = "UNKNOWN"


@dataclass(slots=True)
class Burst:
    start: float
    end: float
    nbytes: int
    packets: int


@dataclass
class ClassificationResult:
    label: str
    confidence: float
    evidence: dict = field(default_factory=dict)


@dataclass
class FastStartEstimate:
    end_time: float
    nbytes: int
    media_s: float


def group_bursts(records, gap_s=THRESHOLDS["burst_gap_s"]):
    """Maximal runs of DATA records with inter-packet gaps below gap_s."""
    bursts = []
    for r in records:
        if r.kind != DATA:
            continue
        if bursts and r.time - bursts[-1].end < gap_s:
            b = bursts[-1]
            b.end = r.time
            b.nbytes += r.payload
            b.packets += 1
        else:
            bursts.append(Burst(r.time, r.time, r.payload, 1))
    return bursts


def burst_cdf(bursts):
    """Empirical CDFs of burst sizes and inter-burst intervals.

    Returns (size_points, interval_points), each a list of (value, cum_frac)
    sorted by value.  Intervals are next.start - previous.end.
    """
    sizes = sorted(b.nbytes for b in bursts)
    intervals = sorted(
        bursts[i + 1].start - bursts[i].end for i in range(len(bursts) - 1)
    )

    def cdf(values):
        n = len(values)
        return [(v, (i + 1) / n) for i, v in enumerate(values)]

    return cdf(sizes), cdf(intervals)


def _data_records(records):
    return [r for r in records if r.kind == DATA]


def find_rate_knee(records, window_s=None, drop_frac=None):
    """Start time of the first throughput window after the initial burst whose
    rate falls below drop_frac of the session maximum, or None."""
    window_s = window_s or THRESHOLDS["knee_window_s"]
    drop_frac = drop_frac or THRESHOLDS["knee_drop_frac"]
    data = _data_records(records)
    if len(data) < 2:
        return None
    t0, t_last = data[0].time, data[-1].time
    if t_last - t0 < window_s:
        return None
    n_windows = int((t_last - t0) / window_s)
    sums = [0.0] * n_windows
    for r in data:
        i = int((r.time - t0) / window_s)
        if i >= n_windows:
            continue  # trailing partial window is not comparable to full ones
        sums[i] += r.payload
    peak = max(sums)
    for i, s in enumerate(sums):
        if s < drop_frac * peak:
            return t0 + i * window_s
    return None


def estimate_throttle_factor(records, avg_rate_bps, fast_start_exclusion=None):
    """Steady-phase throughput over the average encoding rate.

    The initial unlimited-rate fill is excluded; by default its end is found
    with the rate-knee heuristic.  Raises ValueError when the trace has no
    steady phase to measure.
    """
    if avg_rate_bps <= 0:
        raise ValueError("avg_rate_bps must be positive")
    data = _data_records(records)
    if not data:
        raise ValueError("no DATA records in trace")
    if fast_start_exclusion is None:
        fast_start_exclusion = find_rate_knee(records) or 0.0
    t_last = data[-1].time
    span = t_last - fast_start_exclusion
    if span <= 0:
        raise ValueError("no steady phase after the fast-start exclusion")
    nbytes = sum(r.payload for r in data if r.time > fast_start_exclusion)
    return (nbytes * 8.0 / span) / avg_rate_bps


def estimate_fast_start(records, avg_rate_bps):
    """Bytes (and media seconds) delivered by the initial unlimited burst.

    Finds the elbow of the cumulative-bytes curve: the first point where
    cum(t) - steady_rate * t stops growing.  Works for traces whose delivery
    continues at or above the steady rate after the initial fill; for
    strongly on-off traces the estimate reflects the first burst peak.
    """
    data = _data_records(records)
    if len(data) < 2:
        raise ValueError("trace too short to estimate the initial burst")
    t0 = data[0].time
    times = [r.time for r in data]
    cums = []
    acc = 0
    for r in data:
        acc += r.payload
        cums.append(acc)
    span = times[-1] - t0
    if span <= 0:
        raise ValueError("degenerate trace")
    # steady slope from the back 60% of the delivery span
    tail_start = t0 + 0.4 * span
    k = bisect_right(times, tail_start)
    if k >= len(times):
        k = len(times) - 1
    rho = (cums[-1] - cums[k]) / max(times[-1] - times[k], 1e-9)  # bytes/s
    values = [c - rho * (t - t0) for t, c in zip(times, cums)]
    vmax = max(values)
    tol = rho * 2.0  # one knee window of steady-rate slack
    i = next(j for j, v in enumerate(values) if v >= vmax - tol)
    while i + 1 < len(values) and values[i + 1] > values[i]:
        i += 1  # climb to the local peak so we sit at the end of the burst
    return FastStartEstimate(
        end_time=times[i],
        nbytes=cums[i],
        media_s=cums[i] * 8.0 / avg_rate_bps,
    )


def estimate_buffer(records, encoding_schedule, start_of_playback):
    """Replay a trace into a buffered-data estimate.

    Buffered bytes = cumulative received - cumulative consumed, where the
    playhead starts at start_of_playback, advances in real time, and freezes
    whenever the estimate would go negative (a stall, by construction).
    Returns [(time, buffer_bytes, buffer_media_s), ...] sampled at every DATA
    arrival.
    """
    from .session import VideoSpec

    video = VideoSpec(encoding_schedule)
    data = _data_records(records)
    series = []
    received = 0
    playhead = 0.0
    wall = start_of_playback
    for r in data:
        if r.time > wall and wall >= start_of_playback:
            dt = r.time - max(wall, start_of_playback)
            if r.time >= start_of_playback:
                dt = r.time - max(wall, start_of_playback)
                avail = video.media_time(received) - playhead
                playhead += min(max(dt, 0.0), max(avail, 0.0))
                playhead = min(playhead, float(video.duration_s))
        wall = max(wall, r.time)
        received += r.payload
        consumed = video.cum_bytes(playhead)
        series.append(
            (r.time, received - consumed, video.media_time(received) - playhead)
        )
    return series


def _harvest(records):
    """One pass of feature extraction shared by the classifier rules."""
    data = _data_records(records)
    feats = {
        "data_packets": len(data),
        "data_bytes": sum(r.payload for r in data),
        "probes": sum(1 for r in records if r.kind == ZERO_WINDOW_PROBE),
        "ads": sum(1 for r in records if r.kind == ZERO_WINDOW_AD),
        "requests": sum(1 for r in records if r.kind == REQUEST),
        "connections": len({r.conn_id for r in data}),
    }
    if not data:
        return feats
    bursts = group_bursts(records)
    gaps = [bursts[i + 1].start - bursts[i].end for i in range(len(bursts) - 1)]
    long_gaps = [g for g in gaps if g >= THRESHOLDS["silent_gap_s"]]
    feats["bursts"] = len(bursts)
    feats["max_burst_gap_s"] = max(gaps) if gaps else 0.0
    feats["long_gaps"] = len(long_gaps)

    # silence between consecutive connections' activity spans (any record kind)
    spans = {}
    for r in records:
        a = spans.setdefault(r.conn_id, [r.time, r.time])
        a[0] = min(a[0], r.time)
        a[1] = max(a[1], r.time)
    ordered = sorted(spans.values())
    conn_gaps = [
        max(0.0, ordered[i + 1][0] - ordered[i][1]) for i in range(len(ordered) - 1)
    ]
    if conn_gaps:
        conn_gaps.sort()
        feats["median_conn_gap_s"] = conn_gaps[len(conn_gaps) // 2]
    else:
        feats["median_conn_gap_s"] = 0.0

    t_first, t_last = data[0].time, data[-1].time
    trace_end = records[-1].time
    feats["data_span_s"] = t_last - t_first
    feats["trace_span_s"] = trace_end - records[0].time
    feats["span_coverage"] = (
        feats["data_span_s"] / feats["trace_span_s"] if feats["trace_span_s"] > 0 else 0.0
    )
    minutes = max(feats["data_span_s"] / 60.0, 1e-9)
    feats["ads_per_min"] = feats["ads"] / minutes

    gaps_req = []
    req_times = [r.time for r in records if r.kind == REQUEST]
    for i in range(len(req_times) - 1):
        gaps_req.append(req_times[i + 1] - req_times[i])
    if gaps_req:
        srt = sorted(gaps_req)
        med = srt[len(srt) // 2]
        near = sum(1 for g in gaps_req if med > 0 and 0.3 * med <= g <= 3.0 * med)
        feats["request_gap_median_s"] = med
        feats["request_regularity"] = near / len(gaps_req)
    else:
        feats["request_gap_median_s"] = 0.0
        feats["request_regularity"] = 0.0
    return feats


def classify(records, avg_rate_bps, path_bandwidth_bps):
    """Label a packet timeline with the delivery technique that produced it.

    Rules are tried in a fixed order; the first match wins and sets the
    confidence from its decisive margin.  A trace that matches nothing is
    UNKNOWN with the collected evidence attached.
    """
    th = THRESHOLDS
    feats = _harvest(records)
    if feats["data_packets"] == 0:
        return ClassificationResult(UNKNOWN, 0.0, feats)

    try:
        ratio = estimate_throttle_factor(records, avg_rate_bps)
    except ValueError:
        ratio = None
    feats["steady_ratio"] = ratio
    data = _data_records(records)
    t_last_data = data[-1].time
    knee = find_rate_knee(records)
    fs_end = knee if knee is not None else data[0].time
    media_total_s = feats["data_bytes"] * 8.0 / avg_rate_bps
    feats["early_margin_s"] = media_total_s - (t_last_data - fs_end)
    feats["bandwidth_frac"] = (
        (feats["data_bytes"] * 8.0 / max(feats["data_span_s"], 1e-9)) / path_bandwidth_bps
    )

    def clip01(x):
        return max(0.0, min(1.0, x))

    # 1: several connections separated by real silence -> burst-per-connection
    if feats["connections"] >= 2 and feats["median_conn_gap_s"] >= th["silent_gap_s"]:
        margin = (feats["median_conn_gap_s"] - th["silent_gap_s"]) / th["silent_gap_s"]
        return ClassificationResult(ON_OFF_PER_BURST, 0.5 + 0.5 * clip01(margin), feats)

    # 2: one connection kept alive through long gaps by zero-window probes
    if feats["probes"] >= 2 and feats["long_gaps"] >= 1:
        margin = (feats["max_burst_gap_s"] - th["silent_gap_s"]) / th["silent_gap_s"]
        return ClassificationResult(ON_OFF_PERSISTENT, 0.5 + 0.5 * clip01(margin), feats)

    # 3: chatty zero-window advertisements with ~encoding-rate throughput
    lo, hi = th["encoding_band"]
    if feats["ads_per_min"] >= th["ads_per_min"] and ratio is not None and lo <= ratio <= hi:
        margin = (0.1 - abs(ratio - 1.0)) / 0.05
        return ClassificationResult(ENCODING_RATE, 0.5 + 0.5 * clip01(margin), feats)

    # 4: clean pacing above the encoding rate that finishes early
    lo, hi = th["throttle_band"]
    if (
        feats["probes"] + feats["ads"] <= 2
        and ratio is not None
        and lo < ratio <= hi
        and feats["early_margin_s"] >= th["early_margin_s"]
    ):
        dist = min(ratio - lo, hi - ratio)
        return ClassificationResult(THROTTLE, 0.5 + 0.5 * clip01(dist / 0.12), feats)

    # 5: periodic request/response pairs -> segmented delivery
    if (
        feats["requests"] >= th["min_requests"]
        and feats["request_regularity"] >= th["request_regularity"]
    ):
        conf = min(1.0, 0.75 + 0.005 * feats["requests"] + 0.2 * feats["request_regularity"])
        return ClassificationResult(DASH, conf, feats)

    # 6: the path itself is the limiter and the download finishes early
    if (
        feats["bandwidth_frac"] >= th["fc_bandwidth_frac"]
        and feats["early_margin_s"] >= th["early_margin_s"]
    ):
        margin = (feats["bandwidth_frac"] - th["fc_bandwidth_frac"]) / 0.15
        return ClassificationResult(FAST_CACHING, 0.5 + 0.5 * clip01(margin), feats)

    # 7: fallback — continuous delivery pinned at the encoding rate looks like
    # client-paced streaming no matter what the server intended (a bandwidth
    # bottleneck flattens every technique into this shape)
    lo, hi = th["encoding_band"]
    if (
        ratio is not None
        and lo <= ratio <= hi
        and feats["max_burst_gap_s"] < th["silent_gap_s"]
        and feats["span_coverage"] >= th["span_coverage"]
    ):
        return ClassificationResult(ENCODING_RATE, 0.6, feats)

    return ClassificationResult(UNKNOWN, 0.0, feats)
