"""Streaming session engine: five delivery techniques over one transport pipe.

Techniques, named by what the client/server pair actually does on the wire:

  ENCODING_RATE  client reads from the socket at the media consumption rate,
                 so receive-window flow control paces the sender and the trace
                 fills with zero-window advertisements.
  THROTTLE       server caps its send rate at throttle_factor x encoding rate
                 after a fast start; optionally ships fixed-size bursts whose
                 spacing is derived from the burst size and throttled rate.
                 An optional playback store cap turns this into the
                 multi-connection variant: the client resets the connection
                 when the store fills and re-requests once space frees, wasting
                 the partially held key frame on every reconnect.
  ON_OFF         client drains the socket in large bursts between a low and a
                 high watermark of buffered media; the connection either stays
                 up between bursts (zero-window probes keep it alive) or is
                 torn down and re-opened per burst with a byte-range request.
  FAST_CACHING   no server pacing at all; the whole file arrives as fast as
                 the path allows.
  DASH           client fetches ~equal-duration segments from a quality ladder
                 and keeps a target amount of buffered media, rate-adapting on
                 a harmonic-mean throughput estimate.

Every session starts with a fast start: unlimited-rate delivery until a
configured amount of media is buffered, at which point playback begins.

Byte accounting is exact: every received byte is classified as consumed,
still buffered, or wasted, and the identity is asserted each tick.
"""

import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field

from .kernel import Kernel
from .transport import DATA, Transport

ENCODING_RATE = "ENCODING_RATE"
THROTTLE = "THROTTLE"
ON_OFF = "ON_OFF"
FAST_CACHING = "FAST_CACHING"
DASH = "DASH"
KINDS = (ENCODING_RATE, THROTTLE, ON_OFF, FAST_CACHING, DASH)

PERSISTENT = "PERSISTENT"
PER_BURST = "PER_BURST"

FAST_START = "FAST_START"
STEADY = "STEADY"
DRAINED = "DRAINED"

_BIG = 1 << 62


class DeadlockError(RuntimeError):
    """Raised when a session stops making progress (diagnostic, not a crash)."""


@dataclass(frozen=True)
class QualityLevel:
    bandwidth_bps: float
    label: str
    segment_s: float

    def __post_init__(self):
        if self.bandwidth_bps <= 0 or self.segment_s <= 0:
            raise ValueError("quality level needs positive bandwidth and segment duration")


class VideoSpec:
    """A clip as a per-second byte schedule plus optional quality ladder."""

    def __init__(self, schedule, keyframe_spacing=0, ladder=None):
        schedule = [int(b) for b in schedule]
        if not schedule or any(b < 0 for b in schedule):
            raise ValueError("schedule must be a non-empty list of non-negative byte counts")
        self.schedule = schedule
        self.duration_s = len(schedule)
        self.total_bytes = sum(schedule)
        if self.total_bytes <= 0:
            raise ValueError("video has no bytes")
        self.avg_rate_bps = 8.0 * self.total_bytes / self.duration_s
        self.keyframe_spacing = int(keyframe_spacing)
        self.ladder = list(ladder) if ladder else []
        # cumulative bytes at whole-second boundaries, C[i] = bytes of media [0, i)
        cum = [0]
        for b in schedule:
            cum.append(cum[-1] + b)
        self._cum = cum

    @classmethod
    def constant(cls, duration_s, rate_bps, **kw):
        duration_s = int(duration_s)
        total = round(duration_s * rate_bps / 8.0)
        base = total // duration_s
        schedule = [base] * duration_s
        schedule[-1] += total - base * duration_s
        return cls(schedule, **kw)

    @classmethod
    def vbr(cls, duration_s, rate_bps, amplitude, period_s=30.0, **kw):
        """Sinusoidal variable bitrate around rate_bps; amplitude in [0, 1)."""
        duration_s = int(duration_s)
        if not 0.0 <= amplitude < 1.0:
            raise ValueError("vbr amplitude must be in [0, 1)")
        total = round(duration_s * rate_bps / 8.0)
        base = total / duration_s
        schedule = [
            max(0, round(base * (1.0 + amplitude * math.sin(2.0 * math.pi * i / period_s))))
            for i in range(duration_s)
        ]
        schedule[-1] += total - sum(schedule)  # keep the total exact
        return cls(schedule, **kw)

    def cum_bytes(self, t):
        """Media bytes in [0, t) of media time."""
        if t <= 0:
            return 0.0
        if t >= self.duration_s:
            return float(self.total_bytes)
        i = int(t)
        return self._cum[i] + (t - i) * self.schedule[i]

    def bytes_between(self, t0, t1):
        return self.cum_bytes(t1) - self.cum_bytes(t0)

    def media_time(self, nbytes):
        """Inverse of cum_bytes: media seconds covered by the first nbytes."""
        if nbytes <= 0:
            return 0.0
        if nbytes >= self.total_bytes:
            return float(self.duration_s)
        i = bisect_right(self._cum, nbytes) - 1
        rem = nbytes - self._cum[i]
        if self.schedule[i] == 0:
            return float(i)
        return i + rem / self.schedule[i]


@dataclass
class TechniqueSpec:
    kind: str
    fast_start_s: float = 0.0
    throttle_factor: float | None = None
    burst_size: int | None = None
    connection_mode: str = PERSISTENT
    low_watermark_s: float | None = None
    high_watermark_s: float | None = None
    buffer_cap: int | None = None
    keyframe_waste: bool = False
    reopen_headroom: int | None = None
    dash_target_s: float | None = None
    dash_safety: float = 1.0
    dash_refetch_depth: int = 0
    dash_replaced_counts_waste: bool = False

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError("unknown technique kind %r" % self.kind)
        if self.fast_start_s < 0:
            raise ValueError("fast_start_s must be >= 0")
        if self.kind == THROTTLE:
            if self.throttle_factor is None or self.throttle_factor <= 1.0:
                raise ValueError("throttle_factor must be > 1")
            if self.burst_size is not None and self.burst_size <= 0:
                raise ValueError("burst_size must be positive")
            if self.buffer_cap is not None:
                if self.buffer_cap <= 0:
                    raise ValueError("buffer_cap must be positive")
                if self.burst_size is not None:
                    raise ValueError("buffer_cap and burst_size do not combine")
        if self.kind == ON_OFF:
            lo, hi = self.low_watermark_s, self.high_watermark_s
            if lo is None or hi is None or not 0 <= lo < hi:
                raise ValueError("need watermarks with 0 <= low < high")
            if self.connection_mode not in (PERSISTENT, PER_BURST):
                raise ValueError("connection_mode must be PERSISTENT or PER_BURST")
        if self.kind == DASH:
            if self.dash_target_s is None or self.dash_target_s <= 0:
                raise ValueError("dash_target_s must be > 0")
            if not 0.0 < self.dash_safety <= 1.0:
                raise ValueError("dash_safety must be in (0, 1]")
        return self


def dash_pick_quality(ladder, bw_estimate_bps, safety):
    """Index of the highest level with bandwidth <= safety * estimate.

    Falls back to the lowest-bandwidth level when none qualifies.  The very
    first request of a session does not come through here; players start on
    the playlist's default (first) entry.
    """
    if not ladder:
        raise ValueError("empty quality ladder")
    budget = safety * bw_estimate_bps
    best = None
    for i, level in enumerate(ladder):
        if level.bandwidth_bps <= budget:
            if best is None or level.bandwidth_bps > ladder[best].bandwidth_bps:
                best = i
    if best is not None:
        return best
    lowest = 0
    for i, level in enumerate(ladder):
        if level.bandwidth_bps < ladder[lowest].bandwidth_bps:
            lowest = i
    return lowest


@dataclass
class Stall:
    start: float
    end: float | None = None


@dataclass
class SessionMetrics:
    kind: str
    duration_s: float = 0.0            # wall-clock session length
    watched_s: float = 0.0             # media seconds actually played
    received_total: int = 0
    consumed_bytes: float = 0.0
    wasted_bytes: float = 0.0
    startup_s: float = 0.0             # delay until playback began
    fast_start_end_t: float = 0.0
    delivery_end_t: float = 0.0        # time of the last DATA record
    end_t: float = 0.0
    stalls: list = field(default_factory=list)
    stall_total_s: float = 0.0
    connection_bytes: dict = field(default_factory=dict)
    buffer_series: list = field(default_factory=list)  # (t, bytes, media_s)
    dash_quality_history: list = field(default_factory=list)

    @property
    def connection_count(self):
        return len(self.connection_bytes)


class StreamingSession:
    """Drives one playback session tick by tick on a discrete-event kernel."""

    def __init__(
        self,
        video,
        technique,
        path,
        *,
        kernel=None,
        watched_fraction=1.0,
        tick_s=0.01,
        recv_capacity=65536,
        probe_interval=5.0,
        seed=0,
        sample_interval=0.1,
        max_sim_time=None,
        strict_accounting=True,
    ):
        technique.validate()
        if not 0.0 < watched_fraction <= 1.0:
            raise ValueError("watched_fraction must be in (0, 1]")
        if tick_s <= 0:
            raise ValueError("tick_s must be positive")
        self.video = video
        self.technique = technique
        self.path = path
        self.kernel = kernel or Kernel()
        self.transport = Transport(path, self.kernel, seed=seed)
        self.tick_s = tick_s
        self.recv_capacity = recv_capacity
        self.probe_interval = probe_interval
        self.sample_interval = sample_interval
        self.strict = strict_accounting
        self.watched_end = watched_fraction * video.duration_s
        self.max_sim_time = max_sim_time or (3.0 * video.duration_s + 900.0)

        self.phase = FAST_START
        self.playing = False
        self.playhead = 0.0
        self.received = 0
        self.media_pos = 0          # useful (non-duplicate) bytes delivered
        self.consumed = 0.0
        self.wasted = 0.0
        self.stalled = False
        self.conn = None
        self.reading = True         # ON_OFF burst state; reading during fast start
        self._dup_remaining = 0
        self._burst_next = None
        self._server_left = 0       # undelivered bytes for the bursty server
        self._next_sample = 0.0
        self._last_data_t = 0.0
        self.metrics = SessionMetrics(kind=technique.kind)

        if technique.kind == DASH:
            self._dash_init()
        else:
            self.fast_start_target = int(round(video.cum_bytes(technique.fast_start_s)))

    # -- lifecycle ---------------------------------------------------------

    def run(self):
        self._start()
        self.kernel.schedule_in(self.tick_s, self._tick)
        # run_until in slabs so a runaway session trips the deadlock guard
        while self.phase != DRAINED:
            if self.kernel.now >= self.max_sim_time:
                raise DeadlockError(
                    "no progress by t=%.1f: phase=%s playhead=%.2f buffered=%.0fB "
                    "conn=%s" % (
                        self.kernel.now, self.phase, self.playhead,
                        self.media_pos - self.consumed,
                        "open" if self._conn_open() else "closed",
                    )
                )
            if self.kernel.pending() == 0:
                raise DeadlockError("event queue drained before playback finished")
            self.kernel.run_until(self.kernel.now + 60.0)
        return self.metrics

    def _start(self):
        t = self.technique
        if t.kind == DASH:
            self.conn = self.transport.open(self.recv_capacity, self.probe_interval)
            return
        self.conn = self.transport.open(self.recv_capacity, self.probe_interval)
        self._register_conn(self.conn)
        if t.kind == THROTTLE and t.burst_size is not None:
            # bursty server: only the fast-start chunk is written up front
            self.conn.enqueue(min(self.fast_start_target, self.video.total_bytes))
            self._server_left = self.video.total_bytes - min(
                self.fast_start_target, self.video.total_bytes
            )
        else:
            self.conn.enqueue(self.video.total_bytes)

    def _register_conn(self, conn):
        self.metrics.connection_bytes.setdefault(conn.id, 0)

    def _conn_open(self):
        return self.conn is not None and self.conn.state == "OPEN"

    # -- per-tick pipeline -------------------------------------------------

    def _tick(self):
        now = self.kernel.now
        dt = self.tick_s
        if self.conn is not None:
            limit = self._delivery_limit()
            for rec in self.conn.advance(dt, limit=limit):
                if rec.kind == DATA:
                    self._on_data(rec.payload, rec.conn_id)
        if self.phase == FAST_START:
            self._maybe_finish_fast_start()
        self._playback(dt)
        if self.phase == DRAINED:
            return
        self._client_step(dt)
        self._server_step()
        if now >= self._next_sample:
            self._sample(now)
            self._next_sample = now + self.sample_interval
        if self.strict:
            self._check_accounting()
        self.kernel.schedule(now + dt, self._tick)

    def _delivery_limit(self):
        cap = self.technique.buffer_cap
        if cap is None:
            return None
        free = cap - (self.media_pos - self.consumed)
        return self._dup_remaining + max(0, int(free))

    def _on_data(self, nbytes, conn_id):
        self.received += nbytes
        self.metrics.connection_bytes[conn_id] = (
            self.metrics.connection_bytes.get(conn_id, 0) + nbytes
        )
        self._last_data_t = self.kernel.now
        if self.technique.kind == DASH:
            self._dash_on_data(nbytes)
            return
        dup = min(self._dup_remaining, nbytes)
        if dup:
            self._dup_remaining -= dup
            self.wasted += dup
        self.media_pos += nbytes - dup

    def _maybe_finish_fast_start(self):
        if self.technique.kind == DASH:
            if self._dash_delivered_media() >= min(
                self.technique.fast_start_s, self.video.duration_s
            ):
                self._steady()
            return
        if self.media_pos >= min(self.fast_start_target, self.video.total_bytes):
            self._steady()

    def _steady(self):
        t = self.technique
        self.phase = STEADY
        self.playing = True
        self.metrics.fast_start_end_t = self.kernel.now
        self.metrics.startup_s = self.kernel.now
        self.reading = False
        if t.kind == THROTTLE and self._conn_open():
            if t.burst_size is not None:
                self._burst_next = self.kernel.now
            else:
                self.conn.set_rate_cap(t.throttle_factor * self.video.avg_rate_bps)
        elif t.kind == ON_OFF and t.connection_mode == PER_BURST and self._conn_open():
            # the initial fill is a burst of its own; one connection per burst
            self.conn.close("RST")

    def _playback(self, dt):
        if not self.playing:
            return
        now = self.kernel.now
        if self.technique.kind == DASH:
            avail_media = self._dash_delivered_media() - self.playhead
        else:
            avail_media = self.video.media_time(self.media_pos) - self.playhead
        step = min(dt, self.watched_end - self.playhead)
        if self.stalled:
            if avail_media <= 1e-9:
                return
            self.stalled = False
            self.metrics.stalls[-1].end = now
        if avail_media + 1e-9 < step:
            # ran dry mid-tick: advance what we can, then freeze
            self.playhead += max(0.0, avail_media)
            self._sync_consumed()
            self.stalled = True
            self.metrics.stalls.append(Stall(start=now))
            return
        self.playhead += step
        self._sync_consumed()
        if self.playhead >= self.watched_end - 1e-12:
            self._finalize()

    def _sync_consumed(self):
        if self.technique.kind == DASH:
            self.consumed = self._dash_consumed_bytes()
        else:
            self.consumed = min(float(self.media_pos), self.video.cum_bytes(self.playhead))

    def _client_step(self, dt):
        t = self.technique
        if t.kind == DASH:
            self._dash_client()
            return
        if self.phase == FAST_START:
            if self._conn_open():
                self.conn.read(_BIG)
            return
        if t.kind in (THROTTLE, FAST_CACHING):
            if t.buffer_cap is not None:
                self._capped_client()
            if self._conn_open():
                self.conn.read(_BIG)
        elif t.kind == ENCODING_RATE:
            if self._conn_open() or (self.conn and self.conn.recv_occupancy):
                want = self.video.bytes_between(self.playhead, self.playhead + dt)
                self.conn.read(int(math.ceil(want)))
        elif t.kind == ON_OFF:
            self._on_off_client()

    def _capped_client(self):
        t = self.technique
        buffered = self.media_pos - self.consumed
        done = self.media_pos >= self.video.total_bytes
        if self._conn_open():
            # the store is full once free space is under one tick of playback:
            # capped delivery refills what playback drains and never gets closer
            slack = int(max(self.video.schedule) * self.tick_s) + 2
            if done or buffered >= t.buffer_cap - slack:
                self.conn.close("RST")
        elif not done:
            headroom = t.reopen_headroom or max(1, t.buffer_cap // 32)
            if buffered <= t.buffer_cap - headroom:
                self._reconnect_range()

    def _reconnect_range(self):
        """New connection re-requesting from the start of the current key frame."""
        kf = self.video.keyframe_spacing
        dup = 0
        if self.technique.keyframe_waste and kf > 0:
            dup = self.media_pos - (self.media_pos // kf) * kf
        self._dup_remaining = dup
        self.conn = self.transport.open(self.recv_capacity, self.probe_interval)
        self._register_conn(self.conn)
        self.conn.enqueue(dup + (self.video.total_bytes - self.media_pos))

    def _on_off_client(self):
        t = self.technique
        buffered_media = self.video.media_time(self.media_pos) - self.playhead
        done = self.media_pos >= self.video.total_bytes
        if self.reading:
            if done or buffered_media >= t.high_watermark_s:
                self.reading = False
                if t.connection_mode == PER_BURST and self._conn_open():
                    self.conn.close("RST")
            else:
                self.conn.read(_BIG)
        else:
            if not done and buffered_media <= t.low_watermark_s:
                self.reading = True
                if not self._conn_open():
                    self.conn = self.transport.open(self.recv_capacity, self.probe_interval)
                    self._register_conn(self.conn)
                    self.conn.enqueue(self.video.total_bytes - self.media_pos)
                self.conn.read(_BIG)

    def _server_step(self):
        t = self.technique
        if (
            t.kind == THROTTLE
            and t.burst_size is not None
            and self.phase == STEADY
            and self._server_left > 0
            and self._conn_open()
        ):
            interval = t.burst_size * 8.0 / (t.throttle_factor * self.video.avg_rate_bps)
            while self._burst_next <= self.kernel.now and self._server_left > 0:
                n = min(t.burst_size, self._server_left)
                self.conn.enqueue(n)
                self._server_left -= n
                self._burst_next += interval

    # -- DASH specifics ----------------------------------------------------

    def _dash_init(self):
        t, v = self.technique, self.video
        if not v.ladder:
            raise ValueError("DASH needs a quality ladder on the video")
        seg = v.ladder[0].segment_s
        if any(abs(q.segment_s - seg) > 1e-9 for q in v.ladder):
            raise ValueError("all ladder levels must share one segment duration")
        self._seg_dur = seg
        self._n_segments = int(math.ceil(v.duration_s / seg))
        self._segments = []          # (media_start, media_len, nbytes)
        self._seg_requested = 0
        self._outstanding = None     # (bytes_left, total, t_request, level_idx)
        self._tputs = deque(maxlen=3)
        self._last_level = None

    def _dash_delivered_media(self):
        return sum(s[1] for s in self._segments)

    def _dash_consumed_bytes(self):
        total = 0.0
        for start, length, nbytes in self._segments:
            if self.playhead >= start + length:
                total += nbytes
            elif self.playhead > start:
                total += nbytes * (self.playhead - start) / length
            else:
                break
        return total

    def _dash_on_data(self, nbytes):
        if self._outstanding is None:
            return
        left, total, t_req, level = self._outstanding
        left -= nbytes
        if left > 0:
            self._outstanding = (left, total, t_req, level)
            return
        elapsed = max(self.kernel.now - t_req, self.tick_s)
        self._tputs.append(total * 8.0 / elapsed)
        start = self._seg_requested_media_start
        length = min(self._seg_dur, self.video.duration_s - start)
        self._segments.append((start, length, total))
        self.metrics.dash_quality_history.append(level)
        self._outstanding = None

    def _dash_client(self):
        if self._conn_open():
            self.conn.read(_BIG)
        if self._outstanding is not None or self._seg_requested >= self._n_segments:
            return
        buffered = self._dash_delivered_media() - self.playhead
        target = self.technique.dash_target_s
        if self.phase == STEADY and buffered >= target:
            return
        if self._tputs:
            est = len(self._tputs) / sum(1.0 / x for x in self._tputs)
            level = dash_pick_quality(self.video.ladder, est, self.technique.dash_safety)
        else:
            level = 0  # playlist default entry before any throughput sample
        q = self.video.ladder[level]
        self._seg_requested_media_start = self._seg_requested * self._seg_dur
        length = min(self._seg_dur, self.video.duration_s - self._seg_requested_media_start)
        nbytes = int(round(q.bandwidth_bps * length / 8.0))
        self.conn.request()
        self.conn.enqueue(nbytes)
        self._outstanding = (nbytes, nbytes, self.kernel.now, level)
        self._seg_requested += 1
        if (
            self._last_level is not None
            and level > self._last_level
            and self.technique.dash_refetch_depth > 0
        ):
            self._dash_refetch(level)
        self._last_level = level

    def _dash_refetch(self, level):
        """Re-download recent unplayed segments after an upward quality switch."""
        q = self.video.ladder[level]
        depth = self.technique.dash_refetch_depth
        replaced = 0
        for i in range(len(self._segments) - 1, -1, -1):
            if replaced >= depth:
                break
            start, length, nbytes = self._segments[i]
            if start < self.playhead:
                break
            new_bytes = int(round(q.bandwidth_bps * length / 8.0))
            if self.technique.dash_replaced_counts_waste:
                # old copy is surplus; the new one is what gets played
                self.wasted += nbytes
                self._segments[i] = (start, length, new_bytes)
            else:
                # keep the old copy on the books; the refetch is the surplus
                self.wasted += new_bytes
            self.received += new_bytes
            replaced += 1

    # -- wrap-up -----------------------------------------------------------

    def _finalize(self):
        now = self.kernel.now
        self.phase = DRAINED
        self.playing = False
        if self.technique.kind == DASH:
            leftover = self.received - self.consumed - self.wasted
        else:
            leftover = self.media_pos - self.consumed
        self.wasted += max(0.0, leftover)
        if self._conn_open():
            mode = "FIN" if self.watched_end >= self.video.duration_s - 1e-9 else "RST"
            self.conn.close(mode)
        m = self.metrics
        m.duration_s = now
        m.end_t = now
        m.watched_s = self.playhead
        m.received_total = self.received
        m.consumed_bytes = self.consumed
        m.wasted_bytes = self.wasted
        m.delivery_end_t = self._last_data_t
        m.stall_total_s = sum(
            (s.end if s.end is not None else now) - s.start for s in m.stalls
        )
        self._sample(now, final=True)

    def _sample(self, t, final=False):
        if self.technique.kind == DASH:
            buf_bytes = self.received - self.consumed - self.wasted
            buf_media = self._dash_delivered_media() - self.playhead
        else:
            buf_bytes = self.media_pos - self.consumed
            buf_media = self.video.media_time(self.media_pos) - self.playhead
        if final:
            buf_bytes = 0.0
            buf_media = 0.0
        self.metrics.buffer_series.append((t, buf_bytes, buf_media))

    def _check_accounting(self):
        if self.technique.kind == DASH:
            buffered = self.received - self.consumed - self.wasted
        else:
            buffered = self.media_pos - self.consumed
            drift = self.received - self.media_pos - self.wasted
            if abs(drift) > 1e-6:
                raise AssertionError("byte accounting drift: %r" % drift)
        if buffered < -1e-6:
            raise AssertionError("negative playback buffer: %r" % buffered)
        cap = self.technique.buffer_cap
        if cap is not None and buffered > cap + 1e-6:
            raise AssertionError("playback store exceeded its cap: %r > %r" % (buffered, cap))
