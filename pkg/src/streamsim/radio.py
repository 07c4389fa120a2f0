"""Radio interface energy models driven by a packet timeline.

3G is a WCDMA/HSPA RRC state machine: any packet puts (or keeps) the radio in
CELL_DCH; inactivity demotes it down the ladder DCH -> FACH -> PCH -> IDLE on
three timers.  The timer values and per-state current draws default to values
measured on an isolated HSPA network with vendor-recommended configuration.

Wi-Fi is 802.11 power-save mode: the interface is active while traffic flows,
stays awake for a short idle timeout afterwards, then sleeps, waking briefly
every beacon interval to check the traffic indication map.  In CAM
(constantly-awake) mode it never sleeps.  Current draws differ per device and
must be supplied by the caller; there are deliberately no defaults.

Charge integrates as dwell x current per state, in mA*s.
"""

import csv
from dataclasses import dataclass

DCH = "DCH"
FACH = "FACH"
PCH = "PCH"
IDLE = "IDLE"

ACTIVE = "ACTIVE"
PSM_IDLE = "PSM_IDLE"
SLEEP = "SLEEP"


@dataclass
class RrcParams:
    # inactivity timers, seconds (DCH->FACH, FACH->PCH, PCH->IDLE)
    t1: float = 8.0
    t2: float = 3.0
    t3: float = 1740.0
    # mean current per state, mA
    current_dch: float = 200.0
    current_fach: float = 150.0
    current_pch: float = 50.0
    current_idle: float = 0.0
    promotion_delay: float = 0.0  # DCH-priced ramp ahead of a promoting packet

    def validate(self):
        if min(self.t1, self.t2, self.t3) <= 0:
            raise ValueError("RRC timers must be positive")
        if not self.current_dch > self.current_fach > self.current_pch >= self.current_idle >= 0:
            raise ValueError("RRC currents must satisfy dch > fach > pch >= idle >= 0")
        if self.promotion_delay < 0:
            raise ValueError("promotion_delay must be >= 0")
        return self

    def currents(self):
        return {
            DCH: self.current_dch,
            FACH: self.current_fach,
            PCH: self.current_pch,
            IDLE: self.current_idle,
        }


@dataclass
class PsmParams:
    current_active: float
    current_idle: float
    current_sleep: float
    beacon_interval: float = 0.1
    idle_timeout: float = 0.1
    beacon_wake: float = 0.002  # TIM check cost, ACTIVE-priced
    cam_mode: bool = False

    def validate(self):
        if self.beacon_interval <= 0 or self.idle_timeout <= 0:
            raise ValueError("PSM intervals must be positive")
        if not 0 <= self.beacon_wake < self.beacon_interval:
            raise ValueError("beacon_wake must be in [0, beacon_interval)")
        if not self.current_active > self.current_idle > self.current_sleep >= 0:
            raise ValueError("PSM currents must satisfy active > idle > sleep >= 0")
        return self

    def currents(self):
        return {
            ACTIVE: self.current_active,
            PSM_IDLE: self.current_idle,
            SLEEP: self.current_sleep,
        }


@dataclass(slots=True)
class StateSegment:
    state: str
    start: float
    end: float


@dataclass
class EnergyReport:
    duration_s: float
    dwell: dict               # state -> seconds
    charge_mAs: float
    avg_total_mA: float
    playback_mA: float
    avg_streaming_mA: float


def _packet_times(records):
    times = []
    last = None
    for r in records:
        t = r.time if hasattr(r, "time") else float(r)
        if last is not None and t < last - 1e-12:
            raise ValueError("packet timeline must be sorted by time")
        times.append(t)
        last = t
    return times


def rrc_drive(records, params, t_end=None, t_start=None):
    """Replay a packet timeline through the RRC ladder.

    Returns contiguous StateSegments over [t_start, t_end].  t_start defaults
    to the first packet (the radio is IDLE before it if t_start is earlier),
    t_end to the last packet plus the full demotion ladder.
    """
    params.validate()
    times = _packet_times(records)
    if not times and t_end is None:
        raise ValueError("empty timeline needs an explicit t_end")
    if t_start is None:
        t_start = times[0] if times else 0.0
    if t_end is None:
        t_end = times[-1] + params.t1 + params.t2 + params.t3
    segs = []

    def emit(state, a, b):
        if b <= a:
            return
        if segs and segs[-1].state == state and abs(segs[-1].end - a) < 1e-12:
            segs[-1].end = b
        else:
            segs.append(StateSegment(state, a, b))

    def ladder(last_packet, a, b):
        """Idle decay segments from a to b given the last packet time."""
        d1 = last_packet + params.t1
        d2 = d1 + params.t2
        d3 = d2 + params.t3
        emit(DCH, a, min(b, d1))
        if b > d1:
            emit(FACH, max(a, d1), min(b, d2))
        if b > d2:
            emit(PCH, max(a, d2), min(b, d3))
        if b > d3:
            emit(IDLE, max(a, d3), b)
        # state at instant b
        if b <= d1:
            return DCH
        if b <= d2:
            return FACH
        if b <= d3:
            return PCH
        return IDLE

    cursor = t_start
    last_packet = None
    for t in times:
        if t < t_start:
            # packet before the observation window still warms the radio
            last_packet = t
            continue
        if t > t_end:
            break
        if last_packet is None:
            if t > cursor:
                emit(IDLE, cursor, t)
            state_now = IDLE
        else:
            state_now = ladder(last_packet, cursor, t)
        if state_now != DCH and params.promotion_delay > 0:
            ramp_start = max(cursor, t - params.promotion_delay)
            if segs:
                # promotion ramp replaces the tail of the preceding segment
                while segs and segs[-1].start >= ramp_start:
                    ramp_start = min(ramp_start, segs[-1].start)
                    segs.pop()
                if segs and segs[-1].end > ramp_start:
                    segs[-1].end = ramp_start
            emit(DCH, ramp_start, t)
        cursor = t
        last_packet = t
    if last_packet is None:
        emit(IDLE, cursor, t_end)
    else:
        ladder(last_packet, cursor, t_end)
    return segs


def psm_drive(records, params, t_end=None, t_start=0.0):
    """Replay a packet timeline through 802.11 power-save mode.

    Packets closer together than idle_timeout merge into one ACTIVE span;
    each span is followed by idle_timeout of awake-idle, then sleep with a
    short ACTIVE beacon wake at every beacon interval.  With cam_mode the
    radio never sleeps (idle instead).
    """
    params.validate()
    times = [t for t in _packet_times(records) if t_end is None or t <= t_end]
    times = [t for t in times if t >= t_start]
    if t_end is None:
        if not times:
            raise ValueError("empty timeline needs an explicit t_end")
        t_end = times[-1] + params.idle_timeout
    segs = []

    def emit(state, a, b):
        if b <= a:
            return
        if segs and segs[-1].state == state and abs(segs[-1].end - a) < 1e-12:
            segs[-1].end = b
        else:
            segs.append(StateSegment(state, a, b))

    def sleep_span(a, b):
        if params.cam_mode:
            emit(PSM_IDLE, a, b)
            return
        # beacon wakes pinned to the start of the sleep period
        t = a
        while t < b:
            wake_end = min(t + params.beacon_wake, b)
            emit(ACTIVE, t, wake_end)
            emit(SLEEP, wake_end, min(t + params.beacon_interval, b))
            t += params.beacon_interval

    # group packets into active runs
    runs = []
    for t in times:
        if runs and t - runs[-1][1] <= params.idle_timeout:
            runs[-1][1] = t
        else:
            runs.append([t, t])

    cursor = t_start
    for a, b in runs:
        if a > cursor:
            sleep_span(cursor, a)
        emit(ACTIVE, a, max(b, a))
        idle_end = min(b + params.idle_timeout, t_end)
        emit(PSM_IDLE, b, idle_end)
        cursor = idle_end
    if cursor < t_end:
        sleep_span(cursor, t_end)
    return segs


@dataclass
class EnergyBreakdown:
    duration_s: float
    dwell: dict
    charge_mAs: float
    avg_current_mA: float


def clip_segments(segments, t_start, t_end):
    """The part of a segment list that overlaps [t_start, t_end]."""
    if t_end < t_start:
        raise ValueError("clip window ends before it starts")
    out = []
    for seg in segments:
        a = max(seg.start, t_start)
        b = min(seg.end, t_end)
        if b > a:
            out.append(StateSegment(seg.state, a, b))
    return out


def integrate(segments, currents):
    """Charge and per-state dwell for a contiguous segment list."""
    dwell = {}
    charge = 0.0
    for seg in segments:
        span = seg.end - seg.start
        if span < 0:
            raise ValueError("segment with negative span")
        dwell[seg.state] = dwell.get(seg.state, 0.0) + span
        try:
            charge += span * currents[seg.state]
        except KeyError:
            raise ValueError("no current configured for state %r" % seg.state) from None
    duration = sum(dwell.values())
    avg = charge / duration if duration > 0 else 0.0
    return EnergyBreakdown(duration, dwell, charge, avg)


def streaming_current(avg_total_mA, playback_mA):
    """Delivery-attributable current: total minus the playback-only draw."""
    if playback_mA > avg_total_mA:
        raise ValueError(
            "playback current %.1f mA exceeds total %.1f mA" % (playback_mA, avg_total_mA)
        )
    return avg_total_mA - playback_mA


def make_energy_report(breakdown, playback_mA):
    total = breakdown.avg_current_mA + playback_mA
    return EnergyReport(
        duration_s=breakdown.duration_s,
        dwell=dict(breakdown.dwell),
        charge_mAs=breakdown.charge_mAs + playback_mA * breakdown.duration_s,
        avg_total_mA=total,
        playback_mA=playback_mA,
        avg_streaming_mA=streaming_current(total, playback_mA),
    )


def write_radio_csv(segments, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "start_s", "end_s"])
        for seg in segments:
            w.writerow([seg.state, "%.6f" % seg.start, "%.6f" % seg.end])
