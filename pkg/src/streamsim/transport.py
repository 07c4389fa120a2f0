"""Flow-controlled delivery pipe between a video server and a mobile client.

Models exactly the mechanisms that shape a streaming packet trace: link
pacing, a finite receive buffer with zero-window advertisements and keepalive
probes, connection open/close records, and an rtt-delayed restart after the
receive window reopens.  There is no loss or congestion control; rate limits
come from the path bandwidth and an optional sender-side pacing cap.

Bytes move in integer quanta.  During continuous transfer the pipe coalesces
delivery into one DATA record per advance() call (the simulation tick, 10 ms
by default), which keeps traces compact while staying well under the 50 ms
gap used later for burst grouping.
"""

import csv
import random
from dataclasses import dataclass

DOWN = "down"  # server -> client
UP = "up"      # client -> server

DATA = "DATA"
ZERO_WINDOW_AD = "ZERO_WINDOW_AD"
ZERO_WINDOW_PROBE = "ZERO_WINDOW_PROBE"
OPEN = "OPEN"
CLOSE_FIN = "CLOSE_FIN"
CLOSE_RST = "CLOSE_RST"
REQUEST = "REQUEST"

STATE_OPEN = "OPEN"
STATE_CLOSED = "CLOSED"

OPEN_WINDOW = "OPEN_WINDOW"
ZERO_WINDOW = "ZERO_WINDOW"

TIMELINE_HEADER = ["time_s", "direction", "bytes", "kind", "conn_id"]


@dataclass(slots=True)
class PacketRecord:
    time: float
    direction: str
    payload: int  # bytes; 0 for control records
    kind: str
    conn_id: int


@dataclass(frozen=True)
class PathSpec:
    """Bottleneck description; jitter perturbs record timestamps only."""

    bandwidth_bps: float
    rtt_s: float = 0.05
    jitter: float = 0.0

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise ValueError("path bandwidth must be positive")
        if self.rtt_s < 0:
            raise ValueError("rtt must be >= 0")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter fraction must be in [0, 1)")


class Transport:
    """Factory for connections over one path; owns the shared packet timeline."""

    def __init__(self, path, kernel, seed=0):
        self.path = path
        self.kernel = kernel
        self.records = []
        self._next_id = 1
        self._rng = random.Random(seed)
        self._last_emit = 0.0       # last perturbed timestamp on the timeline
        self._last_nominal = 0.0    # last unperturbed timestamp

    def open(self, recv_capacity, probe_interval=5.0):
        if recv_capacity <= 0:
            raise ValueError("recv_capacity must be positive")
        if probe_interval <= 0:
            raise ValueError("probe_interval must be positive")
        conn = Connection(self, self._next_id, recv_capacity, probe_interval)
        self._next_id += 1
        self.emit(self.kernel.now, UP, 0, OPEN, conn.id)
        conn.request()
        return conn

    def emit(self, time, direction, payload, kind, conn_id):
        if self.path.jitter > 0.0:
            gap = max(0.0, time - self._last_nominal)
            self._last_nominal = time
            time = time + self._rng.uniform(-1.0, 1.0) * self.path.jitter * gap
        else:
            self._last_nominal = time
        # timeline must stay sorted for the radio models downstream
        time = max(time, self._last_emit)
        self._last_emit = time
        rec = PacketRecord(time, direction, payload, kind, conn_id)
        self.records.append(rec)
        return rec


class Connection:
    """One server->client transfer with receive-window flow control."""

    def __init__(self, transport, conn_id, recv_capacity, probe_interval):
        self.transport = transport
        self.id = conn_id
        self.state = STATE_OPEN
        self.close_mode = None
        self.send_queue = 0              # bytes waiting at the server
        self.send_rate_cap = None        # bps, None = path speed
        self.recv_capacity = int(recv_capacity)
        self.recv_occupancy = 0
        self.window_state = OPEN_WINDOW
        self.probe_interval = probe_interval
        self.delivered_total = 0
        self._resume_at = 0.0            # sender may not transmit before this
        self._next_probe = None
        self._rate_frac = 0.0            # sub-byte pacing carryover

    # -- server side -------------------------------------------------------

    def enqueue(self, nbytes, rate_cap="keep"):
        """Queue nbytes at the server; optionally set the pacing cap (bps)."""
        if self.state != STATE_OPEN:
            raise ValueError("enqueue on closed connection %d" % self.id)
        if nbytes < 0:
            raise ValueError("cannot enqueue negative bytes")
        self.send_queue += int(nbytes)
        if rate_cap != "keep":
            self.set_rate_cap(rate_cap)
        return self.send_queue

    def set_rate_cap(self, rate_cap):
        if rate_cap is not None and rate_cap < 0:
            raise ValueError("rate cap must be >= 0 or None")
        self.send_rate_cap = rate_cap
        self._rate_frac = 0.0

    # -- client side -------------------------------------------------------

    def request(self):
        """Client asks for (more) content; server reacts one rtt later."""
        now = self.transport.kernel.now
        self.transport.emit(now, UP, 0, REQUEST, self.id)
        self._resume_at = max(self._resume_at, now + self.transport.path.rtt_s)

    def read(self, max_bytes):
        """Drain up to max_bytes from the receive buffer; returns bytes read.

        Freeing space in a zero-window state notifies the sender, which
        resumes one rtt later.
        """
        n = int(min(max_bytes, self.recv_occupancy))
        if n <= 0:
            return 0
        self.recv_occupancy -= n
        if self.window_state == ZERO_WINDOW:
            self.window_state = OPEN_WINDOW
            self._next_probe = None
            if self.state == STATE_OPEN:
                self._resume_at = max(
                    self._resume_at, self.transport.kernel.now + self.transport.path.rtt_s
                )
        return n

    # -- pipe --------------------------------------------------------------

    def advance(self, dt, limit=None):
        """Move bytes for the tick ending now; returns records emitted.

        Delivery this tick is min(send_queue, pacing allowance, free buffer
        space, limit).  While the sender is blocked on a zero window it emits
        probe/advertisement pairs every probe_interval instead.
        """
        if dt <= 0:
            raise ValueError("advance needs dt > 0")
        if self.state != STATE_OPEN:
            return []
        out = []
        now = self.transport.kernel.now
        t0 = now - dt
        eligible = now - max(t0, self._resume_at)
        if eligible > 0 and self.send_queue > 0:
            rate = self.transport.path.bandwidth_bps
            if self.send_rate_cap is not None:
                rate = min(rate, self.send_rate_cap)
            allowance = rate / 8.0 * eligible + self._rate_frac
            n_rate = int(allowance)
            free = self.recv_capacity - self.recv_occupancy
            n = min(n_rate, self.send_queue, free)
            if limit is not None:
                n = min(n, int(limit))
            if n == n_rate:
                self._rate_frac = allowance - n_rate
            else:
                # blocked by buffer/queue/limit: no pacing credit carries over
                self._rate_frac = 0.0
            if n > 0:
                self.send_queue -= n
                self.recv_occupancy += n
                self.delivered_total += n
                out.append(self.transport.emit(now, DOWN, n, DATA, self.id))
        if self.recv_occupancy >= self.recv_capacity and self.window_state == OPEN_WINDOW:
            self.window_state = ZERO_WINDOW
            out.append(self.transport.emit(now, UP, 0, ZERO_WINDOW_AD, self.id))
            self._next_probe = now + self.probe_interval
        if (
            self.window_state == ZERO_WINDOW
            and self.send_queue > 0
            and self._next_probe is not None
        ):
            while self._next_probe <= now:
                out.append(
                    self.transport.emit(self._next_probe, DOWN, 0, ZERO_WINDOW_PROBE, self.id)
                )
                out.append(
                    self.transport.emit(self._next_probe, UP, 0, ZERO_WINDOW_AD, self.id)
                )
                self._next_probe += self.probe_interval
        return out

    def close(self, mode="RST"):
        """Tear down; undelivered server bytes are dropped.  Idempotent it is not."""
        if self.state == STATE_CLOSED:
            raise ValueError("connection %d closed twice" % self.id)
        if mode not in ("RST", "FIN"):
            raise ValueError("close mode must be RST or FIN")
        self.state = STATE_CLOSED
        self.close_mode = mode
        self.send_queue = 0
        self._next_probe = None
        kind = CLOSE_RST if mode == "RST" else CLOSE_FIN
        return self.transport.emit(self.transport.kernel.now, UP, 0, kind, self.id)


def write_timeline_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMELINE_HEADER)
        for r in records:
            w.writerow(["%.6f" % r.time, r.direction, r.payload, r.kind, r.conn_id])


def read_timeline_csv(path):
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != TIMELINE_HEADER:
            raise ValueError("unexpected timeline header: %s" % header)
        for row in rd:
            out.append(PacketRecord(float(row[0]), row[1], int(row[2]), row[3], int(row[4])))
    return out
