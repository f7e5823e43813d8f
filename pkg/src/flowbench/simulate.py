"""Discrete-event simulator of closed-loop window flow control.

One sender application feeds packets through a throttle that admits data to
the network only while the outstanding (sent but unacknowledged) volume is
below the window W(t).  The forward path is a FIFO link with optional
capacity and buffer limits; acknowledgements return over a pure delay.  The
window is either static or adapted AIMD-style from congestion signals that
are marked onto (or drop) packets.

Simulation is packet-granular and fully deterministic for a given seed.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .curves import CumulativeProcess

__all__ = [
    "ScenarioError",
    "ConstantSource",
    "TraceSource",
    "GreedySource",
    "StaticWindow",
    "AimdWindow",
    "NetworkPath",
    "CongestionSignal",
    "ScenarioSpec",
    "SimOutput",
    "FlowLoopSim",
    "ProbeTrainSampler",
    "run_scenario",
    "decompose_delays",
    "stack_buffering_probability",
    "cwnd_autocorrelation",
]

INF = float("inf")


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class ConstantSource:
    rate_bps: float

    def validate(self):
        if self.rate_bps <= 0:
            raise ScenarioError("source rate must be positive")


@dataclass(frozen=True)
class TraceSource:
    trace: CumulativeProcess

    def validate(self):
        if self.trace.values[-1] <= 0:
            raise ScenarioError("trace carries no data")


@dataclass(frozen=True)
class GreedySource:
    """Always-backlogged source; packets are created on admission."""

    def validate(self):
        pass


@dataclass(frozen=True)
class StaticWindow:
    window_bits: float

    def validate(self, mss):
        if self.window_bits < mss:
            raise ScenarioError("static window must hold at least one MSS")


@dataclass(frozen=True)
class AimdWindow:
    """Additive-increase / multiplicative-decrease window adaptation.

    ``increase`` is the window growth per acknowledgement: with mode
    "reciprocal" the window grows by increase * MSS^2 / W (one MSS per RTT
    for increase=1, the NewReno rule); with mode "constant" it grows by
    increase * MSS per acknowledgement (e.g. 0.01 for a Scalable-like rule).
    A congestion signal multiplies the window by ``decrease_factor``, at
    most once per round trip.
    """

    increase: float = 1.0
    increase_mode: str = "reciprocal"
    decrease_factor: float = 0.5
    floor_bits: float | None = None  # defaults to one MSS
    initial_window_bits: float | None = None  # defaults to the floor

    def validate(self, mss):
        if not 0.0 < self.decrease_factor < 1.0:
            raise ScenarioError("decrease factor must lie in (0, 1)")
        if self.increase <= 0:
            raise ScenarioError("window increase must be positive")
        if self.increase_mode not in ("reciprocal", "constant"):
            raise ScenarioError("increase_mode must be 'reciprocal' or 'constant'")
        if self.floor_bits is not None and self.floor_bits < mss:
            raise ScenarioError("window floor must be at least one MSS")


@dataclass(frozen=True)
class NetworkPath:
    capacity_bps: float = INF
    fwd_delay_s: float = 0.0
    rev_delay_s: float = 0.0
    buffer_pkts: float = INF  # drop-tail FIFO

    def validate(self):
        if self.fwd_delay_s < 0 or self.rev_delay_s < 0:
            raise ScenarioError("path delays must be non-negative")
        if self.capacity_bps <= 0:
            raise ScenarioError("capacity must be positive (or infinite)")
        if math.isfinite(self.capacity_bps) and self.buffer_pkts < 1:
            raise ScenarioError("finite-capacity path needs at least one buffer slot")


@dataclass(frozen=True)
class CongestionSignal:
    """Congestion-signal process applied at network ingress.

    kind: none | bernoulli | periodic | buffer_overflow.
    delivery "mark" returns the signal in the acknowledgement; "drop"
    discards the packet, which the sender detects one RTT later and
    retransmits at the head of its queue.
    """

    kind: str = "none"
    p: float | None = None
    every_n_packets: int | None = None
    delivery: str = "mark"

    def validate(self):
        if self.kind not in ("none", "bernoulli", "periodic", "buffer_overflow"):
            raise ScenarioError(f"unknown signal kind {self.kind!r}")
        if self.kind == "bernoulli" and not (self.p is not None and 0.0 < self.p < 1.0):
            raise ScenarioError("bernoulli signal needs 0 < p < 1")
        if self.kind == "periodic" and not (self.every_n_packets and self.every_n_packets >= 2):
            raise ScenarioError("periodic signal needs every_n_packets >= 2")
        if self.delivery not in ("mark", "drop"):
            raise ScenarioError("delivery must be 'mark' or 'drop'")


@dataclass(frozen=True)
class ScenarioSpec:
    source: ConstantSource | TraceSource | GreedySource
    controller: StaticWindow | AimdWindow
    path: NetworkPath
    signal: CongestionSignal = CongestionSignal()
    mss_bits: float = 12000.0
    duration_s: float = 10.0
    warmup_s: float = 0.0
    seed: int = 0

    def validate(self):
        if self.mss_bits <= 0:
            raise ScenarioError("MSS must be positive")
        if not self.duration_s > self.warmup_s >= 0:
            raise ScenarioError("need duration > warmup >= 0")
        self.source.validate()
        self.controller.validate(self.mss_bits)
        self.path.validate()
        self.signal.validate()

    def replace(self, **kwargs) -> "ScenarioSpec":
        from dataclasses import replace

        return replace(self, **kwargs)

    # -- JSON wire format -------------------------------------------------

    def to_json(self) -> str:
        src = self.source
        if isinstance(src, ConstantSource):
            source = {"kind": "constant", "rate_bps": src.rate_bps}
        elif isinstance(src, TraceSource):
            source = {
                "kind": "trace",
                "breakpoints": [[float(t), float(v)] for t, v in src.trace.breakpoints],
            }
        else:
            source = {"kind": "greedy"}
        ctl = self.controller
        if isinstance(ctl, StaticWindow):
            controller = {"kind": "static", "window_bits": ctl.window_bits}
        else:
            controller = {
                "kind": "aimd",
                "increase": ctl.increase,
                "increase_mode": ctl.increase_mode,
                "decrease_factor": ctl.decrease_factor,
                "floor_bits": ctl.floor_bits,
                "initial_window_bits": ctl.initial_window_bits,
            }
        doc = {
            "source": source,
            "controller": controller,
            "path": {
                "capacity_bps": None if math.isinf(self.path.capacity_bps) else float(self.path.capacity_bps),
                "fwd_delay_s": self.path.fwd_delay_s,
                "rev_delay_s": self.path.rev_delay_s,
                "buffer_pkts": None if math.isinf(self.path.buffer_pkts) else float(self.path.buffer_pkts),
            },
            "signal": {
                "kind": self.signal.kind,
                "p": self.signal.p,
                "every_n_packets": self.signal.every_n_packets,
                "delivery_mode": self.signal.delivery,
            },
            "mss_bits": float(self.mss_bits),
            "duration_s": self.duration_s,
            "warmup_s": self.warmup_s,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, doc: str | dict) -> "ScenarioSpec":
        data = json.loads(doc) if isinstance(doc, str) else doc
        try:
            s = data["source"]
            if s["kind"] == "constant":
                source = ConstantSource(float(s["rate_bps"]))
            elif s["kind"] == "trace":
                source = TraceSource(CumulativeProcess.from_breakpoints(s["breakpoints"]))
            elif s["kind"] == "greedy":
                source = GreedySource()
            else:
                raise ScenarioError(f"unknown source kind {s['kind']!r}")
            c = data["controller"]
            if c["kind"] == "static":
                controller = StaticWindow(float(c["window_bits"]))
            elif c["kind"] == "aimd":
                controller = AimdWindow(
                    increase=float(c.get("increase", 1.0)),
                    increase_mode=c.get("increase_mode", "reciprocal"),
                    decrease_factor=float(c.get("decrease_factor", 0.5)),
                    floor_bits=c.get("floor_bits"),
                    initial_window_bits=c.get("initial_window_bits"),
                )
            else:
                raise ScenarioError(f"unknown controller kind {c['kind']!r}")
            p = data.get("path", {})
            path = NetworkPath(
                capacity_bps=INF if p.get("capacity_bps") is None else float(p["capacity_bps"]),
                fwd_delay_s=float(p.get("fwd_delay_s", 0.0)),
                rev_delay_s=float(p.get("rev_delay_s", 0.0)),
                buffer_pkts=INF if p.get("buffer_pkts") is None else float(p["buffer_pkts"]),
            )
            g = data.get("signal", {"kind": "none"})
            signal = CongestionSignal(
                kind=g.get("kind", "none"),
                p=g.get("p"),
                every_n_packets=g.get("every_n_packets"),
                delivery=g.get("delivery_mode", "mark"),
            )
            spec = cls(
                source=source,
                controller=controller,
                path=path,
                signal=signal,
                mss_bits=float(data.get("mss_bits", 12000.0)),
                duration_s=float(data["duration_s"]),
                warmup_s=float(data.get("warmup_s", 0.0)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario config: {exc}") from exc
        spec.validate()
        return spec


@dataclass
class SimOutput:
    """Per-packet timestamps and series recorded by one simulation run.

    t1..t4: application entry, stack exit to network, network exit, in-order
    application delivery.  All arrays are index-aligned by packet id.
    """

    t1: np.ndarray
    t2: np.ndarray
    t3: np.ndarray
    t4: np.ndarray
    signaled: np.ndarray
    retx: np.ndarray
    cwnd_times: np.ndarray
    cwnd_bits: np.ndarray
    queue_times: np.ndarray
    queue_occupancy: np.ndarray
    dropped_count: int
    marked_count: int
    mss_bits: float
    duration_s: float
    warmup_s: float

    def steady_state_mask(self) -> np.ndarray:
        return (self.t1 >= self.warmup_s) & (self.t1 <= self.duration_s) & np.isfinite(self.t4)

    def delivered_rate_bps(self) -> float:
        """Long-run delivered rate over the post-warmup window."""
        mask = (self.t4 >= self.warmup_s) & (self.t4 <= self.duration_s)
        span = self.duration_s - self.warmup_s
        return float(mask.sum()) * self.mss_bits / span

    def packets_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "t1", "t2", "t3", "t4", "signaled", "retx"])
            for i in range(len(self.t1)):
                w.writerow(
                    [i, repr(self.t1[i]), repr(self.t2[i]), repr(self.t3[i]), repr(self.t4[i]),
                     int(self.signaled[i]), int(self.retx[i])]
                )

    def cwnd_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_seconds", "w_bits"])
            for t, v in zip(self.cwnd_times, self.cwnd_bits):
                w.writerow([repr(float(t)), repr(float(v))])


# event kinds, ordered so simultaneous events resolve deterministically:
# deliveries and acknowledgements free window space before new arrivals
_EV_DELIVER = 0
_EV_ACK = 1
_EV_LOSS = 2
_EV_ARRIVAL = 3

_RAND_BLOCK = 1 << 14


class FlowLoopSim:
    """Single deterministic run of the flow-control loop.

    ``run()`` executes until every packet created up to the scenario horizon
    has been delivered.  ``extend(new_duration)`` raises the horizon and
    continues the same sample path, which probing uses to grow a packet
    train without replaying it.
    """

    def __init__(self, spec: ScenarioSpec):
        spec.validate()
        self.spec = spec
        self.mss = spec.mss_bits
        path = spec.path
        self.fwd = path.fwd_delay_s
        self.rev = path.rev_delay_s
        self.rtt = self.fwd + self.rev
        self.cap = path.capacity_bps
        self.finite_cap = math.isfinite(path.capacity_bps)
        self.buffer = path.buffer_pkts
        self.drop_mode = spec.signal.delivery == "drop"

        ctl = spec.controller
        if isinstance(ctl, StaticWindow):
            self.adaptive = False
            self.window = float(ctl.window_bits)
            self.floor = float(ctl.window_bits)
        else:
            self.adaptive = True
            self.floor = float(ctl.floor_bits if ctl.floor_bits is not None else self.mss)
            self.window = float(ctl.initial_window_bits if ctl.initial_window_bits is not None else self.floor)
            self.window = max(self.window, self.floor)
            self.beta = ctl.decrease_factor
            self.inc_const = ctl.increase_mode == "constant"
            self.inc = ctl.increase * (self.mss if self.inc_const else self.mss * self.mss)

        sig = spec.signal
        self.sig_kind = sig.kind
        self.sig_p = sig.p or 0.0
        self.sig_every = sig.every_n_packets or 0
        self._rng_signal = np.random.default_rng(np.random.SeedSequence(entropy=(spec.seed, 0x51)))
        self._uni = np.empty(0)
        self._uni_pos = 0

        self.horizon = spec.duration_s
        self.now = 0.0
        self.heap: list = []
        self._seq = 0  # event tiebreak

        # per-packet records (lists for speed, arrays on snapshot)
        self.t1: list[float] = []
        self.t2: list[float] = []
        self.t3: list[float] = []
        self.t4: list[float] = []
        self.sig_flags: list[bool] = []
        self.retx_counts: list[int] = []

        self.stack: deque[int] = deque()
        self.outstanding = 0.0
        self.sent_counter = 0  # network ingress count, drives periodic marks
        self.last_decrease = -INF
        self.marked = 0
        self.dropped = 0

        self.cwnd_t: list[float] = [0.0]
        self.cwnd_w: list[float] = [self.window]
        self.queue_t: list[float] = []
        self.queue_n: list[int] = []

        # network server state (finite capacity)
        self.server_free = 0.0
        self.in_system: deque[float] = deque()  # service completion times

        # receiver reordering state (drop mode)
        self.expected = 0
        self.held: dict[int, float] = {}

        src = spec.source
        self.greedy = isinstance(src, GreedySource)
        if isinstance(src, ConstantSource):
            self.pkt_interval = self.mss / src.rate_bps
            self.trace_times = None
        elif isinstance(src, TraceSource):
            self.pkt_interval = None
            levels = np.arange(1, int(src.trace.values[-1] // self.mss) + 1) * self.mss
            self.trace_times = src.trace.time_at_level(levels)
        else:
            self.pkt_interval = None
            self.trace_times = None

        self._next_create = 0  # next packet index not yet given an arrival event
        self._schedule_initial()

    # -- sources ----------------------------------------------------------

    def _arrival_time(self, idx: int) -> float | None:
        if self.pkt_interval is not None:
            t = (idx + 1) * self.pkt_interval
            return t if t <= self.horizon else None
        if self.trace_times is not None:
            if idx < len(self.trace_times) and self.trace_times[idx] <= self.horizon:
                return float(self.trace_times[idx])
            return None
        return None

    def _schedule_initial(self):
        if self.greedy:
            self._try_send()
        else:
            t = self._arrival_time(0)
            if t is not None:
                self._push(t, _EV_ARRIVAL, 0)

    def _push(self, t, kind, pid, aux=False):
        self._seq += 1
        heapq.heappush(self.heap, (t, kind, self._seq, pid, aux))

    # -- signal process ---------------------------------------------------

    def _bernoulli(self) -> bool:
        if self._uni_pos >= len(self._uni):
            self._uni = self._rng_signal.random(_RAND_BLOCK)
            self._uni_pos = 0
        u = self._uni[self._uni_pos]
        self._uni_pos += 1
        return bool(u < self.sig_p)

    # -- core loop --------------------------------------------------------

    def _new_packet(self, t1: float) -> int:
        self.t1.append(t1)
        self.t2.append(math.nan)
        self.t3.append(math.nan)
        self.t4.append(math.nan)
        self.sig_flags.append(False)
        self.retx_counts.append(0)
        return len(self.t1) - 1

    def _record_cwnd(self):
        self.cwnd_t.append(self.now)
        self.cwnd_w.append(self.window)

    def _try_send(self):
        mss = self.mss
        while self.outstanding + mss <= self.window + 1e-9:
            if self.stack:
                pid = self.stack.popleft()
            elif self.greedy and self.now <= self.horizon:
                pid = self._new_packet(self.now)
            else:
                break
            self._send(pid)

    def _send(self, pid: int):
        now = self.now
        mss = self.mss
        if math.isnan(self.t2[pid]):
            self.t2[pid] = now
        self.sent_counter += 1

        signaled = False
        kind = self.sig_kind
        if kind == "bernoulli":
            signaled = self._bernoulli()
        elif kind == "periodic":
            signaled = self.sent_counter % self.sig_every == 0

        if self.finite_cap:
            # fluid rate limiter: a packet leaves as soon as the link has
            # drained everything ahead of it, with departures spaced mss/C
            q = self.in_system
            while q and q[0] <= now:
                q.popleft()
            occ = len(q)
            if occ >= self.buffer:
                if self.drop_mode:
                    self.dropped += 1
                    self.retx_counts[pid] += 1
                    self.outstanding += mss
                    self._push(now + max(self.rtt, 1e-12), _EV_LOSS, pid)
                    return
                signaled = True  # mark rather than lose data in mark mode
            done = now if now > self.server_free else self.server_free
            self.server_free = done + mss / self.cap
            q.append(done)
            self.queue_t.append(now)
            self.queue_n.append(len(q))
            exit_t = done + self.fwd
        else:
            if kind == "buffer_overflow":
                signaled = False  # infinite buffer never overflows
            exit_t = now + self.fwd

        if signaled:
            self.marked += 1
            self.sig_flags[pid] = True
        self.outstanding += mss

        if self.drop_mode and signaled:
            # the signal is a loss: packet never reaches the receiver
            self.dropped += 1
            self.retx_counts[pid] += 1
            self._push(now + max(self.rtt, 1e-12), _EV_LOSS, pid)
            return

        if self.drop_mode or self.finite_cap:
            self._push(exit_t, _EV_DELIVER, pid, signaled)
        else:
            # in-order by construction: record delivery without an event
            self.t3[pid] = exit_t
            self.t4[pid] = exit_t
            self._push(exit_t + self.rev, _EV_ACK, pid, signaled)

    def _deliver(self, pid: int, signaled: bool):
        now = self.now
        self.t3[pid] = now
        if self.drop_mode:
            if pid == self.expected:
                self.t4[pid] = now
                self.expected += 1
                while self.expected in self.held:
                    self.t4[self.expected] = now
                    del self.held[self.expected]
                    self.expected += 1
            elif pid > self.expected:
                self.held[pid] = now
            else:  # stale retransmission duplicate
                pass
        else:
            self.t4[pid] = now
        self._push(now + self.rev, _EV_ACK, pid, signaled)

    def _on_signal(self):
        if self.now >= self.last_decrease + self.rtt:
            self.window = max(self.floor, self.window * self.beta)
            self.last_decrease = self.now
            self._record_cwnd()

    def _ack(self, pid: int, signaled: bool):
        self.outstanding -= self.mss
        if self.adaptive:
            if signaled:
                self._on_signal()
            else:
                self.window += self.inc if self.inc_const else self.inc / self.window
                self._record_cwnd()
        self._try_send()

    def _loss_detect(self, pid: int):
        self.outstanding -= self.mss
        if self.adaptive:
            self._on_signal()
        self.stack.appendleft(pid)
        self._try_send()

    def run(self) -> SimOutput:
        self.run_until_idle()
        return self.snapshot()

    def run_until_idle(self):
        heap = self.heap
        while heap:
            t, kind, _, pid, aux = heapq.heappop(heap)
            self.now = t
            if kind == _EV_ACK:
                self._ack(pid, aux)
            elif kind == _EV_DELIVER:
                self._deliver(pid, aux)
            elif kind == _EV_ARRIVAL:
                # pid is the packet index for this arrival
                real = self._new_packet(t)
                assert real == pid
                self.stack.append(pid)
                nxt = self._arrival_time(pid + 1)
                if nxt is not None:
                    self._push(nxt, _EV_ARRIVAL, pid + 1)
                self._try_send()
            else:  # _EV_LOSS
                self._loss_detect(pid)

    def extend(self, new_duration_s: float):
        """Raise the horizon and continue the same sample path."""
        if new_duration_s <= self.horizon:
            return
        self.horizon = new_duration_s
        if self.greedy:
            self._try_send()
        elif not self.heap:
            t = self._arrival_time(self._next_arrival_index())
            if t is not None:
                self._push(t, _EV_ARRIVAL, self._next_arrival_index())
        self.run_until_idle()

    def _next_arrival_index(self) -> int:
        return len(self.t1)

    def snapshot(self) -> SimOutput:
        return SimOutput(
            t1=np.array(self.t1),
            t2=np.array(self.t2),
            t3=np.array(self.t3),
            t4=np.array(self.t4),
            signaled=np.array(self.sig_flags, dtype=bool),
            retx=np.array(self.retx_counts, dtype=np.int32),
            cwnd_times=np.array(self.cwnd_t),
            cwnd_bits=np.array(self.cwnd_w),
            queue_times=np.array(self.queue_t),
            queue_occupancy=np.array(self.queue_n, dtype=np.int32),
            dropped_count=self.dropped,
            marked_count=self.marked,
            mss_bits=self.mss,
            duration_s=self.horizon,
            warmup_s=self.spec.warmup_s,
        )


try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

    def _njit(*a, **k):
        def deco(f):
            return f

        return deco if not (len(a) == 1 and callable(a[0])) else a[0]


_ACK_RING = 1 << 20


@_njit(cache=True)
def _probe_kernel(  # pragma: no cover - exercised via ProbeTrainSampler
    interval, fwd, rev, mss,
    adaptive, beta, inc, inc_const, floor_bits,
    sig_kind, sig_p, sig_every,
    fstate, istate,
    ack_t, ack_s, uniforms,
    n_target, sample_idx, sample_out,
):
    """Event loop for a constant-rate train on an infinite-capacity path.

    Mirrors the general simulator exactly for this sub-case: sends happen
    at arrival or acknowledgement instants, acknowledgements precede a
    simultaneous arrival, one signal uniform is consumed per send.

    fstate: [window, last_decrease]
    istate: [created, next_send_pid, outstanding_pkts, sent_count,
             ack_head, ack_tail, spos]
    Returns 0 on success, 1 on ring overflow.
    """
    window = fstate[0]
    last_dec = fstate[1]
    created = istate[0]
    next_send = istate[1]
    outstanding = istate[2]
    sent_count = istate[3]
    ack_head = istate[4]
    ack_tail = istate[5]
    spos = istate[6]
    upos = 0
    rtt = fwd + rev
    n_samples = sample_idx.shape[0]

    while created < n_target or next_send < created:
        ack_time = ack_t[ack_head % _ACK_RING] if ack_tail > ack_head else np.inf
        arr_time = (created + 1) * interval if created < n_target else np.inf
        if ack_time == np.inf and arr_time == np.inf:
            break
        if ack_time <= arr_time:
            now = ack_time
            sig = ack_s[ack_head % _ACK_RING]
            ack_head += 1
            outstanding -= 1
            if adaptive:
                if sig:
                    if now >= last_dec + rtt:
                        w = window * beta
                        window = w if w > floor_bits else floor_bits
                        last_dec = now
                else:
                    window += inc if inc_const else inc / window
        else:
            now = arr_time
            created += 1
        # send while the window admits queued packets
        while next_send < created and outstanding * mss + mss <= window + 1e-9:
            pid = next_send
            next_send += 1
            sent_count += 1
            sig = False
            if sig_kind == 1:
                sig = uniforms[upos] < sig_p
                upos += 1
            elif sig_kind == 2:
                sig = sent_count % sig_every == 0
            outstanding += 1
            if ack_tail - ack_head >= _ACK_RING:
                return 1
            slot = ack_tail % _ACK_RING
            ack_t[slot] = (now + fwd) + rev  # match the two-hop rounding
            ack_s[slot] = sig
            ack_tail += 1
            if spos < n_samples and pid == sample_idx[spos]:
                sample_out[spos] = (now + fwd) - (pid + 1) * interval
                spos += 1

    fstate[0] = window
    fstate[1] = last_dec
    istate[0] = created
    istate[1] = next_send
    istate[2] = outstanding
    istate[3] = sent_count
    istate[4] = ack_head
    istate[5] = ack_tail
    istate[6] = spos
    return 0


class ProbeTrainSampler:
    """End-to-end delays of selected packets in a constant-rate probe train.

    Uses a compiled kernel when the scenario qualifies (constant source,
    infinite capacity, mark-style signalling); otherwise falls back to the
    general event simulator.  ``delays(idx)`` may be called repeatedly with
    a growing index array; the same sample path is extended, never replayed.
    """

    def __init__(self, spec: ScenarioSpec):
        spec.validate()
        if not isinstance(spec.source, ConstantSource):
            raise ScenarioError("probe trains need a constant-rate source")
        self.spec = spec
        self.interval = spec.mss_bits / spec.source.rate_bps
        self.fast = (
            _HAVE_NUMBA
            and not math.isfinite(spec.path.capacity_bps)
            and spec.signal.delivery == "mark"
            and spec.signal.kind in ("none", "bernoulli", "periodic")
        )
        if self.fast:
            self._init_fast()
        else:
            self._sim = None  # built lazily with the needed horizon

    def _init_fast(self):
        spec = self.spec
        ctl = spec.controller
        if isinstance(ctl, StaticWindow):
            self.adaptive = False
            window = float(ctl.window_bits)
            self.beta, self.inc, self.inc_const, self.floor = 0.0, 0.0, False, window
        else:
            self.adaptive = True
            self.floor = float(ctl.floor_bits if ctl.floor_bits is not None else spec.mss_bits)
            window = max(self.floor, float(ctl.initial_window_bits
                                           if ctl.initial_window_bits is not None else self.floor))
            self.beta = ctl.decrease_factor
            self.inc_const = ctl.increase_mode == "constant"
            self.inc = ctl.increase * (spec.mss_bits if self.inc_const
                                       else spec.mss_bits * spec.mss_bits)
        sig = spec.signal
        self.sig_kind = {"none": 0, "bernoulli": 1, "periodic": 2}[sig.kind]
        self.sig_p = sig.p or 0.0
        self.sig_every = sig.every_n_packets or 1
        self._rng = np.random.default_rng(np.random.SeedSequence(entropy=(spec.seed, 0x51)))
        self.fstate = np.array([window, -np.inf])
        self.istate = np.zeros(7, dtype=np.int64)
        self.ack_t = np.empty(_ACK_RING)
        self.ack_s = np.zeros(_ACK_RING, dtype=np.bool_)
        self._out: list[np.ndarray] = []
        self._idx_done = 0

    def delays(self, idx: np.ndarray) -> np.ndarray:
        """Delays of the packets with the given (sorted, growing) indices."""
        idx = np.asarray(idx, dtype=np.int64)
        if not self.fast:
            horizon = (idx[-1] + 2) * self.interval
            if self._sim is None:
                self._sim = FlowLoopSim(self.spec.replace(duration_s=horizon))
                self._sim.run_until_idle()
            else:
                self._sim.extend(horizon)
            t1 = np.asarray(self._sim.t1)[idx]
            t4 = np.asarray(self._sim.t4)[idx]
            return t4 - t1

        new_idx = idx[self._idx_done:]
        if len(new_idx):
            n_target = int(new_idx[-1]) + 1
            n_new = n_target - int(self.istate[0])
            uniforms = self._rng.random(max(n_new, 1)) if self.sig_kind == 1 else np.empty(1)
            out = np.empty(len(new_idx))
            rc = _probe_kernel(
                self.interval, self.spec.path.fwd_delay_s, self.spec.path.rev_delay_s,
                self.spec.mss_bits,
                self.adaptive, self.beta, self.inc, self.inc_const, self.floor,
                self.sig_kind, self.sig_p, self.sig_every,
                self.fstate, self.istate, self.ack_t, self.ack_s, uniforms,
                n_target, new_idx, out,
            )
            if rc != 0:
                raise ScenarioError("probe train exceeded the in-flight packet limit")
            self.istate[6] = 0  # sample cursor is per-call
            self._out.append(out)
            self._idx_done = len(idx)
        return np.concatenate(self._out)[: len(idx)]


def run_scenario(spec: ScenarioSpec) -> SimOutput:
    """Run one scenario to completion; identical seeds give identical output."""
    return FlowLoopSim(spec).run()


def decompose_delays(out: SimOutput) -> dict[str, np.ndarray]:
    """Split each packet's end-to-end delay into stack, network and receiver parts."""
    d_snd = out.t2 - out.t1
    d_net = out.t3 - out.t2
    d_rcv = out.t4 - out.t3
    return {"d_snd": d_snd, "d_net": d_net, "d_rcv": d_rcv, "d_e2e": out.t4 - out.t1}


def stack_buffering_probability(out: SimOutput, threshold_s: float = 0.0) -> float:
    """Fraction of steady-state packets delayed in the sender stack beyond the threshold."""
    mask = out.steady_state_mask()
    if not mask.any():
        raise ScenarioError("no steady-state packets to evaluate")
    d_snd = (out.t2 - out.t1)[mask]
    return float(np.mean(d_snd > threshold_s))


def cwnd_autocorrelation(
    times, window_bits, lags_s, tick_s: float = 1e-3, t_start: float = 0.0, t_end: float | None = None
) -> list[tuple[float, float]]:
    """Autocorrelation of the window process at the requested time lags.

    The change-point series is resampled to a uniform tick (last value held)
    before the biased sample autocorrelation is taken.
    """
    times = np.asarray(times, float)
    window_bits = np.asarray(window_bits, float)
    if t_end is None:
        t_end = float(times[-1])
    grid = np.arange(t_start, t_end, tick_s)
    if len(grid) < 2:
        raise ScenarioError("window series too short")
    idx = np.searchsorted(times, grid, side="right") - 1
    series = window_bits[np.maximum(idx, 0)]
    x = series - series.mean()
    var = float(np.dot(x, x))
    if var == 0.0:
        raise ScenarioError("constant window has no defined autocorrelation")
    n = len(x)
    out = []
    for lag in np.atleast_1d(np.asarray(lags_s, float)):
        k = int(round(lag / tick_s))
        if k >= n:
            raise ScenarioError(f"lag {lag} exceeds the series length")
        c = float(np.dot(x[: n - k], x[k:])) / var
        out.append((float(lag), c))
    return out
