"""Back-end data plane: cycle-approximate transport-layer simulation.

The simulation is event-driven at burst granularity; data beats inside a
burst follow the endpoint contract (one beat per cycle after the access
latency) and are handled in closed form, so idle waits cost no simulation
work.  Cycle semantics implemented:

* a descriptor accepted by the back-end issues its first read request two
  cycles later with the legalizer enabled, one cycle without it;
* the legalizer produces at most one burst per cycle per side and accepts
  a new descriptor the cycle its previous one finishes, so back-to-back
  bus-sized transfers sustain one burst per cycle with no bubble;
* one read request and one write request may be issued per cycle per
  engine, switching between protocol ports with no dead cycle;
* a read burst is issued only when a read credit is free and the dataflow
  buffer can reserve the full burst length;
* a write burst is issued as soon as a write credit is free and its first
  realigned byte is buffered (all of its bytes, with read/write
  decoupling off);
* bytes enter the dataflow buffer in stream order, at most one bus word
  per cycle, and leave the same way through the write managers.

A failing burst pauses transfer processing at its response cycle; the
error action (continue / abort / replay) is applied one cycle later.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .core import (
    EngineConfig,
    ErrorAction,
    TransferDescriptor1D,
    check_descriptor,
    validate_config,
)
from .legalizer import iter_side
from .memsys import EndpointModel, EndpointSim, ErrorSpec
from .metrics import PortStats
from .protocol import ProtocolId, beats as burst_beats, burst_is_legal, capabilities

_BIG = 1 << 62
_M64 = 0xFFFF_FFFF_FFFF_FFFF


class ZeroSeed(ValueError):
    pass


class NoPendingError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


def init_read(pattern: tuple, length: int) -> bytes:
    """Init pseudo-protocol pattern generator.

    ``pattern`` is ``("constant", byte)``, ``("increment", start)`` or
    ``("pseudorandom", seed)``.  The pseudorandom stream is xorshift64
    (x ^= x<<13; x ^= x>>7; x ^= x<<17) emitting the state little-endian
    after each step; seed 0 is forbidden.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    kind, arg = pattern
    if kind == "constant":
        return bytes([arg & 0xFF]) * length
    if kind == "increment":
        start = arg & 0xFF
        rep = bytes((start + i) % 256 for i in range(256))
        whole, rem = divmod(length, 256)
        return rep * whole + rep[:rem]
    if kind == "pseudorandom":
        if arg == 0:
            raise ZeroSeed("xorshift64 seed must be non-zero")
        x = arg & _M64
        out = bytearray()
        while len(out) < length:
            x ^= (x << 13) & _M64
            x ^= x >> 7
            x ^= (x << 17) & _M64
            out += x.to_bytes(8, "little")
        return bytes(out[:length])
    raise ValueError(f"unknown init pattern {kind!r}")


def midend_latency(kind: str, zero_latency: bool = False) -> int:
    """Pipeline cycles one mid-end stage adds."""
    if kind == "tensor_nd" and zero_latency:
        return 0
    return 1


def launch_latency(cfg: EngineConfig, midend_latencies: Iterable[int] = ()) -> int:
    """Cycles from front-end emission to the first read request."""
    return (2 if cfg.has_legalizer else 1) + sum(midend_latencies)


class ByteStreamTransform:
    """In-stream accelerator hook at the dataflow element.

    Implementations must preserve stream length; the default is identity.
    """

    def transform(self, data: bytes) -> bytes:
        return data


@dataclass
class ErrorReport:
    burst_addr: int
    side: str
    cause: str
    transfer_id: int
    burst_seq: int
    cycle: int
    awaiting_action: bool = True


@dataclass
class LaunchItem:
    """One 1D descriptor handed to an engine by the front-end/mid-end feed."""

    ready: int                       # arrival cycle at the back-end
    desc: TransferDescriptor1D
    parent: int = 0                  # top-level workload transfer id
    presented_at: int = 0            # front-end emission cycle
    init_pattern: tuple | None = None
    meta: dict = field(default_factory=dict)


class _Transfer:
    __slots__ = ("tid", "parent", "desc", "presented_at", "accept_cycle",
                 "buf", "stream_base", "reads_open", "writes_open",
                 "legalized", "status", "first_read_req", "completed_at",
                 "skipped", "init_pattern", "intra_port", "src_port",
                 "dst_port")

    def __init__(self, tid: int, item: LaunchItem):
        self.tid = tid
        self.parent = item.parent
        self.desc = item.desc
        self.presented_at = item.presented_at
        self.accept_cycle = -1
        self.buf: bytearray | None = None
        self.stream_base = 0
        self.reads_open = 0     # emitted, not yet delivered/absorbed
        self.writes_open = 0    # emitted, not yet acknowledged/absorbed
        self.legalized = False
        self.status = "pending"
        self.first_read_req: int | None = None
        self.completed_at: int | None = None
        self.skipped: list[tuple[int, int]] = []
        self.init_pattern = item.init_pattern
        self.intra_port = False
        self.src_port = ""
        self.dst_port = ""


class _Burst:
    __slots__ = ("t", "addr", "length", "port", "ep", "ready", "seq", "offset",
                 "stream_lo", "beats", "head_bytes", "issued_at", "fault",
                 "replayed", "gen")

    def __init__(self, t, addr, length, port, ep, ready, seq, offset,
                 stream_lo, nbeats, head_bytes):
        self.t = t
        self.addr = addr
        self.length = length
        self.port = port
        self.ep = ep
        self.ready = ready
        self.seq = seq
        self.offset = offset
        self.stream_lo = stream_lo
        self.beats = nbeats
        self.head_bytes = head_bytes  # bytes carried by the first beat
        self.issued_at = -1
        self.fault: ErrorSpec | None = None
        self.replayed = False
        self.gen = 0


# Same-cycle handler ordering: releases before decisions, writes before
# reads (a beat leaving the buffer this cycle frees space for a read issued
# this cycle; the reverse path always takes at least the endpoint latency).
_P_RELEASE = 0
_P_RESOLVE = 1
_P_FEED = 2
_P_LEG = 3
_P_WTRY = 4
_P_RTRY = 5


class _Clock:
    """Shared deterministic event heap; ties break by priority then order."""

    def __init__(self):
        self.now = 0
        self.heap: list = []
        self._seq = itertools.count()
        self.events = 0

    def push(self, cycle: int, prio: int, fn: Callable[[], None]):
        heapq.heappush(self.heap, (max(cycle, self.now), prio, next(self._seq), fn))

    def run(self, max_events: int = 100_000_000) -> int:
        while self.heap:
            cycle, _prio, _seq, fn = heapq.heappop(self.heap)
            self.now = cycle
            fn()
            self.events += 1
            if self.events > max_events:
                raise RuntimeError("event budget exceeded; simulation runaway")
        return self.now


class Simulation:
    """One engine instance plus its endpoints on a shared clock."""

    def __init__(self, cfg: EngineConfig, endpoints: dict[str, EndpointSim],
                 clock: _Clock | None = None, name: str = "",
                 transform: ByteStreamTransform | None = None,
                 trace: list | None = None):
        validate_config(cfg)
        self.cfg = cfg
        self.name = name
        self.clock = clock if clock is not None else _Clock()
        self.trace = trace
        self.transform = transform
        self.endpoints = dict(endpoints)
        for p in cfg.ports:
            if p.protocol is ProtocolId.INIT:
                # Implicit ideal endpoint: patterns have no memory behind them.
                self.endpoints.setdefault(p.name, EndpointSim(
                    EndpointModel(latency=1, max_outstanding=_BIG)))
            elif p.name not in self.endpoints:
                raise ConfigError(f"port {p.name!r} has no endpoint model")

        self.bus = cfg.bus_bytes
        self.read_credits = cfg.nax_read
        self.write_credits = cfg.nax_write

        self.intake: list[_Transfer] = []
        self._feed: list[LaunchItem] = []
        self._feed_ptr = 0
        self._next_tid = 1
        self._top = 1 << cfg.aw
        self._port_pair: dict[tuple, tuple] = {}
        self.current: _Transfer | None = None
        self._gen_read = None
        self._gen_write = None
        self._buf_read = None      # lookahead burst per side
        self._buf_write = None
        self._emit_read_at = 0
        self._emit_write_at = 0

        self.rq: list[_Burst] = []
        self.wq: list[_Burst] = []
        self._last_read_issue = -1
        self._last_write_issue = -1

        # Byte-entry spans (stream_lo, stream_hi, start_cycle, c0, bus);
        # c0 None marks a skip span whose bytes materialize at start_cycle.
        self.spans: list[tuple] = []
        self._span_ptr = 0
        self._entry_contig_hi = 0
        self._entry_last_end = -1
        self._stream_total = 0
        self.issued_read_bytes = 0
        self._inflight_reads: dict[int, _Burst] = {}

        # Drain runs (start_cycle, n_beats, bytes_first, bytes_step,
        # cum_before); starts are non-decreasing and runs never overlap.
        self.drains: list[tuple] = []
        self._drain_total = 0
        self._drain_ptr = 0
        self._drain_floor = 0
        self._w_free = 0

        self.wip: list[_Burst] = []   # issued writes, beats not fully resolved
        self._wip_beat = 0

        self.paused = False
        self.pending_error: ErrorReport | None = None
        self._error_ctx: tuple[_Burst, str] | None = None

        self.port_stats: dict[str, PortStats] = {p.name: PortStats()
                                                 for p in cfg.ports}
        self.transfers: list[_Transfer] = []
        self.contract_violations: list[str] = []
        self.first_request: int | None = None
        self.last_response = 0
        self._read_waiting_space = False
        self._write_waiting_bytes = False
        self.on_complete: Callable[[_Transfer], None] | None = None

        # Earliest pending wake per polling unit; avoids duplicate events.
        self._sched: dict[str, int | None] = {
            "read": None, "write": None, "leg": None, "resolve": None}

    # -- plumbing ------------------------------------------------------------
    def _wake(self, cycle: int, prio: int, fn):
        self.clock.push(cycle, prio, fn)

    def _wake_unit(self, unit: str, cycle: int, prio: int, runner):
        pending = self._sched[unit]
        if pending is not None and pending <= cycle:
            return
        self._sched[unit] = cycle
        self.clock.push(cycle, prio, runner)

    def _run_unit(self, unit: str, handler):
        # a wake superseded by an earlier one is stale: drop it, or it
        # would re-arm itself and snowball
        if self._sched[unit] != self.clock.now:
            return
        self._sched[unit] = None
        handler()

    def _wake_read(self, cycle: int):
        self._wake_unit("read", cycle, _P_RTRY, self._run_read)

    def _run_read(self):
        self._run_unit("read", self._try_read)

    def _wake_write(self, cycle: int):
        self._wake_unit("write", cycle, _P_WTRY, self._run_write)

    def _run_write(self):
        self._run_unit("write", self._try_write)

    def _wake_leg(self, cycle: int):
        self._wake_unit("leg", cycle, _P_LEG, self._run_leg)

    def _run_leg(self):
        self._run_unit("leg", self._leg_step)

    def _wake_resolve(self, cycle: int):
        self._wake_unit("resolve", cycle, _P_WTRY, self._run_resolve)

    def _run_resolve(self):
        self._run_unit("resolve", self._resolve_writes)

    def _tr(self, cycle, unit, event, addr, length, port):
        if self.trace is not None:
            unit = f"{self.name}{unit}" if self.name else unit
            port = f"{self.name}{port}" if self.name and port else port
            self.trace.append((cycle, unit, event, addr, length, port))

    # -- feed ------------------------------------------------------------
    def feed(self, items: Iterable[LaunchItem]):
        """Queue launch items (must be in non-decreasing ready order)."""
        items = list(items)
        if not items:
            return
        self._feed.extend(items)
        self._wake_leg(items[0].ready)

    def _arrive(self, item: LaunchItem):
        """Dynamic arrival (descriptor-chain front-end)."""
        t = _Transfer(self._next_tid, item)
        self._next_tid += 1
        self.transfers.append(t)
        self.intake.append(t)
        if self.trace is not None:
            self._tr(self.clock.now, "frontend", "present",
                     item.desc.src_addr, item.desc.length, "")
        self._leg_step()

    # -- legalizer stage -------------------------------------------------
    def _fail(self, t: _Transfer, why: str):
        t.status = "failed"
        t.completed_at = self.clock.now
        self.contract_violations.append(f"transfer {t.tid}: {why}")
        self._tr(self.clock.now, "legalizer", "contract_violation",
                 t.desc.src_addr, t.desc.length, "")
        if self.on_complete:
            self.on_complete(t)

    def _port_pair_for(self, d: TransferDescriptor1D):
        key = (d.src_protocol, d.dst_protocol)
        pair = self._port_pair.get(key)
        if pair is None:
            pair = (self.cfg.port_for(d.src_protocol, "read"),
                    self.cfg.port_for(d.dst_protocol, "write"))
            self._port_pair[key] = pair
        return pair

    def _reject_reasons(self, d: TransferDescriptor1D) -> list[str]:
        probs = [v.message for v in check_descriptor(d, self.cfg.aw)]
        src_port, dst_port = self._port_pair_for(d)
        if src_port is None:
            probs.append(f"no read-capable port for {d.src_protocol.value}")
        if dst_port is None:
            probs.append(f"no write-capable port for {d.dst_protocol.value}")
        cap = d.options.user_burst_cap
        if cap is not None and cap < self.bus:
            probs.append(f"burst cap {cap} below bus width {self.bus}")
        return probs

    def _accept_next(self):
        cfg = self.cfg
        now = self.clock.now
        top = self._top
        while self.current is None:
            if self.intake:
                t = self.intake.pop(0)
            elif self._feed_ptr < len(self._feed):
                item = self._feed[self._feed_ptr]
                if item.ready > now:
                    self._wake_leg(item.ready)
                    return
                self._feed_ptr += 1
                t = _Transfer(self._next_tid, item)
                self._next_tid += 1
                self.transfers.append(t)
                if self.trace is not None:
                    self._tr(item.ready, "frontend", "present",
                             item.desc.src_addr, item.desc.length, "")
            else:
                return
            d = t.desc
            src_port, dst_port = self._port_pair_for(d)
            cap = d.options.user_burst_cap
            ok = (src_port is not None and dst_port is not None
                  and 0 <= d.src_addr and d.src_addr + d.length <= top
                  and 0 <= d.dst_addr and d.dst_addr + d.length <= top
                  and (cap is None or cap >= self.bus))
            if not ok:
                self._fail(t, "; ".join(self._reject_reasons(d)))
                continue
            t.accept_cycle = now
            t.src_port = src_port.name
            t.dst_port = dst_port.name
            t.intra_port = src_port.name == dst_port.name
            if d.length == 0:
                t.status = "rejected" if cfg.reject_zero_length else "complete"
                t.completed_at = now
                self._tr(now, "legalizer",
                         "reject_zero_length" if cfg.reject_zero_length
                         else "zero_length", d.src_addr, 0, "")
                if self.on_complete:
                    self.on_complete(t)
                continue
            t.stream_base = self._stream_total
            self._stream_total += d.length
            t.buf = bytearray(d.length)
            if d.src_protocol is ProtocolId.INIT:
                t.buf[:] = init_read(t.init_pattern or ("constant", 0), d.length)
            if cfg.has_legalizer:
                self.current = t
                self._gen_read = iter_side(
                    d.src_addr, d.length, d.src_protocol, cfg.dw,
                    d.options.side_cap("read", self.bus), "read")
                self._gen_write = iter_side(
                    d.dst_addr, d.length, d.dst_protocol, cfg.dw,
                    d.options.side_cap("write", self.bus), "write")
                self._buf_read = next(self._gen_read, None)
                self._buf_write = next(self._gen_write, None)
                self._emit_read_at = now + 1
                self._emit_write_at = now + 1
                self._wake_leg(now + 1)
            else:
                ok = (burst_is_legal(d.src_protocol, d.src_addr, d.length, cfg.dw)
                      and burst_is_legal(d.dst_protocol, d.dst_addr, d.length, cfg.dw))
                if not ok:
                    self._fail(t, "illegal transfer with legalizer disabled")
                    continue
                t.legalized = True
                self._emit(t, "read", d.src_addr, d.length, t.src_port, now, 0)
                self._emit(t, "write", d.dst_addr, d.length, t.dst_port, now, 0)

    def _emit(self, t: _Transfer, side, addr, length, port, ready, seq):
        bus = self.bus
        if side == "read":
            proto = t.desc.src_protocol
            offset = addr - t.desc.src_addr
        else:
            proto = t.desc.dst_protocol
            offset = addr - t.desc.dst_addr
        eff = 0 if capabilities(proto).addressless else addr
        head = min(length, bus - eff % bus)
        nb = 1 + (length - head + bus - 1) // bus if length > head else 1
        b = _Burst(t, addr, length, port, self.endpoints[port], ready, seq,
                   offset, t.stream_base + offset, nb, head)
        if side == "read":
            t.reads_open += 1
            self.rq.append(b)
            self._wake_read(ready + 1)
        else:
            t.writes_open += 1
            self.wq.append(b)
            self._wake_write(ready + 1)
        if self.trace is not None:
            self._tr(ready, "legalizer", f"{side}_burst", addr, length, port)

    def _leg_step(self):
        now = self.clock.now
        if self.current is None:
            self._accept_next()
        t = self.current
        if t is None:
            return
        next_wake = None
        if self._buf_read is not None:
            if now < self._emit_read_at:
                next_wake = self._emit_read_at
            elif len(self.rq) < self.cfg.nax_read:
                nxt = self._buf_read
                self._buf_read = next(self._gen_read, None)
                self._emit(t, "read", nxt.addr, nxt.length, t.src_port,
                           now, nxt.seq)
                self._emit_read_at = now + 1
                next_wake = now + 1
            # else: queue full; retried when an issue pops the queue
        if self._buf_write is not None:
            if now < self._emit_write_at:
                next_wake = self._emit_write_at if next_wake is None \
                    else min(next_wake, self._emit_write_at)
            elif len(self.wq) < self.cfg.nax_write:
                nxt = self._buf_write
                self._buf_write = next(self._gen_write, None)
                self._emit(t, "write", nxt.addr, nxt.length, t.dst_port,
                           now, nxt.seq)
                self._emit_write_at = now + 1
                if next_wake is None:
                    next_wake = now + 1
        if self._buf_read is None and self._buf_write is None:
            t.legalized = True
            self.current = None
            self._gen_read = None
            self._gen_write = None
            self._maybe_complete(t, now)
            # accept the next descriptor in the same cycle: its first burst
            # then appears one cycle after this one's last burst
            self._accept_next()
            return
        if next_wake is not None:
            self._wake_leg(next_wake)

    # -- byte-entry spans ----------------------------------------------------
    def _span_for(self, k: int):
        spans = self.spans
        i = self._span_ptr
        n = len(spans)
        if i < n:
            s = spans[i]
            if s[0] <= k < s[1]:
                return s
            if k >= s[1]:
                while i < n - 1:
                    i += 1
                    s = spans[i]
                    if s[0] <= k < s[1]:
                        self._span_ptr = i
                        return s
                    if s[0] > k:
                        break
        a, b = 0, n - 1
        while a <= b:
            m = (a + b) // 2
            if spans[m][0] > k:
                b = m - 1
            elif spans[m][1] <= k:
                a = m + 1
            else:
                self._span_ptr = m
                return spans[m]
        raise KeyError(k)

    def _arrival(self, k: int) -> int | None:
        """Cycle stream byte ``k`` enters the buffer; None if unresolved."""
        if k >= self._entry_contig_hi:
            return None
        lo, _hi, start, c0, bus = self._span_for(k)
        if c0 is None:
            return start
        rel = k - lo
        return start + (0 if rel < c0 else 1 + (rel - c0) // bus)

    @staticmethod
    def _span_end(span) -> int:
        lo, hi, start, c0, bus = span
        if c0 is None:
            return start
        n = hi - lo
        return start + (0 if n <= c0 else 1 + (n - 1 - c0) // bus)

    def _add_span(self, lo, hi, start, c0, bus) -> int:
        span = (lo, hi, start, c0, bus)
        self.spans.append(span)
        if lo == self._entry_contig_hi:
            self._entry_contig_hi = hi
        end = self._span_end(span)
        if end > self._entry_last_end:
            self._entry_last_end = end
        if self._write_waiting_bytes:
            self._write_waiting_bytes = False
            self._wake_write(max(self.clock.now, start))
        self._wake_resolve(max(self.clock.now, start))
        return end

    # -- drains --------------------------------------------------------------
    def _drain_upto(self, t: int) -> int:
        """Cumulative bytes drained from the buffer by end of cycle ``t``.

        Query times never decrease, so a moving pointer keeps this O(1)
        amortized.
        """
        dr = self.drains
        i = self._drain_ptr
        while i < len(dr) and dr[i][0] + dr[i][1] - 1 <= t:
            i += 1
        self._drain_ptr = i
        if i < len(dr) and dr[i][0] <= t:
            start, _n, b0, step, cum = dr[i]
            done = t - start + 1
            return cum + b0 + step * (done - 1)
        if i == 0:
            return 0
        start, n, b0, step, cum = dr[i - 1]
        return cum + b0 + step * (n - 1)

    def _drain_reaches(self, want: int) -> int | None:
        """Earliest cycle by which ``want`` bytes are drained, if scheduled."""
        if want <= 0:
            return 0
        dr = self.drains
        a, b = self._drain_ptr, len(dr) - 1
        hit = None
        while a <= b:
            m = (a + b) // 2
            start, n, b0, step, cum = dr[m]
            if cum + b0 + step * (n - 1) >= want:
                hit = m
                b = m - 1
            else:
                a = m + 1
        if hit is None:
            return None
        start, n, b0, step, cum = dr[hit]
        need = want - cum
        if need <= b0:
            return start
        return start + -(-(need - b0) // step)

    def _add_drain(self, start, n, b0, step):
        if start < self._drain_floor:
            start = self._drain_floor
        self._drain_floor = start + n
        self.drains.append((start, n, b0, step, self._drain_total))
        self._drain_total += b0 + step * (n - 1)
        if self._read_waiting_space:
            self._read_waiting_space = False
            self._wake_read(max(self.clock.now, start))

    # -- read manager ---------------------------------------------------------
    def _try_read(self):
        while True:
            if self.paused or not self.rq:
                return
            now = self.clock.now
            b = self.rq[0]
            if b.t.status != "pending":
                self.rq.pop(0)
                continue
            t_min = max(b.ready + 1, self._last_read_issue + 1)
            if now < t_min:
                self._wake_read(t_min)
                return
            if self.read_credits < 1:
                return  # woken on credit release
            if b.ep.outstanding_read >= b.ep.model.max_outstanding:
                return  # woken on endpoint release
            reserved = max(0, self.issued_read_bytes - self._drain_upto(now))
            if reserved + b.length > self.cfg.buffer_bytes:
                want = self.issued_read_bytes + b.length - self.cfg.buffer_bytes
                when = self._drain_reaches(want)
                if when is None:
                    self._read_waiting_space = True
                else:
                    self._wake_read(max(when, now + 1))
                return
            self.rq.pop(0)
            self._issue_read(b, now)
            self._wake_leg(now)

    def _issue_read(self, b: _Burst, now: int):
        t = b.t
        ep = b.ep
        self.read_credits -= 1
        self.issued_read_bytes += b.length
        self._last_read_issue = now
        b.issued_at = now
        if t.first_read_req is None:
            t.first_read_req = now
            if self.first_request is None or now < self.first_request:
                self.first_request = now
        first_beat, fault = ep.accept_read(now, b.addr, b.length, b.beats)
        if self.trace is not None:
            self._tr(now, "rmgr", "read_req", b.addr, b.length, b.port)
        if fault is not None:
            b.fault = fault
            self._wake(first_beat, _P_RELEASE, lambda: self._read_error(b))
            return
        if t.desc.src_protocol is not ProtocolId.INIT:
            t.buf[b.offset:b.offset + b.length] = ep.store.read(b.addr, b.length)
        start = max(first_beat, self._entry_last_end + 1)
        end = self._add_span(b.stream_lo, b.stream_lo + b.length, start,
                             b.head_bytes, self.bus)
        self._inflight_reads[b.stream_lo] = b
        gen = b.gen
        if self.trace is not None:
            self._tr(start, "rmgr", "read_data", b.addr, b.length, b.port)
        self._wake(end, _P_RELEASE, lambda: self._read_done(b, end, gen))

    def _read_done(self, b: _Burst, end: int, gen: int):
        b.ep.read_delivered(end)
        self.read_credits += 1
        if end > self.last_response:
            self.last_response = end
        st = self.port_stats[b.port]
        st.read_beats += b.beats
        if b.gen != gen:
            # data of a burst requeued by error handling: delivered, discarded
            self._wake_read(self.clock.now)
            return
        st.read_payload += b.length
        self._inflight_reads.pop(b.stream_lo, None)
        b.t.reads_open -= 1
        if self.trace is not None:
            self._tr(end, "rmgr", "read_done", b.addr, b.length, b.port)
        self._maybe_complete(b.t, end)
        if self.rq:
            self._wake_read(self.clock.now)
        if self._buf_read is not None or self.intake:
            self._wake_leg(self.clock.now)

    def _read_error(self, b: _Burst):
        now = self.clock.now
        b.ep.read_delivered(now)
        self.read_credits += 1
        self.issued_read_bytes -= b.length
        self.last_response = max(self.last_response, now)
        self._tr(now, "errorhdl", "read_error", b.addr, b.length, b.port)
        self._raise_error(b, "read")

    # -- write manager ------------------------------------------------------
    def _try_write(self):
        while True:
            if self.paused or not self.wq:
                return
            now = self.clock.now
            b = self.wq[0]
            if b.t.status != "pending":
                self.wq.pop(0)
                continue
            t_min = max(b.ready + 1, self._last_write_issue + 1)
            if now < t_min:
                self._wake_write(t_min)
                return
            if self.write_credits < 1:
                return
            if b.ep.outstanding_write >= b.ep.model.max_outstanding:
                return
            if not b.replayed:
                need_k = b.stream_lo if b.t.desc.options.decouple_rw \
                    else b.stream_lo + b.length - 1
                a = self._arrival(need_k)
                if a is None:
                    self._write_waiting_bytes = True
                    return
                if a > now:
                    self._wake_write(a)
                    return
            self.wq.pop(0)
            self._issue_write(b, now)

    def _issue_write(self, b: _Burst, now: int):
        self.write_credits -= 1
        self._last_write_issue = now
        b.issued_at = now
        if self.first_request is None or now < self.first_request:
            self.first_request = now
        b.fault = b.ep.accept_write(now, b.addr, b.length)
        if self.trace is not None:
            self._tr(now, "wmgr", "write_req", b.addr, b.length, b.port)
        self.wip.append(b)
        self._resolve_writes()

    def _beat_last_byte(self, b: _Burst, j: int) -> tuple[int, int]:
        """(stream index of last byte, byte count) of write beat ``j``."""
        d0 = b.head_bytes
        if j == 0:
            return b.stream_lo + d0 - 1, d0
        hi = min(b.length, d0 + j * self.bus)
        lo = d0 + (j - 1) * self.bus
        return b.stream_lo + hi - 1, hi - lo

    def _resolve_writes(self):
        while self.wip:
            b = self.wip[0]
            j = self._wip_beat
            if b.replayed:
                # bytes already drained by the original send: resend held
                # data without touching the stream accounting
                send = max(self._w_free, b.issued_at)
                self._w_free = send + b.beats
                j = b.beats
            while j < b.beats:
                k, nbytes = self._beat_last_byte(b, j)
                a = self._arrival(k)
                if a is None:
                    self._wip_beat = j
                    self._write_waiting_bytes = True
                    return
                send = max(self._w_free, a, b.issued_at)
                run = 1
                if 0 < j < b.beats - 1:
                    span = self._span_for(k)
                    if span[3] is not None:
                        # middle full-bus beats within one span chain 1/cycle
                        can = min(b.beats - 2 - j, (span[1] - 1 - k) // self.bus)
                        if can > 0:
                            run += can
                self._add_drain(send, run, nbytes, self.bus if run > 1 else 0)
                self._w_free = send + run
                j += run
            last_send = self._w_free - 1
            ack = b.ep.write_ack_cycle(last_send)
            if self.trace is not None:
                self._tr(last_send, "wmgr", "write_data", b.addr, b.length, b.port)
            self.wip.pop(0)
            self._wip_beat = 0
            self._wake(ack, _P_RELEASE,
                       lambda b=b, ack=ack: self._write_acked(b, ack))

    def _write_acked(self, b: _Burst, ack: int):
        b.ep.write_done()
        self.write_credits += 1
        if ack > self.last_response:
            self.last_response = ack
        t = b.t
        if b.fault is not None:
            self._tr(ack, "errorhdl", "write_error", b.addr, b.length, b.port)
            self._raise_error(b, "write")
            return
        self._commit_write(b)
        st = self.port_stats[b.port]
        st.write_beats += b.beats
        st.write_payload += b.length
        t.writes_open -= 1
        if self.trace is not None:
            self._tr(ack, "wmgr", "write_ack", b.addr, b.length, b.port)
        self._maybe_complete(t, ack)
        if self.wq:
            self._wake_write(self.clock.now)
        if self.rq:
            self._wake_read(self.clock.now)
        if self._buf_write is not None or self._buf_read is not None or self.intake:
            self._wake_leg(self.clock.now)

    def _commit_write(self, b: _Burst):
        t = b.t
        if t.status == "failed":
            return
        if not capabilities(t.desc.dst_protocol).write_capable:
            return
        data = t.buf[b.offset:b.offset + b.length]
        if self.transform is not None:
            data = self.transform.transform(bytes(data))
            if len(data) != b.length:
                raise ConfigError("in-stream transform must preserve length")
        store = self.endpoints[b.port].store
        pieces = [(b.offset, b.offset + b.length)]
        for s_lo, s_len in t.skipped:
            s_hi = s_lo + s_len
            nxt = []
            for lo, hi in pieces:
                if s_hi <= lo or s_lo >= hi:
                    nxt.append((lo, hi))
                    continue
                if lo < s_lo:
                    nxt.append((lo, s_lo))
                if s_hi < hi:
                    nxt.append((s_hi, hi))
            pieces = nxt
        base = t.desc.dst_addr
        for lo, hi in pieces:
            if hi > lo:
                store.write(base + lo, bytes(data[lo - b.offset:hi - b.offset]))

    def _maybe_complete(self, t: _Transfer, cycle: int):
        if (t.status == "pending" and t.legalized
                and t.reads_open == 0 and t.writes_open == 0):
            t.status = "complete"
            t.completed_at = cycle
            if self.on_complete:
                self.on_complete(t)

    # -- error handling --------------------------------------------------------
    def _raise_error(self, b: _Burst, side: str):
        now = self.clock.now
        self.paused = True
        self.pending_error = ErrorReport(
            burst_addr=b.addr, side=side, cause=b.fault.kind,
            transfer_id=b.t.tid, burst_seq=b.seq, cycle=now)
        action = b.fault.action or b.t.desc.options.error_action_default
        self._error_ctx = (b, side)
        if not self.cfg.has_error_handler:
            action = ErrorAction.ABORT
        self._wake(now + 1, _P_RESOLVE, lambda: self.handle_error(action))

    def handle_error(self, action: ErrorAction):
        """Resolve the pending error (normally invoked by the scheduler)."""
        if self.pending_error is None:
            raise NoPendingError("no error awaiting action")
        b, side = self._error_ctx
        t = b.t
        now = self.clock.now
        self.pending_error.awaiting_action = False
        self.pending_error = None
        self._error_ctx = None
        self.paused = False
        b.fault = None
        self._tr(now, "errorhdl", f"resolve_{action.value}",
                 b.addr, b.length, b.port)

        if side == "read":
            self._requeue_inflight_reads(b.stream_lo)
            if action is ErrorAction.REPLAY:
                b.ready = now
                self.rq.insert(0, b)
            elif action is ErrorAction.CONTINUE:
                t.skipped.append((b.offset, b.length))
                self._add_span(b.stream_lo, b.stream_lo + b.length,
                               now, None, None)
                t.reads_open -= 1
                self._maybe_complete(t, now)
            else:
                self._abort_transfer(t, now)
        else:
            if action is ErrorAction.REPLAY:
                b.ready = now
                b.replayed = True
                self.wq.insert(0, b)
            elif action is ErrorAction.CONTINUE:
                t.skipped.append((b.offset, b.length))
                t.writes_open -= 1
                self._maybe_complete(t, now)
            else:
                self._abort_transfer(t, now)
        self._wake_write(now)
        self._wake_read(now)
        self._wake_leg(now)

    def _requeue_inflight_reads(self, cut: int):
        """Unwind entry spans at/after ``cut``; reissue their bursts.

        Read data that raced ahead of a failed burst is discarded on
        delivery and fetched again, keeping the byte stream in order.
        """
        removed = [s for s in self.spans if s[0] >= cut]
        if not removed:
            return
        self.spans = [s for s in self.spans if s[0] < cut]
        self._span_ptr = 0
        self._entry_contig_hi = min(self._entry_contig_hi, cut)
        self._entry_last_end = max(
            (self._span_end(s) for s in self.spans), default=-1)
        requeue = []
        for s in removed:
            br = self._inflight_reads.pop(s[0], None)
            if br is not None:
                br.gen += 1
                br.ready = self.clock.now
                self.issued_read_bytes -= br.length
                requeue.append(br)
        requeue.sort(key=lambda x: x.stream_lo)
        self.rq[0:0] = requeue

    def _abort_transfer(self, t: _Transfer, now: int):
        t.status = "failed"
        t.completed_at = now
        self.rq = [x for x in self.rq if x.t is not t]
        self.wq = [x for x in self.wq if x.t is not t]
        if self.current is t:
            self._gen_read = None
            self._gen_write = None
            self._buf_read = None
            self._buf_write = None
            self.current = None
            self._wake_leg(now)
        lo = t.stream_base
        hi = t.stream_base + t.desc.length
        entered_hi = min(max(self._entry_contig_hi, lo), hi)
        if entered_hi < hi and any(x.t is t for x in self.wip):
            # let already-issued write bursts of the aborted transfer finish
            # with don't-care data so the write pipe cannot wedge
            self._add_span(entered_hi, hi, now, None, None)
            entered_hi = hi
        covered = max((x.stream_lo + x.length for x in self.wip if x.t is t),
                      default=lo)
        covered = max(covered, min(max(self._drain_total, lo), hi))
        flush = entered_hi - covered
        if flush > 0:
            at = self._arrival(entered_hi - 1)
            self._add_drain(max(now, at if at is not None else now),
                            1, flush, 0)
        if self.on_complete:
            self.on_complete(t)

    # -- introspection -------------------------------------------------------
    def pending(self) -> int:
        return len(self.intake) + sum(
            1 for t in self.transfers if t.status == "pending")

    def blocked_state(self) -> dict:
        """Diagnostic snapshot for deadlock reports."""
        now = self.clock.now
        return {
            "cycle": now,
            "pending_transfers": self.pending(),
            "read_queue": len(self.rq),
            "write_queue": len(self.wq),
            "writes_in_progress": len(self.wip),
            "read_credits": self.read_credits,
            "write_credits": self.write_credits,
            "reserved_bytes": max(0, self.issued_read_bytes - self._drain_upto(now)),
            "paused": self.paused,
        }
