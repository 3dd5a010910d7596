"""Parametric memory-endpoint models.

Endpoints are fixed-latency, in-order, one-beat-per-cycle pipelines with a
bounded number of outstanding transactions per direction.  A read burst of
``B`` beats returns its first data beat exactly ``latency`` cycles after
acceptance and one beat per cycle thereafter; a write burst is acknowledged
``latency`` cycles after its last data beat.  Responses never reorder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .core import ErrorAction

PRESETS = {
    "sram": (3, 8),
    "rpc_dram": (13, 16),
    "hbm": (100, 64),
}


class UnknownPreset(KeyError):
    pass


class CapacityExceeded(RuntimeError):
    """Caller violated the outstanding-transaction contract."""


class Unmapped(ValueError):
    pass


class ErrorSpec(NamedTuple):
    """One planned fault: matches a burst ordinal or an address range."""

    burst: int | None = None       # 1-based acceptance ordinal on this endpoint
    side: str | None = None        # restrict ordinal counting to one side
    addr_lo: int | None = None
    addr_hi: int | None = None
    kind: str = "slverr"
    action: ErrorAction | None = None  # overrides the transfer's default


@dataclass
class EndpointModel:
    latency: int = 1
    max_outstanding: int = 1
    size: int | None = None
    base: int = 0
    preset_name: str | None = None
    error_plan: tuple[ErrorSpec, ...] = ()

    def __post_init__(self):
        if self.latency < 1:
            raise ValueError("latency must be >= 1")
        if self.max_outstanding < 1:
            raise ValueError("max_outstanding must be >= 1")


def preset(name: str) -> EndpointModel:
    """Named endpoint models: sram, rpc_dram, hbm."""
    try:
        latency, outstanding = PRESETS[name]
    except KeyError:
        raise UnknownPreset(name) from None
    return EndpointModel(latency=latency, max_outstanding=outstanding,
                         preset_name=name)


_PAGE = 1 << 16


class SparseBytes:
    """Byte store over a huge address space, allocated page-wise."""

    def __init__(self, base: int = 0, size: int | None = None):
        self.base = base
        self.size = size
        self._pages: dict[int, bytearray] = {}

    def _check(self, addr: int, n: int):
        if addr < self.base:
            raise Unmapped(f"address {addr:#x} below base {self.base:#x}")
        if self.size is not None and addr + n > self.base + self.size:
            raise Unmapped(f"range {addr:#x}+{n} beyond endpoint size")

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        out = bytearray(n)
        off = 0
        while off < n:
            a = addr + off
            page, idx = divmod(a, _PAGE)
            take = min(n - off, _PAGE - idx)
            buf = self._pages.get(page)
            if buf is not None:
                out[off:off + take] = buf[idx:idx + take]
            off += take
        return bytes(out)

    def write(self, addr: int, data: bytes):
        n = len(data)
        self._check(addr, n)
        off = 0
        while off < n:
            a = addr + off
            page, idx = divmod(a, _PAGE)
            take = min(n - off, _PAGE - idx)
            buf = self._pages.get(page)
            if buf is None:
                buf = self._pages[page] = bytearray(_PAGE)
            buf[idx:idx + take] = data[off:off + take]
            off += take


class EndpointSim:
    """Timing + storage instance of one endpoint.

    The store may be shared between several timing instances (multi-engine
    setups where every engine sees the same physical memory).
    """

    def __init__(self, model: EndpointModel, store: SparseBytes | None = None):
        self.model = model
        self.store = store if store is not None else SparseBytes(model.base, model.size)
        self.outstanding_read = 0
        self.outstanding_write = 0
        self._read_stream_free = 0   # first cycle the read data channel is free
        self._accepted = 0           # acceptance ordinal, both sides
        self._accepted_side = {"read": 0, "write": 0}
        self._consumed: set[int] = set()  # plan entries fire at most once

    # -- fault lookup ------------------------------------------------------
    def _fault_for(self, side: str, addr: int, length: int) -> ErrorSpec | None:
        ordinal = self._accepted
        side_ordinal = self._accepted_side[side]
        for i, spec in enumerate(self.model.error_plan):
            if i in self._consumed:
                continue
            if spec.side is not None and spec.side != side:
                continue
            if spec.burst is not None:
                if spec.burst == (side_ordinal if spec.side else ordinal):
                    self._consumed.add(i)
                    return spec
                continue
            if spec.addr_lo is not None:
                hi = spec.addr_hi if spec.addr_hi is not None else spec.addr_lo + 1
                if addr < hi and addr + length > spec.addr_lo:
                    self._consumed.add(i)
                    return spec
        return None

    # -- acceptance ---------------------------------------------------------
    def can_accept(self, side: str) -> bool:
        out = self.outstanding_read if side == "read" else self.outstanding_write
        return out < self.model.max_outstanding

    def accept_read(self, cycle: int, addr: int, length: int, beats: int):
        """Accept a read burst; returns (first_beat_cycle, fault | None).

        The caller reports back the actual delivery end (it may hold the
        data channel with back pressure) via :meth:`read_delivered`.
        """
        if self.outstanding_read >= self.model.max_outstanding:
            raise CapacityExceeded("read acceptance over capacity")
        self._accepted += 1
        self._accepted_side["read"] += 1
        fault = self._fault_for("read", addr, length)
        self.outstanding_read += 1
        first = max(cycle + self.model.latency, self._read_stream_free)
        # A faulted burst occupies a single error-response slot.
        self._read_stream_free = first + (1 if fault else beats)
        return first, fault

    def read_delivered(self, last_beat_cycle: int):
        """Last data beat left the endpoint (after any back pressure)."""
        self.outstanding_read -= 1
        if last_beat_cycle + 1 > self._read_stream_free:
            self._read_stream_free = last_beat_cycle + 1

    def accept_write(self, cycle: int, addr: int, length: int):
        if self.outstanding_write >= self.model.max_outstanding:
            raise CapacityExceeded("write acceptance over capacity")
        self._accepted += 1
        self._accepted_side["write"] += 1
        fault = self._fault_for("write", addr, length)
        self.outstanding_write += 1
        return fault

    def write_ack_cycle(self, last_data_beat: int) -> int:
        return last_data_beat + self.model.latency

    def write_done(self):
        self.outstanding_write -= 1


class ResponseEvent(NamedTuple):
    cycle: int
    kind: str      # "rdata" | "bvalid" | "error"
    addr: int
    beat: int


def run_endpoint(
    model: EndpointModel,
    requests: list[tuple[int, str, int, int]],
) -> list[ResponseEvent]:
    """Step-wise reference harness over the endpoint timing contract.

    ``requests`` are (cycle, side, addr, beats), submitted in list order;
    submission waits while the endpoint is at capacity.  Write data beats
    are assumed to follow the request immediately, one per cycle.  Returns
    all response events in time order.
    """
    sim = EndpointSim(model)
    events: list[ResponseEvent] = []
    busy: list[tuple[int, str]] = []  # (completion cycle, side)
    now = 0
    for at, side, addr, nbeats in requests:
        now = max(now, at)
        while not sim.can_accept(side):
            # retire the oldest in-flight burst first
            done, done_side = busy.pop(0)
            now = max(now, done)
            if done_side == "read":
                sim.read_delivered(done)
            else:
                sim.write_done()
        if side == "read":
            first, fault = sim.accept_read(now, addr, nbeats * 1, nbeats)
            if fault:
                events.append(ResponseEvent(first, "error", addr, 0))
                sim.read_delivered(first)
                continue
            for b in range(nbeats):
                events.append(ResponseEvent(first + b, "rdata", addr, b))
            busy.append((first + nbeats - 1, "read"))
        else:
            fault = sim.accept_write(now, addr, nbeats * 1)
            last_data = now + nbeats - 1
            ack = sim.write_ack_cycle(last_data)
            events.append(ResponseEvent(ack, "error" if fault else "bvalid", addr, nbeats - 1))
            busy.append((ack, "write"))
    events.sort(key=lambda e: (e.cycle, e.addr, e.beat))
    return events
