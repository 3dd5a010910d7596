"""Report structures, utilization math and CSV emission.

Utilization is defined over the *active window*: first request issued on
any manager port to the last response (read delivery or write
acknowledgment).  Per channel it is ``payload_bytes / (window * bus
bytes)``; the report headline value uses the engine's own bus capacity, so
a copy moving N bytes scores ``N / (window * dw/8)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

CSV_COLUMNS = ("config_id", "dw", "aw", "nax", "mem_preset", "piece_bytes",
               "total_bytes", "cycles", "util", "launch_latency", "failures")


class EmptyWindow(ValueError):
    pass


@dataclass
class PortStats:
    read_beats: int = 0
    write_beats: int = 0
    read_payload: int = 0
    write_payload: int = 0


@dataclass
class TransferStats:
    tid: int
    presented_at: int
    first_read_req: int | None
    completed_at: int | None
    length: int
    status: str
    intra_port: bool = False
    skipped: tuple = ()

    @property
    def launch_latency(self) -> int | None:
        if self.first_read_req is None:
            return None
        return self.first_read_req - self.presented_at


@dataclass
class SimReport:
    total_cycles: int
    dw: int
    aw: int
    nax: int
    ports: dict[str, PortStats]
    transfers: list[TransferStats]
    window: tuple[int, int] | None       # (first request, last response)
    payload_bytes: int                   # sum of completed transfer lengths
    util: float
    launch_latency: int | None
    failures: int
    contract_violations: list[str] = field(default_factory=list)
    skipped_ranges: list[tuple[int, int, int]] = field(default_factory=list)
    deadlock: dict | None = None
    config_id: str = ""
    mem_preset: str = "custom"
    piece_bytes: int | None = None
    flags: dict = field(default_factory=dict)

    def port_utilization(self, port: str, direction: str = "read") -> float:
        return utilization(self, port, direction)

    def to_dict(self) -> dict:
        return {
            "total_cycles": self.total_cycles,
            "dw": self.dw,
            "aw": self.aw,
            "nax": self.nax,
            "payload_bytes": self.payload_bytes,
            "util": self.util,
            "launch_latency": self.launch_latency,
            "failures": self.failures,
            "window": list(self.window) if self.window else None,
            "ports": {
                name: {
                    "read_beats": st.read_beats,
                    "write_beats": st.write_beats,
                    "read_payload": st.read_payload,
                    "write_payload": st.write_payload,
                } for name, st in self.ports.items()
            },
            "transfers": [
                {
                    "id": t.tid,
                    "presented_at": t.presented_at,
                    "first_read_req": t.first_read_req,
                    "completed_at": t.completed_at,
                    "length": t.length,
                    "status": t.status,
                    "intra_port": t.intra_port,
                    "launch_latency": t.launch_latency,
                    "skipped": [list(s) for s in t.skipped],
                } for t in self.transfers
            ],
            "contract_violations": list(self.contract_violations),
            "skipped_ranges": [list(s) for s in self.skipped_ranges],
            "deadlock": self.deadlock,
            "config_id": self.config_id,
            "mem_preset": self.mem_preset,
            "piece_bytes": self.piece_bytes,
            "flags": self.flags,
        }


def window_cycles(report: SimReport) -> int:
    if report.window is None:
        raise EmptyWindow("no requests were issued")
    first, last = report.window
    return last - first + 1


def utilization(report: SimReport, port: str, direction: str | None = None) -> float:
    """Payload through one port channel over the active window."""
    st = report.ports[port]
    cycles = window_cycles(report)
    bus = report.dw // 8
    if direction is None:
        return max(
            st.read_payload / (cycles * bus),
            st.write_payload / (cycles * bus),
        )
    payload = st.read_payload if direction == "read" else st.write_payload
    return payload / (cycles * bus)


def aggregate_utilization(reports_or_report, ports: list[str],
                          direction: str = "read") -> float:
    """Combined utilization of several port channels over a shared window."""
    report = reports_or_report
    cycles = window_cycles(report)
    bus = report.dw // 8
    payload = sum(
        (report.ports[p].read_payload if direction == "read"
         else report.ports[p].write_payload) for p in ports)
    return payload / (cycles * bus * len(ports))


def engine_utilization(payload_bytes: int, window: tuple[int, int] | None,
                       dw: int) -> float:
    if window is None:
        return 0.0
    first, last = window
    return payload_bytes / ((last - first + 1) * (dw // 8))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report_row(report: SimReport) -> dict:
    return {
        "config_id": report.config_id,
        "dw": report.dw,
        "aw": report.aw,
        "nax": report.nax,
        "mem_preset": report.mem_preset,
        "piece_bytes": report.piece_bytes,
        "total_bytes": report.payload_bytes,
        "cycles": report.total_cycles,
        "util": report.util,
        "launch_latency": report.launch_latency,
        "failures": report.failures,
    }


def emit_csv(reports: list[SimReport]) -> str:
    """One CSV row per simulation, stable column order."""
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for r in reports:
        row = report_row(r)
        out.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")
    return out.getvalue()


TRACE_COLUMNS = ("cycle", "unit", "event", "address", "length", "port")


def emit_trace_csv(trace: list[tuple]) -> str:
    out = io.StringIO()
    out.write(",".join(TRACE_COLUMNS) + "\n")
    for cycle, unit, event, addr, length, port in sorted(
            trace, key=lambda e: (e[0],)):
        out.write(f"{cycle},{unit},{event},{addr:#x},{length},{port}\n")
    return out.getvalue()


def utilization_from_trace(trace: list[tuple], dw: int,
                           payload_bytes: int) -> float:
    """Recompute the headline utilization from raw trace events."""
    first = None
    last = None
    for cycle, _unit, event, _addr, _length, _port in trace:
        if event in ("read_req", "write_req"):
            if first is None or cycle < first:
                first = cycle
        if event in ("read_done", "write_ack"):
            if last is None or cycle > last:
                last = cycle
    if first is None or last is None:
        raise EmptyWindow("trace has no requests")
    return payload_bytes / ((last - first + 1) * (dw // 8))
