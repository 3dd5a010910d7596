"""Shared domain types and engine configuration validation.

Addresses and lengths are plain Python ints (unbounded) everywhere; the
configured address width only bounds which values are legal.  All types here
are immutable values, safe to share between threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

from .protocol import ProtocolId, capabilities

VALID_DW = (8, 16, 32, 64, 128, 256, 512, 1024)


class ErrorAction(str, enum.Enum):
    CONTINUE = "continue"
    ABORT = "abort"
    REPLAY = "replay"


@dataclass(frozen=True)
class BackendOptions:
    """Per-transfer back-end options carried in the descriptor.

    ``user_burst_cap`` limits burst length in bytes on both sides;
    ``src_reduce_len`` / ``dst_reduce_len`` additionally cap one side to
    ``2**exp`` bus words.  ``decouple_rw``, when cleared, makes a write burst
    wait until all of its bytes are buffered before its request is issued.
    """

    decouple_rw: bool = True
    user_burst_cap: int | None = None
    src_reduce_len: int | None = None
    dst_reduce_len: int | None = None
    error_action_default: ErrorAction = ErrorAction.CONTINUE

    def side_cap(self, side: str, bus_bytes: int) -> int | None:
        cap = self.user_burst_cap
        exp = self.src_reduce_len if side == "read" else self.dst_reduce_len
        if exp is not None:
            reduced = bus_bytes << exp
            cap = reduced if cap is None else min(cap, reduced)
        return cap


@dataclass(frozen=True)
class TransferDescriptor1D:
    """One unit of back-end work: copy ``length`` bytes src -> dst."""

    src_addr: int
    dst_addr: int
    length: int
    src_protocol: ProtocolId = ProtocolId.AXI
    dst_protocol: ProtocolId = ProtocolId.AXI
    options: BackendOptions = field(default_factory=BackendOptions)

    def __post_init__(self):
        if self.src_addr < 0 or self.dst_addr < 0 or self.length < 0:
            raise ValueError("addresses and length must be non-negative")

    def shifted(self, src_off: int, dst_off: int, length: int | None = None) -> "TransferDescriptor1D":
        return replace(
            self,
            src_addr=self.src_addr + src_off,
            dst_addr=self.dst_addr + dst_off,
            length=self.length if length is None else length,
        )


class Dim(NamedTuple):
    """One tensor dimension: byte strides may be negative."""

    src_stride: int
    dst_stride: int
    reps: int


@dataclass(frozen=True)
class NdTransferDescriptor:
    """1D descriptor plus per-dimension strides, innermost dimension first."""

    base: TransferDescriptor1D
    dims: tuple[Dim, ...] = ()

    def __post_init__(self):
        for d in self.dims:
            if d.reps < 1:
                raise ValueError("dimension repetition count must be >= 1")

    @property
    def total_bytes(self) -> int:
        n = self.base.length
        for d in self.dims:
            n *= d.reps
        return n


class LegalBurst(NamedTuple):
    """A protocol-legal (address, length) read or write unit."""

    addr: int
    length: int
    side: str  # "read" | "write"
    protocol: ProtocolId
    seq: int


class PortDir(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    RW = "rw"

    @property
    def reads(self) -> bool:
        return self is not PortDir.WRITE

    @property
    def writes(self) -> bool:
        return self is not PortDir.READ


class PortConfig(NamedTuple):
    name: str
    protocol: ProtocolId
    direction: PortDir = PortDir.RW


@dataclass(frozen=True)
class EngineConfig:
    aw: int = 32
    dw: int = 32
    nax_read: int = 2
    nax_write: int = 2
    ports: tuple[PortConfig, ...] = (PortConfig("main", ProtocolId.AXI, PortDir.RW),)
    has_legalizer: bool = True
    has_error_handler: bool = True
    buffer_depth: int = 8
    reject_zero_length: bool = False

    @property
    def bus_bytes(self) -> int:
        return self.dw // 8

    @property
    def buffer_bytes(self) -> int:
        return self.buffer_depth * self.bus_bytes

    def port(self, name: str) -> PortConfig:
        for p in self.ports:
            if p.name == name:
                return p
        raise KeyError(name)

    def port_for(self, protocol: ProtocolId, side: str) -> PortConfig | None:
        want_read = side == "read"
        for p in self.ports:
            if p.protocol is protocol:
                if (want_read and p.direction.reads) or (not want_read and p.direction.writes):
                    return p
        return None


class Violation(NamedTuple):
    field: str
    code: str
    message: str


class InvalidConfigError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(f"{v.field}: {v.message}" for v in violations))


def check_config(cfg: EngineConfig) -> list[Violation]:
    """Total validation: returns all invariant violations, never raises."""
    out: list[Violation] = []

    def bad(field_name, code, message):
        out.append(Violation(field_name, code, message))

    if not isinstance(cfg.aw, int) or not 16 <= cfg.aw <= 64:
        bad("aw", "InvalidWidth", f"address width {cfg.aw!r} outside 16..64")
    if cfg.dw not in VALID_DW:
        bad("dw", "InvalidWidth", f"data width {cfg.dw!r} not one of {VALID_DW}")
    if not isinstance(cfg.nax_read, int) or cfg.nax_read < 1:
        bad("nax_read", "ZeroCapacity", "outstanding read capacity must be >= 1")
    if not isinstance(cfg.nax_write, int) or cfg.nax_write < 1:
        bad("nax_write", "ZeroCapacity", "outstanding write capacity must be >= 1")
    if not isinstance(cfg.buffer_depth, int) or cfg.buffer_depth < 1:
        bad("buffer_depth", "ZeroCapacity", "buffer depth must be >= 1")

    seen: set[str] = set()
    seen_proto_side: set[tuple[ProtocolId, str]] = set()
    has_read = has_write = False
    for i, p in enumerate(cfg.ports):
        fieldname = f"ports[{i}]"
        caps = capabilities(p.protocol)
        if p.direction.reads and not caps.read_capable:
            bad(fieldname, "BadDirection", f"{p.protocol.value} is not read-capable")
        if p.direction.writes and not caps.write_capable:
            bad(fieldname, "BadDirection", f"{p.protocol.value} is not write-capable")
        if p.name in seen:
            bad(fieldname, "DuplicatePort", f"duplicate port name {p.name!r}")
        seen.add(p.name)
        for side, serves in (("read", p.direction.reads), ("write", p.direction.writes)):
            if not serves:
                continue
            key = (p.protocol, side)
            if key in seen_proto_side:
                bad(fieldname, "DuplicatePort",
                    f"second {side}-capable port for {p.protocol.value}")
            seen_proto_side.add(key)
        has_read |= p.direction.reads and caps.read_capable
        has_write |= p.direction.writes and caps.write_capable
    if not has_read:
        bad("ports", "NoReadPort", "at least one read-capable port required")
    if not has_write:
        bad("ports", "NoWritePort", "at least one write-capable port required")
    return out


def validate_config(cfg: EngineConfig) -> EngineConfig:
    """Return ``cfg`` unchanged iff all invariants hold, else raise."""
    violations = check_config(cfg)
    if violations:
        raise InvalidConfigError(violations)
    return cfg


def check_descriptor(d: TransferDescriptor1D, aw: int) -> list[Violation]:
    """Bounds-check one descriptor against an address width."""
    out: list[Violation] = []
    top = 1 << aw
    if not 0 <= d.src_addr < top or d.src_addr + d.length > top:
        out.append(Violation("src_addr", "AddressOutOfRange",
                             f"source range exceeds {aw}-bit space"))
    if not 0 <= d.dst_addr < top or d.dst_addr + d.length > top:
        out.append(Violation("dst_addr", "AddressOutOfRange",
                             f"destination range exceeds {aw}-bit space"))
    cap = d.options.user_burst_cap
    if cap is not None and cap < 1:
        out.append(Violation("options.user_burst_cap", "InvalidBurstCap",
                             "burst cap must be >= 1 byte"))
    return out


def config_to_dict(cfg: EngineConfig) -> dict:
    return {
        "aw": cfg.aw,
        "dw": cfg.dw,
        "nax_read": cfg.nax_read,
        "nax_write": cfg.nax_write,
        "ports": [
            {"name": p.name, "protocol": p.protocol.value, "direction": p.direction.value}
            for p in cfg.ports
        ],
        "has_legalizer": cfg.has_legalizer,
        "has_error_handler": cfg.has_error_handler,
        "buffer_depth": cfg.buffer_depth,
        "reject_zero_length": cfg.reject_zero_length,
    }


def config_from_dict(data: dict) -> EngineConfig:
    ports = tuple(
        PortConfig(p["name"], ProtocolId(p["protocol"]), PortDir(p.get("direction", "rw")))
        for p in data.get("ports", [])
    )
    kwargs = {k: data[k] for k in (
        "aw", "dw", "nax_read", "nax_write", "has_legalizer",
        "has_error_handler", "buffer_depth", "reject_zero_length") if k in data}
    return EngineConfig(ports=ports or EngineConfig().ports, **kwargs)


def iter_port_sides(cfg: EngineConfig) -> Iterable[tuple[PortConfig, str]]:
    for p in cfg.ports:
        if p.direction.reads:
            yield p, "read"
        if p.direction.writes:
            yield p, "write"
