"""Transfer legalization: split 1D transfers into protocol-legal bursts.

Each side (read / write) is tiled independently because source and
destination alignments differ.  Tiling is greedy: every step takes the
largest burst :func:`dmasim.protocol.max_legal_burst` allows at the current
address, which makes the output deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .core import EngineConfig, LegalBurst, TransferDescriptor1D
from .protocol import ProtocolId, capabilities, max_legal_burst


class ZeroLengthRejected(ValueError):
    pass


@dataclass(frozen=True)
class LegalizedTransfer:
    parent: TransferDescriptor1D
    read_bursts: tuple[LegalBurst, ...]
    write_bursts: tuple[LegalBurst, ...]


def iter_side(
    addr: int,
    length: int,
    p: ProtocolId,
    dw: int,
    user_cap: int | None = None,
    side: str = "read",
) -> Iterator[LegalBurst]:
    """Lazily tile ``[addr, addr+length)`` with maximal legal bursts."""
    if length < 1:
        raise ValueError("length must be >= 1")
    caps = capabilities(p)
    bus = dw // 8
    seq = 0
    if not caps.supports_bursts and (user_cap is None or user_cap >= bus):
        # Fast path for bus-sized accesses: head fragment, whole words, tail.
        end = addr + length
        head = min(length, bus - addr % bus)
        yield LegalBurst(addr, head, side, p, seq)
        addr += head
        seq += 1
        while addr < end:
            n = min(bus, end - addr)
            yield LegalBurst(addr, n, side, p, seq)
            addr += n
            seq += 1
        return
    remaining = length
    while remaining:
        n = max_legal_burst(p, addr, remaining, dw, user_cap)
        yield LegalBurst(addr, n, side, p, seq)
        addr += n
        remaining -= n
        seq += 1


def legalize_side(
    addr: int,
    length: int,
    p: ProtocolId,
    dw: int,
    user_cap: int | None = None,
    side: str = "read",
) -> list[LegalBurst]:
    return list(iter_side(addr, length, p, dw, user_cap, side))


def legalize(d: TransferDescriptor1D, cfg: EngineConfig) -> LegalizedTransfer:
    """Legalize both sides of ``d`` under the engine's bus width.

    Zero-length transfers yield empty burst lists, or raise
    :class:`ZeroLengthRejected` when the engine is configured to reject them.
    """
    if d.length == 0:
        if cfg.reject_zero_length:
            raise ZeroLengthRejected(f"zero-length transfer at src={d.src_addr:#x}")
        return LegalizedTransfer(d, (), ())
    bus = cfg.bus_bytes
    reads = iter_side(d.src_addr, d.length, d.src_protocol, cfg.dw,
                      d.options.side_cap("read", bus), "read")
    writes = iter_side(d.dst_addr, d.length, d.dst_protocol, cfg.dw,
                       d.options.side_cap("write", bus), "write")
    return LegalizedTransfer(d, tuple(reads), tuple(writes))
