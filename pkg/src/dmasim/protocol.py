"""On-chip protocol capability tables and burst legality rules.

Each supported protocol is described by a :class:`Capabilities` row stating
whether it supports multi-beat bursts and which page / size / alignment
constraints apply.  The burst sizing rule used by the legalizer and enforced
by the simulated managers is :func:`max_legal_burst`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class ProtocolId(str, enum.Enum):
    AXI = "axi"
    AXI_LITE = "axi_lite"
    AXI_STREAM = "axi_stream"
    OBI = "obi"
    TILELINK_UL = "tilelink_ul"
    TILELINK_UH = "tilelink_uh"
    INIT = "init"


@dataclass(frozen=True)
class Capabilities:
    """Constraint row for one protocol.

    ``None`` means unlimited (or not applicable).  ``addressless`` marks
    stream-style endpoints whose transfers carry no addressing constraints.
    """

    supports_bursts: bool
    max_burst_beats: int | None = None
    max_burst_bytes: int | None = None
    page_bytes: int | None = None
    pow2_only: bool = False
    addressless: bool = False
    read_capable: bool = True
    write_capable: bool = True


_CAPS: dict[ProtocolId, Capabilities] = {
    ProtocolId.AXI: Capabilities(
        supports_bursts=True,
        max_burst_beats=256,
        max_burst_bytes=4096,
        page_bytes=4096,
    ),
    ProtocolId.AXI_LITE: Capabilities(supports_bursts=False),
    ProtocolId.AXI_STREAM: Capabilities(supports_bursts=True, addressless=True),
    ProtocolId.OBI: Capabilities(supports_bursts=False),
    ProtocolId.TILELINK_UL: Capabilities(supports_bursts=False),
    ProtocolId.TILELINK_UH: Capabilities(supports_bursts=True, pow2_only=True),
    # Pattern-generator pseudo protocol: read-only, no addressing.
    ProtocolId.INIT: Capabilities(
        supports_bursts=True, addressless=True, write_capable=False
    ),
}


def capabilities(p: ProtocolId) -> Capabilities:
    """Return the constant capability row for protocol ``p``."""
    return _CAPS[p]


def beats(addr: int, length: int, dw: int) -> int:
    """Number of bus words a byte range touches on a ``dw``-bit bus."""
    bus = dw // 8
    return (addr + length - 1) // bus - addr // bus + 1


def max_legal_burst(
    p: ProtocolId,
    addr: int,
    remaining: int,
    dw: int,
    user_cap: int | None = None,
) -> int:
    """Largest burst length (bytes) legal at ``addr`` for protocol ``p``.

    Never returns less than 1: a single byte is legal on every protocol.
    ``user_cap`` optionally bounds the result further.
    """
    if remaining < 1:
        raise ValueError("remaining must be >= 1")
    cap = remaining if user_cap is None else min(remaining, user_cap)
    cap = max(cap, 1)
    caps = _CAPS[p]
    if caps.addressless:
        return cap
    bus = dw // 8
    if not caps.supports_bursts:
        # Single bus-width beats only: stop at the next bus-word boundary.
        return min(cap, bus - addr % bus)
    if caps.pow2_only:
        # Naturally aligned power-of-two sizes.
        limit = cap if caps.max_burst_bytes is None else min(cap, caps.max_burst_bytes)
        size = 1 << (limit.bit_length() - 1)
        align = addr & -addr if addr else size
        return min(size, align)
    length = cap
    if caps.page_bytes is not None:
        length = min(length, caps.page_bytes - addr % caps.page_bytes)
    if caps.max_burst_bytes is not None:
        length = min(length, caps.max_burst_bytes)
    if caps.max_burst_beats is not None:
        length = min(length, caps.max_burst_beats * bus - addr % bus)
    return length


def burst_is_legal(
    p: ProtocolId,
    addr: int,
    length: int,
    dw: int,
    user_cap: int | None = None,
) -> bool:
    """Re-check a burst against the capability table (manager-side view)."""
    if length < 1:
        return False
    if user_cap is not None and length > user_cap:
        return False
    caps = _CAPS[p]
    if caps.addressless:
        return True
    bus = dw // 8
    if not caps.supports_bursts:
        return addr // bus == (addr + length - 1) // bus
    if caps.pow2_only:
        return length & (length - 1) == 0 and addr % length == 0
    if caps.page_bytes is not None:
        if addr % caps.page_bytes + length > caps.page_bytes:
            return False
    if caps.max_burst_bytes is not None and length > caps.max_burst_bytes:
        return False
    if caps.max_burst_beats is not None:
        if beats(addr, length, dw) > caps.max_burst_beats:
            return False
    return True
