"""Control-plane models: register file, descriptor chains, direct injection.

The register map and descriptor layout are artifact-defined ABIs (the
architecture fixes field names only):

Register map (32-bit registers, byte offsets)::

    0x00 src_address       0x14 transfer_id   (RO, read launches)
    0x04 dst_address       0x18 dim2 src_stride
    0x08 transfer_length   0x1C dim2 dst_stride
    0x0C status      (RO)  0x20 dim2 num_repetitions
    0x10 configuration     0x24/0x28/0x2C dim3 likewise

Reading ``transfer_id`` assembles a descriptor from the current register
values, emits a launch and returns the incrementing transfer ID; ``status``
returns the last completed ID.  A dimension participates only while its
repetition count is >= 2.

Descriptor layout (``desc_64``): five little-endian 64-bit words
``next_ptr, backend_config, length, src_addr, dst_addr`` (40 bytes, 8-byte
aligned); ``next_ptr`` of all-ones ends a chain.

``backend_config`` / ``configuration`` bits: [2:0] source protocol index,
[5:3] destination protocol index (both into :class:`ProtocolId` declaration
order), [7:6] error action (0 continue / 1 abort / 2 replay),
[8] decoupled read/write issue.  All other bits are reserved-zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .core import (
    BackendOptions,
    Dim,
    ErrorAction,
    NdTransferDescriptor,
    TransferDescriptor1D,
)
from .protocol import ProtocolId

END_PTR = 0xFFFF_FFFF_FFFF_FFFF
DESC_BYTES = 40
MAX_CHAIN = 1 << 16

REG_SRC = 0x00
REG_DST = 0x04
REG_LEN = 0x08
REG_STATUS = 0x0C
REG_CONFIG = 0x10
REG_TRANSFER_ID = 0x14
REG_DIM_BASE = 0x18  # 3 registers per extra dimension

_PROTOCOLS = list(ProtocolId)
_ACTIONS = (ErrorAction.CONTINUE, ErrorAction.ABORT, ErrorAction.REPLAY)


class UnmappedOffset(ValueError):
    pass


class Misaligned(ValueError):
    pass


class ChainTooLong(RuntimeError):
    pass


def encode_backend_config(
    src_protocol: ProtocolId,
    dst_protocol: ProtocolId,
    error_action: ErrorAction = ErrorAction.CONTINUE,
    decouple_rw: bool = True,
) -> int:
    word = _PROTOCOLS.index(src_protocol)
    word |= _PROTOCOLS.index(dst_protocol) << 3
    word |= _ACTIONS.index(error_action) << 6
    word |= int(decouple_rw) << 8
    return word


def decode_backend_config(word: int) -> tuple[ProtocolId, ProtocolId, BackendOptions]:
    src = _PROTOCOLS[word & 0x7]
    dst = _PROTOCOLS[(word >> 3) & 0x7]
    action_idx = (word >> 6) & 0x3
    action = _ACTIONS[action_idx] if action_idx < len(_ACTIONS) else ErrorAction.CONTINUE
    opts = BackendOptions(decouple_rw=bool((word >> 8) & 1),
                          error_action_default=action)
    return src, dst, opts


@dataclass
class RegFile32:
    """Per-core register-based front-end, 32-bit registers, up to 3D."""

    dims: int = 3
    src_address: int = 0
    dst_address: int = 0
    transfer_length: int = 0
    configuration: int = 0
    next_id: int = 1
    last_completed_id: int = 0
    dim_regs: list[list[int]] = field(default_factory=list)
    on_launch: Callable[[int, NdTransferDescriptor], None] | None = None

    def __post_init__(self):
        if not 1 <= self.dims <= 3:
            raise ValueError("register front-end supports 1..3 dimensions")
        self.dim_regs = [[0, 0, 0] for _ in range(self.dims - 1)]

    def _offset_slot(self, offset: int):
        regs = {
            REG_SRC: "src_address",
            REG_DST: "dst_address",
            REG_LEN: "transfer_length",
            REG_CONFIG: "configuration",
        }
        if offset in regs:
            return regs[offset], None
        base = REG_DIM_BASE
        for d in range(self.dims - 1):
            for k in range(3):
                if offset == base + (3 * d + k) * 4:
                    return None, (d, k)
        return None, None

    def access(self, offset: int, is_read: bool, value: int = 0):
        """One register access; returns (read value, launch or None)."""
        if offset % 4:
            raise Misaligned(f"register offset {offset:#x}")
        if is_read:
            if offset == REG_STATUS:
                return self.last_completed_id, None
            if offset == REG_TRANSFER_ID:
                launch_id = self.next_id
                self.next_id += 1
                desc = self.assemble()
                if self.on_launch:
                    self.on_launch(launch_id, desc)
                return launch_id, (launch_id, desc)
            name, dim_slot = self._offset_slot(offset)
            if name:
                return getattr(self, name) & 0xFFFF_FFFF, None
            if dim_slot:
                d, k = dim_slot
                return self.dim_regs[d][k] & 0xFFFF_FFFF, None
            raise UnmappedOffset(f"read from {offset:#x}")
        name, dim_slot = self._offset_slot(offset)
        if name:
            setattr(self, name, value & 0xFFFF_FFFF)
            return 0, None
        if dim_slot:
            d, k = dim_slot
            self.dim_regs[d][k] = value & 0xFFFF_FFFF
            return 0, None
        raise UnmappedOffset(f"write to {offset:#x}")

    def assemble(self) -> NdTransferDescriptor:
        src_p, dst_p, opts = decode_backend_config(self.configuration)
        base = TransferDescriptor1D(self.src_address, self.dst_address,
                                    self.transfer_length, src_p, dst_p, opts)
        dims = tuple(
            Dim(_signed32(r[0]), _signed32(r[1]), r[2])
            for r in self.dim_regs if r[2] >= 2
        )
        return NdTransferDescriptor(base, dims)

    def notify_completion(self, transfer_id: int):
        # Completion IDs arrive in launch order from the in-order engine.
        if transfer_id > self.last_completed_id:
            self.last_completed_id = transfer_id


def _signed32(v: int) -> int:
    v &= 0xFFFF_FFFF
    return v - 0x1_0000_0000 if v & 0x8000_0000 else v


class Descriptor64(NamedTuple):
    next_ptr: int
    backend_config: int
    length: int
    src_addr: int
    dst_addr: int

    def encode(self) -> bytes:
        return struct.pack("<5Q", self.next_ptr, self.backend_config,
                           self.length, self.src_addr, self.dst_addr)

    @classmethod
    def decode(cls, raw: bytes) -> "Descriptor64":
        return cls(*struct.unpack("<5Q", raw))

    def to_transfer(self) -> TransferDescriptor1D:
        src_p, dst_p, opts = decode_backend_config(self.backend_config)
        return TransferDescriptor1D(self.src_addr, self.dst_addr, self.length,
                                    src_p, dst_p, opts)


def fetch_descriptor(mem, ptr: int) -> tuple[Descriptor64, int | None]:
    """Decode one descriptor at ``ptr``; returns (descriptor, next or None).

    ``mem`` is anything with ``read(addr, n) -> bytes``.
    """
    if ptr % 8:
        raise Misaligned(f"descriptor pointer {ptr:#x}")
    desc = Descriptor64.decode(mem.read(ptr, DESC_BYTES))
    nxt = None if desc.next_ptr == END_PTR else desc.next_ptr
    return desc, nxt


def iter_chain(mem, head: int, max_chain: int = MAX_CHAIN):
    """Walk a descriptor chain; guards against cycles via ``max_chain``."""
    ptr: int | None = head
    count = 0
    while ptr is not None and ptr != END_PTR:
        if count >= max_chain:
            raise ChainTooLong(f"chain exceeds {max_chain} descriptors")
        desc, ptr = fetch_descriptor(mem, ptr)
        count += 1
        yield desc


def run_chain(mem, head: int, max_chain: int = MAX_CHAIN) -> list[TransferDescriptor1D]:
    """One launch per chained descriptor, in chain order (pure view)."""
    if head == END_PTR:
        return []
    return [d.to_transfer() for d in iter_chain(mem, head, max_chain)]


def build_chain(mem, base_addr: int, transfers: list[TransferDescriptor1D]) -> int:
    """Encode ``transfers`` as a contiguous chain at ``base_addr``.

    Returns the head pointer (``END_PTR`` for an empty list).  Helper for
    tests and workload setup.
    """
    if base_addr % 8:
        raise Misaligned(f"chain base {base_addr:#x}")
    if not transfers:
        return END_PTR
    for i, t in enumerate(transfers):
        nxt = END_PTR if i == len(transfers) - 1 else base_addr + (i + 1) * DESC_BYTES
        cfg = encode_backend_config(t.src_protocol, t.dst_protocol,
                                    t.options.error_action_default,
                                    t.options.decouple_rw)
        desc = Descriptor64(nxt, cfg, t.length, t.src_addr, t.dst_addr)
        mem.write(base_addr + i * DESC_BYTES, desc.encode())
    return base_addr
