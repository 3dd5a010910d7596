"""Transfer-transformation stages between front-end and back-end.

Implemented stages:

* ``tensor_nd`` / ``tensor_2d``: expand strided tensor transfers into 1D
  descriptors, innermost dimension fastest.
* ``mp_split``: split a 1D transfer so no piece crosses a parametric,
  power-of-two address boundary on one side.
* ``mp_dist``: route boundary-aligned pieces to parallel downstream engines
  by address offset (or round-robin).
* ``rt_3d``: autonomously launch a fixed shape periodically, with a bypass
  path for unrelated traffic.

All transformers are pure; byte conservation (outputs map exactly the same
source bytes to the same destination bytes as the input) is the contract
every stage must keep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .core import Dim, NdTransferDescriptor, TransferDescriptor1D


class AddressOutOfRange(ValueError):
    pass


class IndivisibleTotal(ValueError):
    pass


class UnsplitPiece(ValueError):
    pass


def expand_nd(
    d: NdTransferDescriptor, aw: int | None = None
) -> Iterator[TransferDescriptor1D]:
    """Expand an ND descriptor in nested-loop order, outermost slowest.

    With ``aw`` given, every generated address range is bounds-checked
    against ``[0, 2**aw)``.
    """
    top = None if aw is None else 1 << aw
    base = d.base

    def rec(level: int, src_off: int, dst_off: int) -> Iterator[TransferDescriptor1D]:
        if level < 0:
            out = base.shifted(src_off, dst_off)
            if top is not None:
                if not (0 <= out.src_addr and out.src_addr + out.length <= top):
                    raise AddressOutOfRange(f"source range at {out.src_addr:#x}")
                if not (0 <= out.dst_addr and out.dst_addr + out.length <= top):
                    raise AddressOutOfRange(f"destination range at {out.dst_addr:#x}")
            yield out
            return
        dim = d.dims[level]
        for i in range(dim.reps):
            yield from rec(level - 1, src_off + i * dim.src_stride,
                           dst_off + i * dim.dst_stride)

    return rec(len(d.dims) - 1, 0, 0)


def expand_2d(
    base: TransferDescriptor1D,
    total_length: int,
    len_1d: int,
    src_stride: int,
    dst_stride: int,
    aw: int | None = None,
) -> Iterator[TransferDescriptor1D]:
    """2D form: ``total_length`` bytes moved as ``len_1d``-byte rows."""
    if len_1d < 1 or total_length % len_1d:
        raise IndivisibleTotal(
            f"total {total_length} not divisible by 1D length {len_1d}")
    reps = total_length // len_1d
    nd = NdTransferDescriptor(
        base=TransferDescriptor1D(base.src_addr, base.dst_addr, len_1d,
                                  base.src_protocol, base.dst_protocol, base.options),
        dims=(Dim(src_stride, dst_stride, reps),),
    )
    return expand_nd(nd, aw)


def split_at_boundary(
    d: TransferDescriptor1D, boundary: int, side: str = "dst"
) -> list[TransferDescriptor1D]:
    """Cut ``d`` so no piece crosses a ``boundary``-aligned line on ``side``.

    Both address ranges advance in lockstep; concatenating the pieces
    reproduces ``d`` exactly.
    """
    if boundary < 1 or boundary & (boundary - 1):
        raise ValueError("boundary must be a power of two")
    if side not in ("src", "dst"):
        raise ValueError("side must be 'src' or 'dst'")
    pieces = []
    off = 0
    while off < d.length:
        a = (d.src_addr if side == "src" else d.dst_addr) + off
        step = min(d.length - off, boundary - a % boundary)
        pieces.append(d.shifted(off, off, step))
        off += step
    return pieces or [d]


def distribute(
    pieces: Iterable[TransferDescriptor1D],
    n_ports: int = 2,
    boundary: int = 4096,
    side: str = "dst",
    policy: str = "address",
) -> list[list[TransferDescriptor1D]]:
    """Route pieces to ``n_ports`` downstream streams, preserving order.

    ``address`` policy sends the piece at side-address ``A`` to port
    ``(A // boundary) % n_ports``; a binary tree of 2-way distributors whose
    level ``j`` uses boundary ``boundary * 2**j`` reproduces the same
    routing for ``n_ports = 2**k``.  ``round_robin`` ignores addresses.
    """
    if n_ports < 1:
        raise ValueError("n_ports must be >= 1")
    out: list[list[TransferDescriptor1D]] = [[] for _ in range(n_ports)]
    for i, piece in enumerate(pieces):
        if policy == "round_robin":
            out[i % n_ports].append(piece)
            continue
        a = piece.src_addr if side == "src" else piece.dst_addr
        if piece.length and a // boundary != (a + piece.length - 1) // boundary:
            raise UnsplitPiece(f"piece at {a:#x} len {piece.length} crosses boundary")
        out[(a // boundary) % n_ports].append(piece)
    return out


@dataclass(frozen=True)
class RtConfig:
    """Periodic launcher configuration for a fixed 3D shape."""

    shape: NdTransferDescriptor
    period: int
    num_launches: int | None = None  # None = unbounded
    first_launch: int = 0
    enabled: bool = True

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")


def rt_schedule(
    cfg: RtConfig,
    bypass: Iterable[tuple[int, object]] = (),
    occupancy: int = 1,
    horizon: int | None = None,
) -> list[tuple[int, str, object]]:
    """Merge periodic launches with bypass traffic on one shared port.

    Each emission holds the port for ``occupancy`` cycles.  A periodic
    launch due at its scheduled cycle wins ties against bypass arrivals and
    is never skipped, only delayed while the port is busy.  Bypass items are
    never dropped.  ``horizon`` bounds the schedule for unbounded configs.
    """
    if cfg.num_launches is None and horizon is None and cfg.enabled:
        raise ValueError("unbounded periodic schedule needs a horizon")
    bypass_q = sorted(bypass, key=lambda t: t[0])
    events: list[tuple[int, str, object]] = []
    n_periodic = cfg.num_launches if cfg.enabled else 0
    if n_periodic is None:
        n_periodic = max(0, (horizon - cfg.first_launch) // cfg.period + 1)
    next_periodic = 0
    bi = 0
    free_at = 0
    while next_periodic < n_periodic or bi < len(bypass_q):
        sched = cfg.first_launch + next_periodic * cfg.period if next_periodic < n_periodic else None
        arr = bypass_q[bi][0] if bi < len(bypass_q) else None
        if sched is not None and (arr is None or sched <= arr or sched <= free_at):
            at = max(sched, free_at)
            events.append((at, "periodic", cfg.shape))
            next_periodic += 1
        else:
            at = max(arr, free_at)
            # A periodic launch that comes due while this bypass waits still
            # runs after it: the port was granted in arrival order.
            events.append((at, "bypass", bypass_q[bi][1]))
            bi += 1
        free_at = at + occupancy
    return events
