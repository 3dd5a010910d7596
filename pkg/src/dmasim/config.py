"""JSON configuration schema for simulation runs.

Top-level keys: ``engine``, ``memory``, ``workload``, ``frontend``,
``midends`` plus an optional ``config_id``.  Unknown keys anywhere are a
hard error.
"""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import (
    BackendOptions,
    Dim,
    EngineConfig,
    ErrorAction,
    NdTransferDescriptor,
    PortConfig,
    PortDir,
    TransferDescriptor1D,
)
from .memsys import PRESETS, EndpointModel, ErrorSpec, UnknownPreset
from .protocol import ProtocolId


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PortModel(_Strict):
    protocol: str
    name: str = ""
    direction: Literal["read", "write", "rw"] = "rw"

    def to_port(self) -> PortConfig:
        return PortConfig(self.name or self.protocol, ProtocolId(self.protocol),
                          PortDir(self.direction))


class EngineModel(_Strict):
    aw: int = 32
    dw: int = 32
    nax: Optional[int] = None  # sets both directions when given
    nax_read: int = 2
    nax_write: int = 2
    ports: list[PortModel] = Field(
        default_factory=lambda: [PortModel(protocol="axi")])
    has_legalizer: bool = True
    has_error_handler: bool = True
    buffer_depth: int = 8
    reject_zero_length: bool = False

    def to_config(self) -> EngineConfig:
        nr = self.nax if self.nax is not None else self.nax_read
        nw = self.nax if self.nax is not None else self.nax_write
        return EngineConfig(
            aw=self.aw, dw=self.dw, nax_read=nr, nax_write=nw,
            ports=tuple(p.to_port() for p in self.ports),
            has_legalizer=self.has_legalizer,
            has_error_handler=self.has_error_handler,
            buffer_depth=self.buffer_depth,
            reject_zero_length=self.reject_zero_length,
        )


class ErrorEntryModel(_Strict):
    burst: Optional[int] = None
    side: Optional[Literal["read", "write"]] = None
    addr_lo: Optional[int] = None
    addr_hi: Optional[int] = None
    kind: str = "slverr"
    action: Optional[Literal["continue", "abort", "replay"]] = None

    def to_spec(self) -> ErrorSpec:
        return ErrorSpec(
            burst=self.burst, side=self.side, addr_lo=self.addr_lo,
            addr_hi=self.addr_hi, kind=self.kind,
            action=ErrorAction(self.action) if self.action else None)


class MemoryModel(_Strict):
    port: str
    preset: Optional[str] = None
    latency: Optional[int] = None
    max_outstanding: Optional[int] = None
    size: Optional[int] = None
    base: int = 0
    errors: list[ErrorEntryModel] = Field(default_factory=list)

    def to_model(self) -> EndpointModel:
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise UnknownPreset(self.preset)
            latency, outstanding = PRESETS[self.preset]
        else:
            latency, outstanding = 1, 1
        if self.latency is not None:
            latency = self.latency
        if self.max_outstanding is not None:
            outstanding = self.max_outstanding
        return EndpointModel(
            latency=latency, max_outstanding=outstanding, size=self.size,
            base=self.base, preset_name=self.preset,
            error_plan=tuple(e.to_spec() for e in self.errors))


class DimModel(_Strict):
    src_stride: int
    dst_stride: int
    reps: int

    def to_dim(self) -> Dim:
        return Dim(self.src_stride, self.dst_stride, self.reps)


class InitPatternModel(_Strict):
    kind: Literal["constant", "increment", "pseudorandom"] = "constant"
    value: int = 0
    start: int = 0
    seed: int = 1

    def to_pattern(self) -> tuple:
        if self.kind == "constant":
            return ("constant", self.value)
        if self.kind == "increment":
            return ("increment", self.start)
        return ("pseudorandom", self.seed)


class TransferModel(_Strict):
    at: int = 0
    src: int = 0
    dst: int = 0
    length: int = 0
    src_protocol: str = "axi"
    dst_protocol: str = "axi"
    dims: list[DimModel] = Field(default_factory=list)
    decouple_rw: bool = True
    user_burst_cap: Optional[int] = None
    src_reduce_len: Optional[int] = None
    dst_reduce_len: Optional[int] = None
    error_action: Literal["continue", "abort", "replay"] = "continue"
    init_pattern: Optional[InitPatternModel] = None

    def to_nd(self) -> NdTransferDescriptor:
        opts = BackendOptions(
            decouple_rw=self.decouple_rw,
            user_burst_cap=self.user_burst_cap,
            src_reduce_len=self.src_reduce_len,
            dst_reduce_len=self.dst_reduce_len,
            error_action_default=ErrorAction(self.error_action),
        )
        base = TransferDescriptor1D(
            self.src, self.dst, self.length,
            ProtocolId(self.src_protocol), ProtocolId(self.dst_protocol), opts)
        return NdTransferDescriptor(base, tuple(d.to_dim() for d in self.dims))


class PiecesModel(_Strict):
    """Convenience workload: one range copied as back-to-back pieces."""

    total: int
    piece: int
    src: int = 0
    dst: Optional[int] = None  # default: directly after the source range
    src_protocol: str = "axi"
    dst_protocol: str = "axi"
    at: int = 0


class WorkloadModel(_Strict):
    transfers: list[TransferModel] = Field(default_factory=list)
    pieces: Optional[PiecesModel] = None
    fill: Literal["random", "zeros"] = "random"
    seed: int = 1
    max_cycles: Optional[int] = None


class MidendModel(_Strict):
    type: Literal["tensor_nd", "tensor_2d", "mp_split", "mp_dist", "rt_3d"]
    zero_latency: bool = False            # tensor_nd
    boundary: int = 4096                  # mp_split / mp_dist
    side: Literal["src", "dst"] = "dst"
    ports: int = 2                        # mp_dist fan-out
    tree: bool = True                     # mp_dist: binary tree of 2-way stages
    policy: Literal["address", "round_robin"] = "address"
    period: int = 1                       # rt_3d
    num_launches: Optional[int] = None
    first_launch: int = 0
    enabled: bool = True
    shape: Optional[TransferModel] = None

    @property
    def latency(self) -> int:
        if self.type == "tensor_nd" and self.zero_latency:
            return 0
        if self.type == "mp_dist" and self.tree and self.ports > 2:
            return max(1, (self.ports - 1).bit_length())
        return 1


class FrontendModel(_Strict):
    type: Literal["inject", "inst_64", "reg_32_3d", "desc_64"] = "inject"
    occupancy: Optional[int] = None
    fetch_port: Optional[str] = None      # desc_64
    chain_addr: int = 0x1000              # where the chain is materialized


class SimConfigModel(_Strict):
    engine: EngineModel
    memory: list[MemoryModel] = Field(default_factory=list)
    workload: WorkloadModel = Field(default_factory=WorkloadModel)
    frontend: FrontendModel = Field(default_factory=FrontendModel)
    midends: list[MidendModel] = Field(default_factory=list)
    config_id: str = ""

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.frontend.type == "desc_64":
            if self.midends:
                raise ValueError("desc_64 front-end supports no mid-end chain")
            if not self.fetch_port_name():
                raise ValueError("desc_64 front-end needs fetch_port")
        kinds = [m.type for m in self.midends]
        if "rt_3d" in kinds:
            rt = self.midends[kinds.index("rt_3d")]
            if rt.shape is None and rt.enabled:
                raise ValueError("rt_3d mid-end needs a shape")
            if rt.enabled and rt.num_launches is None \
                    and self.workload.max_cycles is None:
                raise ValueError(
                    "unbounded rt_3d schedule needs workload.max_cycles")
        if "mp_dist" in kinds and kinds.index("mp_dist") != len(kinds) - 1:
            raise ValueError("mp_dist must be the last mid-end in the chain")
        return self

    def fetch_port_name(self) -> str | None:
        return self.frontend.fetch_port

    def n_engines(self) -> int:
        for m in self.midends:
            if m.type == "mp_dist":
                return m.ports
        return 1


def load_config(path: str) -> SimConfigModel:
    with open(path) as fh:
        data = json.load(fh)
    return SimConfigModel.model_validate(data)


def parse_config(data: dict) -> SimConfigModel:
    return SimConfigModel.model_validate(data)
