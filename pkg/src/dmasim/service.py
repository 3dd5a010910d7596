"""FastAPI service wrapping the simulator and cost models.

Endpoints mirror the CLI subcommands: simulate, sweep, legalize, estimate
and presets.  Request validation is strict (unknown keys are rejected).
Run with ``uvicorn dmasim.service:app`` or ``dmasim serve``.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Literal, Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from . import __version__
from .config import EngineModel, MidendModel, SimConfigModel
from .core import InvalidConfigError
from .costmodel import TimingModel, estimate_area, estimate_timing, latency_model
from .engine import ConfigError
from .legalizer import legalize_side
from .memsys import UnknownPreset
from .metrics import emit_csv, emit_trace_csv, report_row
from .protocol import ProtocolId
from .runner import run_simulation, run_sweep

PRESET_NAMES = ("base", "pulp", "cheshire", "mempool", "manticore")


def load_preset(name: str) -> dict:
    if name not in PRESET_NAMES:
        raise UnknownPreset(name)
    raw = resources.files("dmasim.presets").joinpath(f"{name}.json")
    return json.loads(raw.read_text())


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: SimConfigModel
    seed: Optional[int] = None
    trace: bool = False


class SimulateResponse(BaseModel):
    report: dict
    trace_csv: Optional[str] = None


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: SimConfigModel
    param: str
    values: list[Union[int, float]]
    seed: Optional[int] = None
    workers: Optional[int] = None


class SweepResponse(BaseModel):
    rows: list[dict]
    csv: str


class LegalizeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    src: int
    dst: int
    length: int
    src_protocol: str = "axi"
    dst_protocol: str = "axi"
    dw: int = 32
    user_cap: Optional[int] = None


class BurstModel(BaseModel):
    side: str
    seq: int
    addr: int
    length: int


class LegalizeResponse(BaseModel):
    read_bursts: list[BurstModel]
    write_bursts: list[BurstModel]


class EstimateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    engine: EngineModel
    kind: Literal["area", "timing", "latency"] = "area"
    midends: list[MidendModel] = []


class EstimateResponse(BaseModel):
    kind: str
    result: dict


app = FastAPI(title="dmasim", version=__version__,
              description="Modular DMA engine simulator and cost models")


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest) -> SimulateResponse:
    try:
        result = run_simulation(req.config, seed=req.seed, trace=req.trace)
    except (ConfigError, InvalidConfigError, UnknownPreset, ValueError) as exc:
        raise _bad_request(exc) from exc
    return SimulateResponse(
        report=result.report.to_dict(),
        trace_csv=emit_trace_csv(result.trace) if req.trace else None)


@app.post("/sweep", response_model=SweepResponse)
def sweep(req: SweepRequest) -> SweepResponse:
    data = req.config.model_dump(mode="json", exclude_none=True)
    try:
        reports = run_sweep(data, req.param, req.values, seed=req.seed,
                            workers=req.workers)
    except (ConfigError, InvalidConfigError, UnknownPreset, KeyError,
            ValueError) as exc:
        raise _bad_request(exc) from exc
    return SweepResponse(rows=[report_row(r) for r in reports],
                         csv=emit_csv(reports))


@app.post("/legalize", response_model=LegalizeResponse)
def legalize_endpoint(req: LegalizeRequest) -> LegalizeResponse:
    try:
        reads = legalize_side(req.src, req.length, ProtocolId(req.src_protocol),
                              req.dw, req.user_cap, "read")
        writes = legalize_side(req.dst, req.length, ProtocolId(req.dst_protocol),
                               req.dw, req.user_cap, "write")
    except ValueError as exc:
        raise _bad_request(exc) from exc
    return LegalizeResponse(
        read_bursts=[BurstModel(side=b.side, seq=b.seq, addr=b.addr,
                                length=b.length) for b in reads],
        write_bursts=[BurstModel(side=b.side, seq=b.seq, addr=b.addr,
                                 length=b.length) for b in writes])


@app.post("/estimate", response_model=EstimateResponse)
def estimate(req: EstimateRequest) -> EstimateResponse:
    try:
        cfg = req.engine.to_config()
        if req.kind == "area":
            result = estimate_area(cfg).to_dict()
        elif req.kind == "timing":
            path, fmax = estimate_timing(cfg, TimingModel.synthetic())
            result = {"longest_path_ns": path, "f_max_ghz": fmax,
                      "model": "synthetic"}
        else:
            cycles = latency_model(cfg, [m.latency for m in req.midends])
            result = {"cycles": cycles}
    except (ConfigError, InvalidConfigError, ValueError) as exc:
        raise _bad_request(exc) from exc
    return EstimateResponse(kind=req.kind, result=result)


@app.get("/presets")
def list_presets() -> dict:
    return {"presets": list(PRESET_NAMES)}


@app.get("/presets/{name}")
def get_preset(name: str) -> dict:
    try:
        return load_preset(name)
    except UnknownPreset:
        raise HTTPException(status_code=404, detail=f"unknown preset {name!r}")
