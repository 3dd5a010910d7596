"""Analytical area, timing and latency estimators.

The area model is table-driven: every unit cell holds its gate-equivalent
value at the reference configuration (AW=32, DW=32, NAx=16) and a scaling
tag (nax / aw / dw / const).  Estimation scales each cell proportionally
in its tagged parameter and sums over the configured ports; units flagged
``max_over_protocols`` share one structure per direction, so only the
largest present protocol cell counts per side.

The timing model is affine in DW, AW and log2(NAx), with a per-protocol
offset; the clock frequency is its reciprocal.  The shipped coefficients
are synthetic placeholders for a technology-specific fit; refit them with
:func:`fit_nnls` from measured samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .core import EngineConfig
from .engine import launch_latency
from .protocol import ProtocolId

_COLUMN = {
    ProtocolId.AXI: "axi",
    ProtocolId.AXI_LITE: "axi_lite",
    ProtocolId.AXI_STREAM: "axi_stream",
    ProtocolId.OBI: "obi",
    ProtocolId.TILELINK_UL: "tilelink",
    ProtocolId.TILELINK_UH: "tilelink",
    ProtocolId.INIT: "init",
}


class UnknownProtocol(KeyError):
    pass


class UnfittedModel(RuntimeError):
    pass


class Underdetermined(ValueError):
    pass


@dataclass(frozen=True)
class AreaCell:
    value: float
    scaling: str  # nax | aw | dw | const


@dataclass
class AreaTable:
    reference: dict
    units: list[dict]

    @classmethod
    def load_default(cls) -> "AreaTable":
        raw = resources.files("dmasim.data").joinpath("area_table.json")
        data = json.loads(raw.read_text())
        return cls(reference=data["reference"], units=data["units"])

    def base_cell(self, unit: str) -> float:
        for u in self.units:
            if u["unit"] == unit:
                return u["base"]
        raise KeyError(unit)

    def protocol_cell(self, unit: str, column: str, side: str) -> float:
        for u in self.units:
            if u["unit"] == unit:
                cell = u["cells"][column]
                if isinstance(cell, (int, float)):
                    return float(cell)
                return float(cell[0 if side == "read" else 1])
        raise KeyError(unit)


@dataclass
class AreaBreakdown:
    units: dict[str, float]
    total: float

    def to_dict(self) -> dict:
        return {"units": dict(self.units), "total": self.total}


def _scale(cfg: EngineConfig, scaling: str, ref: dict, side: str | None = None) -> float:
    if scaling == "const":
        return 1.0
    if scaling == "dw":
        return cfg.dw / ref["dw"]
    if scaling == "aw":
        return cfg.aw / ref["aw"]
    if scaling == "nax":
        if side == "read":
            nax = cfg.nax_read
        elif side == "write":
            nax = cfg.nax_write
        else:
            nax = max(cfg.nax_read, cfg.nax_write)
        return nax / ref["nax"]
    raise ValueError(f"unknown scaling tag {scaling!r}")


def estimate_area(cfg: EngineConfig, table: AreaTable | None = None) -> AreaBreakdown:
    """Per-unit gate-equivalent breakdown for one engine configuration."""
    if table is None:
        table = AreaTable.load_default()
    ref = table.reference
    sides: list[tuple[str, str]] = []  # (column, side)
    for p in cfg.ports:
        col = _COLUMN.get(p.protocol)
        if col is None:
            raise UnknownProtocol(p.protocol)
        if p.direction.reads:
            sides.append((col, "read"))
        if p.direction.writes:
            sides.append((col, "write"))
    out: dict[str, float] = {}
    for u in table.units:
        scaling = u["scaling"]
        total = u["base"] * _scale(cfg, scaling, ref)
        if u["max_over_protocols"]:
            for side in ("read", "write"):
                best = 0.0
                for col, s in sides:
                    if s != side or col == "init":
                        continue
                    cell = u["cells"][col]
                    v = cell if isinstance(cell, (int, float)) else cell[
                        0 if side == "read" else 1]
                    best = max(best, float(v))
                total += best * _scale(cfg, scaling, ref, side)
            for col, side in sides:
                if col == "init":
                    cell = u["cells"]["init"]
                    total += float(cell) * _scale(cfg, scaling, ref, side)
        else:
            for col, side in sides:
                cell = u["cells"][col]
                v = cell if isinstance(cell, (int, float)) else cell[
                    0 if side == "read" else 1]
                total += float(v) * _scale(cfg, scaling, ref, side)
        out[u["unit"]] = total
    return AreaBreakdown(units=out, total=sum(out.values()))


@dataclass
class TimingModel:
    """Longest path (ns) = t0 + k_dw*DW + k_aw*AW + k_nax*log2(NAx) + offset."""

    t0: float | None = None
    k_dw: float = 0.0
    k_aw: float = 0.0
    k_nax: float = 0.0
    protocol_offsets: dict[str, float] = field(default_factory=dict)
    extra_port_penalty: float = 0.0
    source: str = "unfitted"

    @classmethod
    def synthetic(cls) -> "TimingModel":
        # Placeholder coefficients with the qualitative shape of a real
        # fit: data width dominates, address width is mild, outstanding
        # transactions degrade sub-linearly, simple protocols run faster.
        return cls(
            t0=0.35,
            k_dw=0.004,
            k_aw=0.001,
            k_nax=0.04,
            protocol_offsets={
                "axi": 0.12, "tilelink": 0.10, "axi_stream": 0.04,
                "axi_lite": 0.02, "obi": 0.0, "init": 0.0,
            },
            extra_port_penalty=0.03,
            source="synthetic",
        )

    def longest_path_ns(self, cfg: EngineConfig) -> float:
        if self.t0 is None:
            raise UnfittedModel("timing model has no coefficients loaded")
        nax = max(cfg.nax_read, cfg.nax_write)
        path = (self.t0 + self.k_dw * cfg.dw + self.k_aw * cfg.aw
                + self.k_nax * math.log2(max(nax, 1)))
        cols = {_COLUMN[p.protocol] for p in cfg.ports}
        if cols:
            path += max(self.protocol_offsets.get(c, 0.0) for c in cols)
        n_sides = sum(2 if p.direction.value == "rw" else 1 for p in cfg.ports)
        path += self.extra_port_penalty * max(0, n_sides - 2)
        return path


def estimate_timing(cfg: EngineConfig,
                    model: TimingModel | None = None) -> tuple[float, float]:
    """(longest path ns, f_max GHz); raises UnfittedModel without a model."""
    if model is None:
        raise UnfittedModel("no timing model loaded; use TimingModel.synthetic()")
    path = model.longest_path_ns(cfg)
    return path, 1.0 / path


def fit_nnls(A, b, tol: float | None = None,
             max_iter: int | None = None) -> np.ndarray:
    """Non-negative least squares via the Lawson-Hanson active-set method.

    Minimizes ``||A x - b||`` subject to ``x >= 0``.  Deterministic: dual
    ties resolve to the lowest column index.  Raises
    :class:`Underdetermined` when there are fewer samples than features.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if m < n:
        raise Underdetermined(f"{m} samples for {n} features")
    if max_iter is None:
        max_iter = 3 * n
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(
            1.0, float(np.abs(A.T @ b).max(initial=0.0)))

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b  # gradient of -0.5*||Ax-b||^2 at x = 0
    it = 0
    while not passive.all():
        w_masked = np.where(passive, -np.inf, w)
        j = int(np.argmax(w_masked))
        if w_masked[j] <= tol:
            break
        passive[j] = True
        while True:
            it += 1
            if it > max_iter * max(1, n):
                break
            Ap = A[:, passive]
            z_p, *_ = np.linalg.lstsq(Ap, b, rcond=None)
            z = np.zeros(n)
            z[passive] = z_p
            if z_p.min(initial=1.0) > 0:
                x = z
                break
            mask = passive & (z <= 0)
            ratios = x[mask] / (x[mask] - z[mask])
            alpha = ratios.min()
            x = x + alpha * (z - x)
            passive &= x > tol * 1e-3
            x[~passive] = 0.0
        w = A.T @ (b - A @ x)
    return x


def kkt_residuals(A, b, x) -> tuple[float, float, float]:
    """(min coefficient, worst gradient where x=0, worst |gradient| where x>0).

    For an exact KKT point: x >= 0, gradient >= 0 on the active set, and
    zero on the passive set, where gradient = A^T (A x - b).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    g = A.T @ (A @ x - b)
    at_zero = x <= 0
    worst_active = float((-g[at_zero]).max(initial=0.0))
    worst_passive = float(np.abs(g[~at_zero]).max(initial=0.0))
    return float(x.min(initial=0.0)), worst_active, worst_passive


def kkt_ok(A, b, x, tol: float = 1e-9) -> bool:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(1.0, float(np.abs(A).max(initial=1.0)) ** 2
                * max(1.0, float(np.abs(b).max(initial=1.0))))
    xmin, worst_active, worst_passive = kkt_residuals(A, b, x)
    return (xmin >= -tol * scale and worst_active <= tol * scale
            and worst_passive <= tol * scale)


def fit_timing_model(samples: list[tuple[EngineConfig, float]]) -> TimingModel:
    """Fit timing coefficients from (config, longest path ns) samples."""
    cols = sorted({_COLUMN[p.protocol] for cfg, _ in samples for p in cfg.ports})
    rows = []
    obs = []
    for cfg, path in samples:
        nax = max(cfg.nax_read, cfg.nax_write)
        onehot = [0.0] * len(cols)
        present = {_COLUMN[p.protocol] for p in cfg.ports}
        for i, c in enumerate(cols):
            if c in present:
                onehot[i] = 1.0
        rows.append([1.0, cfg.dw, cfg.aw, math.log2(max(nax, 1))] + onehot)
        obs.append(path)
    x = fit_nnls(np.array(rows), np.array(obs))
    return TimingModel(
        t0=float(x[0]), k_dw=float(x[1]), k_aw=float(x[2]), k_nax=float(x[3]),
        protocol_offsets={c: float(v) for c, v in zip(cols, x[4:])},
        source="fitted",
    )


def latency_model(cfg: EngineConfig, midend_latencies=()) -> int:
    """Launch-latency prediction; must equal the simulator's measurement."""
    return launch_latency(cfg, midend_latencies)
