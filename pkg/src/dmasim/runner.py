"""Build and run simulations from validated configurations.

The front-end and mid-end chain are applied as paced stream transforms:
every stage adds its pipeline latency and emits at most one descriptor per
cycle, which matches the ready-valid pipelining of the hardware chain.
The per-piece workload generator, the periodic launcher and the
descriptor-chain front-end all feed the same engine simulation.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import frontend as fe
from .config import MidendModel, SimConfigModel, TransferModel, parse_config
from .core import BackendOptions, NdTransferDescriptor, TransferDescriptor1D
from .engine import ConfigError, LaunchItem, Simulation, _Clock, launch_latency
from .memsys import EndpointSim, SparseBytes
from .metrics import (
    PortStats,
    SimReport,
    TransferStats,
    engine_utilization,
)
from .midend import RtConfig, distribute, expand_nd, rt_schedule, split_at_boundary
from .protocol import ProtocolId, capabilities

WORKER_ENV = "DMASIM_THREADS"


@dataclass
class _Item:
    """Descriptor moving through the feed chain."""

    ready: int
    presented_at: int
    parent: int
    nd: NdTransferDescriptor
    init_pattern: tuple | None = None


@dataclass
class RunResult:
    report: SimReport
    stores: dict[str, SparseBytes]
    sims: list[Simulation]
    trace: list[tuple] = field(default_factory=list)
    frontend_state: object = None


def _frontend_occupancy(cfg: SimConfigModel, nd: NdTransferDescriptor) -> int:
    fe_cfg = cfg.frontend
    if fe_cfg.occupancy is not None:
        return max(1, fe_cfg.occupancy)
    if fe_cfg.type == "inst_64":
        return 3
    if fe_cfg.type == "reg_32_3d":
        # src, dst, length, configuration writes + 3 per dim + launch read
        return 5 + 3 * len(nd.dims)
    return 1


def _workload_launches(cfg: SimConfigModel) -> list[tuple[int, NdTransferDescriptor, tuple | None]]:
    """(arrival cycle, descriptor, init pattern) per workload transfer."""
    out = [(t.at, t.to_nd(), t.init_pattern.to_pattern() if t.init_pattern
            else None) for t in cfg.workload.transfers]
    pieces = cfg.workload.pieces
    if pieces is not None:
        dst = pieces.dst if pieces.dst is not None else pieces.src + pieces.total
        src_p = ProtocolId(pieces.src_protocol)
        dst_p = ProtocolId(pieces.dst_protocol)
        opts = BackendOptions()
        off = 0
        while off < pieces.total:
            n = min(pieces.piece, pieces.total - off)
            base = TransferDescriptor1D(pieces.src + off, dst + off, n,
                                        src_p, dst_p, opts)
            out.append((pieces.at, NdTransferDescriptor(base), None))
            off += n
    return out


def _present(cfg: SimConfigModel,
             launches: list[tuple[int, NdTransferDescriptor, tuple | None]]) -> list[_Item]:
    """Front-end pacing: one launch per occupancy window, in arrival order."""
    items: list[_Item] = []
    free = 0
    for i, (at0, nd, pat) in enumerate(
            sorted(launches, key=lambda t: t[0]), start=1):
        occ = _frontend_occupancy(cfg, nd)
        at = max(at0, free)
        free = at + occ
        items.append(_Item(ready=at, presented_at=at, parent=i, nd=nd,
                           init_pattern=pat))
    return items


def _paced_flat(items: list[_Item], children, latency: int) -> list[_Item]:
    """Expand each item and re-pace: one output per cycle, +latency."""
    out: list[_Item] = []
    prev = -1
    for it in items:
        for nd in children(it):
            ready = max(it.ready + latency, prev + 1)
            prev = ready
            out.append(_Item(ready=ready, presented_at=it.presented_at,
                             parent=it.parent, nd=nd,
                             init_pattern=it.init_pattern))
    return out


def _apply_midend(m: MidendModel, items: list[_Item], aw: int,
                  max_cycles: int | None) -> list[list[_Item]] | list[_Item]:
    if m.type in ("tensor_nd", "tensor_2d"):
        if m.type == "tensor_2d":
            for it in items:
                if len(it.nd.dims) > 1:
                    raise ConfigError("tensor_2d mid-end accepts at most 2D")

        def expand(it: _Item):
            return (NdTransferDescriptor(d) for d in expand_nd(it.nd, aw))
        return _paced_flat(items, expand, m.latency)

    if m.type == "mp_split":
        def split(it: _Item):
            if it.nd.dims:
                raise ConfigError("mp_split needs 1D input; chain a tensor "
                                  "mid-end before it")
            return (NdTransferDescriptor(p) for p in split_at_boundary(
                it.nd.base, m.boundary, m.side))
        return _paced_flat(items, split, m.latency)

    if m.type == "rt_3d":
        shape = m.shape.to_nd() if m.shape else None
        rt = RtConfig(shape=shape, period=m.period,
                      num_launches=m.num_launches,
                      first_launch=m.first_launch, enabled=m.enabled) \
            if shape is not None else None
        bypass = [(it.ready, it) for it in items]
        if rt is None or not m.enabled:
            events = [(c, "bypass", it) for c, it in bypass]
        else:
            events = rt_schedule(rt, bypass, occupancy=1,
                                 horizon=max_cycles)
        out = []
        prev = -1
        next_parent = max((it.parent for it in items), default=0)
        for cycle, kind, payload in events:
            ready = max(cycle + m.latency, prev + 1)
            prev = ready
            if kind == "periodic":
                next_parent += 1
                out.append(_Item(ready=ready, presented_at=cycle,
                                 parent=next_parent, nd=shape))
            else:
                it = payload
                out.append(_Item(ready=ready, presented_at=it.presented_at,
                                 parent=it.parent, nd=it.nd,
                                 init_pattern=it.init_pattern))
        return out

    if m.type == "mp_dist":
        pieces = []
        for it in items:
            if it.nd.dims:
                raise ConfigError("mp_dist needs 1D input")
            pieces.append(it)
        routed = distribute([it.nd.base for it in pieces], m.ports,
                            m.boundary, m.side, m.policy)
        index_of = {id(it.nd.base): it for it in pieces}
        streams: list[list[_Item]] = []
        for port_pieces in routed:
            prev = -1
            stream = []
            for p in port_pieces:
                it = index_of[id(p)]
                ready = max(it.ready + m.latency, prev + 1)
                prev = ready
                stream.append(_Item(ready=ready, presented_at=it.presented_at,
                                    parent=it.parent, nd=it.nd,
                                    init_pattern=it.init_pattern))
            streams.append(stream)
        return streams

    raise ConfigError(f"unknown mid-end {m.type!r}")


def _build_feeds(cfg: SimConfigModel) -> list[list[LaunchItem]]:
    items = _present(cfg, _workload_launches(cfg))
    aw = cfg.engine.aw
    streams: list[list[_Item]] | None = None
    for m in cfg.midends:
        if streams is not None:
            raise ConfigError("mp_dist must be the last mid-end")
        result = _apply_midend(m, items, aw, cfg.workload.max_cycles)
        if m.type == "mp_dist":
            streams = result
        else:
            items = result
    if streams is None:
        streams = [items]
    feeds = []
    for stream in streams:
        feed = []
        for it in stream:
            if it.nd.dims:
                raise ConfigError(
                    "ND transfer reached the back-end; chain a tensor mid-end")
            feed.append(LaunchItem(
                ready=it.ready, desc=it.nd.base, parent=it.parent,
                presented_at=it.presented_at, init_pattern=it.init_pattern))
        feeds.append(feed)
    return feeds


class _DescFetcher:
    """Sequential descriptor-chain walker over a dedicated manager port."""

    def __init__(self, sim: Simulation, port: str, head: int):
        self.sim = sim
        self.port = port
        self.ep = sim.endpoints[port]
        self.next_ptr = head
        self.count = 0
        self.parent = 0
        sim.clock.push(0, 2, self._fetch)

    def _fetch(self):
        if self.next_ptr is None or self.next_ptr == fe.END_PTR:
            return
        if self.count >= fe.MAX_CHAIN:
            raise fe.ChainTooLong(f"chain exceeds {fe.MAX_CHAIN} descriptors")
        now = self.sim.clock.now
        if not self.ep.can_accept("read"):
            self.sim.clock.push(now + 1, 2, self._fetch)
            return
        ptr = self.next_ptr
        nbeats = max(1, -(-fe.DESC_BYTES // self.sim.bus))
        first, fault = self.ep.accept_read(now, ptr, fe.DESC_BYTES, nbeats)
        if self.sim.first_request is None or now < self.sim.first_request:
            self.sim.first_request = now
        end = first + nbeats - 1
        st = self.sim.port_stats[self.port]
        st.read_beats += nbeats
        st.read_payload += fe.DESC_BYTES
        self.sim._tr(now, "frontend", "desc_fetch", ptr, fe.DESC_BYTES, self.port)
        self.sim.clock.push(end, 0, lambda ptr=ptr, end=end: self._decoded(ptr, end))

    def _decoded(self, ptr: int, end: int):
        self.ep.read_delivered(end)
        self.sim.last_response = max(self.sim.last_response, end)
        desc, nxt = fe.fetch_descriptor(self.ep.store, ptr)
        self.count += 1
        self.parent += 1
        self.next_ptr = nxt
        item = LaunchItem(ready=end + 1, desc=desc.to_transfer(),
                          parent=self.parent, presented_at=end + 1)
        self.sim.feed([item])
        self.sim.clock.push(end + 1, 2, self._fetch)


def _build_endpoints(cfg: SimConfigModel, n_engines: int):
    stores: dict[str, SparseBytes] = {}
    models = {}
    for mem in cfg.memory:
        models[mem.port] = mem.to_model()
    port_names = {p.name or p.protocol for p in cfg.engine.ports}
    for name in sorted(models):
        if name not in port_names:
            raise ConfigError(f"memory block for unknown port {name!r}")
        m = models[name]
        stores[name] = SparseBytes(m.base, m.size)
    per_engine = []
    for _ in range(n_engines):
        eps = {}
        for name, model in models.items():
            eps[name] = EndpointSim(model, stores[name])
        per_engine.append(eps)
    return stores, models, per_engine


def _fill_sources(cfg: SimConfigModel, stores: dict[str, SparseBytes],
                  engine_cfg, seed: int):
    """Seed source ranges with random bytes, coalescing adjacent pieces."""
    if cfg.workload.fill == "zeros":
        return
    rng = np.random.Generator(np.random.PCG64(seed))
    intervals: dict[str, list[tuple[int, int]]] = {}
    for _at, nd, _pat in _workload_launches(cfg):
        proto = nd.base.src_protocol
        if capabilities(proto).addressless:
            continue
        port = engine_cfg.port_for(proto, "read")
        if port is None or port.name not in stores:
            continue
        for d in expand_nd(nd, cfg.engine.aw):
            if d.length:
                intervals.setdefault(port.name, []).append(
                    (d.src_addr, d.src_addr + d.length))
    for name, spans in intervals.items():
        store = stores[name]
        spans.sort()
        lo, hi = spans[0]
        merged = []
        for a, b in spans[1:]:
            if a <= hi:
                hi = max(hi, b)
            else:
                merged.append((lo, hi))
                lo, hi = a, b
        merged.append((lo, hi))
        for a, b in merged:
            store.write(a, rng.integers(0, 256, b - a, dtype=np.uint8).tobytes())


def run_simulation(config: SimConfigModel | dict, seed: int | None = None,
                   trace: bool = False) -> RunResult:
    """Execute one configuration and assemble its report."""
    if isinstance(config, dict):
        config = parse_config(config)
    engine_cfg = config.engine.to_config()
    n_engines = config.n_engines()
    stores, models, per_engine_eps = _build_endpoints(config, n_engines)
    run_seed = seed if seed is not None else config.workload.seed
    _fill_sources(config, stores, engine_cfg, run_seed)

    clock = _Clock()
    trace_buf: list | None = [] if trace else None
    sims = []
    for i in range(n_engines):
        name = f"e{i}." if n_engines > 1 else ""
        sims.append(Simulation(engine_cfg, per_engine_eps[i], clock=clock,
                               name=name, trace=trace_buf))

    parent_done: dict[int, list] = {}
    parent_meta: dict[int, dict] = {}
    regfile = fe.RegFile32() if config.frontend.type == "reg_32_3d" else None

    def hook(sim):
        def on_complete(t):
            rec = parent_done.setdefault(t.parent, [])
            rec.append(t)
        sim.on_complete = on_complete
    for s in sims:
        hook(s)

    fetcher = None
    if config.frontend.type == "desc_64":
        port = config.frontend.fetch_port
        if port not in sims[0].endpoints:
            raise ConfigError(f"fetch port {port!r} has no endpoint")
        # materialize workload transfers as a chain in the fetch port store
        chain = [nd.base for _at, nd, _pat in _workload_launches(config)]
        head = fe.build_chain(sims[0].endpoints[port].store,
                              config.frontend.chain_addr, chain)
        fetcher = _DescFetcher(sims[0], port, head)
    else:
        feeds = _build_feeds(config)
        if len(feeds) != len(sims):
            raise ConfigError("mid-end fan-out does not match engine count")
        for s, items in zip(sims, feeds):
            for it in items:
                parent_meta.setdefault(it.parent, {
                    "presented_at": it.presented_at, "length": 0,
                    "intra": False})
                parent_meta[it.parent]["length"] += it.desc.length
            s.feed(items)

    horizon = config.workload.max_cycles
    clock.run() if horizon is None else _run_until(clock, horizon)

    report = _assemble_report(config, engine_cfg, sims, parent_meta,
                              trace_buf)
    if regfile is not None:
        done_parents = sorted(p for p, ts in parent_done.items()
                              if all(t.status != "pending" for t in ts))
        for p in done_parents:
            regfile.notify_completion(p)
        report.flags["last_completed_id"] = regfile.last_completed_id
    return RunResult(report=report, stores=stores, sims=sims,
                     trace=trace_buf or [], frontend_state=regfile or fetcher)


def _run_until(clock: _Clock, horizon: int):
    import heapq as _hq
    while clock.heap:
        cycle, _p, _s, fn = _hq.heappop(clock.heap)
        if cycle > horizon:
            break
        clock.now = cycle
        fn()
        clock.events += 1


def _assemble_report(config, engine_cfg, sims, parent_meta, trace_buf):
    ports: dict[str, PortStats] = {}
    transfers: list[TransferStats] = []
    contract_violations: list[str] = []
    skipped_ranges: list[tuple[int, int, int]] = []
    first_req = None
    last_resp = 0
    payload = 0
    failures = 0
    deadlock = None
    for s in sims:
        for pname, st in s.port_stats.items():
            key = f"{s.name}{pname}" if s.name else pname
            ports[key] = st
        contract_violations.extend(s.contract_violations)
        if s.first_request is not None:
            first_req = s.first_request if first_req is None \
                else min(first_req, s.first_request)
        last_resp = max(last_resp, s.last_response)
        if s.pending():
            deadlock = s.blocked_state()
            failures += s.pending()
        for t in s.transfers:
            if t.status == "complete":
                payload += t.desc.length
            elif t.status in ("failed", "rejected"):
                failures += 1
            for lo, ln in t.skipped:
                skipped_ranges.append((t.tid, t.desc.dst_addr + lo, ln))

    # Aggregate per top-level (parent) transfer.
    by_parent: dict[int, list] = {}
    for s in sims:
        for t in s.transfers:
            by_parent.setdefault(t.parent, []).append(t)
    for parent in sorted(by_parent):
        children = by_parent[parent]
        presented = parent_meta.get(parent, {}).get(
            "presented_at", min(c.presented_at for c in children))
        firsts = [c.first_read_req for c in children
                  if c.first_read_req is not None]
        completes = [c.completed_at for c in children]
        status = "complete"
        if any(c.status == "failed" for c in children):
            status = "failed"
        elif any(c.status == "rejected" for c in children):
            status = "rejected"
        elif any(c.status == "pending" for c in children):
            status = "pending"
        skipped = tuple((c.tid, lo, ln) for c in children
                        for lo, ln in c.skipped)
        transfers.append(TransferStats(
            tid=parent,
            presented_at=presented,
            first_read_req=min(firsts) if firsts else None,
            completed_at=max(completes) if all(
                c is not None for c in completes) else None,
            length=sum(c.desc.length for c in children),
            status=status,
            intra_port=any(c.intra_port for c in children),
            skipped=skipped,
        ))

    window = (first_req, last_resp) if first_req is not None else None
    util = engine_utilization(payload, window, engine_cfg.dw)
    if len(sims) > 1:
        util = util / len(sims)
    launch = transfers[0].launch_latency if transfers else None
    mem_preset = "custom"
    presets = {m.preset for m in config.memory if m.preset}
    if len(presets) == 1:
        mem_preset = presets.pop()
    piece = config.workload.pieces.piece if config.workload.pieces else None
    return SimReport(
        total_cycles=last_resp + 1,
        dw=engine_cfg.dw,
        aw=engine_cfg.aw,
        nax=max(engine_cfg.nax_read, engine_cfg.nax_write),
        ports=ports,
        transfers=transfers,
        window=window,
        payload_bytes=payload,
        util=util,
        launch_latency=launch,
        failures=failures,
        contract_violations=contract_violations,
        skipped_ranges=skipped_ranges,
        deadlock=deadlock,
        config_id=config.config_id,
        mem_preset=mem_preset,
        piece_bytes=piece,
    )


def predicted_launch_latency(config: SimConfigModel) -> int:
    return launch_latency(config.engine.to_config(),
                          [m.latency for m in config.midends])


# ---------------------------------------------------------------------------
# parameter sweeps

_ALIASES = {
    "nax": ("engine", "nax"),
    "dw": ("engine", "dw"),
    "aw": ("engine", "aw"),
    "buffer_depth": ("engine", "buffer_depth"),
    "piece": ("workload", "pieces", "piece"),
    "latency": ("memory", "*", "latency"),
    "max_outstanding": ("memory", "*", "max_outstanding"),
}


def apply_param(data: dict, param: str, value) -> dict:
    """Return a copy of the config dict with one parameter overridden."""
    import copy
    out = copy.deepcopy(data)
    path = _ALIASES.get(param, tuple(param.split(".")))
    node = out
    for i, key in enumerate(path[:-1]):
        if key == "*" and isinstance(node, list):
            for entry in node:
                sub_path = path[i + 1:]
                _set_path(entry, sub_path, value)
            return out
        node = node[key] if not isinstance(node, list) else node[int(key)]
    _set_path(node, path[-1:], value)
    return out


def _set_path(node, path, value):
    for key in path[:-1]:
        node = node[key] if not isinstance(node, list) else node[int(key)]
    key = path[-1]
    if isinstance(node, list):
        node[int(key)] = value
    else:
        node[key] = value


def _sweep_point(args):
    data, param, value, seed = args
    cfg = parse_config(apply_param(data, param, value))
    if not cfg.config_id:
        cfg.config_id = f"{param}={value}"
    else:
        cfg.config_id = f"{cfg.config_id}:{param}={value}"
    result = run_simulation(cfg, seed=seed)
    return result.report


def run_sweep(data: dict, param: str, values: list, seed: int | None = None,
              workers: int | None = None) -> list[SimReport]:
    """Simulate one config at several parameter values, in input order."""
    if workers is None:
        workers = int(os.environ.get(WORKER_ENV, "0")) or min(
            len(values), os.cpu_count() or 1)
    jobs = [(data, param, v, seed) for v in values]
    if workers <= 1 or len(values) <= 1:
        return [_sweep_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_point, jobs))
