"""Core network graph, SDN/EPC routing, UE-to-Avatar delay and link traffic accounting."""
from __future__ import annotations

import csv
import heapq
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .errors import Unreachable

SDN = "sdn"
EPC = "epc"
FLOW_KINDS = ("D2A", "A2A-sync", "A2A-migration")
TRAFFIC_COLUMNS = ("slot", "link_src", "link_dst", "d2a_bytes", "sync_bytes", "migration_bytes")


class Route(NamedTuple):
    path: tuple[str, ...]
    latency_ms: float


class CoreGraph:
    """Undirected core topology shared by both routing modes.

    Nodes are eNBs (each attached to one cloudlet / GCS), switches and gateways.
    Gateways are traversed in declaration order in EPC mode.
    """

    def __init__(self, nodes, links, mode: str = SDN):
        if mode not in (SDN, EPC):
            raise ValueError(f"unknown routing mode {mode!r}")
        self.mode = mode
        self.kind: dict[str, str] = {}
        self.attached: dict[str, str] = {}
        self.gateways: list[str] = []
        for n in nodes:
            node_id, kind, gcs = (n.id, n.kind, n.gcs) if hasattr(n, "id") else n
            self.kind[node_id] = kind
            if kind == "enb":
                self.attached[node_id] = gcs
            elif kind == "gateway":
                self.gateways.append(node_id)
        self.adj: dict[str, dict[str, float]] = {n: {} for n in self.kind}
        for link in links:
            a, b, lat = (link.a, link.b, link.latency_ms) if hasattr(link, "a") else link
            if lat <= 0:
                raise ValueError("link latency must be positive")
            # parallel links collapse to the fastest
            if b not in self.adj[a] or lat < self.adj[a][b]:
                self.adj[a][b] = lat
                self.adj[b][a] = lat
        if mode == EPC and not self.gateways:
            raise ValueError("EPC routing needs at least one gateway node")
        self._sp_cache: dict[tuple[str, str], Route] = {}
        self._enbs_of: dict[str, list[str]] = defaultdict(list)
        for enb in sorted(self.attached):
            self._enbs_of[self.attached[enb]].append(enb)

    @classmethod
    def from_scenario(cls, scenario, mode: str = SDN) -> "CoreGraph":
        return cls(scenario.core_nodes, scenario.core_links, mode)

    def with_mode(self, mode: str) -> "CoreGraph":
        nodes = [(n, k, self.attached.get(n)) for n, k in self.kind.items()]
        links = [(a, b, lat) for a in self.adj for b, lat in self.adj[a].items() if a < b]
        return CoreGraph(nodes, links, mode)

    def enbs_of(self, gcs_id: str) -> list[str]:
        return self._enbs_of.get(gcs_id, [])

    def gcs_of(self, enb: str) -> str:
        return self.attached[enb]

    def shortest(self, src: str, dst: str) -> Route:
        """Minimum-latency path; ties go to the lexicographically smallest node sequence."""
        key = (src, dst)
        if key in self._sp_cache:
            return self._sp_cache[key]
        if src not in self.adj or dst not in self.adj:
            raise Unreachable(f"unknown node in {src!r} -> {dst!r}")
        heap = [(0.0, (src,))]
        done = set()
        result = None
        while heap:
            dist, path = heapq.heappop(heap)
            node = path[-1]
            if node in done:
                continue
            done.add(node)
            if node == dst:
                result = Route(path, dist)
                break
            for nxt, lat in self.adj[node].items():
                if nxt not in done:
                    heapq.heappush(heap, (dist + lat, path + (nxt,)))
        if result is None:
            raise Unreachable(f"no path {src!r} -> {dst!r}")
        self._sp_cache[key] = result
        return result


def route(graph: CoreGraph, src: str, dst: str) -> Route:
    """Path between two eNBs under the graph's routing mode.

    SDN takes the direct shortest path. EPC detours through every gateway in order
    (shortest legs, gateway counted once between legs), so the result is a walk that
    may revisit switches on the way back from the gateway.
    """
    if src == dst:
        return Route((), 0.0)
    if graph.mode == SDN:
        return graph.shortest(src, dst)
    waypoints = [src, *graph.gateways, dst]
    path: list[str] = [src]
    latency = 0.0
    for a, b in zip(waypoints, waypoints[1:]):
        if a == b:
            continue
        leg = graph.shortest(a, b)
        path.extend(leg.path[1:])
        latency += leg.latency_ms
    return Route(tuple(path), latency)


def gcs_route(graph: CoreGraph, src_gcs: str, dst_gcs: str) -> Route:
    """Fastest route between any eNB of one cloudlet and any eNB of another."""
    if src_gcs == dst_gcs:
        return Route((), 0.0)
    best = None
    for a in graph.enbs_of(src_gcs):
        for b in graph.enbs_of(dst_gcs):
            r = route(graph, a, b)
            if best is None or (r.latency_ms, r.path) < (best.latency_ms, best.path):
                best = r
    if best is None:
        raise Unreachable(f"no eNB for {src_gcs!r} or {dst_gcs!r}")
    return best


def avatar_route(graph: CoreGraph, serving_enb: str, host_gcs: str) -> Route:
    """Core segment between a UE's serving eNB and the cloudlet hosting its Avatar."""
    if graph.gcs_of(serving_enb) == host_gcs:
        return Route((), 0.0)
    best = None
    for b in graph.enbs_of(host_gcs):
        r = route(graph, serving_enb, b)
        if best is None or (r.latency_ms, r.path) < (best.latency_ms, best.path):
            best = r
    if best is None:
        raise Unreachable(f"cloudlet {host_gcs!r} has no eNB")
    return best


def e2e_delay(graph: CoreGraph, serving_enb: str, host_gcs: str, wireless_ms: float) -> float:
    """One wireless hop plus core latency; the eNB-to-attached-cloudlet link counts as zero."""
    return wireless_ms + avatar_route(graph, serving_enb, host_gcs).latency_ms


@dataclass(frozen=True)
class FlowRecord:
    kind: str
    src: str
    dst: str
    bytes: float
    path: tuple[str, ...]
    slot: int


def _link(a, b):
    return (a, b) if a <= b else (b, a)


class TrafficAccount:
    """Bytes per link, per slot and per flow kind."""

    def __init__(self):
        self.flows: list[FlowRecord] = []
        self.link_bytes: dict[tuple[int, tuple[str, str]], dict[str, float]] = {}
        self.kind_totals = {k: 0.0 for k in FLOW_KINDS}
        self.slot_kind: dict[int, dict[str, float]] = defaultdict(lambda: {k: 0.0 for k in FLOW_KINDS})

    def record(self, flow: FlowRecord) -> None:
        if flow.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {flow.kind!r}")
        if flow.bytes < 0:
            raise ValueError("negative flow size")
        self.flows.append(flow)
        self.kind_totals[flow.kind] += flow.bytes
        self.slot_kind[flow.slot][flow.kind] += flow.bytes
        for a, b in zip(flow.path, flow.path[1:]):
            cell = self.link_bytes.setdefault((flow.slot, _link(a, b)),
                                              {k: 0.0 for k in FLOW_KINDS})
            cell[flow.kind] += flow.bytes

    def link_total(self, a: str, b: str, kind: str | None = None) -> float:
        link = _link(a, b)
        total = 0.0
        for (_, lk), cell in self.link_bytes.items():
            if lk == link:
                total += cell[kind] if kind else sum(cell.values())
        return total

    def core_bytes(self, slot: int | None = None, kind: str | None = None) -> float:
        """Link-bytes carried by the core (a flow over n links counts n times)."""
        total = 0.0
        for (s, _), cell in self.link_bytes.items():
            if slot is None or s == slot:
                total += cell[kind] if kind else sum(cell.values())
        return total

    def rows(self):
        for (slot, (a, b)), cell in sorted(self.link_bytes.items()):
            yield (slot, a, b, cell["D2A"], cell["A2A-sync"], cell["A2A-migration"])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAFFIC_COLUMNS)
            for row in self.rows():
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def record_flow(account: TrafficAccount, kind: str, path: Iterable[str], nbytes: float,
                slot: int, src: str = "", dst: str = "") -> TrafficAccount:
    path = tuple(path)
    src = src or (path[0] if path else "")
    dst = dst or (path[-1] if path else "")
    account.record(FlowRecord(kind, src, dst, float(nbytes), path, slot))
    return account
