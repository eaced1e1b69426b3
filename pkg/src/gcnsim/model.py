"""Domain types, scenario schema and per-GCS energy demand."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import jsonschema

from .errors import InvariantError, SchemaError, UnknownGcs

DEFAULT_HEARTBEAT_S = 3.0
DEFAULT_TIMEOUT_S = 300.0
DEFAULT_SYNC_PERIOD_S = 60.0
DEFAULT_DIRTY_FRACTION = 0.01
DEFAULT_BYTES_PER_TRAFFIC_UNIT = 1e6

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 0}
_trace = {"type": "array", "items": _nonneg}


def _obj(props, required=(), **extra):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False, **extra}


SCENARIO_SCHEMA = _obj(
    {
        "time": _obj(
            {
                "T": {"type": "integer", "minimum": 1},
                "slot_seconds": {"type": "number", "exclusiveMinimum": 0},
                "ticks_per_slot": {"type": "integer", "minimum": 1, "default": 1},
            },
            required=("T", "slot_seconds"),
        ),
        "gcs": {
            "type": "array",
            "minItems": 1,
            "items": _obj(
                {
                    "id": {"type": "string", "minLength": 1},
                    "enb_static_power": {**_nonneg, "default": 0.0},
                    "enb_traffic_coeff": {**_nonneg, "default": 0.0},
                    "cloudlet_capacity": _count,
                    "datanode_count": {"type": "integer", "minimum": 1, "default": 1},
                    "battery_capacity": {"anyOf": [_nonneg, {"type": "null"}], "default": None},
                    "battery_init": {**_nonneg, "default": 0.0},
                    "generation": _trace,
                    "nominal_demand": _trace,
                },
                required=("id", "cloudlet_capacity", "generation"),
            ),
        },
        "core": _obj(
            {
                "nodes": {
                    "type": "array",
                    "minItems": 1,
                    "items": _obj(
                        {
                            "id": {"type": "string", "minLength": 1},
                            "kind": {"enum": ["enb", "switch", "gateway"]},
                            "gcs": {"type": "string"},
                        },
                        required=("id", "kind"),
                    ),
                },
                "links": {
                    "type": "array",
                    "items": _obj(
                        {
                            "a": {"type": "string"},
                            "b": {"type": "string"},
                            "latency_ms": {"type": "number", "exclusiveMinimum": 0},
                        },
                        required=("a", "b", "latency_ms"),
                    ),
                },
                "bytes_per_traffic_unit": {**_nonneg, "default": DEFAULT_BYTES_PER_TRAFFIC_UNIT},
            },
            required=("nodes", "links"),
        ),
        "ues": {
            "type": "array",
            "items": _obj(
                {
                    "id": {"type": "string", "minLength": 1},
                    "association": {"type": "array", "items": {"type": "string"}},
                    "traffic_units": _trace,
                    "app_active": {"type": "array", "items": {"type": "boolean"}},
                    "candidate_enbs": {
                        "type": "array",
                        "items": {"type": "array", "items": {"type": "string"}},
                    },
                    "visit_prior": {"type": "object", "additionalProperties": _count},
                    "avatar": _obj(
                        {
                            "host": {"type": "string"},
                            "memory_bytes": _count,
                            "cpu_state_bytes": _count,
                            "disk_bytes": _count,
                            "demand_units": _nonneg,
                            "primary_datanode": {"type": "integer", "minimum": 1, "default": 1},
                            "replica_sites": {
                                "type": "array",
                                "items": {"type": "string", "pattern": r"^.+/dn[0-9]+$"},
                            },
                        },
                        required=("host", "memory_bytes", "cpu_state_bytes", "disk_bytes",
                                  "demand_units"),
                    ),
                },
                required=("id", "association", "traffic_units", "app_active", "avatar"),
            ),
        },
        "cnfs": _obj(
            {
                "heartbeat_s": {"type": "number", "exclusiveMinimum": 0,
                                "default": DEFAULT_HEARTBEAT_S},
                "timeout_s": {"type": "number", "exclusiveMinimum": 0,
                              "default": DEFAULT_TIMEOUT_S},
                "sync_period_s": {"type": "number", "exclusiveMinimum": 0,
                                  "default": DEFAULT_SYNC_PERIOD_S},
                "replication_factor": {"type": "integer", "minimum": 1, "default": 1},
                "dirty_fraction": {"type": "number", "minimum": 0, "maximum": 1,
                                   "default": DEFAULT_DIRTY_FRACTION},
                "log_heartbeats": {"type": "boolean", "default": False},
                "failures": {
                    "type": "array",
                    "default": [],
                    "items": _obj(
                        {
                            "datanode": {"type": "string", "pattern": r"^.+/dn[0-9]+$"},
                            "fail_s": _nonneg,
                            "rejoin_s": {"anyOf": [_nonneg, {"type": "null"}], "default": None},
                        },
                        required=("datanode", "fail_s"),
                    ),
                },
            },
        ),
        "delay": _obj(
            {"wireless_ms": _nonneg, "delay_threshold_ms": _nonneg},
            required=("wireless_ms", "delay_threshold_ms"),
        ),
        "seed": {"type": "integer", "minimum": 0},
    },
    required=("time", "gcs", "core", "ues", "delay"),
)


def _fill_defaults(node, schema):
    """Insert schema defaults into ``node`` in place (objects and arrays of objects)."""
    if isinstance(node, dict) and schema.get("type") == "object":
        for key, sub in schema.get("properties", {}).items():
            if key not in node and "default" in sub:
                node[key] = copy.deepcopy(sub["default"])
            if key in node:
                _fill_defaults(node[key], sub)
    elif isinstance(node, list) and "items" in schema:
        for item in node:
            _fill_defaults(item, schema["items"])


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class GcsNode:
    id: str
    enb_static_power: float
    enb_traffic_coeff: float
    cloudlet_capacity: int
    datanode_count: int
    battery_capacity: float  # math.inf when unbounded
    battery_init: float
    generation: tuple[float, ...]
    nominal_demand: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Avatar:
    id: str
    host: str
    memory_bytes: int
    cpu_state_bytes: int
    disk_bytes: int
    demand_units: float
    primary_datanode: int = 1
    replica_sites: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class UserEquipment:
    id: str
    association: tuple[str, ...]
    traffic_units: tuple[float, ...]
    app_active: tuple[bool, ...]
    candidate_enbs: tuple[frozenset, ...]
    avatar: Avatar
    visit_prior: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class CoreNode:
    id: str
    kind: str
    gcs: str | None = None


@dataclass(frozen=True)
class CoreLink:
    a: str
    b: str
    latency_ms: float


@dataclass(frozen=True)
class DataNodeFailure:
    datanode: tuple[str, int]
    fail_s: float
    rejoin_s: float | None = None


@dataclass(frozen=True)
class CnfsParams:
    heartbeat_s: float = DEFAULT_HEARTBEAT_S
    timeout_s: float = DEFAULT_TIMEOUT_S
    sync_period_s: float = DEFAULT_SYNC_PERIOD_S
    replication_factor: int = 1
    dirty_fraction: float = DEFAULT_DIRTY_FRACTION
    log_heartbeats: bool = False
    failures: tuple[DataNodeFailure, ...] = ()


@dataclass(frozen=True)
class Scenario:
    T: int
    slot_seconds: float
    ticks_per_slot: int
    gcs_list: tuple[GcsNode, ...]
    core_nodes: tuple[CoreNode, ...]
    core_links: tuple[CoreLink, ...]
    ue_list: tuple[UserEquipment, ...]
    wireless_ms: float
    delay_threshold_ms: float
    cnfs: CnfsParams = field(default_factory=CnfsParams)
    seed: int = 0
    bytes_per_traffic_unit: float = DEFAULT_BYTES_PER_TRAFFIC_UNIT
    document: Mapping = field(default_factory=dict, compare=False, repr=False)

    @cached_property
    def gcs(self) -> dict[str, GcsNode]:
        return {g.id: g for g in self.gcs_list}

    @cached_property
    def ues(self) -> dict[str, UserEquipment]:
        return {u.id: u for u in self.ue_list}

    @cached_property
    def avatars(self) -> dict[str, Avatar]:
        return {u.id: u.avatar for u in self.ue_list}

    @cached_property
    def gcs_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.gcs))

    @cached_property
    def enb_gcs(self) -> dict[str, str]:
        return {n.id: n.gcs for n in self.core_nodes if n.kind == "enb"}

    @cached_property
    def scenario_hash(self) -> str:
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def active_avatars(self, slot: int) -> list[str]:
        return [u.id for u in sorted(self.ue_list, key=lambda u: u.id) if u.app_active[slot]]


def parse_datanode(text: str) -> tuple[str, int]:
    gcs, _, idx = text.rpartition("/dn")
    return gcs, int(idx)


# ---------------------------------------------------------------------------
# validation


def _unique(ids, path):
    seen = set()
    for i, x in enumerate(ids):
        if x in seen:
            raise InvariantError(f"duplicate id {x!r}", path + (i, "id"))
        seen.add(x)


def _check_len(seq, T, path):
    if len(seq) != T:
        raise InvariantError(f"trace length {len(seq)} != T={T}", path)


def validate_scenario(raw: Mapping) -> Scenario:
    """Check a parsed scenario document and return the normalized :class:`Scenario`."""
    doc = copy.deepcopy(dict(raw))
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise SchemaError(err.message, err.absolute_path)
    doc.setdefault("cnfs", {})
    doc.setdefault("seed", 0)
    _fill_defaults(doc, SCENARIO_SCHEMA)

    T = doc["time"]["T"]
    gcs_docs = doc["gcs"]
    _unique([g["id"] for g in gcs_docs], ("gcs",))
    gcs_list = []
    for i, g in enumerate(gcs_docs):
        path = ("gcs", i)
        _check_len(g["generation"], T, path + ("generation",))
        if "nominal_demand" in g:
            _check_len(g["nominal_demand"], T, path + ("nominal_demand",))
        cap = math.inf if g["battery_capacity"] is None else float(g["battery_capacity"])
        if g["battery_init"] > cap:
            raise InvariantError("battery_init exceeds battery_capacity", path + ("battery_init",))
        gcs_list.append(GcsNode(
            id=g["id"],
            enb_static_power=float(g["enb_static_power"]),
            enb_traffic_coeff=float(g["enb_traffic_coeff"]),
            cloudlet_capacity=g["cloudlet_capacity"],
            datanode_count=g["datanode_count"],
            battery_capacity=cap,
            battery_init=float(g["battery_init"]),
            generation=tuple(float(x) for x in g["generation"]),
            nominal_demand=(tuple(float(x) for x in g["nominal_demand"])
                            if "nominal_demand" in g else None),
        ))
    gcs_by_id = {g.id: g for g in gcs_list}

    core = doc["core"]
    _unique([n["id"] for n in core["nodes"]], ("core", "nodes"))
    nodes = []
    for i, n in enumerate(core["nodes"]):
        if n["kind"] == "enb":
            if n.get("gcs") not in gcs_by_id:
                raise InvariantError(f"eNB must attach to a known GCS, got {n.get('gcs')!r}",
                                     ("core", "nodes", i, "gcs"))
        elif "gcs" in n:
            raise InvariantError("only eNB nodes attach to a cloudlet", ("core", "nodes", i, "gcs"))
        nodes.append(CoreNode(n["id"], n["kind"], n.get("gcs")))
    node_ids = {n.id for n in nodes}
    links = []
    adj = {n: set() for n in node_ids}
    for i, link in enumerate(core["links"]):
        for end in ("a", "b"):
            if link[end] not in node_ids:
                raise InvariantError(f"unknown node {link[end]!r}", ("core", "links", i, end))
        if link["a"] == link["b"]:
            raise InvariantError("self loop", ("core", "links", i))
        links.append(CoreLink(link["a"], link["b"], float(link["latency_ms"])))
        adj[link["a"]].add(link["b"])
        adj[link["b"]].add(link["a"])
    start = min(node_ids)
    seen, queue = {start}, deque([start])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if seen != node_ids:
        raise InvariantError(f"core graph disconnected; unreachable {sorted(node_ids - seen)}",
                             ("core", "links"))
    enb_gcs = {n.id: n.gcs for n in nodes if n.kind == "enb"}
    for gid in gcs_by_id:
        if gid not in enb_gcs.values():
            raise InvariantError(f"GCS {gid!r} has no eNB in the core graph", ("core", "nodes"))

    _unique([u["id"] for u in doc["ues"]], ("ues",))
    ues = []
    for i, u in enumerate(doc["ues"]):
        path = ("ues", i)
        for key in ("association", "traffic_units", "app_active"):
            _check_len(u[key], T, path + (key,))
        if "candidate_enbs" in u:
            _check_len(u["candidate_enbs"], T, path + ("candidate_enbs",))
            cands = tuple(frozenset(c) | {u["association"][t]}
                          for t, c in enumerate(u["candidate_enbs"]))
            for t, c in enumerate(u["candidate_enbs"]):
                if u["association"][t] not in c:
                    raise InvariantError("association not among candidate_enbs",
                                         path + ("association", t))
        else:
            cands = tuple(frozenset([a]) for a in u["association"])
        for t, cset in enumerate(cands):
            for e in sorted(cset):
                if e not in enb_gcs:
                    raise InvariantError(f"unknown eNB {e!r}", path + ("candidate_enbs", t))
        for t, e in enumerate(u["association"]):
            if e not in enb_gcs:
                raise InvariantError(f"unknown eNB {e!r}", path + ("association", t))
        for g in u.get("visit_prior", {}):
            if g not in gcs_by_id:
                raise InvariantError(f"unknown GCS {g!r}", path + ("visit_prior", g))
        a = u["avatar"]
        apath = path + ("avatar",)
        if a["host"] not in gcs_by_id:
            raise InvariantError(f"unknown host GCS {a['host']!r}", apath + ("host",))
        host = gcs_by_id[a["host"]]
        if a["primary_datanode"] > host.datanode_count:
            raise InvariantError("primary_datanode beyond datanode_count",
                                 apath + ("primary_datanode",))
        primary = (a["host"], a["primary_datanode"])
        sites = []
        for j, s in enumerate(a.get("replica_sites", [])):
            site = parse_datanode(s)
            if site[0] not in gcs_by_id or site[1] > gcs_by_id[site[0]].datanode_count:
                raise InvariantError(f"unknown DataNode {s!r}", apath + ("replica_sites", j))
            if site == primary or site in sites:
                raise InvariantError("replica sites must be distinct DataNodes, none the primary",
                                     apath + ("replica_sites", j))
            sites.append(site)
        avatar = Avatar(
            id=u["id"], host=a["host"], memory_bytes=a["memory_bytes"],
            cpu_state_bytes=a["cpu_state_bytes"], disk_bytes=a["disk_bytes"],
            demand_units=float(a["demand_units"]), primary_datanode=a["primary_datanode"],
            replica_sites=tuple(sorted(sites)),
        )
        ues.append(UserEquipment(
            id=u["id"],
            association=tuple(u["association"]),
            traffic_units=tuple(float(x) for x in u["traffic_units"]),
            app_active=tuple(u["app_active"]),
            candidate_enbs=cands,
            avatar=avatar,
            visit_prior=tuple(sorted(u.get("visit_prior", {}).items())),
        ))

    load = {g: 0 for g in gcs_by_id}
    for u in ues:
        if u.app_active[0]:
            load[u.avatar.host] += 1
    for g, n in sorted(load.items()):
        if n > gcs_by_id[g].cloudlet_capacity:
            raise InvariantError(f"{n} active Avatars exceed capacity at slot 0",
                                 ("gcs", [x.id for x in gcs_list].index(g), "cloudlet_capacity"))

    delay = doc["delay"]
    if not delay["delay_threshold_ms"] > delay["wireless_ms"]:
        raise InvariantError("delay_threshold_ms must exceed wireless_ms",
                             ("delay", "delay_threshold_ms"))

    c = doc["cnfs"]
    if not c["timeout_s"] > c["heartbeat_s"]:
        raise InvariantError("timeout_s must exceed heartbeat_s", ("cnfs", "timeout_s"))
    failures = []
    for i, f in enumerate(c["failures"]):
        dn = parse_datanode(f["datanode"])
        if dn[0] not in gcs_by_id or dn[1] > gcs_by_id[dn[0]].datanode_count:
            raise InvariantError(f"unknown DataNode {f['datanode']!r}",
                                 ("cnfs", "failures", i, "datanode"))
        if f["rejoin_s"] is not None and f["rejoin_s"] <= f["fail_s"]:
            raise InvariantError("rejoin_s must follow fail_s", ("cnfs", "failures", i, "rejoin_s"))
        failures.append(DataNodeFailure(dn, float(f["fail_s"]),
                                        None if f["rejoin_s"] is None else float(f["rejoin_s"])))
    cnfs = CnfsParams(
        heartbeat_s=float(c["heartbeat_s"]), timeout_s=float(c["timeout_s"]),
        sync_period_s=float(c["sync_period_s"]), replication_factor=c["replication_factor"],
        dirty_fraction=float(c["dirty_fraction"]), log_heartbeats=c["log_heartbeats"],
        failures=tuple(failures),
    )

    return Scenario(
        T=T,
        slot_seconds=float(doc["time"]["slot_seconds"]),
        ticks_per_slot=doc["time"]["ticks_per_slot"],
        gcs_list=tuple(gcs_list),
        core_nodes=tuple(nodes),
        core_links=tuple(links),
        ue_list=tuple(ues),
        wireless_ms=float(delay["wireless_ms"]),
        delay_threshold_ms=float(delay["delay_threshold_ms"]),
        cnfs=cnfs,
        seed=doc["seed"],
        bytes_per_traffic_unit=float(doc["core"]["bytes_per_traffic_unit"]),
        document=doc,
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("scenario must be a JSON object")
    return validate_scenario(raw)


# ---------------------------------------------------------------------------
# demand


def demand_vector(scenario: Scenario, assignment: Mapping[str, str], slot: int,
                  association: Mapping[str, str] | None = None) -> dict[str, float]:
    """Realized demand of every GCS at ``slot``.

    ``assignment`` maps Avatar id to host GCS; inactive Avatars contribute nothing.
    ``association`` overrides the traced serving eNB of individual UEs.
    """
    traffic = {g: 0.0 for g in scenario.gcs}
    for ue in scenario.ue_list:
        enb = ue.association[slot] if association is None else association.get(
            ue.id, ue.association[slot])
        traffic[scenario.enb_gcs[enb]] += ue.traffic_units[slot]
    demand = {g.id: g.enb_static_power + g.enb_traffic_coeff * traffic[g.id]
              for g in scenario.gcs_list}
    for aid in sorted(assignment):
        host = assignment[aid]
        if host not in demand:
            raise UnknownGcs(host)
        ue = scenario.ues[aid]
        if ue.app_active[slot]:
            demand[host] += ue.avatar.demand_units
    return demand


def demand_of_gcs(scenario: Scenario, assignment: Mapping[str, str], slot: int, gcs_id: str,
                  association: Mapping[str, str] | None = None) -> float:
    if gcs_id not in scenario.gcs:
        raise UnknownGcs(gcs_id)
    return demand_vector(scenario, assignment, slot, association)[gcs_id]


def initial_assignment(scenario: Scenario) -> dict[str, str]:
    return {u.id: u.avatar.host for u in scenario.ue_list}


def nominal_demand(scenario: Scenario, gcs_id: str) -> tuple[float, ...]:
    """Demand trace TEA plans against: declared, else the traces with initial hosting."""
    g = scenario.gcs[gcs_id]
    if g.nominal_demand is not None:
        return g.nominal_demand
    hosts = initial_assignment(scenario)
    return tuple(demand_vector(scenario, hosts, t)[gcs_id] for t in range(scenario.T))
