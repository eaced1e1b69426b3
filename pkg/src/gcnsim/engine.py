"""Deterministic time-slotted simulation of a green cloudlet network."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import __version__
from .cnfs import (DataNodeId, HeartbeatSchedule, NameNode, VisitHistogram, migration_payload,
                   place_replicas, protocol_tick, sync_boundaries, sync_tick)
from .energy import EnergyLedger, population_std, tea_allocate, uniform_allocate
from .errors import CapacityExhausted, ScenarioMismatch
from .model import Scenario, demand_vector, nominal_demand
from .network import (CoreGraph, FlowRecord, TrafficAccount, avatar_route, e2e_delay,
                      gcs_route)
from .placement import SlotState, participants, seb_migrate, seb_pilot_shift

log = logging.getLogger(__name__)

SEB_MODES = ("migrate", "pilot", "both", "off")
TEA_MODES = ("equal_ratio", "uniform")
CORE_MODES = ("sdn", "epc")
MIGRATION = "A2A-migration"

TOTAL_KEYS = (
    "on_grid", "demand", "provisioned", "generation", "wasted_green", "migration_count",
    "migration_bytes", "reassociation_count", "d2a_bytes", "sync_bytes", "core_link_bytes",
    "data_loss_count", "delay_violations", "availability",
)


@dataclass(frozen=True)
class Policy:
    seb: str = "off"
    tea: str = "equal_ratio"
    core: str = "sdn"
    pilot_first: bool = True

    def __post_init__(self):
        if self.seb not in SEB_MODES:
            raise ValueError(f"seb must be one of {SEB_MODES}")
        if self.tea.replace("-", "_") not in TEA_MODES:
            raise ValueError(f"tea must be one of {TEA_MODES}")
        if self.core not in CORE_MODES:
            raise ValueError(f"core must be one of {CORE_MODES}")
        object.__setattr__(self, "tea", self.tea.replace("-", "_"))

    def flags(self) -> dict:
        return {"seb": self.seb, "tea": self.tea, "core": self.core,
                "pilot_first": self.pilot_first}


@dataclass
class SlotMetrics:
    slot: int
    sigma: float
    eta: dict
    demand: dict
    provisioned: dict
    on_grid: dict
    residual: dict
    mean_delay_ms: float
    max_delay_ms: float
    traffic: dict
    migration_count: int = 0
    migration_bytes: int = 0
    reassociation_count: int = 0
    data_loss_count: int = 0
    delay_violations: int = 0
    active: int = 0
    available: int = 0
    wasted: float = 0.0
    sigma_pre_seb: float = 0.0
    hosts: dict = field(default_factory=dict)
    association: dict = field(default_factory=dict)


@dataclass
class MetricsReport:
    slots: list
    metadata: dict
    ledger: EnergyLedger
    traffic: TrafficAccount
    events: list
    plans: list
    provision: dict = field(default_factory=dict)

    @property
    def totals(self) -> dict:
        s = self.slots
        active = sum(m.active for m in s)
        kind = self.traffic.kind_totals
        return {
            "on_grid": sum(sum(m.on_grid.values()) for m in s),
            "demand": sum(sum(m.demand.values()) for m in s),
            "provisioned": sum(sum(m.provisioned.values()) for m in s),
            "generation": sum(c.generation for c in self.ledger.cells.values()),
            "wasted_green": sum(m.wasted for m in s),
            "migration_count": sum(m.migration_count for m in s),
            "migration_bytes": sum(m.migration_bytes for m in s),
            "reassociation_count": sum(m.reassociation_count for m in s),
            "d2a_bytes": kind["D2A"],
            "sync_bytes": kind["A2A-sync"],
            "core_link_bytes": self.traffic.core_bytes(),
            "data_loss_count": sum(m.data_loss_count for m in s),
            "delay_violations": sum(m.delay_violations for m in s),
            "availability": 1.0 if active == 0 else sum(m.available for m in s) / active,
        }

    @property
    def sigma_per_slot(self) -> list:
        return [m.sigma for m in self.slots]

    def final_residual(self, gcs_id: str) -> float:
        return self.ledger.residual(gcs_id)

    def summary(self) -> dict:
        return {
            "metadata": self.metadata,
            "totals": self.totals,
            "per_slot": {
                "sigma": self.sigma_per_slot,
                "on_grid": [sum(m.on_grid.values()) for m in self.slots],
                "mean_delay_ms": [m.mean_delay_ms for m in self.slots],
                "max_delay_ms": [m.max_delay_ms for m in self.slots],
            },
            "final_residual": {g: self.ledger.residual(g) for g in sorted(self.provision)},
        }


def plan_provisioning(scenario: Scenario, tea: str = "equal_ratio"):
    """Offline per-GCS allocation of green energy over the horizon, before any balancing."""
    out = {}
    for g in scenario.gcs_list:
        if tea == "uniform":
            out[g.id] = uniform_allocate(g.generation, g.battery_init)
        else:
            out[g.id] = tea_allocate(g.generation, nominal_demand(scenario, g.id),
                                     g.battery_init, g.battery_capacity)
    return out


class _Run:
    def __init__(self, scenario: Scenario, policy: Policy, seed: int):
        self.sc = scenario
        self.policy = policy
        self.seed = seed
        self.graph = CoreGraph.from_scenario(scenario, policy.core)
        self.tea = plan_provisioning(scenario, policy.tea)
        self.provision = {g: r.allocation for g, r in self.tea.items()}
        self.ledger = EnergyLedger({g.id: g.battery_capacity for g in scenario.gcs_list})
        self.traffic = TrafficAccount()
        self.plans: list[dict] = []
        self.slots: list[SlotMetrics] = []
        self.hosts = {u.id: u.avatar.host for u in scenario.ue_list}
        self.placed_at = {u.id: -1 for u in scenario.ue_list}
        self.hist = VisitHistogram()
        for u in scenario.ue_list:
            for g, n in u.visit_prior:
                self.hist.visit(u.id, g, n)
        self.nn = NameNode.from_scenario(scenario)
        self.schedule = HeartbeatSchedule.from_scenario(scenario)
        live = self.nn.live()
        for u in sorted(scenario.ue_list, key=lambda u: u.id):
            a = u.avatar
            primary = DataNodeId(a.host, a.primary_datanode)
            if a.replica_sites:
                reps = [DataNodeId(*r) for r in a.replica_sites]
            else:
                reps, _ = place_replicas(self.hist.of(u.id), scenario.cnfs.replication_factor,
                                         primary, live)
            self.nn.register(u.id, primary, reps)
        self.prev_active: set[str] = set()

    # -- helpers

    def capacity(self, g):
        return self.sc.gcs[g].cloudlet_capacity

    def load(self, avatars):
        counts = {g: 0 for g in self.sc.gcs}
        for a in avatars:
            counts[self.hosts[a]] += 1
        return counts

    def migrate(self, aid, dst, slot, reason, sigma_before=None, sigma_after=None, m=None):
        src = self.hosts[aid]
        avatar = self.sc.avatars[aid]
        payload = migration_payload(avatar, dst, self.nn.replica_gcs(aid))
        r = gcs_route(self.graph, src, dst)
        self.traffic.record(FlowRecord(MIGRATION, src, dst, float(payload), r.path, slot))
        self.nn.relocate(aid, dst)
        self.hosts[aid] = dst
        self.placed_at[aid] = slot
        self.plans.append({"slot": slot, "type": "migration", "reason": reason, "avatar": aid,
                           "from": src, "to": dst, "payload_bytes": payload,
                           "sigma_before": sigma_before, "sigma_after": sigma_after})
        if m is not None:
            m["migration_count"] += 1
            m["migration_bytes"] += payload
        log.debug("slot %d: %s migration of %s %s -> %s (%d bytes)", slot, reason, aid, src,
                  dst, payload)

    def delay(self, enb, gcs):
        return e2e_delay(self.graph, enb, gcs, self.sc.wireless_ms)

    # -- slot phases

    def admit(self, slot, assoc, active, available, counters):
        newly = sorted(active - self.prev_active)
        for a in newly:
            self.placed_at[a] = slot
        settled = [a for a in available if a not in newly]
        load = self.load(settled)
        for a in newly:
            if a not in available:
                continue
            host = self.hosts[a]
            if load[host] < self.capacity(host):
                load[host] += 1
                continue
            options = sorted((self.delay(assoc[a], g), g) for g in self.sc.gcs
                             if load[g] < self.capacity(g))
            if not options:
                raise CapacityExhausted(f"slot {slot}: no cloudlet can host Avatar {a!r}")
            dst = options[0][1]
            self.migrate(a, dst, slot, "admission", m=counters)
            load[dst] += 1

    def trigger(self, slot, assoc, available, counters):
        thr = self.sc.delay_threshold_ms
        load = self.load(available)
        for a in sorted(available):
            if self.delay(assoc[a], self.hosts[a]) <= thr:
                continue
            dst = self.graph.gcs_of(assoc[a])
            if dst != self.hosts[a] and load[dst] < self.capacity(dst):
                load[self.hosts[a]] -= 1
                load[dst] += 1
                self.migrate(a, dst, slot, "delay", m=counters)

    def balance(self, slot, assoc, available, counters):
        prov = {g: self.provision[g][slot] for g in self.sc.gcs}
        modes = {"migrate": ["migrate"], "pilot": ["pilot"], "off": [],
                 "both": ["pilot", "migrate"] if self.policy.pilot_first else ["migrate", "pilot"]}
        for mode in modes[self.policy.seb]:
            state = SlotState(slot, {a: self.hosts[a] for a in available}, dict(assoc),
                              dict(self.placed_at),
                              {a: frozenset(self.nn.replica_gcs(a)) for a in available})
            if mode == "pilot":
                plan = seb_pilot_shift(state, prov, self.sc, self.graph)
                for c in plan.changes:
                    assoc[c.ue] = c.dst_enb
                self.plans.extend(plan.records())
                counters["reassociation_count"] += len(plan.changes)
            else:
                plan = seb_migrate(state, prov, self.sc, self.graph)
                for mv in plan.moves:
                    self.migrate(mv.avatar, mv.dst, slot, "seb", mv.sigma_before,
                                 mv.sigma_after, m=counters)

    def protocol(self, slot, active, counters):
        sc = self.sc
        tick_s = sc.slot_seconds / sc.ticks_per_slot
        disk = {a: av.disk_bytes for a, av in sc.avatars.items()}
        hist = {u.id: self.hist.of(u.id) for u in sc.ue_list}
        for n in range(1, sc.ticks_per_slot + 1):
            now = (slot * sc.ticks_per_slot + n) * tick_s
            prev = now - tick_s
            protocol_tick(self.nn, self.schedule, now)
            available = {a for a in active if self.nn.placements[a].available}
            load = self.load(available)
            free = {g: self.capacity(g) - load[g] for g in sc.gcs}
            plan = self.nn.recover(now, hist, disk, self.graph, slot, free, active)
            for aid, _, new in plan.promotions:
                self.hosts[aid] = new.gcs
            for f in plan.flows:
                self.traffic.record(f)
            counters["data_loss_count"] += len(plan.data_loss)
            rounds = sync_boundaries(prev, now, sc.cnfs.sync_period_s)
            if rounds:
                self.nn.clear_stale()
                for aid in sorted(self.nn.placements):
                    p = self.nn.placements[aid]
                    dirty = rounds * sc.cnfs.dirty_fraction * sc.avatars[aid].disk_bytes
                    for f in sync_tick(aid, dirty, p, self.graph, slot):
                        self.traffic.record(f)

    def sigma_now(self, slot, assoc, available):
        demand = demand_vector(self.sc, {a: self.hosts[a] for a in available}, slot, assoc)
        prov = {g: self.provision[g][slot] for g in self.sc.gcs_ids}
        ids = participants(demand, prov)
        return population_std([demand[g] / prov[g] if demand[g] else 0.0 for g in ids]) if ids else 0.0

    def step(self, slot):
        sc = self.sc
        counters = {"migration_count": 0, "migration_bytes": 0, "reassociation_count": 0,
                    "data_loss_count": 0}
        assoc = {u.id: u.association[slot] for u in sc.ue_list}
        for u in sc.ue_list:
            self.hist.visit(u.id, sc.enb_gcs[assoc[u.id]])
        active = set(sc.active_avatars(slot))
        available = {a for a in active if self.nn.placements[a].available}
        self.admit(slot, assoc, active, available, counters)
        self.trigger(slot, assoc, available, counters)
        sigma_pre = self.sigma_now(slot, assoc, available)
        self.balance(slot, assoc, available, counters)
        self.protocol(slot, active, counters)
        self.prev_active = active
        available = sorted(a for a in active if self.nn.placements[a].available)

        for a in available:
            r = avatar_route(self.graph, assoc[a], self.hosts[a])
            if r.path:
                nbytes = sc.ues[a].traffic_units[slot] * sc.bytes_per_traffic_unit
                self.traffic.record(FlowRecord("D2A", assoc[a], self.hosts[a], nbytes, r.path, slot))
        delays = [self.delay(assoc[a], self.hosts[a]) for a in available]
        violations = sum(1 for d in delays if d > sc.delay_threshold_ms)

        hosts = {a: self.hosts[a] for a in available}
        demand = demand_vector(sc, hosts, slot, assoc)
        prov = {g: self.provision[g][slot] for g in sc.gcs_ids}
        cells = {g: self.ledger.settle(g, slot, demand[g], sc.gcs[g].generation[slot], prov[g])
                 for g in sc.gcs_ids}
        ids = participants(demand, prov)
        sigma = population_std([cells[g].eta for g in ids]) if ids else 0.0
        kinds = self.traffic.slot_kind[slot]
        self.slots.append(SlotMetrics(
            slot=slot, sigma=sigma,
            eta={g: c.eta for g, c in cells.items()},
            demand=demand, provisioned=prov,
            on_grid={g: c.on_grid for g, c in cells.items()},
            residual={g: c.residual_after for g, c in cells.items()},
            mean_delay_ms=sum(delays) / len(delays) if delays else 0.0,
            max_delay_ms=max(delays) if delays else 0.0,
            traffic=dict(kinds),
            delay_violations=violations,
            active=len(active), available=len(available),
            wasted=sum(c.wasted for c in cells.values()),
            sigma_pre_seb=sigma_pre,
            hosts=dict(self.hosts),
            association=dict(assoc),
            **counters,
        ))


def run(scenario: Scenario, policy: Policy | None = None, seed: int | None = None) -> MetricsReport:
    """Simulate every slot: association, delay-triggered migration, balancing, file-system
    protocol ticks, then energy settlement against the precomputed provisioning."""
    policy = policy or Policy()
    seed = scenario.seed if seed is None else seed
    r = _Run(scenario, policy, seed)
    for slot in range(scenario.T):
        r.step(slot)
    metadata = {
        "seed": seed,
        "policy": policy.flags(),
        "scenario_hash": scenario.scenario_hash,
        "T": scenario.T,
        "N": len(scenario.gcs_list),
        "version": __version__,
        "dirty_fraction": scenario.cnfs.dirty_fraction,
        "tea_status": {g: res.status for g, res in sorted(r.tea.items())},
    }
    return MetricsReport(
        slots=r.slots, metadata=metadata, ledger=r.ledger, traffic=r.traffic,
        events=r.nn.events, plans=r.plans, provision=r.provision,
    )


def compare(a, b) -> list[dict]:
    """Per-metric change from ``a`` to ``b`` (reports or summary dicts), stable order."""
    sa = a.summary() if isinstance(a, MetricsReport) else a
    sb = b.summary() if isinstance(b, MetricsReport) else b
    ha, hb = sa["metadata"]["scenario_hash"], sb["metadata"]["scenario_hash"]
    if ha != hb:
        raise ScenarioMismatch(f"scenario hash {ha[:12]} != {hb[:12]}")
    rows = []
    for key in TOTAL_KEYS:
        va, vb = sa["totals"][key], sb["totals"][key]
        delta = vb - va
        if va != 0:
            pct = 100.0 * delta / abs(va)
        else:
            pct = 0.0 if delta == 0 else None
        rows.append({"metric": key, "a": va, "b": vb, "delta": delta, "pct": pct})
    return rows
