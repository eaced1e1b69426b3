"""Spatial energy balancing: Avatar migration and pilot-power load shifting."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

from .cnfs import migration_payload
from .energy import compute_edr, population_std
from .errors import TooLarge
from .model import Scenario, demand_vector
from .network import CoreGraph, e2e_delay

STRICT_DECREASE = 1e-12
ORACLE_MAX_ASSIGNMENTS = 729


@dataclass
class SlotState:
    """Snapshot the planners work from.

    ``hosts`` maps each active, available Avatar to its cloudlet. ``association``
    overrides the traced serving eNB of individual UEs.
    """

    slot: int
    hosts: dict[str, str]
    association: dict[str, str] = field(default_factory=dict)
    placed_at: dict[str, int] = field(default_factory=dict)
    replica_gcs: dict[str, frozenset] = field(default_factory=dict)
    movable: frozenset | None = None

    def serving(self, scenario: Scenario, ue_id: str) -> str:
        return self.association.get(ue_id, scenario.ues[ue_id].association[self.slot])

    def movable_avatars(self) -> list[str]:
        ids = self.hosts if self.movable is None else (set(self.hosts) & self.movable)
        return sorted(ids)


@dataclass(frozen=True)
class Move:
    avatar: str
    src: str
    dst: str
    payload_bytes: int
    sigma_before: float
    sigma_after: float
    step: int = 0  # the two halves of a swap share a step


@dataclass(frozen=True)
class MigrationPlan:
    slot: int
    moves: tuple[Move, ...]
    sigma_before: float
    sigma_after: float

    def records(self, reason: str = "seb"):
        for m in self.moves:
            yield {"slot": self.slot, "type": "migration", "reason": reason, "avatar": m.avatar,
                   "from": m.src, "to": m.dst, "payload_bytes": m.payload_bytes,
                   "sigma_before": m.sigma_before, "sigma_after": m.sigma_after}


@dataclass(frozen=True)
class Change:
    ue: str
    src_enb: str
    dst_enb: str
    sigma_before: float
    sigma_after: float


@dataclass(frozen=True)
class ReassociationPlan:
    slot: int
    changes: tuple[Change, ...]
    sigma_before: float
    sigma_after: float

    def records(self):
        for c in self.changes:
            yield {"slot": self.slot, "type": "reassociation", "ue": c.ue, "from": c.src_enb,
                   "to": c.dst_enb, "payload_bytes": 0, "sigma_before": c.sigma_before,
                   "sigma_after": c.sigma_after}


def spatial_sigma(scenario: Scenario, hosts: Mapping[str, str], provision: Mapping[str, float],
                  slot: int, association: Mapping[str, str] | None = None,
                  gcs_ids=None) -> float:
    """Spread of the drainage ratio across GCSs at one slot."""
    demand = demand_vector(scenario, hosts, slot, association)
    ids = scenario.gcs_ids if gcs_ids is None else sorted(gcs_ids)
    return population_std([compute_edr(demand[g], provision[g]) for g in ids])


def participants(demand: Mapping[str, float], provision: Mapping[str, float]) -> list[str]:
    """GCSs whose ratio is defined: powered, or unpowered with nothing to power."""
    return sorted(g for g in demand if provision.get(g, 0.0) > 0 or demand[g] == 0)


def _ratios(demand, provision, ids):
    return {g: (0.0 if demand[g] == 0 else demand[g] / provision[g]) for g in ids}


def _sigma(demand, provision, ids):
    return population_std([0.0 if demand[g] == 0 else demand[g] / provision[g] for g in ids])


def _argmax_eta(eta):
    return min(eta, key=lambda g: (-eta[g], g))


def _delay_ok(scenario, graph, serving_enb, gcs_id):
    return e2e_delay(graph, serving_enb, gcs_id, scenario.wireless_ms) <= scenario.delay_threshold_ms


def seb_migrate(state: SlotState, provision: Mapping[str, float], scenario: Scenario,
                graph: CoreGraph) -> MigrationPlan:
    """Greedy live migration out of the most drained GCS.

    Each step takes the single move from the highest-ratio GCS that lowers the spread
    most, subject to free capacity and the UE's delay threshold. Equal gains prefer the
    smaller payload, then the most recently placed Avatar, then the lower Avatar id.
    When no single move helps, the step may instead exchange an Avatar of that GCS with
    one hosted elsewhere (capacity-neutral, both delays checked), which gets past full
    cloudlets and past pairs whose single moves both overshoot. If the most drained GCS
    is stuck, the next one down is tried. The search stops when nothing lowers the
    spread by more than ``STRICT_DECREASE``.
    """
    hosts = dict(state.hosts)
    demand = demand_vector(scenario, hosts, state.slot, state.association or None)
    ids = participants(demand, provision)
    start = current = _sigma(demand, provision, ids) if ids else 0.0
    if len(ids) < 2:
        return MigrationPlan(state.slot, (), start, start)
    free = {g: scenario.gcs[g].cloudlet_capacity for g in ids}
    for a, g in hosts.items():
        if g in free:
            free[g] -= 1
    placed = dict(state.placed_at)
    movable = set(state.movable_avatars())
    moves = []
    for step in range(100 * (len(hosts) + 1) * len(ids)):
        eta = _ratios(demand, provision, ids)
        taken = False
        for src in sorted(ids, key=lambda g: (-eta[g], g)):
            best = _best_move(state, provision, scenario, graph, hosts, demand, ids, src,
                              movable, free, placed)
            if best is not None and best[0] < current - STRICT_DECREASE:
                s, payload, _, aid, dst = best
                units = scenario.avatars[aid].demand_units
                demand[src] -= units
                demand[dst] += units
                hosts[aid] = dst
                free[src] += 1
                free[dst] -= 1
                placed[aid] = state.slot
                moves.append(Move(aid, src, dst, payload, current, s, step))
                current, taken = s, True
                break
            swap = _best_swap(state, provision, scenario, graph, hosts, demand, ids, src,
                              movable)
            if swap is not None and swap[0] < current - STRICT_DECREASE:
                s, _, a, b, pa, pb = swap
                dst = hosts[b]
                ua, ub = scenario.avatars[a].demand_units, scenario.avatars[b].demand_units
                demand[src] += ub - ua
                demand[dst] += ua - ub
                hosts[a], hosts[b] = dst, src
                placed[a] = placed[b] = state.slot
                moves.append(Move(a, src, dst, pa, current, s, step))
                moves.append(Move(b, dst, src, pb, current, s, step))
                current, taken = s, True
                break
        if not taken:
            break
    return MigrationPlan(state.slot, tuple(moves), start, current)


def _best_move(state, provision, scenario, graph, hosts, demand, ids, src, movable, free,
               placed):
    """Best single move off ``src``, as ``(sigma, payload, -placed_at, avatar, dst)``."""
    best = None
    for aid in sorted(a for a in movable if hosts[a] == src):
        avatar = scenario.avatars[aid]
        units = avatar.demand_units
        serving = state.serving(scenario, aid)
        for dst in ids:
            if dst == src or free[dst] <= 0 or provision[dst] <= 0:
                continue
            if not _delay_ok(scenario, graph, serving, dst):
                continue
            demand[src] -= units
            demand[dst] += units
            s = _sigma(demand, provision, ids)
            demand[src] += units
            demand[dst] -= units
            payload = migration_payload(avatar, dst, state.replica_gcs.get(aid, ()))
            cand = (s, payload, -placed.get(aid, -1), aid, dst)
            if best is None or s < best[0] - STRICT_DECREASE or (
                    abs(s - best[0]) <= STRICT_DECREASE and cand[1:] < best[1:]):
                best = cand
    return best


def _best_swap(state, provision, scenario, graph, hosts, demand, ids, src, movable):
    """Best exchange of an Avatar on ``src`` with one elsewhere, as ``(sigma, payload, a, b, pa, pb)``."""
    best = None
    for a in sorted(x for x in movable if hosts[x] == src):
        ua = scenario.avatars[a].demand_units
        serving_a = state.serving(scenario, a)
        for b in sorted(x for x in movable if hosts[x] != src and hosts[x] in ids):
            dst = hosts[b]
            ub = scenario.avatars[b].demand_units
            if ua == ub or provision[dst] <= 0:
                continue
            if not (_delay_ok(scenario, graph, serving_a, dst)
                    and _delay_ok(scenario, graph, state.serving(scenario, b), src)):
                continue
            demand[src] += ub - ua
            demand[dst] += ua - ub
            s = _sigma(demand, provision, ids)
            demand[src] -= ub - ua
            demand[dst] -= ua - ub
            pa = migration_payload(scenario.avatars[a], dst, state.replica_gcs.get(a, ()))
            pb = migration_payload(scenario.avatars[b], src, state.replica_gcs.get(b, ()))
            cand = (s, pa + pb, a, b, pa, pb)
            if best is None or s < best[0] - STRICT_DECREASE or (
                    abs(s - best[0]) <= STRICT_DECREASE and cand[1:4] < best[1:4]):
                best = cand
    return best


def seb_pilot_shift(state: SlotState, provision: Mapping[str, float], scenario: Scenario,
                    graph: CoreGraph | None = None) -> ReassociationPlan:
    """Greedy UE re-association from the most drained GCS's eNBs to less drained ones.

    Pilot power is modelled as coverage feasibility: a UE may be claimed by any eNB in its
    candidate set for the slot. With a graph, a change must also keep the UE's Avatar
    within the delay threshold.
    """
    slot = state.slot
    assoc = {u.id: state.serving(scenario, u.id) for u in scenario.ue_list}
    demand = demand_vector(scenario, state.hosts, slot, assoc)
    ids = participants(demand, provision)
    start = current = _sigma(demand, provision, ids) if ids else 0.0
    if len(ids) < 2:
        return ReassociationPlan(slot, (), start, start)
    enb_gcs = scenario.enb_gcs
    changes = []
    for _ in range(100 * (len(assoc) + 1) * len(ids)):
        eta = _ratios(demand, provision, ids)
        src = _argmax_eta(eta)
        best = None
        for ue in scenario.ue_list:
            if enb_gcs[assoc[ue.id]] != src:
                continue
            traffic = ue.traffic_units[slot]
            if traffic == 0:
                continue
            for enb in sorted(ue.candidate_enbs[slot]):
                dst = enb_gcs[enb]
                if dst == src or dst not in eta or provision[dst] <= 0 or not eta[dst] < eta[src]:
                    continue
                if graph is not None and ue.id in state.hosts and not _delay_ok(
                        scenario, graph, enb, state.hosts[ue.id]):
                    continue
                d_src = scenario.gcs[src].enb_traffic_coeff * traffic
                d_dst = scenario.gcs[dst].enb_traffic_coeff * traffic
                demand[src] -= d_src
                demand[dst] += d_dst
                s = _sigma(demand, provision, ids)
                demand[src] += d_src
                demand[dst] -= d_dst
                cand = (s, ue.id, enb)
                if best is None or s < best[0] - STRICT_DECREASE or (
                        abs(s - best[0]) <= STRICT_DECREASE and cand[1:] < best[1:]):
                    best = cand
        if best is None or not best[0] < current - STRICT_DECREASE:
            break
        s, ue_id, enb = best
        ue = scenario.ues[ue_id]
        traffic = ue.traffic_units[slot]
        old = assoc[ue_id]
        demand[src] -= scenario.gcs[src].enb_traffic_coeff * traffic
        demand[enb_gcs[enb]] += scenario.gcs[enb_gcs[enb]].enb_traffic_coeff * traffic
        assoc[ue_id] = enb
        changes.append(Change(ue_id, old, enb, current, s))
        current = s
    return ReassociationPlan(slot, tuple(changes), start, current)


class OracleAssignment(NamedTuple):
    hosts: dict
    sigma: float
    evaluated: int


def seb_oracle(state: SlotState, provision: Mapping[str, float], scenario: Scenario,
               graph: CoreGraph) -> OracleAssignment:
    """Exhaustive minimum-spread Avatar assignment for small instances.

    Staying put is always allowed; moving needs a powered destination within the delay
    threshold; every cloudlet's capacity holds. Ties go to the lexicographically
    smallest assignment vector (GCS ids in Avatar id order).
    """
    movable = state.movable_avatars()
    hosts = dict(state.hosts)
    demand0 = demand_vector(scenario, hosts, state.slot, state.association or None)
    ids = participants(demand0, provision)
    options = []
    for aid in movable:
        serving = state.serving(scenario, aid)
        here = hosts[aid]
        opts = sorted({here} | {g for g in ids if provision[g] > 0
                                and _delay_ok(scenario, graph, serving, g)})
        options.append(opts)
    total = 1
    for o in options:
        total *= len(o)
    if total > ORACLE_MAX_ASSIGNMENTS:
        raise TooLarge(f"{total} assignments exceed {ORACLE_MAX_ASSIGNMENTS}")
    fixed = {a: g for a, g in hosts.items() if a not in set(movable)}
    base_load = {g: 0 for g in scenario.gcs}
    for g in fixed.values():
        base_load[g] += 1
    best = None
    count = 0
    for combo in itertools.product(*options):
        load = dict(base_load)
        for g in combo:
            load[g] += 1
        if any(load[g] > scenario.gcs[g].cloudlet_capacity for g in combo):
            continue
        count += 1
        trial = dict(fixed)
        trial.update(zip(movable, combo))
        demand = demand_vector(scenario, trial, state.slot, state.association or None)
        if any(provision.get(g, 0.0) <= 0 and demand[g] > 0 for g in ids):
            continue
        s = _sigma(demand, provision, ids)
        if best is None or s < best[0] - STRICT_DECREASE or (
                abs(s - best[0]) <= STRICT_DECREASE and combo < best[1]):
            best = (s, combo, trial)
    if best is None:
        s = _sigma(demand0, provision, ids)
        return OracleAssignment(hosts, s, count)
    return OracleAssignment(best[2], best[0], count)
