"""Cloudlet network file system: liveness, replica placement, sync traffic and recovery."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .errors import UnknownDataNode
from .network import FlowRecord, gcs_route

SYNC = "A2A-sync"


class DataNodeId(NamedTuple):
    gcs: str
    index: int

    def __str__(self):
        return f"{self.gcs}/dn{self.index}"


@dataclass
class DataNodeState:
    gcs: str
    last_heartbeat: float = 0.0
    alive: bool = True
    stale: bool = False

    @property
    def status(self) -> str:
        return "Alive" if self.alive else "Dead"


@dataclass
class Placement:
    primary: DataNodeId
    replicas: frozenset = frozenset()
    available: bool = True
    lost: bool = False


class VisitHistogram:
    """Cumulative count of slots each UE spent under an eNB of each GCS."""

    def __init__(self):
        self.counts: dict[str, Counter] = defaultdict(Counter)

    def visit(self, ue_id: str, gcs_id: str, n: int = 1) -> None:
        if n < 0:
            raise ValueError("visit counts only grow")
        self.counts[ue_id][gcs_id] += n

    def of(self, ue_id: str) -> dict[str, int]:
        return dict(self.counts.get(ue_id, {}))


def place_replicas(histogram: Mapping[str, int], k: int, primary: DataNodeId,
                   live: Iterable[DataNodeId], existing: Iterable[DataNodeId] = ()):
    """Choose replica DataNodes for one Avatar; returns ``(replicas, degraded)``.

    First replica: another DataNode in the primary's cloudlet (cheap to sync). The rest:
    one DataNode in each of the most-visited other cloudlets (cheap to migrate to),
    ties to the lower GCS id. If the local copy is impossible the next visited cloudlet
    takes its place. Surviving ``existing`` replicas are kept and only topped up.
    ``degraded`` means no local replica or fewer than ``k``.
    """
    if k < 1:
        raise ValueError("replication factor must be >= 1")
    live = sorted(set(live) - {primary})
    chosen = [r for r in sorted(set(existing)) if r in live]
    used = set(chosen)
    used_gcs = {r.gcs for r in chosen}

    def rank(gcs):
        return (-histogram.get(gcs, 0), gcs)

    prefs = []
    if primary.gcs not in used_gcs:
        local = [dn for dn in live if dn.gcs == primary.gcs]
        if local:
            prefs.append(local[0])
    remote_gcs = sorted({dn.gcs for dn in live} - used_gcs - {primary.gcs}, key=rank)
    for g in remote_gcs:
        prefs.append(min(dn for dn in live if dn.gcs == g))
    # last resort so that k copies exist whenever enough DataNodes are alive
    prefs.extend(sorted(live, key=lambda dn: (rank(dn.gcs), dn.index)))
    for dn in prefs:
        if len(chosen) >= k:
            break
        if dn not in used:
            chosen.append(dn)
            used.add(dn)
    replicas = frozenset(chosen)
    degraded = len(replicas) < k or not any(r.gcs == primary.gcs for r in replicas)
    return replicas, degraded


def migration_payload(avatar, dest_gcs: str, replica_gcs: Iterable[str] = ()) -> int:
    """CPU state plus memory; the virtual disk too unless a replica already lives there."""
    payload = avatar.cpu_state_bytes + avatar.memory_bytes
    if dest_gcs not in set(replica_gcs):
        payload += avatar.disk_bytes
    return payload


def sync_tick(avatar_id: str, dirty_bytes: float, placement: Placement, graph,
              slot: int = 0) -> list[FlowRecord]:
    """One synchronisation round: a flow per replica, core bytes only for remote ones."""
    if not placement.available:
        return []
    flows = []
    src = placement.primary
    for rep in sorted(placement.replicas):
        if rep.gcs == src.gcs:
            flows.append(FlowRecord(SYNC, str(src), str(rep), 0.0, (), slot))
        else:
            r = gcs_route(graph, src.gcs, rep.gcs)
            flows.append(FlowRecord(SYNC, str(src), str(rep), float(dirty_bytes), r.path, slot))
    return flows


def sync_boundaries(prev_s: float, now_s: float, period_s: float) -> int:
    """Number of sync instants k * period in (prev_s, now_s]."""
    return int(math.floor(now_s / period_s + 1e-9)) - int(math.floor(prev_s / period_s + 1e-9))


@dataclass
class RecoveryPlan:
    promotions: list = field(default_factory=list)  # (avatar, old primary, new primary)
    copies: list = field(default_factory=list)  # (avatar, src, dst, bytes)
    data_loss: list = field(default_factory=list)
    flows: list = field(default_factory=list)


class NameNode:
    """Single, never-failing tracker of DataNode liveness and Avatar disk locations."""

    def __init__(self, datanodes: Iterable[DataNodeId], heartbeat_s: float = 3.0,
                 timeout_s: float = 300.0, replication_factor: int = 1):
        self.datanodes = {DataNodeId(*dn): DataNodeState(dn[0]) for dn in sorted(datanodes)}
        self.heartbeat_s = heartbeat_s
        self.timeout_s = timeout_s
        self.k = replication_factor
        self.placements: dict[str, Placement] = {}
        self.events: list[dict] = []
        self.log_heartbeats = False

    @classmethod
    def from_scenario(cls, scenario) -> "NameNode":
        dns = [DataNodeId(g.id, i) for g in scenario.gcs_list for i in range(1, g.datanode_count + 1)]
        nn = cls(dns, scenario.cnfs.heartbeat_s, scenario.cnfs.timeout_s,
                 scenario.cnfs.replication_factor)
        nn.log_heartbeats = scenario.cnfs.log_heartbeats
        return nn

    def _log(self, t_s, event, **ids):
        self.events.append({"t_s": t_s, "event": event, **ids})

    def is_alive(self, dn) -> bool:
        return self.datanodes[dn].alive

    def live(self, eligible: bool = True) -> list[DataNodeId]:
        return [dn for dn, st in self.datanodes.items()
                if st.alive and not (eligible and st.stale)]

    def register(self, avatar_id: str, primary, replicas=()) -> Placement:
        primary = DataNodeId(*primary)
        if primary not in self.datanodes:
            raise UnknownDataNode(str(primary))
        reps = frozenset(DataNodeId(*r) for r in replicas)
        for r in reps:
            if r not in self.datanodes:
                raise UnknownDataNode(str(r))
        if primary in reps:
            raise ValueError("replica on the primary DataNode")
        p = Placement(primary, reps)
        self.placements[avatar_id] = p
        return p

    def replica_gcs(self, avatar_id: str) -> set[str]:
        return {r.gcs for r in self.placements[avatar_id].replicas}

    def process_heartbeat(self, dn, now_s: float) -> None:
        dn = DataNodeId(*dn)
        st = self.datanodes.get(dn)
        if st is None:
            raise UnknownDataNode(str(dn))
        st.last_heartbeat = max(st.last_heartbeat, now_s)
        if not st.alive:
            st.alive = True
            st.stale = True
            self._log(now_s, "heartbeat", datanode=str(dn), rejoin=True)
        elif self.log_heartbeats:
            self._log(now_s, "heartbeat", datanode=str(dn), rejoin=False)

    def detect_failures(self, now_s: float, timeout_s: float | None = None) -> list[DataNodeId]:
        timeout = self.timeout_s if timeout_s is None else timeout_s
        dead = []
        for dn, st in self.datanodes.items():
            if st.alive and now_s - st.last_heartbeat > timeout:
                st.alive = False
                st.stale = False
                dead.append(dn)
                self._log(now_s, "death", datanode=str(dn), last_heartbeat=st.last_heartbeat)
        if dead:
            gone = set(dead)
            for aid in sorted(self.placements):
                p = self.placements[aid]
                if p.primary in gone:
                    p.available = False
        return dead

    def clear_stale(self) -> None:
        for st in self.datanodes.values():
            st.stale = False

    def relocate(self, avatar_id: str, dest_gcs: str) -> None:
        """Move the primary disk with a migrating Avatar.

        A replica already in the destination becomes the primary and the old primary
        takes its place as a replica; otherwise the disk lands on the destination's
        lowest live DataNode and the old copy is released.
        """
        p = self.placements[avatar_id]
        if p.primary.gcs == dest_gcs:
            return
        local = sorted(r for r in p.replicas if r.gcs == dest_gcs and self.is_alive(r))
        if local:
            new = local[0]
            p.replicas = (p.replicas - {new}) | {p.primary}
            p.primary = new
            return
        targets = [dn for dn in self.live() if dn.gcs == dest_gcs and dn not in p.replicas]
        if not targets:
            targets = [dn for dn in self.datanodes if dn.gcs == dest_gcs and dn not in p.replicas]
        if not targets:
            raise UnknownDataNode(f"no DataNode in {dest_gcs!r}")
        p.primary = targets[0]

    def recover(self, now_s: float, histograms: Mapping[str, Mapping[str, int]],
                disk_bytes: Mapping[str, float], graph=None, slot: int = 0,
                free_capacity: dict[str, int] | None = None,
                active: Iterable[str] = ()) -> RecoveryPlan:
        """Resume Avatars from surviving replicas and restore the replication factor.

        The replica in the most-visited cloudlet wins (ties to the lower GCS id); active
        Avatars need a free slot there (``free_capacity`` is decremented), otherwise the
        next site is tried. No surviving copy at all is a data loss.
        """
        plan = RecoveryPlan()
        active = set(active)
        eligible = self.live(eligible=True)
        for aid in sorted(self.placements):
            p = self.placements[aid]
            if p.lost:
                continue
            hist = histograms.get(aid, {})
            if not self.is_alive(p.primary):
                cands = sorted((r for r in p.replicas if self.is_alive(r)),
                               key=lambda r: (-hist.get(r.gcs, 0), r.gcs, r.index))
                if not cands:
                    p.lost = True
                    p.available = False
                    plan.data_loss.append(aid)
                    self._log(now_s, "data_loss", avatar=aid, primary=str(p.primary))
                    continue
                chosen = None
                for r in cands:
                    if free_capacity is None or aid not in active or free_capacity.get(r.gcs, 0) > 0:
                        chosen = r
                        break
                if chosen is None:
                    continue
                if free_capacity is not None and aid in active:
                    free_capacity[chosen.gcs] -= 1
                old = p.primary
                p.primary = chosen
                p.replicas = p.replicas - {chosen}
                p.available = True
                plan.promotions.append((aid, old, chosen))
                self._log(now_s, "promotion", avatar=aid, old_primary=str(old),
                          new_primary=str(chosen))
            survivors = frozenset(r for r in p.replicas if self.is_alive(r))
            if len(survivors) < self.k or survivors != p.replicas:
                new, _ = place_replicas(hist, self.k, p.primary, eligible, existing=survivors)
                for dst in sorted(new - survivors):
                    size = float(disk_bytes.get(aid, 0))
                    plan.copies.append((aid, p.primary, dst, size))
                    self._log(now_s, "rereplication", avatar=aid, src=str(p.primary),
                              dst=str(dst), bytes=size)
                    if graph is not None:
                        path = () if dst.gcs == p.primary.gcs else gcs_route(
                            graph, p.primary.gcs, dst.gcs).path
                        plan.flows.append(FlowRecord(SYNC, str(p.primary), str(dst),
                                                     size if path else 0.0, path, slot))
                p.replicas = new
        return plan

    def snapshot(self) -> dict:
        return {
            "datanodes": {str(dn): (st.last_heartbeat, st.alive, st.stale)
                          for dn, st in self.datanodes.items()},
            "placements": {aid: (str(p.primary), sorted(map(str, p.replicas)), p.available, p.lost)
                           for aid, p in sorted(self.placements.items())},
        }


class HeartbeatSchedule:
    """Heartbeat instants of every DataNode: multiples of the interval outside silences."""

    def __init__(self, heartbeat_s: float, silences: Mapping | None = None):
        self.heartbeat_s = heartbeat_s
        self.silences = {DataNodeId(*dn): sorted(iv) for dn, iv in (silences or {}).items()}

    @classmethod
    def from_scenario(cls, scenario) -> "HeartbeatSchedule":
        silences = defaultdict(list)
        for f in scenario.cnfs.failures:
            silences[f.datanode].append((f.fail_s, math.inf if f.rejoin_s is None else f.rejoin_s))
        return cls(scenario.cnfs.heartbeat_s, silences)

    def last_beat(self, dn, now_s: float) -> float | None:
        hb = self.heartbeat_s
        k = math.floor(now_s / hb + 1e-9)
        intervals = self.silences.get(DataNodeId(*dn), [])
        while k >= 0:
            t = k * hb
            hit = next((iv for iv in intervals if iv[0] <= t < iv[1]), None)
            if hit is None:
                return t
            k = math.ceil(hit[0] / hb - 1e-9) - 1
        return None


def protocol_tick(namenode: NameNode, schedule: HeartbeatSchedule, now_s: float) -> list[DataNodeId]:
    """Deliver every heartbeat up to ``now_s`` (time order, then DataNode id) and detect deaths."""
    beats = []
    for dn in namenode.datanodes:
        t = schedule.last_beat(dn, now_s)
        if t is not None and t > namenode.datanodes[dn].last_heartbeat:
            beats.append((t, dn))
    for t, dn in sorted(beats):
        namenode.process_heartbeat(dn, t)
    return namenode.detect_failures(now_s)
