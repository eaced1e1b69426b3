"""Seeded random scenario documents, for property tests and sweeps."""
from __future__ import annotations

import numpy as np

from .model import Scenario, validate_scenario


def random_core(rng: np.random.Generator, gcs_ids, n_switch: int = 2, n_gateway: int = 1,
                extra_links: int = 2):
    """Connected core: one eNB per GCS, a random spanning tree plus a few chords."""
    nodes = [{"id": f"enb_{g}", "kind": "enb", "gcs": g} for g in gcs_ids]
    nodes += [{"id": f"sw{i}", "kind": "switch"} for i in range(n_switch)]
    nodes += [{"id": f"gw{i}", "kind": "gateway"} for i in range(n_gateway)]
    ids = [n["id"] for n in nodes]
    order = list(rng.permutation(len(ids)))
    links, seen = [], set()

    def add(a, b):
        key = tuple(sorted((a, b)))
        if a != b and key not in seen:
            seen.add(key)
            links.append({"a": a, "b": b, "latency_ms": float(rng.integers(1, 9))})

    for i in range(1, len(order)):
        add(ids[order[i]], ids[order[int(rng.integers(0, i))]])
    for _ in range(extra_links):
        a, b = rng.choice(len(ids), size=2, replace=False)
        add(ids[a], ids[b])
    return nodes, links


def random_document(seed: int, n_gcs: int = 3, n_ues: int = 5, T: int = 4, *,
                    integer: bool = True, capacity: int | None = None,
                    threshold_ms: float = 1e6, failures: int = 0, replication: int = 1,
                    datanodes: int = 2, static_power: bool = False,
                    slot_seconds: float = 60.0, ticks_per_slot: int = 4) -> dict:
    rng = np.random.default_rng(seed)
    gcs_ids = [f"g{i}" for i in range(n_gcs)]

    def amount(lo, hi):
        if integer:
            return float(rng.integers(lo, hi + 1))
        return float(np.round(rng.uniform(lo, hi) * 4) / 4)

    gcs = []
    for g in gcs_ids:
        gcs.append({
            "id": g,
            "enb_static_power": amount(0, 1) if static_power else 0.0,
            "enb_traffic_coeff": 0.25 if static_power else 0.0,
            "cloudlet_capacity": n_ues if capacity is None else capacity,
            "datanode_count": datanodes,
            "battery_capacity": None,
            "battery_init": amount(0, 2),
            "generation": [amount(0, 4) for _ in range(T)],
        })
    nodes, links = random_core(rng, gcs_ids)
    enbs = [f"enb_{g}" for g in gcs_ids]
    ues = []
    load = {g: 0 for g in gcs_ids}
    for i in range(n_ues):
        cap = n_ues if capacity is None else capacity
        hosts = [g for g in gcs_ids if load[g] < cap]
        host = hosts[int(rng.integers(0, len(hosts)))]
        load[host] += 1
        assoc = [enbs[int(rng.integers(0, n_gcs))] for _ in range(T)]
        cands = []
        for e in assoc:
            extra = [x for x in enbs if x != e and rng.random() < 0.5]
            cands.append(sorted({e, *extra}))
        ues.append({
            "id": f"ue{i}",
            "association": assoc,
            "traffic_units": [amount(0, 2) for _ in range(T)],
            "app_active": [True] + [bool(rng.random() < 0.8) for _ in range(T - 1)],
            "candidate_enbs": cands,
            "avatar": {
                "host": host,
                "memory_bytes": int(rng.integers(1, 5)) * 1_000_000,
                "cpu_state_bytes": int(rng.integers(1, 10)) * 1_000,
                "disk_bytes": int(rng.integers(1, 9)) * 1_000_000,
                "demand_units": amount(1, 2),
            },
        })
    fails = []
    for _ in range(failures):
        g = gcs_ids[int(rng.integers(0, n_gcs))]
        dn = int(rng.integers(1, datanodes + 1))
        start = float(rng.integers(0, int(T * slot_seconds / 3))) * 3
        rejoin = None if rng.random() < 0.5 else start + float(rng.integers(200, 600))
        fails.append({"datanode": f"{g}/dn{dn}", "fail_s": start, "rejoin_s": rejoin})
    return {
        "time": {"T": T, "slot_seconds": slot_seconds, "ticks_per_slot": ticks_per_slot},
        "gcs": gcs,
        "core": {"nodes": nodes, "links": links},
        "ues": ues,
        "cnfs": {"replication_factor": replication, "failures": fails},
        "delay": {"wireless_ms": 2.0, "delay_threshold_ms": threshold_ms},
        "seed": seed,
    }


def random_scenario(seed: int, **kw) -> Scenario:
    return validate_scenario(random_document(seed, **kw))
