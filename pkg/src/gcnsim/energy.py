"""Energy drainage ratio, per-slot settlement and temporal green-energy allocation."""
from __future__ import annotations

import csv
import math
import statistics
import warnings
from dataclasses import dataclass
from fractions import Fraction
from itertools import accumulate
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import EmptyVector, TooLarge, UnpoweredDemand

EPSILON = 1e-9
ORACLE_MAX_POINTS = 10**7
LEDGER_COLUMNS = ("gcs_id", "slot", "D", "G", "E", "residual_before", "residual_after",
                  "on_grid", "eta")


def compute_edr(demand: float, provisioned: float) -> float:
    if demand < 0 or provisioned < 0:
        raise ValueError("energies must be non-negative")
    if demand == 0:
        return 0.0
    if provisioned == 0:
        raise UnpoweredDemand(f"demand {demand} with no provisioned green energy")
    return demand / provisioned


def population_std(values: Sequence[float]) -> float:
    """Standard deviation with the population (divide by N) convention."""
    values = list(values)
    if not values:
        raise EmptyVector("standard deviation of an empty vector")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite ratio in vector")
    return statistics.pstdev(values)


def settle_slot(residual_before: float, demand: float, provisioned: float,
                cap: float = math.inf) -> tuple[float, float]:
    """Return ``(on_grid, residual_after)`` for one GCS and one slot.

    Unused provisioning carries over as residual (capped at ``cap``; any overflow is
    wasted). Shortfall beyond provisioning plus residual is drawn from the grid.
    """
    on_grid = max(0.0, demand - provisioned - residual_before)
    residual_after = min(cap, max(0.0, residual_before + provisioned - demand))
    return on_grid, residual_after


@dataclass(frozen=True)
class LedgerCell:
    gcs_id: str
    slot: int
    demand: float
    generation: float
    provisioned: float
    residual_before: float
    residual_after: float
    on_grid: float
    eta: float  # math.inf when demand is unpowered
    wasted: float = 0.0

    def row(self):
        return (self.gcs_id, self.slot, self.demand, self.generation, self.provisioned,
                self.residual_before, self.residual_after, self.on_grid, self.eta)


class EnergyLedger:
    """Per (GCS, slot) energy accounts written by one simulation run."""

    def __init__(self, cap: dict[str, float] | None = None):
        self.cap = dict(cap or {})
        self.cells: dict[tuple[str, int], LedgerCell] = {}
        self._residual: dict[str, float] = {}

    def residual(self, gcs_id: str) -> float:
        return self._residual.get(gcs_id, 0.0)

    def settle(self, gcs_id: str, slot: int, demand: float, generation: float,
               provisioned: float) -> LedgerCell:
        before = self.residual(gcs_id)
        cap = self.cap.get(gcs_id, math.inf)
        on_grid, after = settle_slot(before, demand, provisioned, cap)
        wasted = max(0.0, before + provisioned - demand - cap)
        try:
            eta = compute_edr(demand, provisioned)
        except UnpoweredDemand:
            eta = math.inf
        cell = LedgerCell(gcs_id, slot, demand, generation, provisioned, before, after,
                          on_grid, eta, wasted)
        self.cells[(gcs_id, slot)] = cell
        self._residual[gcs_id] = after
        return cell

    def temporal(self, gcs_id: str) -> list[float]:
        return [c.eta for (g, _), c in sorted(self.cells.items()) if g == gcs_id]

    def spatial(self, slot: int) -> list[float]:
        return [c.eta for (_, s), c in sorted(self.cells.items()) if s == slot]

    def rows(self):
        return [c.row() for _, c in sorted(self.cells.items(), key=lambda kv: (kv[0][0], kv[0][1]))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_COLUMNS)
            for row in self.rows():
                w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# temporal allocation


@dataclass(frozen=True)
class TeaResult:
    allocation: tuple[float, ...]
    exact: tuple[Fraction, ...]
    status: str = "ok"  # ok | no_demand | no_energy
    starved: tuple[int, ...] = ()
    polished: bool = False

    def ratios(self, demand: Sequence[float]) -> list[float]:
        return [0.0 if d == 0 else d / e for d, e in zip(demand, self.allocation)]

    def sigma(self, demand: Sequence[float]) -> float | None:
        if self.status != "ok":
            return None
        return population_std(self.ratios(demand))


def _fractions(values):
    out = []
    for v in values:
        if v < 0 or not math.isfinite(v):
            raise ValueError(f"expected a finite non-negative value, got {v!r}")
        out.append(Fraction(v))
    return out


def equal_ratio_allocation(generation, demand, b0=0.0):
    """Equal drainage ratio per segment, splitting at the most binding causal prefix.

    Works in exact rationals. Returns ``(allocation, starved_slots)``. A segment whose
    cumulative availability is zero while it carries demand is starved: its demand slots
    get the ``EPSILON`` floor, paid back from the next segment.
    """
    G, D = _fractions(generation), _fractions(demand)
    T = len(D)
    upper = list(accumulate(G, initial=Fraction(b0)))[1:]
    eps = Fraction(EPSILON)
    E = [Fraction(0)] * T
    starved: list[int] = []
    start, used = 0, Fraction(0)
    while start < T:
        best_t, best_key = None, None
        cum_d = Fraction(0)
        for t in range(start, T):
            cum_d += D[t]
            if cum_d == 0:
                continue
            avail = upper[t] - used
            key = (1, 0) if avail <= 0 else (0, cum_d / avail)
            if best_key is None or key >= best_key:
                best_t, best_key = t, key
        if best_t is None:
            leftover = upper[T - 1] - used
            if leftover > 0:
                E[T - 1] += leftover
            break
        seg = range(start, best_t + 1)
        if best_key[0] == 1:
            for j in seg:
                if D[j] > 0:
                    E[j] = eps
                    starved.append(j)
                    used += eps
        else:
            ratio = best_key[1]
            for j in seg:
                E[j] = D[j] / ratio
            used = upper[best_t]
        start = best_t + 1
    return E, starved


def _variance_and_grad(E, d, mask):
    eta = np.where(mask, d / np.where(mask, E, 1.0), 0.0)
    n = len(E)
    mu = eta.mean()
    dev = eta - mu
    var = float(dev @ dev) / n
    grad = np.where(mask, (2.0 / n) * dev * (-eta / np.where(mask, E, 1.0)), 0.0)
    return var, grad


def _polish(demand, starts, lower, upper, total):
    """Local constrained descent on the ratio variance from several feasible starts."""
    d = np.asarray([float(x) for x in demand])
    mask = d > 0
    T = len(d)
    lo = np.array([float(x) for x in lower])
    up = np.array([float(x) for x in upper])
    tot = float(total)
    tri = np.tril(np.ones((T, T)))
    cons = [
        {"type": "eq", "fun": lambda x: np.array([x.sum() - tot]),
         "jac": lambda x: np.ones((1, T))},
    ]
    if T > 1:
        cons.append({"type": "ineq", "fun": lambda x: up[:-1] - tri[:-1] @ x,
                     "jac": lambda x: -tri[:-1]})
        if np.any(lo[:-1] > 0):
            cons.append({"type": "ineq", "fun": lambda x: tri[:-1] @ x - lo[:-1],
                         "jac": lambda x: tri[:-1]})
    bounds = [(EPSILON if m else 0.0, tot) for m in mask]
    best = None
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, float), [b[0] for b in bounds], tot)
        with warnings.catch_warnings():
            # SLSQP clips trial steps to the bounds and says so
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(lambda x: _variance_and_grad(x, d, mask), x0, jac=True,
                           method="SLSQP", bounds=bounds, constraints=cons,
                           options={"ftol": 1e-16, "maxiter": 1000})
        x = np.clip(res.x, [b[0] for b in bounds], tot)
        var = _variance_and_grad(x, d, mask)[0]
        if best is None or var < best[0]:
            best = (var, x)
    return best[1]


def _dp_starts(demand, lower, upper, total, c_max, grid=100, n_c=30, keep=3):
    """Global candidates for the non-convex spread objective.

    Uses var(eta) = min_c mean((eta - c)^2): for a fixed c the cost separates per slot,
    so a DP over a grid of cumulative provisioning finds its global optimum. The best
    few c values yield starting points for the local descent.
    """
    d = np.asarray([float(x) for x in demand])
    T = len(d)
    tot = float(total)
    if tot <= 0 or c_max <= 0:
        return []
    h = tot / grid
    levels = np.arange(grid + 1) * h
    lo = np.array([float(x) for x in lower])
    up = np.array([float(x) for x in upper])
    cs = np.linspace(0.0, c_max, n_c)
    step = levels[None, :] - levels[:, None]  # [from, to]
    valid_step = step >= -1e-12
    step = np.where(valid_step, np.maximum(step, 0.0), 0.0)
    inf = np.inf
    value = np.full((n_c, grid + 1), inf)
    value[:, 0] = 0.0
    choice = []
    for t in range(T):
        if d[t] > 0:
            eta = d[t] / np.maximum(step, EPSILON)
            cost = (eta[None, :, :] - cs[:, None, None]) ** 2
        else:
            cost = np.broadcast_to((cs ** 2)[:, None, None], (n_c, grid + 1, grid + 1))
        total_cost = np.where(valid_step[None], value[:, :, None] + cost, inf)
        arg = total_cost.argmin(axis=1)
        value = np.take_along_axis(total_cost, arg[:, None, :], axis=1)[:, 0, :]
        feasible = (levels <= up[t] + 1e-9) & (levels >= lo[t] - 1e-9)
        if t == T - 1:
            feasible = np.zeros(grid + 1, bool)
            feasible[grid] = True
        value[:, ~feasible] = inf
        choice.append(arg)
    finals = value[:, grid]
    order = np.argsort(finals, kind="stable")
    starts = []
    for ci in order[:keep]:
        if not np.isfinite(finals[ci]):
            break
        k = grid
        cum = [0.0] * T
        for t in range(T - 1, -1, -1):
            cum[t] = levels[k]
            k = choice[t][ci, k]
        alloc = np.diff(np.concatenate([[0.0], cum]))
        alloc[-1] = tot - alloc[:-1].sum()
        starts.append(list(np.maximum(alloc, 0.0)))
    return starts


def _exact_from_float(x, demand, lower, upper, total):
    """Snap a float allocation onto exact dyadic cumulative sums that satisfy every bound."""
    scale = 2**40
    T = len(x)
    cum = np.cumsum(x)
    eps = Fraction(EPSILON)
    C, prev = [], Fraction(0)
    for t in range(T - 1):
        c = Fraction(math.floor(cum[t] * scale), scale)
        c = min(max(c, prev, lower[t]), upper[t])
        C.append(c)
        prev = c
    C.append(Fraction(total))
    E = [C[0]] + [C[t] - C[t - 1] for t in range(1, T)]
    for e, d in zip(E, demand):
        if e < 0 or (d > 0 and e < eps):
            return None
    for t in range(T):
        if C[t] > upper[t] or C[t] < lower[t]:
            return None
    return E


def _sigma_exact(E, D):
    if any(d > 0 and e <= 0 for d, e in zip(D, E)):
        return math.inf
    return population_std([0.0 if d == 0 else float(d) / float(e) for d, e in zip(D, E)])


def tea_allocate(generation: Sequence[float], demand: Sequence[float], b0: float = 0.0,
                 cap: float = math.inf, polish: bool = True) -> TeaResult:
    """Allocate green energy over slots to minimise the spread of the drainage ratio.

    Constraints: provisioning up to slot t never exceeds the battery's initial charge
    plus generation so far; with an unbounded battery every unit is provisioned; demand
    slots get at least ``EPSILON``. A finite ``cap`` adds lower bounds: by each slot
    enough must be provisioned that the battery never overflows. The exact equal-ratio
    allocation seeds a constrained local descent which only replaces it when the spread
    strictly drops.
    """
    if len(generation) != len(demand) or not demand:
        raise ValueError("generation and demand must be non-empty and equally long")
    G, D = _fractions(generation), _fractions(demand)
    b0f = Fraction(b0)
    T = len(D)
    if cap < b0:
        raise ValueError("initial charge exceeds battery capacity")
    total_avail = b0f + sum(G)
    if all(d == 0 for d in D):
        E = list(G)
        E[0] += b0f
        return TeaResult(tuple(float(e) for e in E), tuple(E), status="no_demand")
    if total_avail == 0:
        zeros = tuple(Fraction(0) for _ in D)
        return TeaResult(tuple(0.0 for _ in D), zeros, status="no_energy")

    upper = list(accumulate(G, initial=b0f))[1:]
    lower = [Fraction(0)] * T
    if not math.isinf(cap):
        # draw enough by each slot that the battery never has to overflow
        capf = Fraction(cap)
        lower = [max(Fraction(0), u - capf) for u in upper[:-1]] + [upper[-1]]
    E, starved = equal_ratio_allocation(G, D, b0f)
    if any(lower):
        E = _clamp_cumulative(E, lower, upper)
    polished = False
    if polish and not starved and T > 1:
        follow = [float(g) for g in G]
        follow[0] += float(b0f)
        seed = [float(e) for e in E]
        starts = [seed, follow, [0.5 * (a + b) for a, b in zip(seed, follow)]]
        uniform = [float(upper[-1]) / T] * T
        cum = list(accumulate(uniform))
        if all(float(lower[t]) <= cum[t] <= float(upper[t]) for t in range(T)):
            starts.append(uniform)
        c_max = 2.0 * max((float(d / e) for d, e in zip(D, E) if d > 0 and e > 0), default=1.0)
        starts.extend(_dp_starts(D, lower, upper, upper[-1], c_max))
        x = _polish(D, starts, lower, upper, upper[-1])
        cand = _exact_from_float(x, D, lower, upper, upper[-1])
        if cand is not None and _sigma_exact(cand, D) < _sigma_exact(E, D) - 1e-13:
            E, polished = cand, True
    eps = Fraction(EPSILON)
    starved = [j for j, (e, d) in enumerate(zip(E, D)) if d > 0 and e <= eps]
    return TeaResult(tuple(float(e) for e in E), tuple(E), starved=tuple(starved),
                     polished=polished)


def _clamp_cumulative(E, lower, upper):
    """Project cumulative provisioning into [lower, upper]; monotone bounds keep it monotone."""
    out, prev, run = [], Fraction(0), Fraction(0)
    for e, lo, up in zip(E, lower, upper):
        run += e
        c = min(up, max(lo, run))
        out.append(c - prev)
        prev = c
    return out


def uniform_allocate(generation: Sequence[float], b0: float = 0.0) -> TeaResult:
    """Ablation baseline: an even share per slot, limited by what has been harvested."""
    G = _fractions(generation)
    T = len(G)
    total = Fraction(b0) + sum(G)
    share = total / T
    E, used, avail = [], Fraction(0), Fraction(b0)
    for t in range(T):
        avail += G[t]
        e = total - used if t == T - 1 else min(share, avail - used)
        E.append(e)
        used += e
    status = "ok" if total > 0 else "no_energy"
    return TeaResult(tuple(float(e) for e in E), tuple(E), status=status)


class OracleAllocation(NamedTuple):
    allocation: tuple[float, ...]
    sigma: float
    starved: bool
    points: int


def tea_oracle(generation: Sequence[float], demand: Sequence[float], b0: float = 0.0,
               cap: float = math.inf, grid_step: float = 0.05) -> OracleAllocation:
    """Exhaustive grid search for the minimum-spread allocation (T <= 4).

    Every slot but the last is enumerated on the grid under causality (and the battery
    cap); the last slot takes the remainder so nothing is wasted. Zero provisioning on a
    demand slot is lifted to ``EPSILON``. Ties go to the lexicographically smallest
    allocation.
    """
    T = len(demand)
    if T != len(generation) or T == 0:
        raise ValueError("generation and demand must be non-empty and equally long")
    if T > 4:
        raise TooLarge(f"oracle limited to T <= 4, got {T}")
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    d = np.asarray(demand, float)
    upper = np.cumsum(np.asarray(generation, float)) + b0
    total = upper[-1]
    lower = np.zeros(T) if math.isinf(cap) else np.maximum(0.0, upper - cap)
    tol = 1e-9
    estimate = 1
    for t in range(T - 1):
        estimate *= int(math.floor(upper[t] / grid_step + tol)) + 1
    if estimate > ORACLE_MAX_POINTS:
        raise TooLarge(f"grid has about {estimate} points")

    cands = np.zeros((1, 0))
    cum = np.zeros(1)
    for t in range(T - 1):
        vals = np.arange(int(math.floor(upper[t] / grid_step + tol)) + 1) * grid_step
        new_cum = cum[:, None] + vals[None, :]
        ok = (new_cum <= upper[t] + tol) & (new_cum >= lower[t] - tol)
        rows, cols = np.nonzero(ok)
        cands = np.hstack([cands[rows], vals[cols][:, None]])
        cum = new_cum[ok]
    last = total - cum
    keep = last >= -tol
    cands = np.hstack([cands[keep], np.maximum(last[keep], 0.0)[:, None]])
    if len(cands) == 0:
        raise ValueError("no feasible grid allocation")
    starved_mask = (cands <= 0) & (d > 0)
    cands = np.where(starved_mask, EPSILON, cands)
    eta = np.where(d > 0, d / np.where(d > 0, cands, 1.0), 0.0)
    sig = eta.std(axis=1)
    best = sig.min()
    tied = np.nonzero(sig <= best + 1e-12)[0]
    sub = cands[tied]
    order = np.lexsort(sub.T[::-1])
    pick = tied[order[0]]
    return OracleAllocation(tuple(float(x) for x in cands[pick]), float(sig[pick]),
                            bool(starved_mask[pick].any()), len(cands))
