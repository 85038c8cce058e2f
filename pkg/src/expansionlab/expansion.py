"""Certificates for multiplicative, additive and constant expansion.

Exhaustive mode enumerates every qualifying point subset with bitmask tables,
so verdicts are exact for the finite population.  Sampled mode searches for
violations with random subsets (uniform, graph balls, halfspace slices) and
greedy local moves; a ``holds=True`` verdict there only means no violation
was found.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from ._validation import check_index_set, check_seed
from .dataspace import NeighborhoodGraph

EXHAUSTIVE_CAP = 22
EPS = 1e-12
_LOW_BITS = 14


@dataclass(frozen=True)
class ExpansionCertificate:
    """Verdict for one expansion property, with the worst subset found.

    ``worst`` is the minimum expansion ratio (multiplicative) or the minimum
    slack (additive, constant) over the subsets examined; it is ``inf`` when
    no subset qualified.
    """

    kind: str
    params: dict
    holds: bool
    worst: float
    witness: tuple
    mode: str
    examined: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": _jsonable(self.params),
            "holds": bool(self.holds),
            "worst": None if not math.isfinite(self.worst) else float(self.worst),
            "witness": [int(i) for i in self.witness],
            "mode": self.mode,
            "examined": int(self.examined),
            "extra": _jsonable(self.extra),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


# ---------------------------------------------------------------------------
# neighborhoods


def neighborhood_of_set(graph: NeighborhoodGraph, s) -> np.ndarray:
    """``N(S)``: union of the neighborhoods of the members of ``S``."""
    idx = check_index_set(s, graph.n)
    if idx.size == 0:
        return idx
    return np.flatnonzero(graph.n_adj[idx].any(axis=0))


def restricted_neighborhood(graph: NeighborhoodGraph, s) -> np.ndarray:
    """``N*(S)``: neighbors of ``S`` that share the ground-truth class of the member reached from."""
    idx = check_index_set(s, graph.n)
    if idx.size == 0:
        return idx
    return np.flatnonzero(graph.same_class_n_adj[idx].any(axis=0))


# ---------------------------------------------------------------------------
# exhaustive enumeration engine


class _SubsetTables:
    """Enumerate all subsets of ``m`` members in blocks.

    Each member carries a weight vector (one column per tracked measure) and
    a neighbor bitmask over a target universe of ``u`` points with their own
    masses.  For every subset the block yields the summed member weights and
    the target mass of the union of neighbor masks.
    """

    def __init__(self, member_weights, member_masks, target_masses):
        self.m = member_masks.shape[0]
        self.weights = np.asarray(member_weights, dtype=np.float64)
        if self.weights.ndim == 1:
            self.weights = self.weights[:, None]
        self.masks = member_masks
        self.words = member_masks.shape[1]
        u = target_masses.shape[0]
        # mass lookup per (word, byte) slot
        self.byte_tables = np.zeros((self.words * 8, 256))
        byte_vals = np.arange(256)
        for slot in range(self.words * 8):
            for bit in range(8):
                t = slot * 8 + bit
                if t < u:
                    self.byte_tables[slot] += ((byte_vals >> bit) & 1) * target_masses[t]
        self.low = min(self.m, _LOW_BITS)
        self.high = self.m - self.low
        self._low_w, self._low_nb = self._tables(0, self.low)

    def _tables(self, start, count):
        size = 1 << count
        w = np.zeros((size, self.weights.shape[1]))
        nb = np.zeros((size, self.words), dtype=np.uint64)
        for k in range(count):
            half = 1 << k
            w[half : 2 * half] = w[:half] + self.weights[start + k]
            nb[half : 2 * half] = nb[:half] | self.masks[start + k]
        return w, nb

    def mask_mass(self, nb):
        total = np.zeros(nb.shape[0])
        for word in range(self.words):
            col = nb[:, word]
            for b in range(8):
                total += self.byte_tables[word * 8 + b][((col >> np.uint64(8 * b)) & np.uint64(255)).astype(np.intp)]
        return total

    def blocks(self):
        """Yield ``(subset_ids, member_weight_sums, neighbor_masks)`` blocks."""
        high_w, high_nb = self._tables(self.low, self.high)
        low_ids = np.arange(1 << self.low, dtype=np.int64)
        for h in range(1 << self.high):
            ids = (np.int64(h) << self.low) | low_ids
            yield ids, self._low_w + high_w[h], self._low_nb | high_nb[h]

    def decode(self, subset_id, members):
        return tuple(int(members[k]) for k in range(self.m) if (int(subset_id) >> k) & 1)


def _bitmasks(adj_rows: np.ndarray) -> np.ndarray:
    """Pack boolean rows (members x targets) into uint64 words."""
    m, u = adj_rows.shape
    words = max(1, (u + 63) // 64)
    out = np.zeros((m, words), dtype=np.uint64)
    for t in range(u):
        col = adj_rows[:, t]
        out[col, t // 64] |= np.uint64(1) << np.uint64(t % 64)
    return out


def _check_mode(mode):
    if mode not in ("exhaustive", "sampled"):
        raise ValueError(f"mode must be 'exhaustive' or 'sampled', got {mode!r}")


# ---------------------------------------------------------------------------
# multiplicative expansion


def check_mult_expansion(graph: NeighborhoodGraph, a: float, c: float, mode="exhaustive", budget=100_000, seed=0):
    """Check ``(a, c)``-expansion of every class-conditional measure.

    For each class ``i`` and every ``V ⊆ C_i`` with ``P_i(V) <= a`` tests
    ``P_i(N(V) ∩ C_i) >= min(c * P_i(V), 1)``.  ``extra["critical_c"]`` is the
    largest factor for which the examined subsets all pass.
    """
    if not 0 < a <= 1:
        raise ValueError("a must lie in (0, 1]")
    if c < 1:
        raise ValueError("c must be >= 1")
    _check_mode(mode)
    pop = graph.population
    min_ratio, ratio_witness = np.inf, ()
    viol_slack, viol_witness = np.inf, None
    critical = np.inf
    examined = 0
    rng = np.random.default_rng(check_seed(seed))
    for i in range(pop.num_classes):
        members = pop.class_indices(i)
        if mode == "exhaustive" and members.size > EXHAUSTIVE_CAP:
            raise ValueError(
                f"class {i} has {members.size} points; exhaustive mode is capped at {EXHAUSTIVE_CAP}"
            )
        w = graph.masses[members] / graph.masses[members].sum()
        adj = graph.n_adj[np.ix_(members, members)]
        if mode == "exhaustive":
            res = _mult_exhaustive(w, adj, a, c)
        else:
            res = _mult_sampled(w, adj, a, c, budget, rng, pop.points[members])
        examined += res["examined"]
        critical = min(critical, res["critical"])
        if res["ratio_witness"] is not None and res["ratio"] < min_ratio:
            min_ratio = res["ratio"]
            ratio_witness = tuple(int(members[k]) for k in res["ratio_witness"])
        if res["violated"] and res["slack"] < viol_slack:
            viol_slack = res["slack"]
            viol_witness = tuple(int(members[k]) for k in res["slack_witness"])
    holds = viol_witness is None
    return ExpansionCertificate(
        kind="multiplicative",
        params={"a": float(a), "c": float(c)},
        holds=holds,
        worst=float(min_ratio),
        witness=ratio_witness if holds else viol_witness,
        mode=mode,
        examined=examined,
        extra={"critical_c": float(critical)},
    )


def _mult_exhaustive(w, adj, a, c):
    m = w.shape[0]
    tables = _SubsetTables(w, _bitmasks(adj), w)
    out = {"examined": 0, "critical": np.inf, "violated": False,
           "slack": np.inf, "slack_witness": None, "ratio": np.inf, "ratio_witness": None}
    worst_viol = (np.inf, None)
    worst_ratio = (np.inf, None)
    for ids, pv, nb in tables.blocks():
        pv = pv[:, 0]
        qual = (pv <= a + EPS) & (ids != 0)
        if not qual.any():
            continue
        ids, pv = ids[qual], pv[qual]
        pn = tables.mask_mass(nb[qual])
        out["examined"] += ids.size
        ratio = pn / pv
        k = int(np.argmin(ratio))
        if ratio[k] < worst_ratio[0]:
            worst_ratio = (float(ratio[k]), int(ids[k]))
        slack = pn - np.minimum(c * pv, 1.0)
        k = int(np.argmin(slack))
        if slack[k] < worst_viol[0]:
            worst_viol = (float(slack[k]), int(ids[k]))
        below_full = pn < 1.0 - EPS
        if below_full.any():
            out["critical"] = min(out["critical"], float(ratio[below_full].min()))
    if worst_ratio[1] is None:
        return out
    members = np.arange(m)
    out["violated"] = worst_viol[0] < -EPS
    out["slack"] = worst_viol[0]
    out["slack_witness"] = tables.decode(worst_viol[1], members)
    out["ratio"] = worst_ratio[0]
    out["ratio_witness"] = tables.decode(worst_ratio[1], members)
    return out


def _ratio_of(w, adj, subset):
    v = np.zeros(w.shape[0], dtype=bool)
    v[list(subset)] = True
    return float(w[adj[v].any(axis=0)].sum() / w[v].sum())


def _random_subsets(w, adj, points, cap, rng, count, *, min_mass=0.0):
    """Seed subsets: uniform draws, graph balls and halfspace slices (boolean rows)."""
    m = w.shape[0]
    out = np.zeros((count, m), dtype=bool)
    for t in range(count):
        kind = t % 3
        target = rng.uniform(min_mass, cap) if cap > min_mass else cap
        if kind == 0:
            order = rng.permutation(m)
        elif kind == 1:
            # breadth-first ball around a random point
            start = int(rng.integers(m))
            seen = [start]
            mark = np.zeros(m, dtype=bool)
            mark[start] = True
            head = 0
            while head < len(seen):
                nbrs = np.flatnonzero(adj[seen[head]] & ~mark)
                nbrs = nbrs[rng.permutation(nbrs.size)]
                mark[nbrs] = True
                seen.extend(nbrs.tolist())
                head += 1
            rest = np.flatnonzero(~mark)
            order = np.concatenate([np.asarray(seen), rest[rng.permutation(rest.size)]])
        else:
            direction = rng.standard_normal(points.shape[1])
            order = np.argsort(points @ direction, kind="stable")
        cum = np.cumsum(w[order])
        take = int(np.searchsorted(cum, target + EPS, side="right"))
        take = max(take, 1) if w[order[0]] <= cap + EPS else 0
        out[t, order[:take]] = True
    return out


def _mult_sampled(w, adj, a, c, budget, rng, points):
    adj_f = adj.astype(np.float64)
    out = {"examined": 0, "critical": np.inf, "violated": False,
           "slack": np.inf, "slack_witness": None, "ratio": np.inf, "ratio_witness": None}

    def evaluate(batch):
        pv = batch @ w
        pn = ((batch.astype(np.float64) @ adj_f) > 0) @ w
        return pv, pn

    best_slack, best_set = np.inf, None
    best_ratio, best_ratio_set = np.inf, None
    remaining = int(budget)
    pool = []
    while remaining > 0:
        count = min(remaining, 2048)
        batch = _random_subsets(w, adj, points, a, rng, count)
        batch = batch[batch.any(axis=1)]
        remaining -= count
        if batch.shape[0] == 0:
            continue
        pv, pn = evaluate(batch)
        qual = pv <= a + EPS
        batch, pv, pn = batch[qual], pv[qual], pn[qual]
        out["examined"] += batch.shape[0]
        if batch.shape[0] == 0:
            continue
        ratio = pn / pv
        slack = pn - np.minimum(c * pv, 1.0)
        below_full = pn < 1.0 - EPS
        if below_full.any():
            out["critical"] = min(out["critical"], float(ratio[below_full].min()))
        k = int(np.argmin(slack))
        if slack[k] < best_slack:
            best_slack, best_set = float(slack[k]), batch[k].copy()
        k = int(np.argmin(ratio))
        if ratio[k] < best_ratio:
            best_ratio, best_ratio_set = float(ratio[k]), batch[k].copy()
        for k in np.argsort(ratio, kind="stable")[:4]:
            pool.append(batch[k].copy())
    # greedy shrink/grow from the lowest-ratio seeds
    pool.sort(key=lambda v: _ratio_of(w, adj, np.flatnonzero(v)))
    for seed_set in pool[:16]:
        v, ratio = _greedy_descent(seed_set, w, adj_f, a)
        out["examined"] += 1
        pv = float(w[v].sum())
        pn = float(w[(v.astype(np.float64) @ adj_f) > 0].sum())
        if pn < 1.0 - EPS:
            out["critical"] = min(out["critical"], ratio)
        slack = pn - min(c * pv, 1.0)
        if slack < best_slack:
            best_slack, best_set = slack, v
        if ratio < best_ratio:
            best_ratio, best_ratio_set = ratio, v
    if best_set is None:
        return out
    out["violated"] = best_slack < -EPS
    out["slack"] = best_slack
    out["slack_witness"] = tuple(np.flatnonzero(best_set).tolist())
    out["ratio"] = best_ratio
    out["ratio_witness"] = tuple(np.flatnonzero(best_ratio_set).tolist())
    return out


def _greedy_descent(v, w, adj_f, cap, max_moves=200):
    """Single add/remove moves that lower the expansion ratio while ``P(V) <= cap``."""
    v = v.copy()
    counts = v.astype(np.float64) @ adj_f  # how many members reach each point

    def ratio_of(cnt, vv):
        return w[cnt > 0].sum() / w[vv].sum()

    current = ratio_of(counts, v)
    for _ in range(max_moves):
        best_move, best_val = None, current
        for k in np.flatnonzero(v):
            if v.sum() == 1:
                break
            cnt = counts - adj_f[k]
            vv = v.copy()
            vv[k] = False
            val = ratio_of(cnt, vv)
            if val < best_val - 1e-15:
                best_move, best_val = (k, False), val
        pv = w[v].sum()
        frontier = np.flatnonzero((counts > 0) & ~v)
        for k in frontier:
            if pv + w[k] > cap + EPS:
                continue
            cnt = counts + adj_f[k]
            vv = v.copy()
            vv[k] = True
            val = ratio_of(cnt, vv)
            if val < best_val - 1e-15:
                best_move, best_val = (k, True), val
        if best_move is None:
            break
        k, add = best_move
        v[k] = add
        counts = counts + adj_f[k] if add else counts - adj_f[k]
        current = best_val
    return v, float(current)


# ---------------------------------------------------------------------------
# additive expansion


def _additive_setup(graph, s):
    s = check_index_set(s, graph.n)
    in_s = np.zeros(graph.n, dtype=bool)
    in_s[s] = True
    reach = graph.same_class_n_adj[s][:, ~in_s] if s.size else np.zeros((0, graph.n - s.size), dtype=bool)
    outside = np.flatnonzero(~in_s)
    return s, reach, graph.masses[outside]


def check_additive_expansion(graph: NeighborhoodGraph, s, q: float, alpha: float, mode="exhaustive", budget=100_000, seed=0):
    """Check ``(q, alpha)``-additive expansion on the point set ``s``.

    Every ``V ⊆ S`` with ``P(V) > q`` must satisfy ``P(N*(V) \\ S) > P(V) + alpha``.
    ``worst`` is the minimum of ``P(N*(V) \\ S) - P(V) - alpha``.
    """
    _check_mode(mode)
    s, reach, out_mass = _additive_setup(graph, s)
    params = {"q": float(q), "alpha": float(alpha), "S": s.tolist()}
    if s.size == 0 or q >= graph.masses[s].sum():
        return ExpansionCertificate("additive", params, True, np.inf, (), mode, 0)
    w = graph.masses[s]
    if mode == "exhaustive":
        if s.size > EXHAUSTIVE_CAP:
            raise ValueError(f"|S| = {s.size}; exhaustive mode is capped at {EXHAUSTIVE_CAP}")
        tables = _SubsetTables(w, _bitmasks(reach), out_mass)
        best = (np.inf, None)
        examined = 0
        for ids, pv, nb in tables.blocks():
            pv = pv[:, 0]
            qual = pv > q
            if not qual.any():
                continue
            ids, pv = ids[qual], pv[qual]
            slack = tables.mask_mass(nb[qual]) - pv - alpha
            examined += ids.size
            k = int(np.argmin(slack))
            if slack[k] < best[0]:
                best = (float(slack[k]), int(ids[k]))
        if best[1] is None:
            return ExpansionCertificate("additive", params, True, np.inf, (), mode, 0)
        witness = tables.decode(best[1], s)
        return ExpansionCertificate("additive", params, best[0] > 0, best[0], witness, mode, examined)
    rng = np.random.default_rng(check_seed(seed))
    reach_f = reach.astype(np.float64)
    best = (np.inf, None)
    examined = 0
    remaining = int(budget)
    total = w.sum()
    while remaining > 0:
        count = min(remaining, 2048)
        remaining -= count
        # sizes above the threshold: random subsets of S with mass in (q, P(S)]
        batch = np.zeros((count, s.size), dtype=bool)
        for t in range(count):
            order = rng.permutation(s.size)
            cum = np.cumsum(w[order])
            target = rng.uniform(q, total)
            take = int(np.searchsorted(cum, target, side="left")) + 1
            batch[t, order[:take]] = True
        pv = batch @ w
        qual = pv > q
        batch, pv = batch[qual], pv[qual]
        if batch.shape[0] == 0:
            continue
        slack = ((batch.astype(np.float64) @ reach_f) > 0) @ out_mass - pv - alpha
        examined += batch.shape[0]
        k = int(np.argmin(slack))
        if slack[k] < best[0]:
            best = (float(slack[k]), batch[k].copy())
    if best[1] is None:
        return ExpansionCertificate("additive", params, True, np.inf, (), mode, examined)
    witness = tuple(int(i) for i in s[best[1]])
    return ExpansionCertificate("additive", params, best[0] > 0, best[0], witness, mode, examined)


def minimal_additive_q(graph: NeighborhoodGraph, s, alpha: float) -> float:
    """Smallest ``q`` for which ``(q, alpha)``-additive expansion on ``s`` holds.

    Exhaustive: ``q`` is the largest ``P(V)`` among violating subsets (0 when
    none violates).
    """
    s, reach, out_mass = _additive_setup(graph, s)
    if s.size == 0:
        return 0.0
    if s.size > EXHAUSTIVE_CAP:
        raise ValueError(f"|S| = {s.size}; exhaustive mode is capped at {EXHAUSTIVE_CAP}")
    tables = _SubsetTables(graph.masses[s], _bitmasks(reach), out_mass)
    q = 0.0
    for ids, pv, nb in tables.blocks():
        pv = pv[:, 0]
        nonempty = ids != 0
        bad = nonempty & (tables.mask_mass(nb) <= pv + alpha)
        if bad.any():
            q = max(q, float(pv[bad].max()))
    return q


# ---------------------------------------------------------------------------
# constant expansion


def check_constant_expansion(graph: NeighborhoodGraph, q: float, xi: float, mode="exhaustive", budget=100_000, seed=0):
    """Check ``(q, xi)``-constant expansion.

    Every ``S`` with ``P(S) >= q`` and ``P(S ∩ C_i) <= P(C_i)/2`` for all ``i``
    must satisfy ``P(N*(S) \\ S) >= min(xi, P(S))``.  ``worst`` is the minimum of
    ``P(N*(S) \\ S) - min(xi, P(S))``.
    """
    _check_mode(mode)
    pop = graph.population
    params = {"q": float(q), "xi": float(xi)}
    half = pop.class_masses / 2
    onehot = np.eye(pop.num_classes)[pop.labels] * graph.masses[:, None]
    if mode == "exhaustive":
        if graph.n > EXHAUSTIVE_CAP:
            raise ValueError(f"population has {graph.n} points; exhaustive mode is capped at {EXHAUSTIVE_CAP}")
        weights = np.column_stack([graph.masses, onehot])
        tables = _SubsetTables(weights, _bitmasks(graph.same_class_n_adj), graph.masses)
        best = (np.inf, None)
        examined = 0
        for ids, pw, nb in tables.blocks():
            ps = pw[:, 0]
            qual = (ps >= q - EPS) & (pw[:, 1:] <= half + EPS).all(axis=1) & (ids != 0)
            if not qual.any():
                continue
            ids, ps, nb = ids[qual], ps[qual], nb[qual]
            # remove S itself from its neighborhood
            self_mask = _ids_to_masks(ids, tables.words)
            slack = tables.mask_mass(nb & ~self_mask) - np.minimum(xi, ps)
            examined += ids.size
            k = int(np.argmin(slack))
            if slack[k] < best[0]:
                best = (float(slack[k]), int(ids[k]))
        if best[1] is None:
            return ExpansionCertificate("constant", params, True, np.inf, (), mode, examined)
        witness = tables.decode(best[1], np.arange(graph.n))
        return ExpansionCertificate("constant", params, best[0] >= -EPS, best[0], witness, mode, examined)
    rng = np.random.default_rng(check_seed(seed))
    adj_f = graph.same_class_n_adj.astype(np.float64)
    w = graph.masses
    best = (np.inf, None)
    examined = 0
    remaining = int(budget)
    while remaining > 0:
        count = min(remaining, 2048)
        remaining -= count
        batch = np.zeros((count, graph.n), dtype=bool)
        for i in range(pop.num_classes):
            members = pop.class_indices(i)
            wi = w[members]
            for t in range(count):
                order = rng.permutation(members.size)
                cum = np.cumsum(wi[order])
                take = int(np.searchsorted(cum, rng.uniform(0, half[i]) + EPS, side="right"))
                batch[t, members[order[:take]]] = True
        ps = batch @ w
        qual = (ps >= q - EPS) & ((batch.astype(np.float64) @ onehot) <= half + EPS).all(axis=1) & batch.any(axis=1)
        batch, ps = batch[qual], ps[qual]
        if batch.shape[0] == 0:
            continue
        reached = ((batch.astype(np.float64) @ adj_f) > 0) & ~batch
        slack = reached @ w - np.minimum(xi, ps)
        examined += batch.shape[0]
        k = int(np.argmin(slack))
        if slack[k] < best[0]:
            best = (float(slack[k]), batch[k].copy())
    if best[1] is None:
        return ExpansionCertificate("constant", params, True, np.inf, (), mode, examined)
    witness = tuple(np.flatnonzero(best[1]).tolist())
    return ExpansionCertificate("constant", params, best[0] >= -EPS, best[0], witness, mode, examined)


def _ids_to_masks(ids, words):
    out = np.zeros((ids.shape[0], words), dtype=np.uint64)
    out[:, 0] = ids.astype(np.uint64)
    return out


# ---------------------------------------------------------------------------
# direct re-evaluation of a single subset (used to re-verify witnesses)


def mult_ratio(graph: NeighborhoodGraph, v) -> float:
    """``P_i(N(V) ∩ C_i) / P_i(V)`` for a nonempty single-class subset ``V``."""
    v = check_index_set(v, graph.n)
    classes = np.unique(graph.labels[v])
    if v.size == 0 or classes.size != 1:
        raise ValueError("V must be a nonempty subset of one class")
    members = graph.population.class_indices(int(classes[0]))
    reached = restricted_neighborhood(graph, v)
    return float(graph.masses[reached].sum() / graph.masses[v].sum()) if np.all(np.isin(reached, members)) else np.nan


def additive_slack(graph: NeighborhoodGraph, s, v, alpha: float) -> float:
    s = check_index_set(s, graph.n)
    v = check_index_set(v, graph.n)
    outside = np.setdiff1d(restricted_neighborhood(graph, v), s)
    return float(graph.masses[outside].sum() - graph.masses[v].sum() - alpha)


def constant_slack(graph: NeighborhoodGraph, s, xi: float) -> float:
    s = check_index_set(s, graph.n)
    outside = np.setdiff1d(restricted_neighborhood(graph, s), s)
    return float(graph.masses[outside].sum() - min(xi, graph.masses[s].sum()))


# ---------------------------------------------------------------------------
# conversions and the Gaussian halfspace profile


def mult_to_additive(c: float, beta: float, mistake_mass: float) -> tuple[float, float]:
    """Additive parameters ``(q, alpha)`` implied by multiplicative expansion on a mistake set."""
    if not c > 1:
        raise ValueError("c must exceed 1")
    if not 0 < beta <= c - 1:
        raise ValueError(f"beta must lie in (0, c - 1] = (0, {c - 1}]")
    return beta * mistake_mass / (c - 1), (beta - 1) * mistake_mass


def mult_to_constant(c: float, xi: float) -> float:
    """Threshold ``q`` such that ``(1/2, c)``-expansion gives ``(q, xi)``-constant expansion."""
    if not c > 1:
        raise ValueError("c must exceed 1")
    if not xi > 0:
        raise ValueError("xi must be positive")
    return xi / (c - 1)


def halfspace_expansion_profile(enlargement_sigma: float, p_grid) -> np.ndarray:
    """Ratio ``Phi(Phi^{-1}(p) + enlargement) / p`` for each ``p`` in ``(0, 0.5]``.

    A halfspace of Gaussian mass ``p`` enlarged by ``enlargement`` standard
    deviations; by the Gaussian isoperimetric inequality this is the least
    expansion among sets of mass ``p``.
    """
    if not enlargement_sigma >= 0:
        raise ValueError("enlargement must be nonnegative")
    p = np.asarray(p_grid, dtype=np.float64)
    if np.any(~(p > 0)) or np.any(p > 0.5):
        raise ValueError("every p must lie in (0, 0.5]")
    return ndtr(ndtri(p) + enlargement_sigma) / p
