"""Right-hand sides of the accuracy guarantees and machine-checkable reports.

Each ``check_*`` function verifies a guarantee's preconditions mechanically,
evaluates both sides on a finite instance and returns a
:class:`TheoremCheckReport`.  Unmet preconditions produce a refusal record,
never a vacuous pass.  Reports carry enough inputs to be re-verified by
:func:`reverify` without the instance.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_seed
from .dataspace import FinitePopulation, NeighborhoodGraph, TransformSpec, build_neighborhood_graph, gen_clustered_instance, measure_separation
from .expansion import (
    EXHAUSTIVE_CAP,
    check_additive_expansion,
    check_constant_expansion,
    check_mult_expansion,
    minimal_additive_q,
    mult_to_additive,
    mult_to_constant,
)
from .objectives import Pseudolabeler, err, err_unsup, pl_objective, pl_objective_weights, unsup_threshold
from .selftrain import MinimizerResult, brute_force_min_pl, brute_force_min_unsup, labeling_blocks

SCHEMA_VERSION = 1
SLACK_TOL = 1e-12
# an infinite certified expansion factor is replaced by this finite one
C_CAP = 1e3
TABLE_CAP = 3**12

THEOREM_IDS = ("pop_denoise_lemma", "denoise_theorem", "unsup_theorem", "unsup_lemma", "additive_theorem")
NOTE = "up to unspecified universal constants"


# ---------------------------------------------------------------------------
# closed-form right-hand sides


def denoise_bound(c: float, err_pl: float, mu: float) -> float:
    """``2/(c-1) * err_pl + 2c/(c-1) * mu``."""
    if not c > 1:
        raise ValueError("c must exceed 1")
    return 2.0 / (c - 1) * err_pl + 2.0 * c / (c - 1) * mu


def unsup_bound(c: float, mu: float) -> float:
    """``max(c/(c-1), 2) * mu``."""
    if not c > 1:
        raise ValueError("c must exceed 1")
    return max(c / (c - 1), 2.0) * mu


# ---------------------------------------------------------------------------
# reports


@dataclass
class TheoremCheckReport:
    """Outcome of one guarantee check.

    ``status`` is ``"checked"``, ``"refused"`` (precondition unmet) or
    ``"skipped"`` (hypothesis on the supplied labeling unmet).  ``holds`` is
    ``None`` unless checked.  ``advisory`` marks checks whose minimizer or
    certificate was not exact.
    """

    theorem: str
    status: str
    lhs: float | None = None
    rhs: float | None = None
    inputs: dict = field(default_factory=dict)
    exactness: dict = field(default_factory=dict)
    reason: str = ""
    schema_version: int = SCHEMA_VERSION

    @property
    def slack(self) -> float | None:
        if self.lhs is None or self.rhs is None:
            return None
        return float(self.rhs - self.lhs)

    @property
    def holds(self) -> bool | None:
        if self.status != "checked":
            return None
        return bool(self.slack >= -SLACK_TOL)

    @property
    def advisory(self) -> bool:
        return not all(self.exactness.values())

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "theorem": self.theorem,
            "status": self.status,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "holds": self.holds,
            "advisory": self.advisory,
            "inputs": _plain(self.inputs),
            "exactness": {k: bool(v) for k, v in self.exactness.items()},
            "reason": self.reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TheoremCheckReport":
        return cls(d["theorem"], d["status"], d["lhs"], d["rhs"], d["inputs"], d["exactness"], d.get("reason", ""), d["schema_version"])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def reports_to_jsonl(reports) -> str:
    return "".join(r.to_json() + "\n" for r in reports)


def _refused(theorem, reason, inputs=None, exactness=None):
    return TheoremCheckReport(theorem, "refused", inputs=inputs or {}, exactness=exactness or {}, reason=reason)


def instance_digest(graph: NeighborhoodGraph, pl: Pseudolabeler | None = None) -> str:
    """SHA-256 over the instance arrays (points, masses, labels, relations, pseudolabels)."""
    h = hashlib.sha256()
    pop = graph.population
    for arr in (pop.points, pop.masses, pop.labels, graph.b_adj, graph.n_adj):
        h.update(np.ascontiguousarray(arr).tobytes())
    if pl is not None:
        h.update(np.ascontiguousarray(pl.assignment).tobytes())
    return h.hexdigest()


def reverify(report: TheoremCheckReport | dict) -> bool:
    """Recompute the right-hand side and verdict from the report's inputs alone."""
    r = report if isinstance(report, TheoremCheckReport) else TheoremCheckReport.from_dict(report)
    if r.status != "checked":
        return True
    d = r.inputs
    if r.theorem == "pop_denoise_lemma":
        w_dis, w_rob = pl_objective_weights(d["c"])
        rhs = w_dis * d["disagreement"] + w_rob * d["robust"] - d["err_pl"]
    elif r.theorem == "denoise_theorem":
        if not (d["a_bar"] < 1 / 3 and d["c_bar"] > 3):
            return False
        c_expected = d["c_bar"] if d["a_bar"] == 0 else min(1 / d["a_bar"], d["c_bar"])
        if abs(c_expected - d["c"]) > 1e-12 * max(1.0, c_expected):
            return False
        rhs = denoise_bound(d["c"], d["err_pl"], d["mu"])
    elif r.theorem == "unsup_theorem":
        if not d["rho"] > unsup_threshold(d["c"]) * d["mu"]:
            return False
        rhs = unsup_bound(d["c"], d["mu"])
    elif r.theorem == "unsup_lemma":
        rhs = unsup_bound(d["c"], d["robust"])
    elif r.theorem == "additive_theorem":
        if d["hypothesis"] > d["err_pl"] + d["alpha"] + SLACK_TOL:
            return False
        rhs = 2 * (d["q"] + d["robust"]) + d["disagreement"] - d["err_pl"]
    else:
        raise ValueError(f"unknown theorem id {r.theorem!r}")
    if abs(rhs - r.rhs) > 1e-12 * max(1.0, abs(rhs)):
        return False
    return (rhs - r.lhs >= -SLACK_TOL) == r.holds


# ---------------------------------------------------------------------------
# shared enumeration of all labelings


class LabelingTable:
    """Every labeling of a small instance with its per-labeling quantities.

    Rows are in lexicographic order, so ``argmin`` returns the same minimizer
    as the exhaustive search in :mod:`expansionlab.selftrain`.
    """

    def __init__(self, graph: NeighborhoodGraph, cap: int = TABLE_CAP):
        n, k = graph.n, graph.population.num_classes
        if k**n > cap:
            raise ValueError(f"{k}**{n} labelings exceed the table cap {cap}")
        self.graph = graph
        self.rows = np.vstack([rows for _, rows in labeling_blocks(n, k)])
        src, dst = np.nonzero(graph.b_adj & ~np.eye(n, dtype=bool))
        nonrobust = np.zeros(self.rows.shape, dtype=bool)
        flips = self.rows[:, src] != self.rows[:, dst]
        for e in range(src.shape[0]):
            nonrobust[:, src[e]] |= flips[:, e]
        self.nonrobust = nonrobust
        self.robust = nonrobust @ graph.masses
        self.err = err(self.rows, graph.population)
        self.class_mass = np.stack([(self.rows == y) @ graph.masses for y in range(k)], axis=1)
        self._err_unsup = None

    @property
    def err_unsup(self) -> np.ndarray:
        if self._err_unsup is None:
            self._err_unsup = err_unsup(self.rows, self.graph.population)
        return self._err_unsup

    def disagreement(self, pl: Pseudolabeler) -> np.ndarray:
        return (self.rows != pl.assignment) @ self.graph.masses

    def pl_values(self, pl: Pseudolabeler, c: float) -> np.ndarray:
        return pl_objective(self.graph, self.rows, pl, c)

    def feasible(self, c: float) -> tuple[np.ndarray, np.ndarray]:
        margin = self.class_mass.min(axis=1) - unsup_threshold(c) * self.robust
        return margin > 0, margin

    def min_pl(self, pl: Pseudolabeler, c: float) -> MinimizerResult:
        vals = self.pl_values(pl, c)
        j = int(np.argmin(vals))
        return MinimizerResult(self.rows[j].copy(), float(vals[j]), True, True, vals.shape[0])

    def min_unsup(self, c: float) -> MinimizerResult:
        ok, _ = self.feasible(c)
        vals = np.where(ok, self.robust, np.inf)
        j = int(np.argmin(vals))
        if not np.isfinite(vals[j]):
            return MinimizerResult(None, np.inf, True, False, vals.shape[0])
        return MinimizerResult(self.rows[j].copy(), float(vals[j]), True, True, vals.shape[0])


# ---------------------------------------------------------------------------
# settings: certified preconditions


@dataclass
class DenoiseSetting:
    """Certified pseudolabel expansion: ``(a_bar, c_bar)`` with ``c = min(1/a_bar, c_bar)``."""

    a_bar: float
    c_bar: float | None
    c: float | None
    certificate: dict | None
    exhaustive: bool
    reason: str = ""

    @property
    def ok(self) -> bool:
        return not self.reason


@dataclass
class UnsupSetting:
    """Certified ``(1/2, c)``-expansion together with ``rho`` and ``mu``."""

    c: float | None
    rho: float
    mu: float
    certificate: dict | None
    exhaustive: bool
    reason: str = ""

    @property
    def ok(self) -> bool:
        return not self.reason


def _certified_c(graph, a, c_given, mode, seed):
    if c_given is None:
        probe = check_mult_expansion(graph, a, 1.0, mode=mode, seed=seed)
        c_given = min(probe.extra["critical_c"], C_CAP)
    cert = check_mult_expansion(graph, a, c_given, mode=mode, seed=seed)
    return float(c_given), cert


def _classes_fit(graph):
    sizes = np.bincount(graph.labels, minlength=graph.population.num_classes)
    return int(sizes.max()) <= EXHAUSTIVE_CAP


def denoise_setting(graph: NeighborhoodGraph, pl: Pseudolabeler, c_bar: float | None = None, mode: str = "exhaustive", seed=0) -> DenoiseSetting:
    """Certify worst-class mistake fraction below 1/3 and expansion above 3 on it.

    ``c_bar=None`` uses the largest certified factor (capped at ``C_CAP``).
    """
    a_bar = pl.a_bar
    if a_bar >= 1 / 3:
        return DenoiseSetting(a_bar, None, None, None, mode == "exhaustive", f"a_bar = {a_bar:.6g} is not below 1/3")
    if mode == "exhaustive" and not _classes_fit(graph):
        return DenoiseSetting(a_bar, None, None, None, True, f"a class exceeds the exhaustive cap {EXHAUSTIVE_CAP}")
    if a_bar == 0:
        # no subset has positive mass at most a_bar: expansion holds for every factor
        cb = C_CAP if c_bar is None else float(c_bar)
        return DenoiseSetting(0.0, cb, cb, None, mode == "exhaustive", "" if cb > 3 else "c_bar must exceed 3")
    cb, cert = _certified_c(graph, a_bar, c_bar, mode, seed)
    reason = ""
    if not cert.holds:
        reason = f"({a_bar:.6g}, {cb:.6g})-expansion is not certified"
    elif not cb > 3:
        reason = f"certified c_bar = {cb:.6g} does not exceed 3"
    c = min(1 / a_bar, cb) if not reason else None
    return DenoiseSetting(a_bar, cb, c, cert.to_dict(), mode == "exhaustive", reason)


def unsup_setting(graph: NeighborhoodGraph, c: float | None = None, mode: str = "exhaustive", seed=0) -> UnsupSetting:
    """Certify ``(1/2, c)``-expansion with ``c > 1`` and the class-mass condition."""
    pop = graph.population
    rho = float(pop.class_masses.min())
    mu = measure_separation(graph)
    exhaustive = mode == "exhaustive"
    if exhaustive and not _classes_fit(graph):
        return UnsupSetting(None, rho, mu, None, True, f"a class exceeds the exhaustive cap {EXHAUSTIVE_CAP}")
    c_val, cert = _certified_c(graph, 0.5, c, mode, seed)
    if not cert.holds:
        return UnsupSetting(None, rho, mu, cert.to_dict(), exhaustive, f"(1/2, {c_val:.6g})-expansion is not certified")
    if not c_val > 1:
        return UnsupSetting(None, rho, mu, cert.to_dict(), exhaustive, "certified c does not exceed 1")
    reason = ""
    if not rho > unsup_threshold(c_val) * mu:
        reason = f"rho = {rho:.6g} does not exceed {unsup_threshold(c_val):.6g} * mu = {unsup_threshold(c_val) * mu:.6g}"
    return UnsupSetting(c_val, rho, mu, cert.to_dict(), exhaustive, reason)


def _cert_summary(cert):
    if cert is None:
        return None
    return {k: cert[k] for k in ("kind", "params", "holds", "worst", "mode", "examined")}


# ---------------------------------------------------------------------------
# guarantee checks


def check_lemma_pop_denoise(graph: NeighborhoodGraph, pl: Pseudolabeler, setting: DenoiseSetting | None = None, table: LabelingTable | None = None) -> TheoremCheckReport:
    """``err(G) <= L(G)`` for every labeling; records the worst-slack labeling."""
    tid = "pop_denoise_lemma"
    setting = setting or denoise_setting(graph, pl)
    digest = {"instance": instance_digest(graph, pl), "a_bar": setting.a_bar, "c_bar": setting.c_bar}
    if not setting.ok:
        return _refused(tid, setting.reason, digest, {"certificate_exhaustive": setting.exhaustive})
    table = table or LabelingTable(graph)
    slack = table.pl_values(pl, setting.c) - table.err
    j = int(np.argmin(slack))
    dis = float(table.disagreement(pl)[j])
    lhs = float(table.err[j])
    rhs = float(slack[j] + table.err[j])
    digest.update(c=setting.c, err_pl=pl.err, disagreement=dis, robust=float(table.robust[j]),
                  labeling=table.rows[j].tolist(), labelings=int(table.rows.shape[0]),
                  certificate=_cert_summary(setting.certificate))
    return TheoremCheckReport(tid, "checked", lhs, rhs, digest, {"all_labelings": True, "certificate_exhaustive": setting.exhaustive})


def check_theorem_denoise(
    graph: NeighborhoodGraph,
    pl: Pseudolabeler,
    c_bar: float | None = None,
    minimizer_mode: str = "auto",
    setting: DenoiseSetting | None = None,
    table: LabelingTable | None = None,
) -> TheoremCheckReport:
    """Error of the denoising-objective minimizer against ``denoise_bound``."""
    tid = "denoise_theorem"
    setting = setting or denoise_setting(graph, pl, c_bar)
    mu = measure_separation(graph)
    digest = {"instance": instance_digest(graph, pl), "a_bar": setting.a_bar, "c_bar": setting.c_bar, "mu": mu, "err_pl": pl.err}
    if not setting.ok:
        return _refused(tid, setting.reason, digest, {"certificate_exhaustive": setting.exhaustive})
    res = table.min_pl(pl, setting.c) if table is not None else brute_force_min_pl(graph, pl, setting.c, mode=minimizer_mode)
    lhs = err(res.labeling, graph.population)
    rhs = denoise_bound(setting.c, pl.err, mu)
    digest.update(c=setting.c, labeling=res.labeling.tolist(), objective=res.value, certificate=_cert_summary(setting.certificate))
    return TheoremCheckReport(tid, "checked", float(lhs), float(rhs), digest,
                              {"minimizer_exact": res.exact, "certificate_exhaustive": setting.exhaustive})


def check_theorem_unsup(
    graph: NeighborhoodGraph,
    c: float | None = None,
    minimizer_mode: str = "auto",
    setting: UnsupSetting | None = None,
    table: LabelingTable | None = None,
) -> TheoremCheckReport:
    """Permutation-invariant error of the constrained ``R_B`` minimizer against ``unsup_bound``."""
    tid = "unsup_theorem"
    setting = setting or unsup_setting(graph, c)
    digest = {"instance": instance_digest(graph), "rho": setting.rho, "mu": setting.mu, "c": setting.c}
    if not setting.ok:
        return _refused(tid, setting.reason, digest, {"certificate_exhaustive": setting.exhaustive})
    res = table.min_unsup(setting.c) if table is not None else brute_force_min_unsup(graph, setting.c, mode=minimizer_mode)
    exactness = {"minimizer_exact": res.exact, "certificate_exhaustive": setting.exhaustive}
    digest["certificate"] = _cert_summary(setting.certificate)
    rhs = unsup_bound(setting.c, setting.mu)
    if not res.feasible:
        # the ground truth itself is feasible, so this is a search failure
        return TheoremCheckReport(tid, "checked", math.inf, float(rhs), digest, exactness, "no feasible labeling found")
    digest.update(labeling=res.labeling.tolist(), robust=res.value)
    return TheoremCheckReport(tid, "checked", float(err_unsup(res.labeling, graph.population)), float(rhs), digest, exactness)


def check_lemma_unsup(graph: NeighborhoodGraph, c: float | None = None, setting: UnsupSetting | None = None, table: LabelingTable | None = None) -> TheoremCheckReport:
    """``Err_unsup(G) <= max(c/(c-1), 2) R_B(G)`` for every labeling meeting the class-mass condition.

    Only the expansion part of the setting is required here.
    """
    tid = "unsup_lemma"
    setting = setting or unsup_setting(graph, c)
    digest = {"instance": instance_digest(graph), "c": setting.c}
    if setting.c is None:
        return _refused(tid, setting.reason, digest, {"certificate_exhaustive": setting.exhaustive})
    table = table or LabelingTable(graph)
    ok, _ = table.feasible(setting.c)
    exactness = {"all_labelings": True, "certificate_exhaustive": setting.exhaustive}
    digest["certificate"] = _cert_summary(setting.certificate)
    if not ok.any():
        return TheoremCheckReport(tid, "skipped", inputs=digest, exactness=exactness, reason="no labeling meets the class-mass condition")
    idx = np.flatnonzero(ok)
    slack = max(setting.c / (setting.c - 1), 2.0) * table.robust[idx] - table.err_unsup[idx]
    j = int(idx[np.argmin(slack)])
    digest.update(labeling=table.rows[j].tolist(), robust=float(table.robust[j]), qualifying=int(idx.size))
    return TheoremCheckReport(tid, "checked", float(table.err_unsup[j]), float(unsup_bound(setting.c, table.robust[j])), digest, exactness)


def _additive_cert(graph, pl, q, alpha, mode, seed):
    return check_additive_expansion(graph, pl.mistake_set, q, alpha, mode=mode, seed=seed)


def check_theorem_additive(
    graph: NeighborhoodGraph, pl: Pseudolabeler, q: float, alpha: float, g, mode: str = "exhaustive", seed=0
) -> TheoremCheckReport:
    """Certified ``(q, alpha)``-additive expansion on the mistakes; bound for one labeling ``g``.

    Skipped when ``g`` does not fit the pseudolabels well enough.
    """
    tid = "additive_theorem"
    cert = _additive_cert(graph, pl, q, alpha, mode, seed)
    digest = {"instance": instance_digest(graph, pl), "q": float(q), "alpha": float(alpha), "err_pl": pl.err,
              "certificate": _cert_summary(cert.to_dict())}
    exactness = {"certificate_exhaustive": mode == "exhaustive"}
    if not cert.holds:
        return _refused(tid, f"({q:.6g}, {alpha:.6g})-additive expansion on the mistakes is not certified", digest, exactness)
    g = np.asarray(g, dtype=np.int64)
    table = _SingleRow(graph, g)
    return _additive_report(tid, table, 0, pl, q, alpha, digest, exactness)


class _SingleRow:
    def __init__(self, graph, g):
        self.rows = g[None, :]
        flips = graph.b_adj & (g[:, None] != g[None, :])
        self.nonrobust = flips.any(axis=1)[None, :]
        self.robust = self.nonrobust @ graph.masses
        self.err = np.atleast_1d(err(self.rows, graph.population))
        self.graph = graph

    def disagreement(self, pl):
        return (self.rows != pl.assignment) @ self.graph.masses


def _hypothesis(table, pl):
    return ((table.rows != pl.assignment) | table.nonrobust) @ table.graph.masses


def _additive_report(tid, table, j, pl, q, alpha, digest, exactness):
    hyp = float(_hypothesis(table, pl)[j])
    dis = float(table.disagreement(pl)[j])
    rob = float(table.robust[j])
    digest = dict(digest, hypothesis=hyp, disagreement=dis, robust=rob, labeling=table.rows[j].tolist())
    if hyp > pl.err + alpha + SLACK_TOL:
        return TheoremCheckReport(tid, "skipped", inputs=digest, exactness=exactness,
                                  reason=f"fit term {hyp:.6g} exceeds err_pl + alpha = {pl.err + alpha:.6g}")
    rhs = 2 * (q + rob) + dis - pl.err
    return TheoremCheckReport(tid, "checked", float(table.err[j]), float(rhs), digest, exactness)


def check_theorem_additive_all(
    graph: NeighborhoodGraph, pl: Pseudolabeler, q: float | None, alpha: float, table: LabelingTable | None = None
) -> TheoremCheckReport:
    """Additive-expansion bound over every labeling meeting the fit hypothesis.

    ``q=None`` takes the smallest certified ``q`` for this ``alpha``.
    """
    tid = "additive_theorem"
    if q is None:
        q = minimal_additive_q(graph, pl.mistake_set, alpha)
    cert = _additive_cert(graph, pl, q, alpha, "exhaustive", 0)
    digest = {"instance": instance_digest(graph, pl), "q": float(q), "alpha": float(alpha), "err_pl": pl.err,
              "certificate": _cert_summary(cert.to_dict())}
    exactness = {"all_labelings": True, "certificate_exhaustive": True}
    if not cert.holds:
        return _refused(tid, f"({q:.6g}, {alpha:.6g})-additive expansion on the mistakes is not certified", digest, exactness)
    table = table or LabelingTable(graph)
    hyp = _hypothesis(table, pl)
    idx = np.flatnonzero(hyp <= pl.err + alpha + SLACK_TOL)
    if idx.size == 0:
        return TheoremCheckReport(tid, "skipped", inputs=digest, exactness=exactness, reason="no labeling meets the fit hypothesis")
    slack = 2 * (q + table.robust[idx]) + table.disagreement(pl)[idx] - pl.err - table.err[idx]
    j = int(idx[np.argmin(slack)])
    rep = _additive_report(tid, table, j, pl, q, alpha, digest, exactness)
    rep.inputs["qualifying"] = int(idx.size)
    return rep


# ---------------------------------------------------------------------------
# conversions between expansion notions


def check_conversions(graph: NeighborhoodGraph, pl: Pseudolabeler, dsetting: DenoiseSetting, usetting: UnsupSetting,
                      betas=(0.25, 0.5, 1.0, 2.0), xis=(0.02, 0.1, 0.3)) -> list[dict]:
    """Derived additive and constant certificates implied by the multiplicative ones.

    Additive: per class on ``M_i`` with the converted ``(q, alpha)`` (global
    masses), for each ``beta`` in ``(0, c-1]``.  Constant: ``(xi/(c-1), xi)``
    for each ``xi``.  Each entry records the derived certificate verdict.
    """
    out = []
    pop = graph.population
    if dsetting.ok:
        c = dsetting.c
        for i in range(pop.num_classes):
            m_i = pl.class_mistake_set(i)
            if m_i.size == 0:
                continue
            for beta in betas:
                b = min(beta, c - 1)
                q, alpha = mult_to_additive(c, b, float(graph.masses[m_i].sum()))
                cert = check_additive_expansion(graph, m_i, q, alpha)
                out.append({"lemma": "mult_to_additive", "class": i, "beta": b, "q": q, "alpha": alpha,
                            "holds": cert.holds, "worst": cert.to_dict()["worst"]})
    if usetting.c is not None:
        for xi in xis:
            q = mult_to_constant(usetting.c, xi)
            cert = check_constant_expansion(graph, q, xi)
            out.append({"lemma": "mult_to_constant", "xi": xi, "q": q, "holds": cert.holds, "worst": cert.to_dict()["worst"]})
    return out


# ---------------------------------------------------------------------------
# random qualifying instances


def random_instance(seed, n_range=(6, 12), k_choices=(2, 3), max_labelings=3**10, bridge_prob=0.5) -> tuple[NeighborhoodGraph, Pseudolabeler]:
    """Small planar instance with a random pseudolabeler (no precondition filtering).

    With probability ``bridge_prob`` one light point is placed between two
    adjacent clusters so that the separation mass is small but positive.
    """
    rng = np.random.default_rng(check_seed(seed))
    while True:
        k = int(rng.choice(k_choices))
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        if k**n <= max_labelings and n >= 2 * k + 1:
            break
    bridge = rng.uniform() < bridge_prob
    m = n - 1 if bridge else n
    cuts = np.sort(rng.choice(np.arange(2, m - 1), size=k - 1, replace=False))
    sizes = np.diff(np.concatenate([[0], cuts, [m]]))
    if np.any(sizes < 2):
        sizes = np.full(k, m // k)
        sizes[: m % k] += 1
    gap = float(rng.uniform(2.2, 2.9) if bridge else rng.uniform(1.6, 2.8))
    pop = gen_clustered_instance(k, sizes, spread=float(rng.uniform(0.6, 1.0)), gap=gap,
                                 seed=int(rng.integers(2**32)), dirichlet=float(rng.choice([0.5, 2.0])))
    if bridge:
        i = int(rng.integers(0, k - 1))
        a_idx, b_idx = pop.class_indices(i), pop.class_indices(i + 1)
        dist = np.linalg.norm(pop.points[a_idx][:, None] - pop.points[b_idx][None], axis=2)
        ia, ib = np.unravel_index(np.argmin(dist), dist.shape)
        # midpoint of the closest cross-class pair: within one radius of both when they are close enough
        mid = 0.5 * (pop.points[a_idx[ia]] + pop.points[b_idx[ib]])
        points = np.vstack([pop.points, mid])
        masses = np.append(pop.masses, float(rng.uniform(0.01, 0.05)))
        labels = np.append(pop.labels, i + int(rng.integers(0, 2)))
        order = np.argsort(labels, kind="stable")
        pop = FinitePopulation(points[order], masses[order] / masses.sum(), labels[order], k)
    graph = build_neighborhood_graph(pop, TransformSpec(1.0, overlap="witnessed"))
    assignment = pop.labels.copy()
    flip = rng.uniform(size=n) < rng.uniform(0.0, 0.25)
    for p in np.flatnonzero(flip):
        assignment[p] = (pop.labels[p] + int(rng.integers(1, k))) % k
    return graph, Pseudolabeler(assignment, pop)


def qualifying_instances(seed, count: int, n_range=(6, 12), k_choices=(2, 3), max_draws: int | None = None):
    """Yield ``(draw_index, graph, pl, dsetting, usetting)`` meeting every precondition.

    Draw ``j`` uses the seed sequence child ``j``; output is deterministic.
    """
    ss = np.random.SeedSequence(check_seed(seed))
    found = 0
    draw = 0
    max_draws = max_draws or 50 * count
    while found < count and draw < max_draws:
        child = int(ss.spawn(1)[0].generate_state(1)[0])
        graph, pl = random_instance(child, n_range, k_choices)
        draw += 1
        ds = denoise_setting(graph, pl)
        us = unsup_setting(graph)
        if ds.ok and us.ok:
            found += 1
            yield draw - 1, graph, pl, ds, us


def verify_instance(graph, pl, dsetting=None, usetting=None, alphas=(0.0,)) -> list[TheoremCheckReport]:
    """Every guarantee check on one instance, sharing a single labeling table.

    The additive check runs once per ``alpha``; the separation mass is added
    to ``alphas`` when positive.
    """
    dsetting = dsetting or denoise_setting(graph, pl)
    usetting = usetting or unsup_setting(graph)
    table = LabelingTable(graph)
    reports = [
        check_lemma_pop_denoise(graph, pl, dsetting, table),
        check_theorem_denoise(graph, pl, setting=dsetting, table=table),
        check_theorem_unsup(graph, setting=usetting, table=table),
        check_lemma_unsup(graph, setting=usetting, table=table),
    ]
    if usetting.mu > 0 and usetting.mu not in alphas:
        # lets the ground truth itself meet the fit hypothesis
        alphas = tuple(alphas) + (usetting.mu,)
    for alpha in alphas:
        reports.append(check_theorem_additive_all(graph, pl, None, alpha, table))
    return reports


# ---------------------------------------------------------------------------
# finite-sample terms


def _complexity_sum(net) -> tuple[float, int]:
    q = max(net.dims[1:-1]) if net.depth > 1 else max(net.dims)
    return float(sum(math.sqrt(q) * np.linalg.norm(w) for w in net.weights)), int(q)


def _log_factor(n, net):
    return math.log(n) * math.log(max(net.dims))


def generalization_rhs(net, margins, t: float, delta: float = 0.05) -> dict:
    """Terms of the margin-based bound on the consistency regularizer.

    ``margins`` are robust all-layer margins on the ``n`` sample points.  The
    complexity term is ``log(n) log(d) * sum_i sqrt(q) ||W_i||_F / (t sqrt(n))``
    with ``q`` the widest hidden layer and ``d`` the widest layer; ``zeta =
    sqrt((log(1/delta) + p log n) / n)``.  All constants are set to 1.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    margins = np.asarray(margins, dtype=np.float64).reshape(-1)
    n = margins.shape[0]
    if n < 2:
        raise ValueError("need at least two sample points")
    total_norm, q = _complexity_sum(net)
    empirical = float(np.mean(margins <= t))
    complexity = _log_factor(n, net) * total_norm / (t * math.sqrt(n))
    zeta = math.sqrt((math.log(1 / delta) + net.depth * math.log(n)) / n)
    return {"empirical": empirical, "complexity": complexity, "zeta": zeta, "total": empirical + complexity + zeta,
            "t": float(t), "n": n, "q": q, "depth": net.depth, "delta": float(delta), "note": NOTE}


def _zeta_forms(n, depth, delta, k, c):
    lit = math.sqrt((math.log(1 / delta) + depth * math.log(n)) / n)
    end = math.sqrt((math.log(k / delta) + depth * math.log(n)) / n) / (c - 1)
    return lit, end


def end_to_end_rhs(
    net,
    robust_margins,
    t,
    delta: float = 0.05,
    c: float = 3.0,
    mode: str = "unsup",
    *,
    margins=None,
    predictions=None,
    u=None,
    pl_margins=None,
    err_pl: float | None = None,
) -> dict:
    """Finite-sample guarantee assembled from empirical margin counts.

    ``mode="unsup"``: ``t`` scalar; ``margins``/``predictions`` are the
    all-layer margins of the predicted classes and ``u`` the per-class
    thresholds for the class-mass condition.  ``mode="pl"``: ``t = (t1, t2)``,
    ``pl_margins`` are the all-layer margins at the pseudolabels.  The
    low-order term uses the ``1/(c-1)`` form; the single-term form is also
    recorded.
    """
    if not c > 1:
        raise ValueError("c must exceed 1")
    robust_margins = np.asarray(robust_margins, dtype=np.float64).reshape(-1)
    n = robust_margins.shape[0]
    if n < 2:
        raise ValueError("need at least two sample points")
    total_norm, _ = _complexity_sum(net)
    scale = _log_factor(n, net) * total_norm / math.sqrt(n)
    k = net.dims[-1]
    zeta_single, zeta = _zeta_forms(n, net.depth, delta, k, c)
    out = {"mode": mode, "n": n, "c": float(c), "delta": float(delta), "zeta": zeta, "zeta_single_term": zeta_single, "note": NOTE}
    if mode == "unsup":
        t = float(t)
        if not t > 0:
            raise ValueError("t must be positive")
        emp = float(np.mean(robust_margins <= t))
        bound = max(c / (c - 1), 2.0) * emp + scale / t + zeta
        out.update(t=t, robust_mass=emp, complexity=scale / t, bound=bound)
        if margins is not None:
            margins = np.asarray(margins, dtype=np.float64).reshape(-1)
            predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
            u = np.broadcast_to(np.asarray(1.0 if u is None else u, dtype=np.float64), (k,))
            if np.any(u <= 0):
                raise ValueError("u must be positive")
            mass = np.array([np.mean((predictions == y) & (margins >= u[y])) for y in range(k)])
            need = total_norm * _log_factor(n, net) / (c - 1) * (1 / (u * math.sqrt(n)) + 1 / (t * math.sqrt(n))) + zeta
            lhs = mass - unsup_threshold(c) * emp
            out.update(u=u.tolist(), class_margin_mass=mass.tolist(), condition_lhs=lhs.tolist(),
                       condition_rhs=need.tolist(), condition_met=bool(np.all(lhs >= need)))
        return out
    if mode == "pl":
        t1, t2 = (float(v) for v in t)
        if not (t1 > 0 and t2 > 0):
            raise ValueError("t1 and t2 must be positive")
        if pl_margins is None or err_pl is None:
            raise ValueError("pl mode needs pl_margins and err_pl")
        rob = float(np.mean(robust_margins <= t1))
        fit = float(np.mean(np.asarray(pl_margins, dtype=np.float64) <= t2))
        comp = scale * (1 / t1 + 1 / t2)
        b1 = 2 * rob + fit + comp + zeta
        b2 = 4 * rob + 3 * fit + comp + zeta
        branch1 = b1 - err_pl
        branch2 = b2 - (3 - 4 / (c - 1)) * err_pl
        out.update(t1=t1, t2=t2, robust_mass=rob, fit_mass=fit, complexity=comp, B1=b1, B2=b2,
                   err_pl=float(err_pl), branch1=branch1, branch2=branch2, bound=max(branch1, branch2))
        return out
    raise ValueError(f"unknown mode {mode!r}")
