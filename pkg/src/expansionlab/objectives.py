"""Losses, regularizers and error metrics for labelings and nets.

A labeling is an integer array assigning a class to every population point.
Most functions also accept a 2-D array of labelings (one per row) and then
return one value per row, which is how the exhaustive minimizers evaluate
all ``K**n`` labelings at once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from ._validation import check_labeling
from .dataspace import FinitePopulation, NeighborhoodGraph

_CHUNK = 1 << 15


def _rows(assignments, n, k):
    a = np.asarray(assignments)
    if a.ndim == 1:
        return check_labeling(a, n, k)[None, :], True
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"labelings must have shape (m, {n})")
    if a.size and (a.min() < 0 or a.max() >= k):
        raise ValueError(f"labeling classes must lie in [0, {k})")
    return a.astype(np.int64, copy=False), False


def _out(values, single):
    return float(values[0]) if single else values


@dataclass(frozen=True)
class Pseudolabeler:
    """A fixed labeling together with its mistakes against ground truth."""

    assignment: np.ndarray
    population: FinitePopulation

    def __post_init__(self):
        a = check_labeling(self.assignment, self.population.n, self.population.num_classes)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def mistakes(self) -> np.ndarray:
        """Boolean mask of ``M(G_pl)``."""
        return self.assignment != self.population.labels

    @property
    def mistake_set(self) -> np.ndarray:
        return np.flatnonzero(self.mistakes)

    def class_mistake_set(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.mistakes & (self.population.labels == i))

    @property
    def class_mistake_mass(self) -> np.ndarray:
        """``P_i(M_i)`` for each class ``i``."""
        pop = self.population
        wrong = np.bincount(pop.labels, weights=pop.masses * self.mistakes, minlength=pop.num_classes)
        return wrong / pop.class_masses

    @property
    def a_bar(self) -> float:
        """Worst per-class mistake fraction."""
        return float(self.class_mistake_mass.max())

    @property
    def err(self) -> float:
        return float(self.population.masses[self.mistakes].sum())


# ---------------------------------------------------------------------------
# labeling metrics


def robust_regularizer(graph: NeighborhoodGraph, g) -> float | np.ndarray:
    """``R_B(G)``: mass of points whose transformation set contains a differently labeled point."""
    rows, single = _rows(g, graph.n, graph.population.num_classes)
    src, dst = np.nonzero(graph.b_adj & ~np.eye(graph.n, dtype=bool))
    out = np.empty(rows.shape[0])
    for start in range(0, rows.shape[0], _CHUNK):
        block = rows[start : start + _CHUNK]
        flips = block[:, src] != block[:, dst]
        hit = np.zeros((block.shape[0], graph.n), dtype=bool)
        for e in range(src.shape[0]):
            hit[:, src[e]] |= flips[:, e]
        out[start : start + _CHUNK] = hit @ graph.masses
    return _out(out, single)


def robust_set(graph: NeighborhoodGraph, g) -> np.ndarray:
    """``S_B(G)``: points on which ``G`` is constant over the transformation set."""
    g = check_labeling(g, graph.n, graph.population.num_classes)
    flips = graph.b_adj & (g[:, None] != g[None, :])
    return np.flatnonzero(~flips.any(axis=1))


def disagreement(g, g_other, masses) -> float | np.ndarray:
    """``L_01(G, G')``: mass where the two labelings differ."""
    masses = np.asarray(masses, dtype=np.float64)
    a = np.asarray(g)
    b = np.asarray(g_other)
    diff = (a != b).astype(np.float64) @ masses
    return float(diff) if np.ndim(diff) == 0 else diff


def err(g, pop: FinitePopulation) -> float | np.ndarray:
    """0-1 error against the ground-truth labels."""
    rows, single = _rows(g, pop.n, pop.num_classes)
    return _out((rows != pop.labels).astype(np.float64) @ pop.masses, single)


def per_class_err(g, pop: FinitePopulation, i: int) -> float:
    """Error under the class-conditional measure ``P_i``."""
    g = check_labeling(g, pop.n, pop.num_classes)
    members = pop.labels == i
    return float(pop.masses[members & (g != i)].sum() / pop.masses[members].sum())


def class_conditional_losses(graph: NeighborhoodGraph, g, pl: Pseudolabeler) -> dict:
    """Per-class ``Err_i``, ``L01^(i)(G, G_pl)`` and ``R_B^(i)(G)`` under ``P_i``."""
    pop = graph.population
    g = check_labeling(g, pop.n, pop.num_classes)
    flips = (graph.b_adj & (g[:, None] != g[None, :])).any(axis=1)
    out = {"err": [], "disagreement": [], "robust": []}
    for i in range(pop.num_classes):
        m = pop.labels == i
        w = pop.masses[m] / pop.masses[m].sum()
        out["err"].append(float(w[g[m] != i].sum()))
        out["disagreement"].append(float(w[g[m] != pl.assignment[m]].sum()))
        out["robust"].append(float(w[flips[m]].sum()))
    return {k: np.array(v) for k, v in out.items()}


def _confusions(rows, truth, masses, k):
    """Mass-weighted confusion matrices ``C[m, g, t]`` for each labeling row."""
    conf = np.zeros((rows.shape[0], k, k))
    for t in range(k):
        cols = truth == t
        for gcls in range(k):
            conf[:, gcls, t] = (rows[:, cols] == gcls).astype(np.float64) @ masses[cols]
    return conf


def err_unsup(g, pop: FinitePopulation, method: str = "auto") -> float | np.ndarray:
    """Permutation-invariant error ``min_pi E[1(pi(G(x)) != G*(x))]``.

    ``"enumerate"`` scans all ``K!`` permutations, ``"assignment"`` solves the
    linear assignment on the mass-agreement matrix; ``"auto"`` enumerates for
    ``K <= 7``.
    """
    if method not in ("auto", "enumerate", "assignment"):
        raise ValueError(f"unknown method {method!r}")
    k = pop.num_classes
    rows, single = _rows(g, pop.n, k)
    if method == "auto":
        method = "enumerate" if k <= 7 else "assignment"
    if method == "enumerate" and k > 10:
        raise ValueError("factorial enumeration is limited to K <= 10")
    out = np.empty(rows.shape[0])
    for start in range(0, rows.shape[0], _CHUNK):
        conf = _confusions(rows[start : start + _CHUNK], pop.labels, pop.masses, k)
        if method == "enumerate":
            best = np.zeros(conf.shape[0])
            for perm in itertools.permutations(range(k)):
                agree = conf[:, np.arange(k), list(perm)].sum(axis=1)
                best = np.maximum(best, agree)
        else:
            best = np.array([c[linear_sum_assignment(c, maximize=True)].sum() for c in conf])
        out[start : start + _CHUNK] = 1.0 - best
    return _out(np.clip(out, 0.0, None), single)


# ---------------------------------------------------------------------------
# population objectives


@dataclass(frozen=True)
class PLObjective:
    """Value of the denoising objective and its three components."""

    value: float
    disagreement: float
    robust: float
    err_pl: float
    c: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def pl_objective_weights(c: float) -> tuple[float, float]:
    if not c > 1:
        raise ValueError("c must exceed 1")
    return (c + 1) / (c - 1), 2 * c / (c - 1)


def pl_objective(graph: NeighborhoodGraph, g, pl: Pseudolabeler, c: float):
    """``L(G) = (c+1)/(c-1) L01(G, G_pl) + 2c/(c-1) R_B(G) - Err(G_pl)``.

    Returns a :class:`PLObjective` for a single labeling or the value array
    for a 2-D batch.
    """
    w_dis, w_rob = pl_objective_weights(c)
    rows, single = _rows(g, graph.n, graph.population.num_classes)
    dis = (rows != pl.assignment).astype(np.float64) @ graph.masses
    rob = np.atleast_1d(robust_regularizer(graph, rows))
    value = w_dis * dis + w_rob * rob - pl.err
    if single:
        return PLObjective(float(value[0]), float(dis[0]), float(rob[0]), pl.err, float(c))
    return value


def unsup_threshold(c: float) -> float:
    if not c > 1:
        raise ValueError("c must exceed 1")
    return max(2.0 / (c - 1), 2.0)


def unsup_feasible(graph: NeighborhoodGraph, g, c: float):
    """Class-balance constraint ``min_y P(G = y) > max(2/(c-1), 2) R_B(G)``.

    Returns ``(feasible, margin)`` with ``margin = min_y P(G=y) - threshold``;
    for a batch, two arrays.
    """
    k = graph.population.num_classes
    rows, single = _rows(g, graph.n, k)
    rob = np.atleast_1d(robust_regularizer(graph, rows))
    class_mass = np.stack([(rows == y).astype(np.float64) @ graph.masses for y in range(k)], axis=1)
    margin = class_mass.min(axis=1) - unsup_threshold(c) * rob
    ok = margin > 0
    if single:
        return bool(ok[0]), float(margin[0])
    return ok, margin


# ---------------------------------------------------------------------------
# differentiable losses for nets


@dataclass
class LossWeights:
    """Coefficients of the training surrogate.

    ``consistency`` multiplies the KL between clean and perturbed predictions,
    ``entropy`` the min-entropy term on ignored points and ``balance`` the hinge
    ``sum_y max(0, log rho_target - log mean softmax_y)``.
    """

    consistency: float = 0.0
    entropy: float = 0.0
    balance: float = 0.0
    rho_target: float = 0.0


def net_losses(weights, activation, x, pseudolabels, lw: LossWeights, x_adv=None, deltas=None, ignore=None) -> dict:
    """Loss bundle for one batch; tensors keep their graph for backprop.

    ``x_adv``/``deltas`` supply the perturbed input and layer perturbations for
    the consistency term (its target is the detached clean prediction).
    ``ignore`` marks points whose pseudolabel is dropped in favor of entropy
    minimization; ``pseudolabels=None`` drops the fitting term entirely.
    """
    from .nets import torch_forward

    logits = torch_forward(weights, activation, x)
    keep = torch.ones(x.shape[0], dtype=torch.bool) if ignore is None else ~ignore
    zero = logits.sum() * 0.0
    if pseudolabels is None:
        per_example = torch.zeros(x.shape[0], dtype=logits.dtype)
        pl = zero
    else:
        per_example = torch.nn.functional.cross_entropy(logits, pseudolabels, reduction="none")
        pl = per_example[keep].mean() if keep.any() else zero
    consistency = zero
    if lw.consistency > 0 and (x_adv is not None or deltas is not None):
        adv_logits = torch_forward(weights, activation, x if x_adv is None else x_adv, deltas)
        ref = torch.softmax(logits.detach(), dim=1)
        consistency = (ref * (torch.log_softmax(logits.detach(), dim=1) - torch.log_softmax(adv_logits, dim=1))).sum(1).mean()
    ent = zero
    if lw.entropy > 0 and ignore is not None and ignore.any():
        logp = torch.log_softmax(logits[ignore], dim=1)
        ent = -(logp.exp() * logp).sum(dim=1).mean()
    balance = zero
    if lw.balance > 0 and lw.rho_target > 0:
        # log scale keeps the gradient alive when a class marginal collapses
        log_marginal = torch.logsumexp(torch.log_softmax(logits, dim=1), dim=0) - math.log(x.shape[0])
        balance = torch.relu(math.log(lw.rho_target) - log_marginal).sum()
    total = pl + lw.consistency * consistency + lw.entropy * ent + lw.balance * balance
    return {
        "total": total,
        "pl": pl,
        "consistency": consistency,
        "entropy": ent,
        "balance": balance,
        "per_example": per_example.detach(),
        "logits": logits,
    }
