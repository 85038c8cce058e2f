"""Minimizers of the labeling objectives and the self-training loop for nets.

The exact minimizers enumerate every labeling in lexicographic order, so ties
resolve to the lexicographically smallest assignment.  Above the enumeration
budget a first-improvement local search is used and results are flagged
``exact=False``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin

from ._validation import check_seed
from .dataspace import FinitePopulation, NeighborhoodGraph
from .nets import FeedforwardNet, predict, random_net, torch_forward
from .objectives import (
    LossWeights,
    Pseudolabeler,
    disagreement,
    err,
    err_unsup,
    net_losses,
    pl_objective,
    robust_regularizer,
    unsup_feasible,
    unsup_threshold,
)

EXACT_BUDGET = 20_000_000
HISTORY_COLUMNS = (
    "step",
    "loss",
    "err",
    "err_unsup",
    "disagreement_pl",
    "r_b_estimate",
    "tau_i",
    "ignored_fraction",
)
_CHUNK = 1 << 15

# ---------------------------------------------------------------------------
# pseudolabelers


def make_pseudolabeler(
    pop: FinitePopulation,
    target_per_class_err: float,
    seed=0,
    mode: str = "random",
    graph: NeighborhoodGraph | None = None,
    num_clusters: int = 1,
) -> Pseudolabeler:
    """Flip labels on a subset of mass about ``target_per_class_err`` in every class.

    ``mode="random"`` flips a random subset; ``mode="clustered"`` flips the
    points nearest to ``num_clusters`` random seed points of the class (with a
    ``graph``, growth follows same-class neighborhood edges so each cluster is
    n-connected).  Each class's flipped mass is the largest prefix not
    exceeding the target, hence within one point mass of it.  Flipped points
    get a random wrong class (one shared class per cluster).
    """
    a = float(target_per_class_err)
    if not 0.0 <= a <= 1.0:
        raise ValueError("target_per_class_err must lie in [0, 1]")
    if mode not in ("random", "clustered"):
        raise ValueError(f"unknown mode {mode!r}")
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    k = pop.num_classes
    if k < 2 and a > 0:
        raise ValueError("cannot flip labels with a single class")
    rng = np.random.default_rng(check_seed(seed))
    assignment = pop.labels.copy()
    for i in range(k):
        members = pop.class_indices(i)
        w = pop.masses[members] / pop.masses[members].sum()
        if mode == "random":
            order = [rng.permutation(members.shape[0])]
        else:
            order = _cluster_orders(pop, members, num_clusters, rng, graph)
        chosen, groups = _fill_clusters(order, w, a)
        rest = np.setdiff1d(np.concatenate(order), chosen)
        gap = a - w[chosen].sum()
        if gap > 1e-12 and (rest.size == 0 or gap >= w[rest].max()):
            raise ValueError(f"cannot reach mistake mass {a} in class {i} within one point mass")
        others = np.array([j for j in range(k) if j != i])
        for grp in groups:
            if grp:
                assignment[members[grp]] = rng.choice(others)
    return Pseudolabeler(assignment, pop)


def _cluster_orders(pop, members, num_clusters, rng, graph):
    pts = pop.points[members]
    seeds = rng.choice(members.shape[0], size=min(num_clusters, members.shape[0]), replace=False)
    orders = []
    for s in seeds:
        dist = np.linalg.norm(pts - pts[s], axis=1)
        if graph is None:
            orders.append(np.argsort(dist, kind="stable"))
            continue
        adj = graph.n_adj[np.ix_(members, members)]
        # grow by nearest frontier point so the flipped set stays connected
        seen = np.zeros(members.shape[0], dtype=bool)
        seen[s] = True
        out = [s]
        frontier = adj[s].copy()
        frontier[s] = False
        while frontier.any():
            cand = np.flatnonzero(frontier & ~seen)
            if cand.size == 0:
                break
            nxt = cand[np.argmin(dist[cand])]
            seen[nxt] = True
            out.append(nxt)
            frontier |= adj[nxt]
            frontier &= ~seen
        orders.append(np.array(out))
    return orders


def _fill_clusters(orders, w, a):
    """Round-robin over cluster orders, adding points while the mass stays <= a."""
    total = 0.0
    taken = np.zeros(w.shape[0], dtype=bool)
    groups = [[] for _ in orders]
    pos = [0] * len(orders)
    active = True
    while active:
        active = False
        for c, order in enumerate(orders):
            while pos[c] < len(order) and taken[order[pos[c]]]:
                pos[c] += 1
            if pos[c] >= len(order):
                continue
            j = order[pos[c]]
            if total + w[j] > a + 1e-12:
                continue
            taken[j] = True
            total += w[j]
            groups[c].append(int(j))
            active = True
    chosen = [j for g in groups for j in g]
    return chosen, groups


# ---------------------------------------------------------------------------
# labeling minimizers


@dataclass
class MinimizerResult:
    labeling: np.ndarray | None
    value: float
    exact: bool
    feasible: bool = True
    evaluated: int = 0

    def to_dict(self) -> dict:
        return {
            "labeling": None if self.labeling is None else self.labeling.tolist(),
            "value": None if not np.isfinite(self.value) else float(self.value),
            "exact": self.exact,
            "feasible": self.feasible,
            "evaluated": self.evaluated,
        }


def labeling_blocks(n: int, k: int, chunk: int = _CHUNK):
    """Yield ``(start, rows)`` covering all ``k**n`` labelings in lexicographic order."""
    total = k**n
    powers = k ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        yield start, (idx[:, None] // powers[None, :]) % k


def _exact_argmin(n, k, evaluate):
    best_val, best_row, count = np.inf, None, 0
    for _, rows in labeling_blocks(n, k):
        vals = evaluate(rows)
        count += rows.shape[0]
        j = int(np.argmin(vals))
        # strict improvement keeps the earliest (lexicographically smallest) minimizer
        if vals[j] < best_val:
            best_val, best_row = float(vals[j]), rows[j].copy()
    return best_row, best_val, count


def _local_search(n, k, evaluate, starts, restarts, rng):
    best_val, best_row, count = np.inf, None, 0
    inits = [np.asarray(s, dtype=np.int64) for s in starts]
    inits += [rng.integers(0, k, n) for _ in range(restarts)]
    for g in inits:
        g = g.copy()
        val = float(evaluate(g[None, :])[0])
        count += 1
        improved = True
        while improved:
            improved = False
            for p in rng.permutation(n):
                cands = np.repeat(g[None, :], k - 1, axis=0)
                cands[:, p] = [c for c in range(k) if c != g[p]]
                vals = evaluate(cands)
                count += k - 1
                j = int(np.argmin(vals))
                if vals[j] < val - 1e-15:
                    g, val, improved = cands[j], float(vals[j]), True
                    break
        if val < best_val or (val == best_val and tuple(g) < tuple(best_row)):
            best_val, best_row = val, g
    return best_row, best_val, count


def brute_force_min_pl(
    graph: NeighborhoodGraph, pl: Pseudolabeler, c: float, budget: int = EXACT_BUDGET, restarts: int = 20, seed=0, mode: str = "auto"
) -> MinimizerResult:
    """Minimize the pseudolabel denoising objective over all labelings.

    ``mode="exact"`` raises when ``K**n`` exceeds ``budget``; ``"auto"`` falls
    back to local search there.
    """
    n, k = graph.n, graph.population.num_classes

    def evaluate(rows):
        return pl_objective(graph, rows, pl, c)

    if _use_exact(n, k, budget, mode):
        row, val, count = _exact_argmin(n, k, evaluate)
        return MinimizerResult(row, val, True, True, count)
    rng = np.random.default_rng(check_seed(seed))
    row, val, count = _local_search(n, k, evaluate, [pl.assignment], restarts, rng)
    return MinimizerResult(row, val, False, True, count)


def brute_force_min_unsup(
    graph: NeighborhoodGraph, c: float, budget: int = EXACT_BUDGET, restarts: int = 20, seed=0, mode: str = "auto"
) -> MinimizerResult:
    """Minimize ``R_B(G)`` over labelings meeting the class-balance constraint.

    Returns ``feasible=False`` (and no labeling) when no labeling qualifies.
    """
    n, k = graph.n, graph.population.num_classes

    def evaluate(rows):
        ok, _ = unsup_feasible(graph, rows, c)
        vals = np.atleast_1d(robust_regularizer(graph, rows)).astype(np.float64)
        vals[~ok] = np.inf
        return vals

    if _use_exact(n, k, budget, mode):
        row, val, count = _exact_argmin(n, k, evaluate)
        exact = True
    else:
        rng = np.random.default_rng(check_seed(seed))

        def guided(rows):
            # infeasible rows ranked by constraint violation so search can reach the feasible set
            ok, margin = unsup_feasible(graph, rows, c)
            vals = np.atleast_1d(robust_regularizer(graph, rows)).astype(np.float64)
            return np.where(ok, vals, 10.0 - margin)

        row, val, count = _local_search(n, k, guided, [graph.labels], restarts, rng)
        exact = False
        if val >= 10.0:
            val = np.inf
    if not np.isfinite(val):
        return MinimizerResult(None, np.inf, exact, False, count)
    return MinimizerResult(row, val, exact, True, count)


def _use_exact(n, k, budget, mode):
    if mode not in ("auto", "exact", "local"):
        raise ValueError(f"unknown mode {mode!r}")
    fits = k**n <= budget
    if mode == "exact" and not fits:
        raise ValueError(f"{k}**{n} labelings exceed the exact budget {budget}")
    return mode != "local" and fits


# ---------------------------------------------------------------------------
# adversarial perturbations


def _kl_rows(ref_logp, logits):
    return (ref_logp.exp() * (ref_logp - torch.log_softmax(logits, dim=1))).sum(dim=1)


def _vat(weights, activation, x, radius, gen, xi=1e-6):
    with torch.no_grad():
        ref = torch.log_softmax(torch_forward(weights, activation, x), dim=1)
    u = torch.randn(x.shape, generator=gen, dtype=x.dtype)
    u = u / torch.linalg.vector_norm(u, dim=1, keepdim=True)
    d = (xi * radius * u).requires_grad_(True)
    kl = _kl_rows(ref, torch_forward([w.detach() for w in weights], activation, x + d)).sum()
    (g,) = torch.autograd.grad(kl, d)
    norms = torch.linalg.vector_norm(g, dim=1, keepdim=True)
    dead = (norms <= 1e-300).reshape(-1)
    direction = torch.where(dead[:, None], u, g / torch.where(norms > 0, norms, torch.ones_like(norms)))
    return (x + radius * direction).detach(), ref


def vat_perturbation(net: FeedforwardNet, x, radius: float, seed=0) -> np.ndarray:
    """One power step on ``KL(F(x) || F(x + d))`` rescaled to norm ``radius``.

    The step starts from a seeded random unit direction offset by
    ``1e-6 * radius``; rows whose gradient vanishes keep that direction.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    xb = torch.as_tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    gen = torch.Generator().manual_seed(check_seed(seed))
    out, _ = _vat(net.torch_weights(), net.activation, xb, float(radius), gen)
    out = out.numpy()
    return out[0] if np.ndim(x) == 1 else out


def _amo(weights, activation, x_adv, ref_logp, step):
    ws = [w.detach() for w in weights]
    deltas = [torch.zeros(x_adv.shape[0], w.shape[0], dtype=x_adv.dtype, requires_grad=True) for w in ws[:-1]]
    kl = _kl_rows(ref_logp, torch_forward(ws, activation, x_adv, deltas + [None])).mean()
    grads = torch.autograd.grad(kl, deltas)
    return [step * g.detach() for g in grads] + [None]


def amo_step(net: FeedforwardNet, x, x_adv=None, step: float = 1.0) -> list:
    """One ascent step on the batch-mean consistency KL over hidden-layer perturbations.

    Perturbations start at zero and enter through the norm-scaled recurrence.
    Returns one ``(batch, width)`` array per hidden layer (the output layer is
    left unperturbed).  With ``x_adv=None`` the clean input is used, where the
    gradient vanishes and the perturbations are zero.
    """
    xb = torch.as_tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if x_adv is None:
        # the KL is minimized at the clean input, so its gradient is exactly zero
        return [np.zeros((xb.shape[0], w.shape[0])) for w in net.weights[:-1]]
    xa = torch.as_tensor(np.atleast_2d(np.asarray(x_adv, dtype=np.float64)))
    ws = net.torch_weights()
    with torch.no_grad():
        ref = torch.log_softmax(torch_forward(ws, net.activation, xb), dim=1)
    deltas = _amo(ws, net.activation, xa, ref, float(step))
    return [d.numpy() for d in deltas[:-1]]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    """Hyperparameters of the self-training loop.

    ``vat_weight`` is the consistency coefficient (0 disables the term);
    ``tau_final`` > 0 enables quantile-ignore min-entropy.  The loss-quantile
    tracker reuses the weight EMA decay unless ``quantile_decay`` is set.
    ``rho_target=None`` sets the balance target to ``1.05`` times the
    constraint threshold at the current robustness estimate, floored at
    ``rho_floor``.
    """

    steps: int = 1500
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    vat_weight: float = 10.0
    vat_radius: float = 0.1
    vat_steps: int = 1
    amo_enabled: bool = False
    amo_step: float = 1.0
    tau_final: float = 0.0
    entropy_weight: float = 1.0
    ema_decay: float = 0.999
    quantile_decay: float | None = None
    balance_weight: float = 1.0
    rho_target: float | None = None
    rho_floor: float = 0.0
    c: float = 3.0
    log_every: int = 100
    rb_samples: int = 4
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("steps", "batch_size", "log_every", "rb_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("lr", "vat_radius", "amo_step", "ema_decay"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("vat_weight", "weight_decay", "entropy_weight", "balance_weight", "rho_floor", "momentum"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.vat_steps != 1:
            raise ValueError("only a single VAT power step is supported")
        if not 0.0 <= self.tau_final < 1.0:
            raise ValueError("tau_final must lie in [0, 1)")
        if not self.ema_decay < 1 or (self.quantile_decay is not None and not 0 < self.quantile_decay < 1):
            raise ValueError("decays must lie in (0, 1)")
        if not self.c > 1:
            raise ValueError("c must exceed 1")
        if self.rho_target is not None and self.rho_target < 0:
            raise ValueError("rho_target must be nonnegative")
        check_seed(self.seed)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown train config keys: {sorted(extra)}")
        return cls(**doc)


@dataclass
class EmaState:
    """Shadow weights plus the running loss quantile and its per-step trace."""

    shadow: list
    decay: float
    quantile_decay: float
    quantile: float | None = None
    batch_quantiles: list = field(default_factory=list)
    quantile_trace: list = field(default_factory=list)

    def update_weights(self, weights):
        with torch.no_grad():
            for s, w in zip(self.shadow, weights):
                s.mul_(self.decay).add_(w.detach(), alpha=1.0 - self.decay)

    def update_quantile(self, q: float) -> float:
        q = max(float(q), 0.0)
        self.quantile = q if self.quantile is None else self.quantile_decay * self.quantile + (1 - self.quantile_decay) * q
        self.batch_quantiles.append(q)
        self.quantile_trace.append(self.quantile)
        return self.quantile


def replay_quantiles(batch_quantiles, decay: float) -> np.ndarray:
    """Recompute the EMA quantile trace from logged per-step batch quantiles."""
    out, cur = [], None
    for q in batch_quantiles:
        cur = q if cur is None else decay * cur + (1 - decay) * q
        out.append(cur)
    return np.array(out)


@dataclass
class TrainResult:
    net: FeedforwardNet
    history: list
    ema: EmaState | None
    config: TrainConfig
    restarts: list = field(default_factory=list)

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def history_to_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([_fmt(row[c]) for c in HISTORY_COLUMNS])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def estimate_robust_regularizer(net: FeedforwardNet, pop: FinitePopulation, radius: float, samples: int = 4, seed=0, graph=None) -> float:
    """``R_B`` of the net's predictions: exact on a graph, else ball sampling."""
    pred = predict(net, pop.points)
    if graph is not None:
        return float(robust_regularizer(graph, pred))
    rng = np.random.default_rng(check_seed(seed))
    flip = np.zeros(pop.n, dtype=bool)
    for _ in range(samples):
        u = rng.standard_normal(pop.points.shape)
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = radius * rng.uniform(0, 1, (pop.n, 1)) ** (1.0 / pop.dim)
        flip |= predict(net, pop.points + rad * u) != pred
    return float(pop.masses[flip].sum())


def _cosine_lr(base, t, total):
    return base * 0.5 * (1.0 + math.cos(math.pi * t / total))


def _train(net, pop, pseudolabels, cfg: TrainConfig, graph=None, pl=None):
    cfg.validate()
    if net.dims[0] != pop.dim or net.num_classes != pop.num_classes:
        raise ValueError(f"net dims {net.dims} do not fit a {pop.dim}-d, {pop.num_classes}-class population")
    seed = check_seed(cfg.seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    ws = net.torch_weights(requires_grad=True)
    opt = torch.optim.SGD(ws, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    minent = pseudolabels is not None and cfg.tau_final > 0
    qdecay = cfg.ema_decay if cfg.quantile_decay is None else cfg.quantile_decay
    ema = EmaState([w.detach().clone() for w in ws], cfg.ema_decay, qdecay)
    x_all = torch.tensor(pop.points)
    y_all = None if pseudolabels is None else torch.tensor(np.asarray(pseudolabels, dtype=np.int64))
    thr = unsup_threshold(cfg.c)
    history = []

    def snapshot(step, loss, tau, ignored):
        cur = net.with_weights([w.detach().numpy() for w in ws])
        pred = predict(cur, pop.points)
        rb = estimate_robust_regularizer(cur, pop, cfg.vat_radius, cfg.rb_samples, seed, graph)
        row = {
            "step": step,
            "loss": loss,
            "err": err(pred, pop),
            "err_unsup": err_unsup(pred, pop),
            "disagreement_pl": disagreement(pred, pseudolabels, pop.masses) if pseudolabels is not None else float("nan"),
            "r_b_estimate": rb,
            "tau_i": tau,
            "ignored_fraction": ignored,
        }
        history.append(row)
        return rb

    rb = snapshot(0, float("nan"), 0.0, 0.0)
    for t in range(cfg.steps):
        for group in opt.param_groups:
            group["lr"] = _cosine_lr(cfg.lr, t, cfg.steps)
        idx = torch.as_tensor(rng.choice(pop.n, size=cfg.batch_size, p=pop.masses))
        xb = x_all[idx]
        yb = None if y_all is None else y_all[idx]
        x_adv = deltas = None
        if cfg.vat_weight > 0:
            x_adv, ref = _vat(ws, net.activation, xb, cfg.vat_radius, gen)
            if cfg.amo_enabled:
                deltas = _amo(ws, net.activation, x_adv, ref, cfg.amo_step)
        tau = cfg.tau_final * min(1.0, t / max(cfg.steps - 1, 1)) if minent else 0.0
        ignore = None
        if yb is None:
            ignore = torch.ones(xb.shape[0], dtype=torch.bool)
        elif minent and tau > 0:
            with torch.no_grad():
                ema_loss = torch.nn.functional.cross_entropy(torch_forward(ema.shadow, net.activation, xb), yb, reduction="none")
            q = ema.update_quantile(float(np.quantile(ema_loss.numpy(), 1.0 - tau)))
            ignore = ema_loss > q
        if cfg.rho_target is not None:
            rho = cfg.rho_target
        else:
            rho = max(1.05 * thr * rb, cfg.rho_floor)
        lw = LossWeights(cfg.vat_weight, cfg.entropy_weight, cfg.balance_weight, rho)
        out = net_losses(ws, net.activation, xb, yb, lw, x_adv=x_adv, deltas=deltas, ignore=ignore)
        total = out["total"]
        if not torch.isfinite(total):
            out = {k: v.detach() for k, v in out.items()}
            raise FloatingPointError(
                f"loss diverged at step {t}: pl={float(out['pl']):.4g} consistency={float(out['consistency']):.4g} "
                f"entropy={float(out['entropy']):.4g} balance={float(out['balance']):.4g} lr={opt.param_groups[0]['lr']:.4g}"
            )
        opt.zero_grad()
        total.backward()
        opt.step()
        ema.update_weights(ws)
        step = t + 1
        if step % cfg.log_every == 0 or step == cfg.steps:
            ignored = 0.0 if ignore is None or yb is None else float(ignore.double().mean())
            rb = snapshot(step, float(total.detach()), tau, ignored)
    final = net.with_weights([w.detach().numpy() for w in ws])
    return TrainResult(final, history, ema if minent else None, cfg)


def train_pseudolabel(net: FeedforwardNet, pop: FinitePopulation, pl, cfg: TrainConfig | None = None, graph=None) -> TrainResult:
    """Fit pseudolabels with the enabled consistency, AMO and MinEnt components.

    ``pl`` is a :class:`Pseudolabeler` or a plain labeling array.  History rows
    are logged every ``cfg.log_every`` steps against the ground truth of
    ``pop``.
    """
    cfg = TrainConfig() if cfg is None else cfg
    labels = pl.assignment if isinstance(pl, Pseudolabeler) else np.asarray(pl, dtype=np.int64)
    if labels.shape != (pop.n,):
        raise ValueError("pseudolabels must have one entry per population point")
    return _train(net, pop, labels, cfg, graph)


def train_unsup(
    net: FeedforwardNet, pop: FinitePopulation, cfg: TrainConfig | None = None, graph=None, restarts: int = 1, init_scale: float = 1.0
) -> TrainResult:
    """Minimize consistency plus entropy plus the class-balance hinge, no labels.

    With ``restarts > 1`` further runs start from fresh seeded random nets of
    the same shape (weight scale ``init_scale``); the returned run is the one
    with the smallest final robustness estimate among those meeting the
    class-balance constraint (all runs if none do).  ``extra`` summaries of
    every run are attached as ``result.restarts``.
    """
    cfg = TrainConfig(rho_floor=0.8 / pop.num_classes) if cfg is None else cfg
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    seeds = np.random.SeedSequence(check_seed(cfg.seed)).generate_state(restarts, dtype=np.uint32)
    thr = unsup_threshold(cfg.c)
    runs, summary = [], []
    for j in range(restarts):
        start = net if j == 0 else random_net(net.dims, net.activation, int(seeds[j]), init_scale)
        run_cfg = cfg if j == 0 else TrainConfig.from_dict({**cfg.to_dict(), "seed": int(seeds[j])})
        res = _train(start, pop, None, run_cfg, graph)
        pred = predict(res.net, pop.points)
        smallest = np.bincount(pred, weights=pop.masses, minlength=pop.num_classes).min()
        rb = res.history[-1]["r_b_estimate"]
        runs.append(res)
        summary.append({"seed": run_cfg.seed, "r_b_estimate": rb, "feasible": bool(smallest > thr * rb)})
    pool = [j for j in range(restarts) if summary[j]["feasible"]] or list(range(restarts))
    best = min(pool, key=lambda j: (summary[j]["r_b_estimate"], j))
    out = runs[best]
    out.restarts = summary
    return out


# ---------------------------------------------------------------------------
# analysis


def distance_vs_correction(pop_eval: FinitePopulation, pl: Pseudolabeler, trained_net: FeedforwardNet, bins=5) -> dict:
    """Correction rate of pseudolabel mistakes binned by distance to correct neighbors.

    Each mistaken point is placed by its distance to the nearest correctly
    pseudolabeled point of the same true class; ``bins`` is a count
    (quantile edges) or an explicit edge array.  Empty bins get rate NaN.
    """
    if pl.population.n != pop_eval.n:
        raise ValueError("pseudolabeler and population sizes differ")
    mist = pl.mistakes
    idx = np.flatnonzero(mist)
    dist = np.full(idx.shape[0], np.inf)
    for i in range(pop_eval.num_classes):
        ok = np.flatnonzero(~mist & (pop_eval.labels == i))
        sel = pop_eval.labels[idx] == i
        if ok.size and sel.any():
            dist[sel] = cdist(pop_eval.points[idx[sel]], pop_eval.points[ok]).min(axis=1)
    corrected = predict(trained_net, pop_eval.points[idx]) == pop_eval.labels[idx] if idx.size else np.zeros(0, bool)
    finite = np.isfinite(dist)
    d, cr = dist[finite], corrected[finite]
    if np.ndim(bins) == 0:
        nb = int(bins)
        if nb < 1:
            raise ValueError("bins must be positive")
        edges = np.quantile(d, np.linspace(0, 1, nb + 1)) if d.size else np.linspace(0, 1, nb + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) < 0):
            raise ValueError("bin edges must be a nondecreasing 1-D array")
    which = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, edges.size - 2)
    counts = np.bincount(which, minlength=edges.size - 1)
    hits = np.bincount(which, weights=cr.astype(np.float64), minlength=edges.size - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return {
        "edges": edges,
        "centers": 0.5 * (edges[:-1] + edges[1:]),
        "counts": counts,
        "rates": rates,
        "distances": dist,
        "corrected": corrected,
    }


# ---------------------------------------------------------------------------
# scikit-learn style wrappers


def _uniform_population(x, labels, k):
    n = x.shape[0]
    return FinitePopulation(x, np.full(n, 1.0 / n), labels, k)


class SelfTrainingClassifier(BaseEstimator, ClassifierMixin):
    """Train an MLP on (possibly noisy) pseudolabels with consistency regularization.

    ``fit(X, y)`` treats ``y`` as the pseudolabels; ``history_`` therefore
    measures error against those same labels.
    """

    def __init__(
        self,
        hidden=(32, 32),
        activation="softplus",
        steps=1500,
        batch_size=128,
        lr=0.1,
        vat_weight=10.0,
        vat_radius=0.1,
        amo=False,
        tau=0.0,
        weight_decay=5e-4,
        init_scale=1.0,
        seed=0,
    ):
        self.hidden = hidden
        self.activation = activation
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.vat_weight = vat_weight
        self.vat_radius = vat_radius
        self.amo = amo
        self.tau = tau
        self.weight_decay = weight_decay
        self.init_scale = init_scale
        self.seed = seed

    def _config(self, **extra):
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            vat_weight=self.vat_weight,
            vat_radius=self.vat_radius,
            amo_enabled=self.amo,
            tau_final=self.tau,
            weight_decay=self.weight_decay,
            seed=self.seed,
            log_every=max(self.steps // 10, 1),
            **extra,
        )

    def fit(self, X, y):
        x = np.asarray(X, dtype=np.float64)
        self.classes_, yi = np.unique(np.asarray(y), return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least two classes")
        k = self.classes_.shape[0]
        pop = _uniform_population(x, yi, k)
        net = random_net([x.shape[1], *self.hidden, k], self.activation, self.seed, self.init_scale)
        res = train_pseudolabel(net, pop, yi, self._config())
        self.net_, self.history_, self.n_features_in_ = res.net, res.history, x.shape[1]
        return self

    def decision_function(self, X):
        from .nets import forward

        return forward(self.net_, np.asarray(X, dtype=np.float64))

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[predict(self.net_, np.asarray(X, dtype=np.float64))]


class ConsistencyClusterer(BaseEstimator, ClusterMixin):
    """Unsupervised labeling by consistency regularization under a balance constraint."""

    def __init__(
        self,
        n_clusters=2,
        hidden=(32, 32),
        activation="softplus",
        steps=1500,
        batch_size=128,
        lr=0.1,
        vat_weight=10.0,
        vat_radius=0.2,
        balance_weight=1.0,
        entropy_weight=1.0,
        init_scale=2.0,
        restarts=3,
        seed=0,
    ):
        self.n_clusters = n_clusters
        self.hidden = hidden
        self.activation = activation
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.vat_weight = vat_weight
        self.vat_radius = vat_radius
        self.balance_weight = balance_weight
        self.entropy_weight = entropy_weight
        self.init_scale = init_scale
        self.restarts = restarts
        self.seed = seed

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=np.float64)
        k = int(self.n_clusters)
        if k < 2:
            raise ValueError("n_clusters must be >= 2")
        # ground truth is unknown; a round-robin labeling only fills the population slot
        pop = _uniform_population(x, np.arange(x.shape[0]) % k, k)
        cfg = TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            vat_weight=self.vat_weight,
            vat_radius=self.vat_radius,
            balance_weight=self.balance_weight,
            entropy_weight=self.entropy_weight,
            rho_floor=0.9 / k,
            seed=self.seed,
            log_every=max(self.steps // 10, 1),
        )
        net = random_net([x.shape[1], *self.hidden, k], self.activation, self.seed, self.init_scale)
        res = train_unsup(net, pop, cfg, restarts=self.restarts, init_scale=self.init_scale)
        self.net_, self.n_features_in_ = res.net, x.shape[1]
        self.labels_ = predict(self.net_, x)
        return self

    def predict(self, X):
        return predict(self.net_, np.asarray(X, dtype=np.float64))
