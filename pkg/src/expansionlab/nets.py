"""Feedforward nets, the layer-perturbed forward pass and all-layer margins.

Gradients come from torch autograd in float64.  A network is
``F(x) = W_p phi(... phi(W_1 x))`` without biases.  The perturbed pass adds
``delta_i * ||h_{i-1}||`` after the ``i``-th matrix product, with
``h_0 = x`` and ``h_i`` the perturbed pre-activation of layer ``i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ._validation import check_seed

torch.set_default_dtype(torch.float64)

# sup |phi''|, the Lipschitz constant of the activation's derivative
ACTIVATION_CURVATURE = {"softplus": 0.25, "tanh": 4.0 / (3.0 * math.sqrt(3.0))}


def _phi(name):
    if name == "softplus":
        return torch.nn.functional.softplus
    if name == "tanh":
        return torch.tanh
    raise ValueError(f"unsupported activation {name!r}")


def _phi_prime_np(name, z):
    if name == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return 1.0 - np.tanh(z) ** 2


def _phi_np(name, z):
    if name == "softplus":
        return np.logaddexp(0.0, z)
    return np.tanh(z)


class FeedforwardNet:
    """Bias-free multilayer perceptron ``W_p phi(... phi(W_1 x))``.

    Parameters
    ----------
    weights : sequence of 2-D arrays
        ``weights[i]`` maps width ``dims[i]`` to ``dims[i + 1]``.
    activation : {"softplus", "tanh"}
    """

    def __init__(self, weights: Sequence[np.ndarray], activation: str = "softplus"):
        if activation not in ACTIVATION_CURVATURE:
            raise ValueError(f"unsupported activation {activation!r}")
        ws = [np.array(w, dtype=np.float64, copy=True) for w in weights]
        if not ws:
            raise ValueError("need at least one weight matrix")
        for i, w in enumerate(ws):
            if w.ndim != 2 or not np.all(np.isfinite(w)):
                raise ValueError(f"weight {i} must be a finite 2-D array")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"weight {i} expects width {w.shape[1]}, previous layer gives {ws[i - 1].shape[0]}")
            w.setflags(write=False)
        self.weights = tuple(ws)
        self.activation = activation

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def q_max(self) -> int:
        return max(self.dims[1:-1], default=self.dims[-1])

    @property
    def curvature(self) -> float:
        return ACTIVATION_CURVATURE[self.activation]

    def with_weights(self, weights) -> "FeedforwardNet":
        return FeedforwardNet(weights, self.activation)

    def torch_weights(self, requires_grad=False) -> list[torch.Tensor]:
        return [torch.tensor(w, requires_grad=requires_grad) for w in self.weights]

    def to_dict(self) -> dict:
        return {"dims": self.dims, "activation": self.activation, "weights": [w.tolist() for w in self.weights]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "FeedforwardNet":
        net = cls([np.asarray(w, dtype=np.float64) for w in doc["weights"]], doc.get("activation", "softplus"))
        if "dims" in doc and list(doc["dims"]) != net.dims:
            raise ValueError(f"declared dims {doc['dims']} disagree with weights {net.dims}")
        return net

    @classmethod
    def from_json(cls, text: str) -> "FeedforwardNet":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"FeedforwardNet(dims={self.dims}, activation={self.activation!r})"


def random_net(dims: Sequence[int], activation="softplus", seed=0, scale=1.0) -> FeedforwardNet:
    """Gaussian weights with variance ``scale**2 / fan_in``."""
    rng = np.random.default_rng(check_seed(seed))
    ws = [scale * rng.standard_normal((dims[i + 1], dims[i])) / math.sqrt(dims[i]) for i in range(len(dims) - 1)]
    return FeedforwardNet(ws, activation)


# ---------------------------------------------------------------------------
# forward passes


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.dims[0]:
        raise ValueError(f"input dimension {xb.shape[-1]} does not match the net's {net.dims[0]}")
    return xb, single


def torch_forward(weights, activation, x, deltas=None):
    """Batched (perturbed) forward pass on tensors.

    ``deltas[i]`` has shape ``(batch, width_i)`` (or is ``None`` for no
    perturbation at that layer) and enters via the norm-scaled recurrence.
    """
    phi = _phi(activation)
    h = x @ weights[0].T
    if deltas is not None and deltas[0] is not None:
        h = h + deltas[0] * torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    for i in range(1, len(weights)):
        nxt = phi(h) @ weights[i].T
        if deltas is not None and deltas[i] is not None:
            nxt = nxt + deltas[i] * torch.linalg.vector_norm(h, dim=-1, keepdim=True)
        h = nxt
    return h


def forward(net: FeedforwardNet, x) -> np.ndarray:
    """Logits ``F(x)`` for one input or a batch of rows."""
    xb, single = _as_batch(net, x)
    with torch.no_grad():
        out = torch_forward(net.torch_weights(), net.activation, torch.tensor(xb)).numpy()
    return out[0] if single else out


def predict(net: FeedforwardNet, x) -> np.ndarray:
    """Argmax class; ties go to the smallest index."""
    return np.argmax(forward(net, x), axis=-1)


def perturbed_forward(net: FeedforwardNet, x, deltas) -> np.ndarray:
    """``F(x, delta)`` following the norm-scaled perturbation recurrence."""
    xb, single = _as_batch(net, x)
    if len(deltas) != net.depth:
        raise ValueError(f"need {net.depth} perturbation vectors, got {len(deltas)}")
    ds = []
    for i, d in enumerate(deltas):
        d = np.asarray(d, dtype=np.float64)
        d = d[None, :] if d.ndim == 1 else d
        if d.shape[-1] != net.dims[i + 1]:
            raise ValueError(f"delta {i} has width {d.shape[-1]}, layer has {net.dims[i + 1]}")
        ds.append(torch.from_numpy(np.broadcast_to(d, (xb.shape[0], d.shape[-1])).copy()))
    with torch.no_grad():
        out = torch_forward(net.torch_weights(), net.activation, torch.from_numpy(xb), ds).numpy()
    return out[0] if single else out


def logit_gap(logits, y) -> np.ndarray:
    """``gamma(F(x), y) = F(x)_y - max_{j != y} F(x)_j`` row-wise."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.broadcast_to(np.asarray(y), (z.shape[0],))
    rows = np.arange(z.shape[0])
    other = z.copy()
    other[rows, y] = -np.inf
    out = z[rows, y] - other.max(axis=1)
    return out if np.ndim(logits) > 1 else out[0]


def _torch_gap(logits, y):
    own = logits.gather(1, y[:, None])[:, 0]
    mask = torch.nn.functional.one_hot(y, logits.shape[1]).bool()
    other = logits.masked_fill(mask, -torch.inf).max(dim=1).values
    return own - other


def _misclassified(logits, y):
    """Strict misclassification under the lexicographic tie-break."""
    return torch.argmax(logits, dim=1) != y


# ---------------------------------------------------------------------------
# losses and gradients

LOSSES = ("cross_entropy", "kl", "min_entropy", "margin_penalty")


def cross_entropy(logits, y):
    return torch.nn.functional.cross_entropy(logits, y)


def kl_to_reference(ref_probs, logits):
    """Mean ``KL(ref || softmax(logits))``."""
    logp = torch.log_softmax(logits, dim=1)
    ref_log = torch.log(ref_probs.clamp_min(1e-300))
    return (ref_probs * (ref_log - logp)).sum(dim=1).mean()


def entropy(logits):
    logp = torch.log_softmax(logits, dim=1)
    return -(logp.exp() * logp).sum(dim=1).mean()


def margin_penalty(deltas, logits, y, lam=1.0, slack=0.0):
    sq = sum((d**2).sum() for d in deltas)
    return sq + lam * torch.relu(_torch_gap(logits, y) + slack).sum()


def grad(net: FeedforwardNet, loss: str, batch: dict) -> dict:
    """Exact gradients of ``loss`` with respect to weights, inputs and perturbations.

    ``batch`` holds ``x`` (rows) and, depending on the loss, ``y``,
    ``ref_probs`` and ``deltas`` (one array per layer).  When ``deltas`` is
    given the perturbed forward pass is used and its gradients are returned.
    """
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}")
    ws = net.torch_weights(requires_grad=True)
    x = torch.tensor(np.atleast_2d(batch["x"]), requires_grad=True)
    deltas = None
    if batch.get("deltas") is not None:
        deltas = [torch.tensor(np.atleast_2d(d), requires_grad=True) for d in batch["deltas"]]
    logits = torch_forward(ws, net.activation, x, deltas)
    if loss == "cross_entropy":
        value = cross_entropy(logits, torch.as_tensor(np.atleast_1d(batch["y"])))
    elif loss == "kl":
        value = kl_to_reference(torch.tensor(np.atleast_2d(batch["ref_probs"])), logits)
    elif loss == "min_entropy":
        value = entropy(logits)
    else:
        if deltas is None:
            raise ValueError("margin_penalty needs deltas")
        value = margin_penalty(deltas, logits, torch.as_tensor(np.atleast_1d(batch["y"])),
                               batch.get("lam", 1.0), batch.get("slack", 0.0))
    targets = ws + [x] + (deltas or [])
    grads = torch.autograd.grad(value, targets, allow_unused=True)
    as_np = [np.zeros(t.shape) if g is None else g.numpy() for g, t in zip(grads, targets)]
    out = {"value": float(value.detach()), "weights": as_np[: net.depth], "x": as_np[net.depth]}
    if deltas is not None:
        out["deltas"] = as_np[net.depth + 1 :]
    return out


# ---------------------------------------------------------------------------
# all-layer margin


@dataclass
class MarginOptions:
    """Penalty schedule for the all-layer margin search.

    The penalty weight doubles from ``lam_start`` to ``lam_end``; each stage
    runs ``steps`` Adam iterations with cosine-decayed step size.  The
    schedule stops early once a stage improves no row by more than ``tol``
    (relative).
    """

    restarts: int = 5
    steps: int = 300
    lam_start: float = 1.0
    lam_end: float = 2.0**10
    step_size: float = 0.05
    slack: float = 1e-3
    bisect_iters: int = 60
    tol: float = 1e-6
    seed: int = 0


@dataclass
class MarginReport:
    value: float
    delta: list
    converged: bool
    restarts: int
    lower_bound: float | None = None
    extra: dict = field(default_factory=dict)


def single_layer_margin(net: FeedforwardNet, x, y) -> float:
    """Closed form for one-layer nets: ``min_j (F_y - F_j) / (sqrt(2) ||x||)``."""
    if net.depth != 1:
        raise ValueError("closed form needs a one-layer net")
    z = forward(net, x)
    if np.argmax(z) != y:
        return 0.0
    gaps = z[y] - np.delete(z, y)
    return float(gaps.min() / (math.sqrt(2.0) * np.linalg.norm(x)))


def all_layer_margin(net: FeedforwardNet, x, y, opt: MarginOptions | None = None) -> MarginReport:
    return all_layer_margins(net, np.atleast_2d(x), np.atleast_1d(y), opt)[0]


def all_layer_margins(net: FeedforwardNet, xs, ys, opt: MarginOptions | None = None) -> list[MarginReport]:
    """All-layer margins of several inputs, optimized jointly in one batch."""
    opt = opt or MarginOptions()
    xs, _ = _as_batch(net, xs)
    ys = np.asarray(ys, dtype=np.int64).reshape(-1)
    if ys.shape[0] != xs.shape[0]:
        raise ValueError("xs and ys disagree in length")
    logits = forward(net, xs)
    wrong = np.argmax(logits, axis=1) != ys
    reports: list = [None] * xs.shape[0]
    for i in np.flatnonzero(wrong):
        reports[i] = MarginReport(0.0, [np.zeros(w) for w in net.dims[1:]], True, 0)
    todo = np.flatnonzero(~wrong)
    if todo.size:
        found = _search(net, xs[todo], ys[todo], opt, radius=0.0)
        for k, i in enumerate(todo):
            reports[i] = found[k]
    return reports


def robust_all_layer_margin(net: FeedforwardNet, x, radius: float, opt: MarginOptions | None = None) -> MarginReport:
    """Smallest all-layer margin of the clean prediction over the ball of ``radius`` around ``x``."""
    opt = opt or MarginOptions()
    xb, _ = _as_batch(net, x)
    y = int(predict(net, xb[0]))
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0:
        return all_layer_margin(net, xb[0], y, opt)
    # input-only attack first: a label flip inside the ball means margin 0
    moved = _input_attack(net, xb[0], y, radius, opt)
    if moved is not None:
        rep = MarginReport(0.0, [np.zeros(w) for w in net.dims[1:]], True, 0)
        rep.extra["x_adv"] = moved
        return rep
    return _search(net, xb, np.array([y]), opt, radius=radius)[0]


def _project_ball(u, radius):
    norm = torch.linalg.vector_norm(u, dim=-1, keepdim=True)
    return u * torch.clamp(radius / norm.clamp_min(1e-300), max=1.0)


def _input_attack(net, x, y, radius, opt, steps=200):
    ws = net.torch_weights()
    gen = torch.Generator().manual_seed(opt.seed)
    x0 = torch.from_numpy(x)[None, :]
    starts = [torch.zeros_like(x0)] + [torch.randn(x0.shape, generator=gen) for _ in range(max(opt.restarts - 1, 0))]
    yt = torch.tensor([y])
    for u in starts:
        u = _project_ball(u * radius, radius).requires_grad_(True)
        for t in range(steps):
            logits = torch_forward(ws, net.activation, x0 + u)
            if _misclassified(logits, yt).item():
                return (x0 + u).detach().numpy()[0]
            (g,) = torch.autograd.grad(_torch_gap(logits, yt).sum(), u)
            with torch.no_grad():
                step = radius * 0.1 * (1 - t / steps) + 1e-3 * radius
                u = _project_ball(u - step * g / g.norm().clamp_min(1e-300), radius)
            u.requires_grad_(True)
        with torch.no_grad():
            if _misclassified(torch_forward(ws, net.activation, x0 + u), yt).item():
                return (x0 + u).numpy()[0]
    return None


def _layer_norms(ws, activation, x):
    """Norms of the quantities scaling each perturbation: ``||x||, ||h_1||, ...``."""
    phi = _phi(activation)
    h = x
    norms = [torch.linalg.vector_norm(x, dim=-1)]
    for i, w in enumerate(ws[:-1]):
        h = (h if i == 0 else phi(h)) @ w.T
        norms.append(torch.linalg.vector_norm(h, dim=-1))
    return norms


def _search(net, xs, ys, opt, radius):
    """Penalty-method search over perturbations (and input shifts when ``radius > 0``)."""
    ws = net.torch_weights()
    b, r = xs.shape[0], max(int(opt.restarts), 1)
    rows = b * r
    x0 = torch.from_numpy(np.repeat(xs, r, axis=0))
    y = torch.from_numpy(np.repeat(ys, r))
    widths = net.dims[1:]
    gen = torch.Generator().manual_seed(check_seed(opt.seed))
    with torch.no_grad():
        logits0 = torch_forward(ws, net.activation, x0)
        gap0 = _torch_gap(logits0, y)
        masked = logits0.clone()
        masked[torch.arange(rows), y] = -torch.inf
        runner = masked.argmax(dim=1)
        s_last = _layer_norms(ws, net.activation, x0)[-1]
        # closing the gap with the last layer alone: an upper bound on the margin
        scale = gap0 / (math.sqrt(2.0) * s_last.clamp_min(1e-300))
    deltas = []
    for i, w in enumerate(widths):
        d = torch.randn((rows, w), generator=gen) * (scale[:, None] / math.sqrt(w * len(widths)))
        deltas.append(d)
    restart_id = torch.arange(rows) % r
    first = restart_id == 0
    direction = torch.zeros((rows, widths[-1]))
    direction[torch.arange(rows), runner] = 1.0
    direction[torch.arange(rows), y] = -1.0
    direction = direction / math.sqrt(2.0)
    for i in range(len(widths)):
        deltas[i][first] = 0.0
    deltas[-1][first] = direction[first] * scale[first, None] * 1.01
    u = torch.zeros_like(x0)
    params = [d.clone().requires_grad_(True) for d in deltas]
    if radius > 0:
        u = u.requires_grad_(True)
        params.append(u)
    lr0 = opt.step_size * scale.clamp_min(1e-12)[:, None]
    best_sq = torch.full((rows,), torch.inf)
    best = [torch.zeros((rows, w)) for w in widths]
    best_u = torch.zeros_like(x0)
    m_state = [torch.zeros_like(p) for p in params]
    v_state = [torch.zeros_like(p) for p in params]
    beta1, beta2, t_global = 0.9, 0.999, 0
    lam = opt.lam_start
    slack = opt.slack * gap0

    # feasible means misclassified with a gap clear of rounding noise
    clearance = 1e-9 * gap0.abs()

    def is_feasible(lg):
        return _misclassified(lg, y) & (_torch_gap(lg, y) < -clearance)

    def record(ds, uu):
        with torch.no_grad():
            lg = torch_forward(ws, net.activation, x0 + uu, list(ds))
            ok = is_feasible(lg)
            sq = sum((d**2).sum(dim=1) for d in ds)
            better = ok & (sq < best_sq)
            best_sq[better] = sq[better]
            for k in range(len(widths)):
                best[k][better] = ds[k][better]
            best_u[better] = uu[better]

    stage_best = best_sq.clone()
    while lam <= opt.lam_end * (1 + 1e-12):
        for t in range(opt.steps):
            ds = params[: len(widths)]
            uu = params[-1] if radius > 0 else u
            lg = torch_forward(ws, net.activation, x0 + uu, ds)
            sq = sum((d**2).sum(dim=1) for d in ds)
            obj = (sq + lam * torch.relu(_torch_gap(lg, y) + slack)).sum()
            gs = torch.autograd.grad(obj, params)
            record([d.detach() for d in ds], uu.detach())
            t_global += 1
            lr = lr0 * (0.01 + 0.99 * 0.5 * (1 + math.cos(math.pi * t / opt.steps)))
            with torch.no_grad():
                for k, (p, g) in enumerate(zip(params, gs)):
                    m_state[k].mul_(beta1).add_(g, alpha=1 - beta1)
                    v_state[k].mul_(beta2).addcmul_(g, g, value=1 - beta2)
                    mh = m_state[k] / (1 - beta1**t_global)
                    vh = v_state[k] / (1 - beta2**t_global)
                    p.sub_(lr * mh / (vh.sqrt() + 1e-12 * scale.clamp_min(1e-300)[:, None]))
                if radius > 0:
                    params[-1].copy_(_project_ball(params[-1], radius))
        record([p.detach() for p in params[: len(widths)]], params[-1].detach() if radius > 0 else u)
        lam *= 2.0
        # stop once every row is feasible and the stage barely improved it
        done = torch.isfinite(best_sq).all() and bool(((stage_best - best_sq) <= opt.tol * best_sq).all())
        stage_best = best_sq.clone()
        if done:
            break
    # shrink each feasible perturbation along its ray to the boundary
    with torch.no_grad():
        feasible = torch.isfinite(best_sq)
        lo = torch.zeros(rows)
        hi = torch.ones(rows)
        for _ in range(opt.bisect_iters):
            mid = 0.5 * (lo + hi)
            lg = torch_forward(ws, net.activation, x0 + best_u, [d * mid[:, None] for d in best])
            ok = is_feasible(lg)
            hi = torch.where(ok, mid, hi)
            lo = torch.where(ok, lo, mid)
        best = [d * hi[:, None] for d in best]
        sq = sum((d**2).sum(dim=1) for d in best)
        sq = torch.where(feasible, sq, torch.full_like(sq, torch.inf))
    reports = []
    sq = sq.numpy().reshape(b, r)
    for i in range(b):
        k = int(np.argmin(sq[i]))
        row = i * r + k
        ok = bool(np.isfinite(sq[i, k]))
        rep = MarginReport(
            value=float(math.sqrt(sq[i, k])) if ok else math.inf,
            delta=[d[row].numpy().copy() for d in best],
            converged=ok,
            restarts=r,
            extra={"restart_values": np.sqrt(sq[i]).tolist()},
        )
        if radius > 0:
            rep.extra["x_adv"] = (x0[row] + best_u[row]).numpy().copy()
        reports.append(rep)
    return reports


# ---------------------------------------------------------------------------
# closed-form lower bound


@dataclass
class LowerBoundReport:
    value: float
    kappa: np.ndarray
    gap: float
    s: np.ndarray
    nu: np.ndarray
    first_terms: np.ndarray
    psi_terms: np.ndarray  # (p, 3): the three sums of the secondary term
    convention: str
    gap_scale: float


def _layer_jacobians(net, x):
    """Per-layer Jacobians ``J_k = dz_k / dz_{k-1}`` and outputs ``z_0..z_{2p-1}``."""
    z = [np.asarray(x, dtype=np.float64)]
    jac = [None]
    for i, w in enumerate(net.weights):
        if i:
            jac.append(np.diag(_phi_prime_np(net.activation, z[-1])))
            z.append(_phi_np(net.activation, z[-1]))
        jac.append(w)
        z.append(w @ z[-1])
    return z, jac


def _op_norms(jac):
    """``nu[j, i] = ||dz_j / dz_{i-1}||_op`` for ``i - 1 <= j``; identity blocks give 1."""
    layers = len(jac) - 1
    nu = np.full((layers + 1, layers + 2), np.nan)
    for i in range(1, layers + 2):
        prod = None
        nu[i - 1, i] = 1.0
        for j in range(i, layers + 1):
            prod = jac[j] if prod is None else jac[j] @ prod
            nu[j, i] = np.linalg.norm(prod, 2)
    return nu


def margin_lower_bound(net: FeedforwardNet, x, y, convention: str = "recurrence", gap_scale: float = math.sqrt(2.0)) -> LowerBoundReport:
    """Closed-form all-layer margin lower bound ``1 / ||(kappa_1, ..., kappa_p)||``.

    Layers are counted with activations as their own layers: ``z_{2i-1}`` is
    the output of ``W_i`` and ``z_{2i}`` the activation after it.
    ``convention`` picks the norm paired with each perturbation:
    ``"recurrence"`` uses the pre-activation norms that scale perturbations in
    :func:`perturbed_forward`; ``"input"`` uses the norm of each matrix
    product's input ``z_{2i-2}``.
    """
    if convention not in ("recurrence", "input"):
        raise ValueError("convention must be 'recurrence' or 'input'")
    x = np.asarray(x, dtype=np.float64)
    z, jac = _layer_jacobians(net, x)
    gap = float(logit_gap(z[-1], y))
    if not gap > 0:
        raise ValueError("the lower bound needs a positive logit gap")
    p = net.depth
    top = 2 * p - 1
    nu = _op_norms(jac)
    if convention == "recurrence":
        s = np.array([np.linalg.norm(z[0])] + [np.linalg.norm(z[2 * j - 1]) for j in range(1, p)])
        first_idx = lambda j: 2 * j - 1  # noqa: E731
    else:
        s = np.array([np.linalg.norm(z[0])] + [np.linalg.norm(z[2 * j]) for j in range(1, p)])
        first_idx = lambda j: 2 * j  # noqa: E731
    kb = net.curvature
    kappa = np.zeros(p)
    first = np.zeros(p)
    psi = np.zeros((p, 3))
    for i in range(1, p + 1):
        first[i - 1] = s[i - 1] * nu[top, 2 * i] * gap_scale / gap
        psi[i - 1, 0] = sum(s[i - 1] * nu[first_idx(j), 2 * i] / s[j] for j in range(i, p))
        total = 0.0
        for j in range(1, 2 * i):
            for jp in range(2 * i - 1, top + 1):
                total += nu[jp, 2 * i] * nu[2 * i - 2, j] / nu[jp, j]
        psi[i - 1, 1] = total
        total = 0.0
        for j in range(1, top + 1):
            for jp in range(j, top + 1):
                start = max(2 * i, j)
                start += start % 2
                for jpp in range(start, jp + 1, 2):
                    total += kb * nu[jp, jpp + 1] * nu[jpp - 1, 2 * i] * nu[jpp - 1, j] * s[i - 1] / nu[jp, j]
        psi[i - 1, 2] = total
        kappa[i - 1] = first[i - 1] + psi[i - 1].sum()
    return LowerBoundReport(
        value=float(1.0 / np.linalg.norm(kappa)),
        kappa=kappa,
        gap=gap,
        s=s,
        nu=nu,
        first_terms=first,
        psi_terms=psi,
        convention=convention,
        gap_scale=float(gap_scale),
    )


def weight_distance(net_a: FeedforwardNet, net_b: FeedforwardNet) -> float:
    """``sqrt(sum_i ||W_i - W_i'||_op^2)``; margins are 1-Lipschitz in it when ``|phi(h)| <= |h|`` (tanh, not softplus)."""
    if net_a.dims != net_b.dims:
        raise ValueError("nets must share dims")
    return float(math.sqrt(sum(np.linalg.norm(a - b, 2) ** 2 for a, b in zip(net_a.weights, net_b.weights))))
