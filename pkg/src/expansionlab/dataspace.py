"""Finite metric-probability spaces, synthetic generators and neighborhood graphs.

A :class:`FinitePopulation` is a weighted, labeled point cloud that plays the
role of the data distribution for every exact check in the package.  Class
indices are 0-based throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.datasets import make_moons

from ._validation import check_points, check_seed

DIST_TOL = 1e-9
MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FinitePopulation:
    """Weighted labeled point cloud standing in for a distribution.

    Parameters
    ----------
    points : array of shape (n, d)
    masses : array of shape (n,)
        Strictly positive, summing to one.
    labels : int array of shape (n,)
        Ground-truth classes in ``range(num_classes)``.
    num_classes : int
        Every class must be nonempty.
    """

    points: np.ndarray
    masses: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        points = check_points(self.points)
        masses = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels).reshape(-1)
        n = points.shape[0]
        if masses.shape[0] != n or labels.shape[0] != n:
            raise ValueError(
                f"points, masses and labels disagree in length: {n}, {masses.shape[0]}, {labels.shape[0]}"
            )
        if not np.all(masses > 0):
            raise ValueError("masses must be strictly positive")
        if abs(masses.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {masses.sum()!r}, not 1")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        k = int(self.num_classes)
        if k < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"labels must lie in [0, {k})")
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            empty = np.flatnonzero(counts == 0).tolist()
            raise ValueError(f"classes {empty} are empty")
        for arr in (points, masses, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", k)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def class_masses(self) -> np.ndarray:
        return np.bincount(self.labels, weights=self.masses, minlength=self.num_classes)

    @property
    def rho(self) -> float:
        """Mass of the smallest ground-truth class."""
        return float(self.class_masses.min())

    def class_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.labels == i)

    def permuted(self, perm: Sequence[int]) -> "FinitePopulation":
        """Return the same population with points reordered by ``perm``."""
        perm = np.asarray(perm)
        return FinitePopulation(self.points[perm], self.masses[perm], self.labels[perm], self.num_classes)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "num_classes": self.num_classes,
            "points": self.points.tolist(),
            "masses": self.masses.tolist(),
            "labels": self.labels.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "FinitePopulation":
        missing = {"dim", "num_classes", "points", "masses", "labels"} - set(doc)
        if missing:
            raise ValueError(f"population document lacks keys {sorted(missing)}")
        points = np.asarray(doc["points"], dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != int(doc["dim"]):
            raise ValueError("points do not match the declared dim")
        return cls(points, doc["masses"], doc["labels"], int(doc["num_classes"]))

    @classmethod
    def from_json(cls, text: str) -> "FinitePopulation":
        return cls.from_dict(json.loads(text))


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def reflection(axis: int) -> Callable[[np.ndarray], np.ndarray]:
    """Augmentation that negates coordinate ``axis``."""

    def reflect(x):
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., axis] = -out[..., axis]
        return out

    reflect.__name__ = f"reflect_axis{axis}"
    return reflect


@dataclass(frozen=True)
class TransformSpec:
    """Transformation set: ``B(x) = {x' : exists T, ||x' - T(x)|| <= radius}``.

    ``overlap`` selects how ``B(x) ∩ B(x') != ∅`` is decided:

    * ``"geometric"`` -- the two unions of continuous balls intersect, i.e.
      ``min_{T,T'} ||T(x) - T'(x')|| <= 2 * radius``.
    * ``"witnessed"`` -- some population point lies in both sets.  This is the
      relation under which the finite population is itself a complete
      instance of the theory; theorem checks require it.
    """

    radius: float
    augmentations: tuple = (_identity,)
    overlap: str = "geometric"

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError("radius must be a finite nonnegative number")
        augs = tuple(self.augmentations)
        if not augs:
            raise ValueError("augmentation sequence must be nonempty")
        if self.overlap not in ("geometric", "witnessed"):
            raise ValueError(f"unknown overlap mode {self.overlap!r}")
        object.__setattr__(self, "augmentations", augs)

    @property
    def identity_only(self) -> bool:
        return self.augmentations == (_identity,)


@dataclass(frozen=True, eq=False)
class NeighborhoodGraph:
    """Materialized transformation-set and neighborhood relations.

    ``b_adj[i, j]`` is true iff ``x_j ∈ B(x_i)``; ``n_adj[i, j]`` iff
    ``B(x_i) ∩ B(x_j) != ∅``.  Both are dense boolean matrices.
    """

    population: FinitePopulation
    transform: TransformSpec
    b_adj: np.ndarray
    n_adj: np.ndarray
    _same_class: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        labels = self.population.labels
        same = self.n_adj & (labels[:, None] == labels[None, :])
        for arr in (self.b_adj, self.n_adj, same):
            arr.setflags(write=False)
        object.__setattr__(self, "_same_class", same)

    @property
    def n(self) -> int:
        return self.population.n

    @property
    def masses(self) -> np.ndarray:
        return self.population.masses

    @property
    def labels(self) -> np.ndarray:
        return self.population.labels

    @property
    def same_class_n_adj(self) -> np.ndarray:
        """``n_adj`` restricted to pairs sharing a ground-truth class."""
        return self._same_class

    @property
    def b_edges(self) -> np.ndarray:
        return np.argwhere(self.b_adj)

    @property
    def n_edges(self) -> np.ndarray:
        return np.argwhere(self.n_adj)


def build_neighborhood_graph(pop: FinitePopulation, t: TransformSpec) -> NeighborhoodGraph:
    """Compute ``B``-membership and ``N``-overlap exactly over all pairs."""
    x = pop.points
    images = []
    for aug in t.augmentations:
        img = np.asarray(aug(x), dtype=np.float64)
        if img.shape != x.shape:
            raise ValueError(f"augmentation {getattr(aug, '__name__', aug)} changed the point shape")
        images.append(img)
    r = float(t.radius)
    b_dist = np.full((pop.n, pop.n), np.inf)
    for img in images:
        # row i: distances from T(x_i) to every x_j
        b_dist = np.minimum(b_dist, cdist(img, x))
    b_adj = b_dist <= r + DIST_TOL
    if t.overlap == "geometric":
        n_dist = np.full((pop.n, pop.n), np.inf)
        for img_a in images:
            for img_b in images:
                n_dist = np.minimum(n_dist, cdist(img_a, img_b))
        n_adj = n_dist <= 2 * r + DIST_TOL
        n_adj = n_adj | n_adj.T
    else:
        bi = b_adj.astype(np.int64)
        n_adj = (bi @ bi.T) > 0
    np.fill_diagonal(n_adj, True)
    return NeighborhoodGraph(pop, t, b_adj, n_adj)


def measure_separation(graph: NeighborhoodGraph) -> float:
    """Mass of points whose transformation set reaches another ground-truth class."""
    labels = graph.labels
    crossing = (graph.b_adj & (labels[:, None] != labels[None, :])).any(axis=1)
    return float(graph.masses[crossing].sum())


# ---------------------------------------------------------------------------
# generators


def _normalized_weights(mass_weights, k):
    w = np.asarray(mass_weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != k:
        raise ValueError(f"expected {k} class weights, got {w.shape[0]}")
    if np.any(w <= 0):
        raise ValueError("class weights must be positive")
    return w / w.sum()


def _assemble(blocks, weights, n, k):
    points = np.vstack(blocks)
    labels = np.repeat(np.arange(k), n)
    masses = np.repeat(weights / n, n)
    masses = masses / masses.sum()
    return FinitePopulation(points, masses, labels, k)


def gen_gaussian_mixture(k: int, d: int, means, mass_weights=None, n: int = 100, seed=0) -> FinitePopulation:
    """Class ``i`` draws ``n`` points i.i.d. from ``N(means[i], I/d)``."""
    if k < 1 or d < 1 or n < 1:
        raise ValueError("need k >= 1, d >= 1, n >= 1")
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape != (k, d):
        raise ValueError(f"means must have shape ({k}, {d}), got {means.shape}")
    weights = _normalized_weights(np.ones(k) if mass_weights is None else mass_weights, k)
    rng = np.random.default_rng(check_seed(seed))
    blocks = [means[i] + rng.standard_normal((n, d)) / np.sqrt(d) for i in range(k)]
    return _assemble(blocks, weights, n, k)


@dataclass(frozen=True, eq=False)
class LinearGenerator:
    """``Q(z) = matrix @ z + offset``; bi-Lipschitz constant from singular values."""

    matrix: np.ndarray
    offset: np.ndarray = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        off = np.zeros(a.shape[0]) if self.offset is None else np.asarray(self.offset, dtype=np.float64)
        if off.shape != (a.shape[0],):
            raise ValueError("offset must match the ambient dimension")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "offset", off)

    @property
    def latent_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def kappa(self) -> float:
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        if sv[-1] <= 0 or self.matrix.shape[0] < self.matrix.shape[1]:
            return np.inf
        return float(max(sv[0], 1.0 / sv[-1]))

    def __call__(self, z):
        return z @ self.matrix.T + self.offset


@dataclass(frozen=True, eq=False)
class SmoothGenerator:
    """Coordinate-wise ``u -> scale * (u + bend * tanh(u))``, zero-padded, then rotated.

    The coordinate map has derivative in ``scale * [min(1, 1+bend), max(1, 1+bend)]``
    and the rotation is an isometry, so the bi-Lipschitz constant is
    ``max(upper, 1/lower)``.  ``bend > -1`` keeps the map invertible.
    """

    rotation: np.ndarray
    latent_dim: int
    scale: float = 1.0
    bend: float = 0.5
    offset: np.ndarray = None

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.ndim != 2 or rot.shape[0] != rot.shape[1]:
            raise ValueError("rotation must be square")
        if not np.allclose(rot.T @ rot, np.eye(rot.shape[0]), atol=1e-10):
            raise ValueError("rotation must be orthogonal")
        if self.latent_dim > rot.shape[0]:
            raise ValueError("ambient dimension must be >= latent dimension")
        if self.scale <= 0 or self.bend <= -1:
            raise ValueError("need scale > 0 and bend > -1")
        off = np.zeros(rot.shape[0]) if self.offset is None else np.asarray(self.offset, dtype=np.float64)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "offset", off)

    @property
    def ambient_dim(self) -> int:
        return self.rotation.shape[0]

    @property
    def kappa(self) -> float:
        lo = self.scale * min(1.0, 1.0 + self.bend)
        hi = self.scale * max(1.0, 1.0 + self.bend)
        return float(max(hi, 1.0 / lo))

    def __call__(self, z):
        u = self.scale * (z + self.bend * np.tanh(z))
        padded = np.zeros((z.shape[0], self.ambient_dim))
        padded[:, : self.latent_dim] = u
        return padded @ self.rotation.T + self.offset


def random_smooth_generator(latent_dim, ambient_dim, scale=1.0, bend=0.5, offset=None, seed=0) -> SmoothGenerator:
    """Built-in generator with a seeded Haar-random rotation."""
    rng = np.random.default_rng(check_seed(seed))
    q, r = np.linalg.qr(rng.standard_normal((ambient_dim, ambient_dim)))
    q = q * np.sign(np.diag(r))
    return SmoothGenerator(q, latent_dim, scale, bend, offset)


def gen_manifold_mixture(
    k: int,
    latent_dim: int,
    ambient_dim: int,
    generators: Sequence,
    kappa: float,
    n: int = 100,
    seed=0,
    mass_weights=None,
) -> FinitePopulation:
    """Class ``i`` is ``generators[i](z)`` with ``z ~ N(0, I/latent_dim)``.

    Each generator must expose ``kappa`` (its bi-Lipschitz constant) which may
    not exceed the declared ``kappa``.
    """
    if ambient_dim < latent_dim:
        raise ValueError("ambient_dim must be >= latent_dim")
    if len(generators) != k:
        raise ValueError(f"need {k} generators, got {len(generators)}")
    for i, g in enumerate(generators):
        g_kappa = getattr(g, "kappa", None)
        if g_kappa is None:
            raise ValueError(f"generator {i} does not declare a bi-Lipschitz constant")
        if g_kappa > kappa * (1 + 1e-12):
            raise ValueError(f"generator {i} has kappa {g_kappa:.6g} above the declared bound {kappa:.6g}")
    weights = _normalized_weights(np.ones(k) if mass_weights is None else mass_weights, k)
    rng = np.random.default_rng(check_seed(seed))
    blocks = []
    for g in generators:
        z = rng.standard_normal((n, latent_dim)) / np.sqrt(latent_dim)
        out = np.asarray(g(z), dtype=np.float64)
        if out.shape != (n, ambient_dim):
            raise ValueError(f"generator produced shape {out.shape}, expected {(n, ambient_dim)}")
        blocks.append(out)
    return _assemble(blocks, weights, n, k)


def gen_two_moons(n: int, noise: float = 0.0, shift=None, seed=0, rotation: float = 0.0) -> FinitePopulation:
    """Two interleaved half circles, ``n`` points per class, uniform masses.

    ``shift`` (a 2-vector) and ``rotation`` (radians, about the cloud's
    center) produce a shifted target-domain copy; both default to no change.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    x, y = make_moons(n_samples=(n, n), noise=noise if noise > 0 else None, random_state=check_seed(seed))
    order = np.argsort(y, kind="stable")
    x, y = x[order], y[order]
    if rotation:
        center = np.array([0.5, 0.25])
        c, s = np.cos(rotation), np.sin(rotation)
        x = (x - center) @ np.array([[c, s], [-s, c]]) + center
    if shift is not None:
        shift = np.asarray(shift, dtype=np.float64)
        if shift.shape != (2,):
            raise ValueError("shift must be a 2-vector")
        x = x + shift
    return FinitePopulation(x, np.full(2 * n, 1.0 / (2 * n)), y, 2)


def gen_clustered_instance(
    num_classes: int,
    class_sizes,
    spread: float = 1.5,
    gap: float = 3.0,
    seed=0,
    dirichlet: float = 2.0,
) -> FinitePopulation:
    """Small planar instance for exhaustive theorem checks.

    Class ``i`` is uniform in a disc of radius ``spread`` centered at
    ``(i * gap, 0)``; masses are Dirichlet distributed.  With radius-1 balls,
    ``gap < 2 * spread + 1`` lets neighboring classes touch, giving a positive
    separation mass.
    """
    sizes = np.asarray(class_sizes, dtype=np.int64).reshape(-1)
    if sizes.shape[0] != num_classes or np.any(sizes < 1):
        raise ValueError("need one positive size per class")
    rng = np.random.default_rng(check_seed(seed))
    blocks = []
    for i, m in enumerate(sizes):
        ang = rng.uniform(0, 2 * np.pi, m)
        rad = spread * np.sqrt(rng.uniform(0, 1, m))
        blocks.append(np.column_stack([i * gap + rad * np.cos(ang), rad * np.sin(ang)]))
    masses = rng.dirichlet(np.full(int(sizes.sum()), dirichlet))
    labels = np.repeat(np.arange(num_classes), sizes)
    return FinitePopulation(np.vstack(blocks), masses, labels, num_classes)
