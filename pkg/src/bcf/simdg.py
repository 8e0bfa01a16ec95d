"""Generative model for simultaneous-equation shift experiments.

Data are drawn from

    X = M0 @ Z + V,      Y = f0(X) + U,

with Z ~ N(0, k^2 I_r) independent of the jointly Gaussian noise (U, V).
The noise is parameterised so that E[V V'] = I_p, E[V U] = c * eta and
E[U^2] = c^2 + sd^2; concretely V ~ N(0, I_p) and U = c * eta'V + eps with
eps ~ N(0, sd^2) drawn independently, which is the unique Gaussian
consistent with those moments and makes E[U | V] = c * eta'V linear.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import as_matrix, haar_orthonormal

DEFAULT_NOISE_SD = 0.1


# ---------------------------------------------------------------------------
# piecewise-constant tree functions


@dataclass(frozen=True)
class TreeLeaf:
    value: float


@dataclass(frozen=True)
class TreeSplit:
    feature: int
    threshold: float
    left: "TreeSplit | TreeLeaf"
    right: "TreeSplit | TreeLeaf"


@dataclass(frozen=True)
class TreeFunction:
    """Complete binary split tree evaluated as a piecewise-constant function.

    Rows with x[feature] <= threshold are routed left. Regions are recursive
    axis-aligned halvings of R^p; only the split points are restricted to the
    sampling range.
    """

    root: TreeSplit | TreeLeaf
    dim: int
    depth: int

    def __call__(self, x) -> np.ndarray:
        return evaluate_tree(self, x)

    def leaf_values(self) -> np.ndarray:
        values: list[float] = []

        def collect(node):
            if isinstance(node, TreeLeaf):
                values.append(node.value)
            else:
                collect(node.left)
                collect(node.right)

        collect(self.root)
        return np.asarray(values)


def sample_tree_function(
    p: int,
    p_eff: int,
    depth: int,
    theta_sd: float = 1.5,
    split_range: tuple[float, float] = (-2.0, 2.0),
    rng: np.random.Generator | None = None,
) -> TreeFunction:
    """Sample a random depth-`depth` split tree on the first `p_eff` coordinates.

    Each internal node picks its split coordinate uniformly from the first
    p_eff predictors and its split point uniformly from `split_range`; the
    2^depth leaf values are i.i.d. N(0, theta_sd^2).
    """
    if p_eff > p:
        raise ValueError(f"p_eff={p_eff} exceeds predictor dimension p={p}")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if rng is None:
        rng = np.random.default_rng()
    lo, hi = split_range

    def build(level: int) -> TreeSplit | TreeLeaf:
        if level == 0:
            return TreeLeaf(value=float(rng.normal(0.0, theta_sd)))
        feature = int(rng.integers(p_eff))
        threshold = float(rng.uniform(lo, hi))
        return TreeSplit(feature, threshold, build(level - 1), build(level - 1))

    return TreeFunction(root=build(depth), dim=p, depth=depth)


def evaluate_tree(tree: TreeFunction, x) -> np.ndarray:
    """Route each row of `x` down the tree and return its leaf value."""
    xa = as_matrix(x, "x")
    if xa.shape[1] != tree.dim:
        raise ValueError(f"x has {xa.shape[1]} columns, tree expects {tree.dim}")
    out = np.empty(xa.shape[0])

    def descend(node, idx):
        if isinstance(node, TreeLeaf):
            out[idx] = node.value
            return
        go_left = xa[idx, node.feature] <= node.threshold
        descend(node.left, idx[go_left])
        descend(node.right, idx[~go_left])

    descend(tree.root, np.arange(xa.shape[0]))
    return out


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class GaussianNoiseSpec:
    """Joint Gaussian (U, V) with E[VV']=I, E[VU]=c*eta, E[U^2]=c^2+sd^2."""

    p: int
    confounding: float
    eta: np.ndarray
    baseline_sd: float = DEFAULT_NOISE_SD

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64).reshape(-1)
        if eta.shape[0] != self.p:
            raise ValueError(f"eta has length {eta.shape[0]}, expected {self.p}")
        if abs(np.linalg.norm(eta) - 1.0) > 1e-10:
            raise ValueError("eta must have unit norm")
        if self.confounding < 0:
            raise ValueError("confounding strength must be nonnegative")
        object.__setattr__(self, "eta", eta)

    @property
    def gamma(self) -> np.ndarray:
        """Coefficients of the linear control function E[U | V] = gamma'V."""
        return self.confounding * self.eta

    @property
    def u_variance(self) -> float:
        return self.confounding**2 + self.baseline_sd**2

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw (U, V) jointly; returns (u of shape (n,), v of shape (n, p))."""
        v = rng.standard_normal((n, self.p))
        eps = rng.normal(0.0, self.baseline_sd, n)
        u = v @ self.gamma + eps
        return u, v


def sample_noise_spec(
    p: int,
    c: float,
    rng: np.random.Generator,
    baseline_sd: float = DEFAULT_NOISE_SD,
) -> GaussianNoiseSpec:
    """Noise spec with direction eta drawn uniformly on the unit sphere."""
    if c < 0:
        raise ValueError("confounding strength must be nonnegative")
    g = rng.standard_normal(p)
    eta = g / np.linalg.norm(g)
    return GaussianNoiseSpec(p=p, confounding=c, eta=eta, baseline_sd=baseline_sd)


def sample_m0(
    p: int, r: int, q: int, tau: float = 1.0, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Rank-q coefficient matrix tau * A @ B' with Haar-orthonormal factors.

    All q nonzero singular values equal tau (the eigengap).
    """
    if q > min(p, r):
        raise ValueError(f"rank q={q} exceeds min(p, r)={min(p, r)}")
    if rng is None:
        rng = np.random.default_rng()
    a = haar_orthonormal(p, q, rng)
    b = haar_orthonormal(r, q, rng)
    return tau * (a @ b.T)


@dataclass(frozen=True)
class SimdgSpec:
    """Full generative model: structural function, shift matrix, noise law.

    The shift family is N(0, k^2 I_r) over the exogenous variable, indexed by
    the strength k passed to :func:`generate`.
    """

    f0: Callable[[np.ndarray], np.ndarray]
    m0: np.ndarray
    rank: int
    noise: GaussianNoiseSpec

    def __post_init__(self):
        m0 = as_matrix(self.m0, "m0")
        if m0.shape[0] != self.noise.p:
            raise ValueError("m0 row dimension must match the noise dimension p")
        if self.rank > min(m0.shape):
            raise ValueError("rank exceeds min(p, r)")
        sv = np.linalg.svd(m0, compute_uv=False)
        numerical_rank = int(np.sum(sv > 1e-10 * sv[0])) if sv.size and sv[0] > 0 else 0
        if numerical_rank != self.rank:
            raise ValueError(
                f"declared rank {self.rank} but m0 has numerical rank {numerical_rank}"
            )
        object.__setattr__(self, "m0", m0)

    @property
    def p(self) -> int:
        return self.m0.shape[0]

    @property
    def r(self) -> int:
        return self.m0.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Design matrices of one sample; u and v are carried only by simulations."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        x = as_matrix(self.x, "x")
        z = as_matrix(self.z, "z")
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if not (x.shape[0] == z.shape[0] == y.shape[0]):
            raise ValueError("x, y, z must have the same number of rows")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def to_csv(self, path) -> None:
        write_dataset_csv(self, path)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        return read_dataset_csv(path)


def generate(spec: SimdgSpec, k: float, n: int, rng: np.random.Generator) -> Dataset:
    """Draw an i.i.d. sample of size n at exogenous shift strength k.

    Z and (U, V) come from independent child streams of `rng`, so the
    exogenous draw is independent of the noise by construction.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if k <= 0:
        raise ValueError("shift strength k must be positive")
    z_rng, noise_rng = rng.spawn(2)
    z = k * z_rng.standard_normal((n, spec.r))
    u, v = spec.noise.sample(n, noise_rng)
    x = z @ spec.m0.T + v
    y = spec.f0(x) + u
    return Dataset(x=x, y=np.asarray(y, dtype=np.float64).reshape(-1), z=z, u=u, v=v)


# ---------------------------------------------------------------------------
# categorical encoding


def encode_categorical(
    labels: Sequence,
    probabilities: Sequence[float] | None = None,
    categories: Sequence | None = None,
) -> np.ndarray:
    """Encode r+1 categories as mean-zero vectors in R^r.

    The category list (a_0, ..., a_r) maps a_j (j >= 1) to the standard basis
    vector e_j and the reference category a_0 to -(pi_1/pi_0, ..., pi_r/pi_0),
    so the probability-weighted mean is zero. When `probabilities` is omitted,
    empirical label frequencies are used instead (the mean is then only
    approximately zero out of sample). When `categories` is omitted the sorted
    unique labels are used, the smallest being the reference.
    """
    labels = list(labels)
    if categories is None:
        categories = sorted(set(labels))
    categories = list(categories)
    r = len(categories) - 1
    if r < 1:
        raise ValueError("need at least two categories")
    index = {cat: j for j, cat in enumerate(categories)}
    for lab in labels:
        if lab not in index:
            raise ValueError(f"label {lab!r} is not in the category set")
    if probabilities is None:
        counts = np.zeros(r + 1)
        for lab in labels:
            counts[index[lab]] += 1
        probabilities = counts / len(labels)
    pi = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if pi.shape[0] != r + 1:
        raise ValueError(f"need {r + 1} probabilities, got {pi.shape[0]}")
    if np.any(pi <= 0):
        raise ValueError("all category probabilities must be positive")
    if abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("category probabilities must sum to one")

    rows = np.zeros((r + 1, r))
    rows[0] = -pi[1:] / pi[0]
    rows[1:] = np.eye(r)
    return rows[[index[lab] for lab in labels]]


# ---------------------------------------------------------------------------
# CSV interchange

_FLOAT_FMT = "%.17g"


def dataset_columns(p: int, r: int, with_noise: bool) -> list[str]:
    cols = [f"x{i + 1}" for i in range(p)] + ["y"] + [f"z{j + 1}" for j in range(r)]
    if with_noise:
        cols += ["u"] + [f"v{i + 1}" for i in range(p)]
    return cols


def write_dataset_csv(data: Dataset, path) -> None:
    """Write the dataset with header x1..xp, y, z1..zr[, u, v1..vp]."""
    with_noise = data.u is not None and data.v is not None
    p, r = data.x.shape[1], data.z.shape[1]
    blocks = [data.x, data.y[:, None], data.z]
    if with_noise:
        blocks += [np.asarray(data.u).reshape(-1, 1), data.v]
    table = np.hstack(blocks)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_columns(p, r, with_noise))
        for row in table:
            writer.writerow([_FLOAT_FMT % val for val in row])


def read_dataset_csv(path) -> Dataset:
    """Inverse of :func:`write_dataset_csv`; u/v columns are optional."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        raw = [[float(cell) for cell in row] for row in reader if row]
    table = np.asarray(raw, dtype=np.float64).reshape(len(raw), len(header))
    cols = {name: i for i, name in enumerate(header)}
    p = sum(1 for name in header if name.startswith("x"))
    r = sum(1 for name in header if name.startswith("z"))
    if "y" not in cols or p == 0 or r == 0:
        raise ValueError(f"{path}: expected columns x1..xp, y, z1..zr")
    x = table[:, [cols[f"x{i + 1}"] for i in range(p)]]
    z = table[:, [cols[f"z{j + 1}"] for j in range(r)]]
    y = table[:, cols["y"]]
    u = table[:, cols["u"]] if "u" in cols else None
    v_names = [f"v{i + 1}" for i in range(p)]
    v = table[:, [cols[n] for n in v_names]] if all(n in cols for n in v_names) else None
    return Dataset(x=x, y=y, z=z, u=u, v=v)
