"""Pluggable regression learners shared by every pipeline stage.

Each fit_* function returns an immutable fitted model exposing
``predict(x) -> ndarray``. The linear learners are solved directly with
numpy (minimum-norm via lstsq when rank deficient); the tree, forest and
boosting learners wrap scikit-learn estimators behind the same interface.
All learners include an implicit intercept and are deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

from .linalg import as_matrix

LEARNER_KINDS = ("constant", "ols", "ridge", "tree", "forest", "boost")


@dataclass(frozen=True)
class LearnerConfig:
    """Declarative learner choice, expressible in experiment config files."""

    kind: str = "ols"
    alpha: float = 1.0  # ridge
    max_depth: int | None = None  # tree/forest; boosting uses boost_depth
    min_leaf: int = 1
    n_trees: int = 100  # forest
    mtry_fraction: float = 1.0 / 3.0
    bootstrap: bool = True
    n_rounds: int = 500  # boost
    learning_rate: float = 0.05
    boost_depth: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("ridge alpha must be positive")
        if self.min_leaf < 1 or self.n_trees < 1 or self.n_rounds < 1:
            raise ValueError("tree counts and leaf sizes must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0.0 < self.mtry_fraction <= 1.0:
            raise ValueError("mtry_fraction must be in (0, 1]")

    @classmethod
    def from_dict(cls, spec: dict) -> "LearnerConfig":
        unknown = set(spec) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown learner config fields: {sorted(unknown)}")
        return cls(**spec)

    def with_seed(self, seed: int) -> "LearnerConfig":
        return replace(self, seed=int(seed))


class ConstantModel:
    """Predicts one fixed value everywhere."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, x) -> np.ndarray:
        xa = np.asarray(x, dtype=np.float64)
        n = xa.shape[0] if xa.ndim >= 1 else 1
        return np.full(n, self.value)


class LinearModel:
    """Affine predictor x @ coef + intercept."""

    def __init__(self, coef: np.ndarray, intercept: float):
        self.coef = np.asarray(coef, dtype=np.float64).reshape(-1)
        self.intercept = float(intercept)

    def predict(self, x) -> np.ndarray:
        xa = as_matrix(x, "x")
        if xa.shape[1] != self.coef.shape[0]:
            raise ValueError(
                f"x has {xa.shape[1]} features, model expects {self.coef.shape[0]}"
            )
        return xa @ self.coef + self.intercept


class SklearnModel:
    """Thin prediction wrapper around a fitted scikit-learn estimator."""

    def __init__(self, estimator):
        self._estimator = estimator

    def predict(self, x) -> np.ndarray:
        return np.asarray(self._estimator.predict(as_matrix(x, "x")), dtype=np.float64)

    @property
    def estimator(self):
        return self._estimator


def _validate_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    xa = as_matrix(x, "x")
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    if xa.shape[0] != ya.shape[0]:
        raise ValueError("x and y row counts differ")
    if xa.shape[0] == 0:
        raise ValueError("cannot fit on an empty sample")
    if not np.all(np.isfinite(ya)):
        raise ValueError("y contains non-finite entries")
    return xa, ya


def fit_constant(y) -> ConstantModel:
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    if ya.shape[0] == 0:
        raise ValueError("cannot fit on an empty sample")
    return ConstantModel(float(ya.mean()))


def fit_ols(x, y) -> LinearModel:
    """Least squares with intercept; minimum-norm solution if rank deficient."""
    xa, ya = _validate_xy(x, y)
    x_mean = xa.mean(axis=0)
    y_mean = ya.mean()
    coef, *_ = np.linalg.lstsq(xa - x_mean, ya - y_mean, rcond=None)
    return LinearModel(coef=coef, intercept=y_mean - x_mean @ coef)


def fit_ridge(x, y, alpha: float) -> LinearModel:
    """Ridge with penalty alpha * ||coef||^2; the intercept is not penalised."""
    if alpha <= 0:
        raise ValueError("ridge alpha must be positive")
    xa, ya = _validate_xy(x, y)
    x_mean = xa.mean(axis=0)
    y_mean = ya.mean()
    xc = xa - x_mean
    gram = xc.T @ xc + alpha * np.eye(xa.shape[1])
    coef = np.linalg.solve(gram, xc.T @ (ya - y_mean))
    return LinearModel(coef=coef, intercept=y_mean - x_mean @ coef)


def fit_tree(x, y, max_depth: int | None = None, min_leaf: int = 1, seed: int = 0):
    """CART regression tree: exhaustive midpoint splits, leaf-mean predictions."""
    xa, ya = _validate_xy(x, y)
    est = DecisionTreeRegressor(
        criterion="squared_error",
        max_depth=max_depth,
        min_samples_leaf=min_leaf,
        random_state=int(seed),
    )
    est.fit(xa, ya)
    return SklearnModel(est)


def fit_forest(x, y, config: LearnerConfig, seed: int | None = None):
    """Random forest of CART trees on bootstrap resamples, averaged prediction."""
    xa, ya = _validate_xy(x, y)
    est = RandomForestRegressor(
        n_estimators=config.n_trees,
        criterion="squared_error",
        max_depth=config.max_depth,
        min_samples_leaf=config.min_leaf,
        max_features=config.mtry_fraction,
        bootstrap=config.bootstrap,
        random_state=int(config.seed if seed is None else seed),
        n_jobs=None,
    )
    est.fit(xa, ya)
    return SklearnModel(est)


def fit_boost(x, y, config: LearnerConfig, seed: int | None = None):
    """Stagewise least-squares boosting started from the target mean."""
    xa, ya = _validate_xy(x, y)
    est = GradientBoostingRegressor(
        loss="squared_error",
        n_estimators=config.n_rounds,
        learning_rate=config.learning_rate,
        max_depth=config.boost_depth,
        min_samples_leaf=config.min_leaf,
        random_state=int(config.seed if seed is None else seed),
    )
    est.fit(xa, ya)
    return SklearnModel(est)


def fit_learner(config: LearnerConfig, x, y, seed: int | None = None):
    """Dispatch on config.kind; `seed` overrides config.seed when given."""
    if config.kind == "constant":
        return fit_constant(y)
    if config.kind == "ols":
        return fit_ols(x, y)
    if config.kind == "ridge":
        return fit_ridge(x, y, config.alpha)
    if config.kind == "tree":
        return fit_tree(
            x,
            y,
            max_depth=config.max_depth,
            min_leaf=config.min_leaf,
            seed=config.seed if seed is None else seed,
        )
    if config.kind == "forest":
        return fit_forest(x, y, config, seed=seed)
    if config.kind == "boost":
        return fit_boost(x, y, config, seed=seed)
    raise ValueError(f"unknown learner kind {config.kind!r}")
