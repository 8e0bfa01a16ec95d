"""Boosted control function estimation and its population oracles.

The estimator runs in three stages on centered data:

1. reduced-rank regression of X on Z gives the coefficient matrix, the
   control residuals V_hat = X - Z M_hat' and a basis R_hat of ker(M_hat');
2. an alternating pair of regressions (ControlTwicing) fits the additive
   surface f_hat(X) + gamma_hat(V_hat) to Y;
3. the pseudo-response gamma_hat(V_hat) is regressed on the invariant
   coordinates X @ R_hat to obtain delta_hat.

Predictions are f_hat(x) + delta_hat(R_hat' x) and never consult Z.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import rankreg
from .learners import ConstantModel, LearnerConfig, fit_constant, fit_learner
from .linalg import (
    ZeroMap,
    as_matrix,
    null_space_basis,
    null_space_precision_limit,
    shift_covariance,
)
from .simdg import Dataset, GaussianNoiseSpec, SimdgSpec, generate

_SEED_BOUND = 2**31 - 1


class UnsupportedOracleError(ValueError):
    """The closed-form oracle only covers the Gaussian noise family."""


def control_twicing(
    x,
    y,
    v_hat,
    learner_f: LearnerConfig,
    learner_gamma: LearnerConfig,
    rounds: int = 10,
    tol: float = 1e-6,
    gamma_first: bool = True,
    rng: np.random.Generator | None = None,
):
    """Alternate regressions of the residualized response on X and on V_hat.

    Starting from the centered response, each round refits gamma on
    (v_hat, y - f(x)) and f on (x, y - gamma(v_hat)); with gamma_first the
    gamma update comes first inside the round, otherwise the f update does.
    Stops early once the in-sample MSE of f(x) + gamma(v_hat) moves by less
    than `tol` between rounds (tol = 0 disables early stopping). Returns the
    fitted (f, gamma) pair.
    """
    xa = as_matrix(x, "x")
    va = as_matrix(v_hat, "v_hat")
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    if not (xa.shape[0] == va.shape[0] == ya.shape[0]):
        raise ValueError("x, y, v_hat row counts differ")
    if rounds < 1:
        raise ValueError("need at least one round")
    if rng is None:
        rng = np.random.default_rng(0)

    def seed() -> int:
        return int(rng.integers(_SEED_BOUND))

    resid = ya - ya.mean()
    f_model = gamma_model = None
    f_values = np.zeros_like(ya)
    gamma_values = np.zeros_like(ya)
    prev_mse = None
    for _ in range(rounds):
        if gamma_first:
            gamma_model = fit_learner(learner_gamma, va, resid, seed=seed())
            gamma_values = gamma_model.predict(va)
            resid = ya - gamma_values
            f_model = fit_learner(learner_f, xa, resid, seed=seed())
            f_values = f_model.predict(xa)
            resid = ya - f_values
        else:
            f_model = fit_learner(learner_f, xa, resid, seed=seed())
            f_values = f_model.predict(xa)
            resid = ya - f_values
            gamma_model = fit_learner(learner_gamma, va, resid, seed=seed())
            gamma_values = gamma_model.predict(va)
            resid = ya - gamma_values
        mse = float(np.mean((ya - f_values - gamma_values) ** 2))
        if prev_mse is not None and abs(prev_mse - mse) < tol:
            break
        prev_mse = mse
    return f_model, gamma_model


def fit_delta(
    gamma_values,
    x,
    r_hat: np.ndarray | ZeroMap,
    learner_delta: LearnerConfig,
    seed: int | None = None,
):
    """Regress the pseudo-response gamma(v_hat) on the invariant coordinates.

    When the null space is trivial (r_hat is ZeroMap) there is nothing to
    condition on and the constant mean of the pseudo-response is returned.
    """
    values = np.asarray(gamma_values, dtype=np.float64).reshape(-1)
    if isinstance(r_hat, ZeroMap):
        return fit_constant(values)
    xa = as_matrix(x, "x")
    if xa.shape[0] != values.shape[0]:
        raise ValueError("gamma_values and x row counts differ")
    return fit_learner(learner_delta, xa @ r_hat, values, seed=seed)


@dataclass(frozen=True)
class BcfConfig:
    rankreg: rankreg.RankRegConfig | None = None
    learner_f: LearnerConfig = LearnerConfig(kind="forest")
    learner_gamma: LearnerConfig = LearnerConfig(kind="ols")
    learner_delta: LearnerConfig | None = None  # None -> same as learner_f
    rounds: int = 10
    tol: float = 1e-6
    gamma_first: bool = True
    seed: int = 0


class BcfModel:
    """Fitted boosted control function f_hat + delta_hat(R_hat' .).

    Centering means are stored from training; prediction re-applies them and
    reads nothing but the covariates (no Z is kept anywhere on the model).
    """

    def __init__(self, f_hat, gamma_hat, delta_hat, rank_fit, y_mean: float):
        self.f_hat = f_hat
        self.gamma_hat = gamma_hat
        self.delta_hat = delta_hat
        self.rank_fit = rank_fit
        self.y_mean = float(y_mean)

    @property
    def x_mean(self) -> np.ndarray:
        return self.rank_fit.x_mean

    def predict(self, x_new) -> np.ndarray:
        xa = as_matrix(x_new, "x_new")
        if xa.shape[1] != self.x_mean.shape[0]:
            raise ValueError(
                f"x_new has {xa.shape[1]} columns, model expects {self.x_mean.shape[0]}"
            )
        xc = xa - self.x_mean
        out = self.f_hat.predict(xc) + self.y_mean
        r_hat = self.rank_fit.r_hat
        if isinstance(r_hat, ZeroMap):
            out = out + self.delta_hat.predict(xc)  # constant correction
        else:
            out = out + self.delta_hat.predict(xc @ r_hat)
        return out


def fit_bcf(data: Dataset, config: BcfConfig | None = None) -> BcfModel:
    """Run the full pipeline on one training sample."""
    if config is None:
        config = BcfConfig()
    n, p = data.x.shape
    if n <= p + data.z.shape[1]:
        warnings.warn(
            f"sample size {n} is small for p + r = {p + data.z.shape[1]} dimensions",
            stacklevel=2,
        )
    rng = np.random.default_rng(config.seed)

    rr_config = config.rankreg
    if rr_config is None:
        rr_config = rankreg.RankRegConfig(seed=int(rng.integers(_SEED_BOUND)))
    rank_fit = rankreg.fit(data.x, data.z, rr_config)

    xc = data.x - rank_fit.x_mean
    y_mean = float(data.y.mean())
    yc = data.y - y_mean

    f_hat, gamma_hat = control_twicing(
        xc,
        yc,
        rank_fit.v_hat,
        config.learner_f,
        config.learner_gamma,
        rounds=config.rounds,
        tol=config.tol,
        gamma_first=config.gamma_first,
        rng=rng,
    )
    learner_delta = config.learner_delta if config.learner_delta is not None else config.learner_f
    delta_hat = fit_delta(
        gamma_hat.predict(rank_fit.v_hat),
        xc,
        rank_fit.r_hat,
        learner_delta,
        seed=int(rng.integers(_SEED_BOUND)),
    )
    return BcfModel(f_hat, gamma_hat, delta_hat, rank_fit, y_mean)


# ---------------------------------------------------------------------------
# population oracles (Gaussian noise family)


@dataclass(frozen=True)
class ImpOracle:
    """Closed-form invariant predictor for a known Gaussian-noise model.

    With noise covariance sigma and null basis R of ker(M0'), the invariant
    part of the control function is gamma' sigma R (R' sigma R)^{-1} R' x,
    which is what this oracle adds to the structural function. Its risk is
    the same under every shift strength.
    """

    spec: SimdgSpec
    r_basis: np.ndarray | ZeroMap
    sigma: np.ndarray

    @classmethod
    def from_spec(cls, spec: SimdgSpec) -> "ImpOracle":
        if not isinstance(spec.noise, GaussianNoiseSpec):
            raise UnsupportedOracleError(
                "closed-form oracle requires the Gaussian noise family"
            )
        r_basis = null_space_basis(spec.m0, spec.rank)
        return cls(spec=spec, r_basis=r_basis, sigma=np.eye(spec.p))

    def _invariant_coefficients(self) -> np.ndarray:
        proj = null_space_precision_limit(self.r_basis, self.sigma)
        return proj @ self.sigma @ self.spec.noise.gamma

    def predict(self, x_new) -> np.ndarray:
        xa = as_matrix(x_new, "x_new")
        base = np.asarray(self.spec.f0(xa), dtype=np.float64).reshape(-1)
        if isinstance(self.r_basis, ZeroMap):
            return base
        return base + xa @ self._invariant_coefficients()

    def risk(self) -> float:
        """Population mean squared error, identical across shift strengths."""
        gamma = self.spec.noise.gamma
        sd2 = self.spec.noise.baseline_sd**2
        proj = null_space_precision_limit(self.r_basis, self.sigma)
        residual_cov = self.sigma - self.sigma @ proj @ self.sigma
        return float(gamma @ residual_cov @ gamma) + sd2


def imp_oracle_predict(oracle: ImpOracle, x_new) -> np.ndarray:
    return oracle.predict(x_new)


def imp_oracle_risk(oracle: ImpOracle) -> float:
    return oracle.risk()


@dataclass(frozen=True)
class RiskDecomposition:
    """Monte-Carlo invariant risk against its closed-form decomposition."""

    mc_risk: float
    closed_form: float
    mc_se: float

    @property
    def gap(self) -> float:
        return abs(self.mc_risk - self.closed_form)


def risk_decomposition_check(
    spec: SimdgSpec, n: int, rng: np.random.Generator
) -> RiskDecomposition:
    """Compare the simulated risk of the oracle predictor with theory.

    The left side simulates n draws from the training distribution (shift
    strength 1) and evaluates the oracle's mean squared error. The right
    side is the closed-form least-squares risk plus the invariance penalty
    E[(E[gamma'V | R'X] - E[gamma'V | X])^2], both computed from the model
    matrices alone.
    """
    oracle = ImpOracle.from_spec(spec)
    data = generate(spec, k=1.0, n=n, rng=rng)
    sq_err = (data.y - oracle.predict(data.x)) ** 2
    mc_risk = float(sq_err.mean())
    mc_se = float(sq_err.std(ddof=1) / np.sqrt(n))

    sigma = oracle.sigma
    gamma = spec.noise.gamma
    cov_x = shift_covariance(spec.m0, sigma, 1.0)
    # population least-squares risk: Var(U) - gamma' Sigma B^{-1} Sigma gamma
    w_ls = np.linalg.solve(cov_x, sigma @ gamma)
    risk_ls = spec.noise.u_variance - float((sigma @ gamma) @ w_ls)
    # invariance penalty: quadratic form of the coefficient gap under Cov(X)
    proj = null_space_precision_limit(oracle.r_basis, sigma)
    w_inv = proj @ sigma @ gamma
    diff = w_inv - w_ls
    penalty = float(diff @ cov_x @ diff)
    return RiskDecomposition(mc_risk=mc_risk, closed_form=risk_ls + penalty, mc_se=mc_se)


# ---------------------------------------------------------------------------
# baselines


class FunctionModel:
    """Adapter exposing a plain function as a fitted model."""

    def __init__(self, fn):
        self._fn = fn

    def predict(self, x) -> np.ndarray:
        return np.asarray(self._fn(as_matrix(x, "x")), dtype=np.float64).reshape(-1)


def fit_ls(data: Dataset, learner: LearnerConfig, seed: int | None = None):
    """Plain regression of Y on X, ignoring the exogenous variables."""
    return fit_learner(learner, data.x, data.y, seed=seed)


def fit_constant_baseline(data: Dataset) -> ConstantModel:
    return fit_constant(data.y)


def structural_oracle(spec: SimdgSpec) -> FunctionModel:
    """Predicts with the true structural function; residual is exactly U."""
    return FunctionModel(spec.f0)
