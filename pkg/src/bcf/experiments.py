"""Seeded, parallel experiment harness with delimited result output.

Three experiment families share one long-format result schema
(rep, method, param, param_value, metric, value):

* exp1 - train on the unshifted distribution, evaluate every method on test
  sets of increasing exogenous shift strength k;
* exp2 - recover the shift coefficient matrix by reduced-rank regression
  over a grid of eigengaps and sample sizes, recording subspace distances;
* tabular - fit on a geographic/threshold split of an arbitrary CSV and
  evaluate on the held-out part of the training region and on the test
  region.

Every repetition derives its own seed stream from (master seed, indices),
so results are bit-identical regardless of the worker count.
"""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import estimator, rankreg
from .learners import LearnerConfig
from .linalg import subspace_distance
from .simdg import (
    Dataset,
    SimdgSpec,
    generate,
    sample_m0,
    sample_noise_spec,
    sample_tree_function,
)

EXPERIMENTS = ("exp1", "exp2", "tabular")
CSV_HEADER = ("rep", "method", "param", "param_value", "metric", "value")
_FMT = "%.17g"
_SEED_BOUND = 2**31 - 1


@dataclass(frozen=True)
class ResultRow:
    rep: int
    method: str
    param: str
    param_value: float
    metric: str
    value: float


def _row_key(row: ResultRow):
    return (row.rep, row.method, row.param, row.param_value, row.metric)


def sort_rows(rows) -> list[ResultRow]:
    return sorted(rows, key=_row_key)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    repetitions: int = 10
    workers: int = 1
    # simulation dimensions (exp1, and the model behind synthetic tabular runs)
    p: int = 10
    r: int = 5
    q: int = 5
    p_eff: int = 3
    tree_depth: int = 3
    theta_sd: float = 1.5
    split_lo: float = -2.0
    split_hi: float = 2.0
    confounding: float = 2.0
    noise_sd: float = 0.1
    n_train: int = 1000
    n_test: int = 1000
    k_grid: tuple[float, ...] = tuple(float(k) for k in range(1, 11))
    # exp2 grids
    tau_grid: tuple[float, ...] = (0.5, 1.0, 2.0)
    n_grid: tuple[int, ...] = (100, 500, 2000)
    dims_grid: tuple[tuple[int, int], ...] = ((10, 10),)
    exp2_noiseless: bool = False
    # learners and pipeline knobs
    learner_f: LearnerConfig = LearnerConfig(kind="forest")
    learner_gamma: LearnerConfig = LearnerConfig(kind="ols")
    learner_delta: LearnerConfig | None = None  # None -> learner_f
    learner_ls: LearnerConfig | None = None  # None -> learner_f
    rounds: int = 10
    tol: float = 1e-6
    rankreg_folds: int = 5
    rankreg_lambda_grid: tuple[float, ...] | None = None
    # tabular inputs
    csv_path: str | None = None
    target: str | None = None
    exogenous: tuple[str, ...] = ()
    predictors: tuple[str, ...] = ()
    train_where: str | None = None
    subsample: float = 0.8

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        for name in ("repetitions", "workers", "p", "r", "q", "p_eff",
                     "tree_depth", "n_train", "n_test", "rounds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")
        if self.q > min(self.p, self.r):
            raise ValueError(f"q={self.q} exceeds min(p, r)={min(self.p, self.r)}")
        if any(k < 1 for k in self.k_grid):
            raise ValueError("all shift strengths in k_grid must be >= 1")
        if any(n < 1 for n in self.n_grid):
            raise ValueError("all sample sizes in n_grid must be positive")
        if not 0.0 < self.subsample < 1.0:
            raise ValueError("subsample fraction must be in (0, 1)")
        if self.experiment == "tabular":
            for name in ("csv_path", "target", "train_where"):
                if not getattr(self, name):
                    raise ValueError(f"tabular experiments require {name!r}")
            if not self.exogenous or not self.predictors:
                raise ValueError("tabular experiments require exogenous and predictor columns")

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        spec = dict(spec)
        known = {f.name for f in fields(cls)}
        unknown = set(spec) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        for name in ("learner_f", "learner_gamma", "learner_delta", "learner_ls"):
            if isinstance(spec.get(name), dict):
                spec[name] = LearnerConfig.from_dict(spec[name])
        for name in ("k_grid", "tau_grid", "n_grid", "exogenous", "predictors"):
            if name in spec and spec[name] is not None:
                spec[name] = tuple(spec[name])
        if "rankreg_lambda_grid" in spec and spec["rankreg_lambda_grid"] is not None:
            spec["rankreg_lambda_grid"] = tuple(spec["rankreg_lambda_grid"])
        if "dims_grid" in spec and spec["dims_grid"] is not None:
            spec["dims_grid"] = tuple((int(p), int(r)) for p, r in spec["dims_grid"])
        return cls(**spec)

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                spec = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(spec, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        spec.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(spec)

    def rankreg_config(self, seed: int) -> rankreg.RankRegConfig:
        return rankreg.RankRegConfig(
            lambda_grid=self.rankreg_lambda_grid,
            folds=self.rankreg_folds,
            seed=seed,
        )

    def bcf_config(self, seed: int) -> estimator.BcfConfig:
        rng = np.random.default_rng(seed)
        return estimator.BcfConfig(
            rankreg=self.rankreg_config(int(rng.integers(_SEED_BOUND))),
            learner_f=self.learner_f,
            learner_gamma=self.learner_gamma,
            learner_delta=self.learner_delta,
            rounds=self.rounds,
            tol=self.tol,
            seed=int(rng.integers(_SEED_BOUND)),
        )


# ---------------------------------------------------------------------------
# experiment 1: shifted test-set prediction


def _mse(y, pred) -> float:
    return float(np.mean((np.asarray(y) - np.asarray(pred)) ** 2))


def _exp1_rep(args) -> tuple[str, list[ResultRow] | None, str | None]:
    config, rep = args
    try:
        model_ss, train_ss, fit_ss, test_root = np.random.SeedSequence(
            (config.seed, rep)
        ).spawn(4)
        model_rng = np.random.default_rng(model_ss)
        f0 = sample_tree_function(
            config.p,
            config.p_eff,
            config.tree_depth,
            theta_sd=config.theta_sd,
            split_range=(config.split_lo, config.split_hi),
            rng=model_rng,
        )
        m0 = sample_m0(config.p, config.r, config.q, tau=1.0, rng=model_rng)
        noise = sample_noise_spec(
            config.p, config.confounding, model_rng, baseline_sd=config.noise_sd
        )
        spec = SimdgSpec(f0=f0, m0=m0, rank=config.q, noise=noise)
        train = generate(spec, k=1.0, n=config.n_train, rng=np.random.default_rng(train_ss))

        fit_rng = np.random.default_rng(fit_ss)
        bcf_model = estimator.fit_bcf(train, config.bcf_config(int(fit_rng.integers(_SEED_BOUND))))
        ls_learner = config.learner_ls if config.learner_ls is not None else config.learner_f
        ls_model = estimator.fit_ls(train, ls_learner, seed=int(fit_rng.integers(_SEED_BOUND)))
        struct_model = estimator.structural_oracle(spec)
        oracle = estimator.ImpOracle.from_spec(spec)

        rows: list[ResultRow] = []
        test_streams = test_root.spawn(len(config.k_grid))
        for k, stream in zip(config.k_grid, test_streams):
            test = generate(spec, k=k, n=config.n_test, rng=np.random.default_rng(stream))
            predictions = {
                "bcf": bcf_model.predict(test.x),
                "ls": ls_model.predict(test.x),
                "structural": struct_model.predict(test.x),
                "imp_oracle": oracle.predict(test.x),
            }
            for method, pred in predictions.items():
                rows.append(ResultRow(rep, method, "k", float(k), "mse", _mse(test.y, pred)))
            # constant baseline: squared error around the evaluation-set mean
            rows.append(ResultRow(rep, "constant", "k", float(k), "mse", float(np.var(test.y))))
        return f"rep={rep}", rows, None
    except (ValueError, np.linalg.LinAlgError) as exc:
        return f"rep={rep}", None, str(exc)


# ---------------------------------------------------------------------------
# experiment 2: coefficient-matrix recovery


def _exp2_cell(args) -> tuple[str, list[ResultRow] | None, str | None]:
    config, di, ti, ni, rep = args
    p, r = config.dims_grid[di]
    tau = config.tau_grid[ti]
    n = config.n_grid[ni]
    tag = f"rep={rep},p={p},r={r},tau={tau:g},n={n}"
    try:
        model_ss, data_ss, fit_ss = np.random.SeedSequence(
            (config.seed, di, ti, ni, rep)
        ).spawn(3)
        m0 = sample_m0(p, r, config.q, tau=tau, rng=np.random.default_rng(model_ss))
        data_rng = np.random.default_rng(data_ss)
        z = data_rng.standard_normal((n, r))
        x = z @ m0.T
        if not config.exp2_noiseless:
            x = x + data_rng.standard_normal((n, p))
        fit = rankreg.fit(
            x, z, config.rankreg_config(int(np.random.default_rng(fit_ss).integers(_SEED_BOUND)))
        )
        method = f"rrr(p={p},r={r},tau={tau:g})"
        rows = [
            ResultRow(rep, method, "n", float(n), "subspace_distance",
                      subspace_distance(fit.m_hat, m0)),
            ResultRow(rep, method, "n", float(n), "q_hat", float(fit.q_hat)),
        ]
        return tag, rows, None
    except (ValueError, np.linalg.LinAlgError) as exc:
        return tag, None, str(exc)


# ---------------------------------------------------------------------------
# tabular experiments on external CSV files


_CONDITION_RE = re.compile(
    r"^\s*([A-Za-z_]\w*)\s*(<=|>=|==|!=|<|>)\s*([-+]?[\d.]+(?:[eE][-+]?\d+)?)\s*$"
)
_OPS = {
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "==": np.equal,
    "!=": np.not_equal,
}


@dataclass(frozen=True)
class SplitPredicate:
    """Disjunction of conjunctions of single-column threshold tests."""

    groups: tuple[tuple[tuple[str, str, float], ...], ...]

    @property
    def columns(self) -> set[str]:
        return {cond[0] for group in self.groups for cond in group}

    def mask(self, table: dict[str, np.ndarray]) -> np.ndarray:
        n = len(next(iter(table.values())))
        out = np.zeros(n, dtype=bool)
        for group in self.groups:
            keep = np.ones(n, dtype=bool)
            for column, op, value in group:
                keep &= _OPS[op](table[column], value)
            out |= keep
        return out


def parse_split_predicate(expr: str) -> SplitPredicate:
    """Parse e.g. "latitude >= 35 and longitude < -120 or z1 > 0".

    `and` binds tighter than `or`; parentheses are not supported.
    """
    parts = re.split(r"\s+(and|or)\s+", expr.strip())
    if len(parts) % 2 == 0:
        raise ValueError(f"malformed split predicate: {expr!r}")
    groups: list[list[tuple[str, str, float]]] = [[]]
    for i, part in enumerate(parts):
        if i % 2 == 1:
            if part == "or":
                groups.append([])
            continue
        m = _CONDITION_RE.match(part)
        if m is None:
            raise ValueError(
                f"cannot parse condition {part!r}; expected 'column op number'"
            )
        groups[-1].append((m.group(1), m.group(2), float(m.group(3))))
    return SplitPredicate(groups=tuple(tuple(g) for g in groups))


def load_table(csv_path, columns) -> dict[str, np.ndarray]:
    """Read the requested numeric columns from a headered CSV file."""
    path = Path(csv_path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: file is empty")
        index = {name: i for i, name in enumerate(header)}
        missing = [c for c in columns if c not in index]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        wanted = [(c, index[c]) for c in columns]
        data: dict[str, list[float]] = {c: [] for c in columns}
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            for name, i in wanted:
                try:
                    data[name].append(float(row[i]))
                except (ValueError, IndexError) as exc:
                    raise ValueError(
                        f"{path}: non-numeric value for column {name!r} on line {row_no}"
                    ) from exc
    return {name: np.asarray(vals) for name, vals in data.items()}


def _tabular_rep(args) -> tuple[str, list[ResultRow] | None, str | None]:
    config, arrays, rep = args
    x_region, y_region, z_region, x_test, y_test = arrays
    try:
        ss = np.random.SeedSequence((config.seed, rep))
        rng = np.random.default_rng(ss)
        n_region = y_region.shape[0]
        n_sub = max(1, int(config.subsample * n_region))
        if n_sub >= n_region:
            raise ValueError("subsample fraction leaves no held-out rows")
        perm = rng.permutation(n_region)
        sub, hold = perm[:n_sub], perm[n_sub:]
        train = Dataset(x=x_region[sub], y=y_region[sub], z=z_region[sub])

        bcf_model = estimator.fit_bcf(train, config.bcf_config(int(rng.integers(_SEED_BOUND))))
        ls_learner = config.learner_ls if config.learner_ls is not None else config.learner_f
        ls_model = estimator.fit_ls(train, ls_learner, seed=int(rng.integers(_SEED_BOUND)))

        rows: list[ResultRow] = []
        splits = {
            "mse_holdout": (x_region[hold], y_region[hold]),
            "mse_test": (x_test, y_test),
        }
        for metric, (x_eval, y_eval) in splits.items():
            rows.append(ResultRow(rep, "bcf", "subsample", config.subsample, metric,
                                  _mse(y_eval, bcf_model.predict(x_eval))))
            rows.append(ResultRow(rep, "ls", "subsample", config.subsample, metric,
                                  _mse(y_eval, ls_model.predict(x_eval))))
            rows.append(ResultRow(rep, "constant", "subsample", config.subsample, metric,
                                  float(np.var(y_eval))))
        return f"rep={rep}", rows, None
    except (ValueError, np.linalg.LinAlgError) as exc:
        return f"rep={rep}", None, str(exc)


def _tabular_arrays(config: ExperimentConfig):
    predicate = parse_split_predicate(config.train_where)
    columns = list(dict.fromkeys(
        list(config.predictors) + list(config.exogenous) + [config.target]
        + sorted(predicate.columns)
    ))
    table = load_table(config.csv_path, columns)
    train_mask = predicate.mask(table)
    if not train_mask.any():
        raise ValueError("empty split: no rows satisfy the training predicate")
    if train_mask.all():
        raise ValueError("empty split: the training predicate leaves no test region")
    x_all = np.column_stack([table[c] for c in config.predictors])
    z_all = np.column_stack([table[c] for c in config.exogenous])
    y_all = table[config.target]
    return (
        x_all[train_mask],
        y_all[train_mask],
        z_all[train_mask],
        x_all[~train_mask],
        y_all[~train_mask],
    )


# ---------------------------------------------------------------------------
# execution and emission


def _execute(worker, tasks, workers: int):
    if workers <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, tasks))


def run_experiment(config: ExperimentConfig) -> tuple[list[ResultRow], dict]:
    """Run all repetitions; returns sorted rows plus execution metadata.

    Repetitions that fail to fit (e.g. a singular fold design) are excluded
    from the rows and listed in the metadata instead of aborting the run.
    """
    if config.experiment == "exp1":
        tasks = [(config, rep) for rep in range(config.repetitions)]
        results = _execute(_exp1_rep, tasks, config.workers)
    elif config.experiment == "exp2":
        tasks = [
            (config, di, ti, ni, rep)
            for di in range(len(config.dims_grid))
            for ti in range(len(config.tau_grid))
            for ni in range(len(config.n_grid))
            for rep in range(config.repetitions)
        ]
        results = _execute(_exp2_cell, tasks, config.workers)
    else:
        arrays = _tabular_arrays(config)
        tasks = [(config, arrays, rep) for rep in range(config.repetitions)]
        results = _execute(_tabular_rep, tasks, config.workers)

    rows: list[ResultRow] = []
    excluded: list[dict] = []
    for tag, task_rows, error in results:
        if error is None:
            rows.extend(task_rows)
        else:
            excluded.append({"task": tag, "error": error})
    meta = {
        "experiment": config.experiment,
        "seed": config.seed,
        "repetitions": config.repetitions,
        "n_rows": len(rows),
        "excluded_count": len(excluded),
        "excluded": excluded,
    }
    return sort_rows(rows), meta


def emit_results(rows, path, fmt: str = "csv") -> None:
    """Write rows in deterministic order as CSV or JSON."""
    ordered = sort_rows(rows)
    path = Path(path)
    try:
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_HEADER)
                for row in ordered:
                    writer.writerow([
                        row.rep, row.method, row.param,
                        _FMT % row.param_value, row.metric, _FMT % row.value,
                    ])
        elif fmt == "json":
            payload = [
                {
                    "rep": row.rep,
                    "method": row.method,
                    "param": row.param,
                    "param_value": row.param_value,
                    "metric": row.metric,
                    "value": row.value,
                }
                for row in ordered
            ]
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2)
                fh.write("\n")
        else:
            raise ValueError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path) -> list[ResultRow]:
    """Parse a result file written by :func:`emit_results`."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return [ResultRow(**entry) for entry in payload]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            ResultRow(int(rep), method, param, float(pv), metric, float(val))
            for rep, method, param, pv, metric, val in reader
        ]


def write_metadata(rows_path, meta: dict) -> Path:
    """Write the execution metadata sidecar next to the result file."""
    path = Path(rows_path).with_suffix(Path(rows_path).suffix + ".meta.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
