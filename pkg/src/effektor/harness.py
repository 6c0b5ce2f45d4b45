"""Experiment protocols, declarative configs, and result serialization.

Three protocols are exposed:

- ``run_rq1``: M repetitions of draw data / fit / estimate, plus one
  ground-truth curve per repetition from fresh samples; emits per-cell
  mse, bias and variance rows against the pooled ground-truth curve.
- ``run_rq2``: as above, but per repetition the fitted models are frozen
  and the effects re-estimated on R fresh datasets; emits the variance
  decomposition rows (total, estimation, model) per cell.
- ``run_rq3``: no learner; the ground-truth effect estimator is run over
  a ladder of sample sizes and compared against the closed-form effects,
  isolating pure estimation error.

Outputs are deterministic functions of (config, master seed): cell streams
are derived by hashing, rows are sorted canonically, and floats are
serialized with shortest round-trip repr, so identical runs produce
byte-identical CSV regardless of worker count.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import decomp, dgp, effects, models, strategies
from .exceptions import ConfigError, EffektorError
from .seeding import derive_seed

SCHEMA_VERSION = 1

CSV_COLUMNS = [
    "setting",
    "n",
    "learner",
    "strategy",
    "kind",
    "feature",
    "metric",
    "m_reps",
    "r_reps",
    "aggregate",
    "flags",
    "values",
]

METRICS_RQ1 = ("mse", "bias", "var")
METRICS_RQ2 = ("var_tot", "var_est", "var_model")


@dataclass(frozen=True)
class LearnerEntry:
    learner: str
    mode: str | None = None
    overrides: tuple[tuple[str, object], ...] = ()

    @property
    def label(self) -> str:
        return self.learner if self.mode is None else f"{self.learner}_{self.mode}"


@dataclass(frozen=True)
class Rq3Ladder:
    sizes: int = 25
    reps: int = 25
    min_exp: float = 1.0
    max_exp: float = 5.0
    full: bool = False

    def sample_sizes(self) -> np.ndarray:
        sizes, lo, hi = (50, 1.0, 6.0) if self.full else (self.sizes, self.min_exp, self.max_exp)
        exps = np.linspace(lo, hi, sizes)
        return np.unique(np.round(10.0**exps).astype(int))

    @property
    def n_reps(self) -> int:
        return 50 if self.full else self.reps


@dataclass(frozen=True)
class ExperimentConfig:
    setting: str
    n: int = 1250
    learners: tuple[LearnerEntry, ...] = (LearnerEntry(models.BOOSTED_TREES, "ot"),)
    strategies: tuple[str, ...] = (strategies.TRAIN_ON_ALL, strategies.HOLDOUT_SPLIT, strategies.KFOLD_CV)
    kinds: tuple[str, ...] = (effects.PD, effects.ALE)
    features: tuple[int, ...] = (0,)
    M: int = 30
    R: int = 30
    G: int = 100
    n_gt: int = 10_000
    snr: float = 5.0
    split_fraction: float = 0.8
    folds: int = 5
    master_seed: int = 0
    rq3: Rq3Ladder = field(default_factory=Rq3Ladder)

    def __post_init__(self):
        spec = dgp.make_spec(self.setting)
        object.__setattr__(self, "setting", spec.name)
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.R < 2:
            raise ConfigError("R must be >= 2")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.G < 3:
            raise ConfigError("G must be >= 3")
        if self.n_gt < 1:
            raise ConfigError("n_gt must be >= 1")
        if strategies.KFOLD_CV in self.strategies and self.n < self.folds:
            raise ConfigError("n must be >= folds for cv strategies")
        for kind in self.kinds:
            if kind not in effects.KINDS:
                raise ConfigError(f"unknown effect kind {kind!r}")
        for s in self.strategies:
            if s not in strategies.STRATEGY_KINDS:
                raise ConfigError(f"unknown strategy {s!r}")
        for f_idx in self.features:
            if not 0 <= f_idx < spec.p:
                raise ConfigError(f"feature {f_idx} out of range for {spec.name} (p={spec.p})")
        if not self.learners:
            raise ConfigError("at least one learner is required")

    def spec(self) -> dgp.DgpSpec:
        return dgp.make_spec(self.setting)

    def strategy_spec(self, kind: str, shuffle_seed: int) -> strategies.StrategySpec:
        return strategies.StrategySpec(
            kind=kind,
            split_fraction=self.split_fraction,
            folds=self.folds,
            shuffle_seed=shuffle_seed,
        )

    def fitter(self, entry: LearnerEntry, spec: dgp.DgpSpec) -> models.Fitter:
        config = models.default_learner_config(
            entry.learner, entry.mode, spec.name, self.n, dict(entry.overrides)
        )
        return models.Fitter(config, spec)

    def canonical_dict(self) -> dict:
        d = asdict(self)
        d["learners"] = [
            {"learner": e.learner, "mode": e.mode, "overrides": dict(e.overrides)}
            for e in self.learners
        ]
        return d

    def config_hash(self) -> str:
        payload = json.dumps(self.canonical_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ResultRow:
    setting: str
    n: int
    learner: str
    strategy: str
    kind: str
    feature: int
    metric: str
    m_reps: int
    r_reps: int
    aggregate: float
    flags: str = ""
    values: tuple[float, ...] = ()

    def sort_key(self):
        return (
            self.setting,
            self.n,
            self.learner,
            self.strategy,
            self.kind,
            self.feature,
            self.metric,
        )


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "schema_version",
    "setting",
    "n",
    "features",
    "kinds",
    "strategies",
    "M",
    "R",
    "G",
    "n_gt",
    "snr",
    "split_fraction",
    "folds",
    "master_seed",
    "learners",
    "rq3",
}
_LEARNER_KEYS = {"learner", "mode", "hyperparameters"}
_RQ3_KEYS = {"sizes", "reps", "min_exp", "max_exp", "full"}


def _load_toml(path: str) -> dict:
    try:
        import tomllib  # py311+
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file is not valid TOML: {exc}") from exc


def _reject_unknown(table: dict, allowed: set[str], where: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def parse_config(path: str) -> ExperimentConfig:
    """Read and validate a declarative TOML experiment description."""
    raw = _load_toml(path)
    _reject_unknown(raw, _TOP_KEYS, "config")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    if "setting" not in raw:
        raise ConfigError("config requires a 'setting'")
    learners = []
    for i, entry in enumerate(raw.get("learners", [{"learner": models.BOOSTED_TREES, "mode": "ot"}])):
        _reject_unknown(entry, _LEARNER_KEYS, f"learners[{i}]")
        if "learner" not in entry:
            raise ConfigError(f"learners[{i}] requires a 'learner'")
        overrides = tuple(sorted(entry.get("hyperparameters", {}).items()))
        learners.append(LearnerEntry(entry["learner"], entry.get("mode"), overrides))
    rq3_raw = raw.get("rq3", {})
    _reject_unknown(rq3_raw, _RQ3_KEYS, "rq3")
    kwargs = dict(
        setting=raw["setting"],
        learners=tuple(learners),
        rq3=Rq3Ladder(**rq3_raw),
    )
    for key in ("n", "M", "R", "G", "n_gt", "master_seed", "folds"):
        if key in raw:
            kwargs[key] = int(raw[key])
    for key in ("snr", "split_fraction"):
        if key in raw:
            kwargs[key] = float(raw[key])
    for key in ("features",):
        if key in raw:
            kwargs[key] = tuple(int(v) for v in raw[key])
    for key in ("kinds", "strategies"):
        if key in raw:
            kwargs[key] = tuple(str(v) for v in raw[key])
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# Shared protocol pieces
# ---------------------------------------------------------------------------

def _grids(cfg: ExperimentConfig, spec: dgp.DgpSpec) -> dict[int, effects.EffectGrid]:
    return {f: effects.build_grid(spec, f, cfg.G) for f in cfg.features}


def _requests(cfg, grids):
    return [(f, kind, grids[f]) for f in cfg.features for kind in cfg.kinds]


def _cells(cfg):
    return [(entry, s_kind) for entry in cfg.learners for s_kind in cfg.strategies]


@dataclass
class _RepOutcome:
    """One repetition's curves (and models) per cell, or its failure."""

    curves: dict = field(default_factory=dict)   # (label, strategy, feature, kind) -> values
    fitted: dict = field(default_factory=dict)   # (label, strategy) -> (models, StrategySpec)
    repeats: dict = field(default_factory=dict)  # (label, strategy, feature, kind, r) -> values
    empty_bins: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)  # (label, strategy) -> message
    gt: dict = field(default_factory=dict)       # (feature, kind) -> values


def _run_repetition(cfg, spec, cal, grids, m, tag, keep_models=False) -> _RepOutcome:
    out = _RepOutcome()
    data = dgp.sample_dataset(spec, cfg.n, cal, derive_seed(cfg.master_seed, tag, "data", m))
    gt_seed = derive_seed(cfg.master_seed, tag, "gt", m)
    for feature, kind, grid in _requests(cfg, grids):
        curve = effects.estimate_ground_truth_effect(spec, feature, kind, grid, cfg.n_gt, gt_seed)
        out.gt[(feature, kind)] = curve.values
    requests = _requests(cfg, grids)
    for entry, s_kind in _cells(cfg):
        label = entry.label
        strategy = cfg.strategy_spec(s_kind, derive_seed(cfg.master_seed, tag, "split", m, s_kind))
        fit_seed = derive_seed(cfg.master_seed, tag, "fit", m, label, s_kind)
        try:
            fitter = cfg.fitter(entry, spec)
            curves, fitted = strategies.strategy_effects(fitter, data, strategy, requests, fit_seed)
        except EffektorError as exc:
            out.failures[(label, s_kind)] = str(exc)
            continue
        for (feature, kind), curve in curves.items():
            out.curves[(label, s_kind, feature, kind)] = curve.values
            if kind == effects.ALE:
                key = (label, s_kind, feature)
                out.empty_bins[key] = out.empty_bins.get(key, 0) + int(
                    curve.diagnostics.get("n_empty_bins", 0)
                )
        if keep_models:
            out.fitted[(label, s_kind)] = (fitted, strategy)
    return out


def _map_reps(cfg, spec, cal, grids, tag, threads, keep_models=False, rep_hook=None):
    """Run all M repetitions, optionally on a thread pool; order-stable."""

    def one(m):
        outcome = _run_repetition(cfg, spec, cal, grids, m, tag, keep_models)
        if rep_hook is not None:
            rep_hook(m, outcome)
        return outcome

    if threads <= 1:
        return [one(m) for m in range(cfg.M)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(cfg.M)))


def _flags_str(parts: list[str]) -> str:
    return ";".join(parts)


# ---------------------------------------------------------------------------
# RQ1: mse / bias / variance across estimation strategies
# ---------------------------------------------------------------------------

def run_rq1(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    spec = cfg.spec()
    cal = dgp.calibrate_noise(spec, cfg.snr)
    grids = _grids(cfg, spec)
    reps = _map_reps(cfg, spec, cal, grids, "rq1", threads)

    rows: list[ResultRow] = []
    for entry, s_kind in _cells(cfg):
        label = entry.label
        n_failed = sum(1 for rep in reps if (label, s_kind) in rep.failures)
        for feature in cfg.features:
            for kind in cfg.kinds:
                stack = [
                    rep.curves[(label, s_kind, feature, kind)]
                    for rep in reps
                    if (label, s_kind, feature, kind) in rep.curves
                ]
                flag_parts = []
                if n_failed:
                    flag_parts.append(f"incomplete={n_failed}")
                empty = sum(rep.empty_bins.get((label, s_kind, feature), 0) for rep in reps)
                if empty:
                    flag_parts.append(f"empty_bins={empty}")
                if not stack:
                    for metric in METRICS_RQ1:
                        rows.append(
                            ResultRow(cfg.setting, cfg.n, label, s_kind, kind, feature, metric,
                                      0, 0, float("nan"), _flags_str(flag_parts), ())
                        )
                    continue
                truth = np.mean([rep.gt[(feature, kind)] for rep in reps], axis=0)
                ens = decomp.CurveEnsemble(np.asarray(stack), truth=truth)
                report = decomp.build_error_report(ens)
                for metric in METRICS_RQ1:
                    per_point = report.per_point[metric]
                    rows.append(
                        ResultRow(cfg.setting, cfg.n, label, s_kind, kind, feature, metric,
                                  ens.m, 0, report.aggregates[metric], _flags_str(flag_parts),
                                  tuple(float(v) for v in per_point))
                    )
    rows.sort(key=ResultRow.sort_key)
    return rows


# ---------------------------------------------------------------------------
# RQ2: variance decomposition with frozen models
# ---------------------------------------------------------------------------

def run_rq2(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    spec = cfg.spec()
    cal = dgp.calibrate_noise(spec, cfg.snr)
    grids = _grids(cfg, spec)

    def with_repeats(m, outcome: _RepOutcome):
        for (label, s_kind), (fitted, strategy) in outcome.fitted.items():
            try:
                for r in range(cfg.R):
                    est_n = strategies.estimation_size(strategy, cfg.n)
                    est_seed = derive_seed(cfg.master_seed, "rq2", "est", m, r, s_kind)
                    fresh = dgp.sample_dataset(spec, est_n, cal, est_seed)
                    fold_seed = derive_seed(cfg.master_seed, "rq2", "fold", m, r, s_kind)
                    for feature in cfg.features:
                        for kind in cfg.kinds:
                            curve = strategies.reestimate(
                                fitted, strategy, fresh, feature, kind, grids[feature], fold_seed
                            )
                            outcome.repeats[(label, s_kind, feature, kind, r)] = curve.values
            except EffektorError as exc:
                outcome.failures[(label, s_kind)] = str(exc)
                for key in [k for k in outcome.curves if k[0] == label and k[1] == s_kind]:
                    del outcome.curves[key]

    reps = _map_reps(cfg, spec, cal, grids, "rq2", threads, keep_models=True, rep_hook=with_repeats)

    rows: list[ResultRow] = []
    for entry, s_kind in _cells(cfg):
        label = entry.label
        n_failed = sum(1 for rep in reps if (label, s_kind) in rep.failures)
        for feature in cfg.features:
            for kind in cfg.kinds:
                ok_reps = [rep for rep in reps if (label, s_kind, feature, kind) in rep.curves]
                flag_parts = []
                if n_failed:
                    flag_parts.append(f"incomplete={n_failed}")
                if not ok_reps:
                    for metric in METRICS_RQ2:
                        rows.append(
                            ResultRow(cfg.setting, cfg.n, label, s_kind, kind, feature, metric,
                                      0, 0, float("nan"), _flags_str(flag_parts), ())
                        )
                    continue
                curves = np.asarray([rep.curves[(label, s_kind, feature, kind)] for rep in ok_reps])
                repeats = np.asarray(
                    [
                        [rep.repeats[(label, s_kind, feature, kind, r)] for r in range(cfg.R)]
                        for rep in ok_reps
                    ]
                )
                ens = decomp.CurveEnsemble(curves, truth=None, repeats=repeats)
                var_tot = decomp.var_hat(ens)
                var_est = decomp.var_est_hat(ens)
                var_model, missing = decomp.split_variance(var_tot, var_est)
                n_missing = int(missing.sum())
                per_metric = {"var_tot": var_tot, "var_est": var_est, "var_model": var_model}
                for metric in METRICS_RQ2:
                    parts = list(flag_parts)
                    if metric == "var_model" and n_missing:
                        parts.append(f"var_model_missing={n_missing}")
                    agg = decomp.aggregate({metric: per_metric[metric]})[metric]
                    rows.append(
                        ResultRow(cfg.setting, cfg.n, label, s_kind, kind, feature, metric,
                                  ens.m, cfg.R, agg, _flags_str(parts),
                                  tuple(float(v) for v in per_metric[metric]))
                    )
    rows.sort(key=ResultRow.sort_key)
    return rows


# ---------------------------------------------------------------------------
# RQ3: estimation error of the ground-truth estimator vs sample size
# ---------------------------------------------------------------------------

def run_rq3(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    spec = cfg.spec()
    if spec.name not in (dgp.SIMPLE_NORMAL_CORRELATED, dgp.FRIEDMAN1):
        raise ConfigError("rq3 requires a setting with closed-form effects")
    grids = _grids(cfg, spec)
    sizes = cfg.rq3.sample_sizes()
    n_reps = cfg.rq3.n_reps

    refs: dict[tuple[int, str], np.ndarray] = {}
    for feature in cfg.features:
        grid = grids[feature]
        for kind in cfg.kinds:
            analytic = dgp.analytic_pd if kind == effects.PD else dgp.analytic_ale
            raw = np.asarray(analytic(spec, feature, grid.points, centered=False))
            vals = raw[grid.eval_mask]
            w = effects.centering_weights(kind, grid)
            refs[(feature, kind)] = vals - w @ vals

    tasks = [(f, kind, int(n)) for f in cfg.features for kind in cfg.kinds for n in sizes]

    def one(task):
        feature, kind, n = task
        grid = grids[feature]
        ref = refs[(feature, kind)]
        errors = []
        n_failed = 0
        for rep in range(n_reps):
            seed = derive_seed(cfg.master_seed, "rq3", feature, kind, n, rep)
            try:
                curve = effects.estimate_ground_truth_effect(spec, feature, kind, grid, n, seed)
            except EffektorError:
                n_failed += 1
                continue
            errors.append(float(np.mean((curve.values - ref) ** 2)))
        flags = []
        if n_failed:
            flags.append(f"failed_reps={n_failed}")
        if not errors:
            flags.append("missing")
            agg = float("nan")
        else:
            agg = float(np.mean(errors))
        return ResultRow(cfg.setting, n, models.GROUND_TRUTH, "direct", kind, feature, "mse",
                         len(errors), 0, agg, _flags_str(flags), ())

    if threads <= 1:
        rows = [one(t) for t in tasks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, tasks))
    rows.sort(key=ResultRow.sort_key)
    return rows


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _float_str(x: float) -> str:
    return repr(float(x))


def write_results(rows: list[ResultRow], path) -> None:
    """Fixed-column CSV, canonically sorted, shortest round-trip floats."""
    rows = sorted(rows, key=ResultRow.sort_key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.setting,
                    row.n,
                    row.learner,
                    row.strategy,
                    row.kind,
                    row.feature,
                    row.metric,
                    row.m_reps,
                    row.r_reps,
                    _float_str(row.aggregate),
                    row.flags,
                    " ".join(_float_str(v) for v in row.values),
                ]
            )


def read_results(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                ResultRow(
                    setting=rec["setting"],
                    n=int(rec["n"]),
                    learner=rec["learner"],
                    strategy=rec["strategy"],
                    kind=rec["kind"],
                    feature=int(rec["feature"]),
                    metric=rec["metric"],
                    m_reps=int(rec["m_reps"]),
                    r_reps=int(rec["r_reps"]),
                    aggregate=float(rec["aggregate"]),
                    flags=rec["flags"],
                    values=tuple(float(v) for v in rec["values"].split()) if rec["values"] else (),
                )
            )
    return rows


def write_manifest(cfg: ExperimentConfig, rq: int, csv_path, path) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "rq": rq,
        "config": cfg.canonical_dict(),
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.master_seed,
        "results_csv": str(csv_path),
        "versions": {
            "effektor": "0.1.0",
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def has_failures(rows: list[ResultRow]) -> bool:
    return any("incomplete" in row.flags or "missing" in row.flags for row in rows)


RUNNERS = {1: run_rq1, 2: run_rq2, 3: run_rq3}
