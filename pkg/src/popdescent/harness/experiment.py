"""Experiment modes: benchmark, convergence, ablation, sensitivity, sample-dist.

Each (method, seed) pair runs the full pipeline on its own seeded data split
and RNG hierarchy, is evaluated once on the held-out test partition, and
becomes one report row. A failing method is recorded and the run continues;
a second test-partition access aborts the whole run.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..baselines import LogRange, ScheduleSpace, SearchSpace, Trainer, UniformRange, grid_search, random_search
from ..core import PopDescentConfig, init_population, run
from ..errors import ConfigError, TestSetAccessError
from ..individual import LEARNING_RATE, REGULARIZATION_RATE, Batch, Individual
from ..localsearch import MlpModel, MlpSpec, evaluate_loss
from ..mutation import MutationConfig, factor_tail_fractions, init_hyperparams, log_symmetry_check
from ..streams import BatchStream, substream
from .accounting import gradient_steps, grid_steps, search_steps
from .config import ExperimentConfig
from .data import DatasetSplit, find_fmnist, load_idx, make_synthetic, resolve_data_dir, split, split_fmnist

log = logging.getLogger(__name__)

ROW_COLUMNS = [
    "mode",
    "method",
    "seed",
    "status",
    "test_loss",
    "train_loss",
    "test_accuracy",
    "gradient_steps",
    "expected_steps",
    "best_cv_loss",
    "best_ever_cv_fitness",
    "learning_rate",
    "regularization_rate",
    "error",
]


class AccountingError(RuntimeError):
    pass


@dataclass
class TrialRow:
    mode: str
    method: str
    seed: int
    status: str = "ok"
    test_loss: float = math.nan
    train_loss: float = math.nan
    test_accuracy: float = math.nan
    gradient_steps: int = 0
    expected_steps: int = 0
    best_cv_loss: float = math.nan
    best_ever_cv_fitness: float = math.nan
    learning_rate: float = math.nan
    regularization_rate: float = math.nan
    error: str = ""


@dataclass
class TrialReport:
    mode: str
    methods: list[str]
    seeds: list[int]
    rows: list[dict]
    columns: list[str] = field(default_factory=lambda: list(ROW_COLUMNS))
    traces: dict[tuple[str, int], list[tuple[int, float]]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    data_source: str = ""

    def ok_rows(self, method: str) -> list[dict]:
        return [r for r in self.rows if r["method"] == method and r.get("status") == "ok"]

    def values(self, method: str, column: str) -> np.ndarray:
        return np.array([r[column] for r in self.ok_rows(method)], dtype=np.float64)

    def aggregates(self) -> dict[str, dict[str, float]]:
        out = {}
        for method in self.methods:
            agg = {"n_ok": len(self.ok_rows(method)), "n_failed": sum(
                1 for r in self.rows if r["method"] == method and r.get("status") != "ok")}
            for column in ("test_loss", "train_loss", "gradient_steps"):
                vals = self.values(method, column) if agg["n_ok"] else np.array([])
                agg[f"{column}_mean"] = float(np.mean(vals)) if vals.size else math.nan
                agg[f"{column}_sd"] = float(np.std(vals)) if vals.size else math.nan
                agg[f"{column}_median"] = float(np.median(vals)) if vals.size else math.nan
            out[method] = agg
        return out


# --------------------------------------------------------------------------- data


_IDX_CACHE: dict = {}


def prepare_data(cfg: ExperimentConfig, seed: int) -> tuple[DatasetSplit, str]:
    """Split for one seed. ``auto`` uses Fashion-MNIST when the IDX files exist."""
    d = cfg.data
    source = d.source
    files = find_fmnist(resolve_data_dir(d.data_dir)) if source in ("auto", "fmnist") else None
    if source == "fmnist" and files is None:
        raise ConfigError("data.source = fmnist but no IDX files were found (set --data-dir or POPDESCENT_DATA_DIR)")
    if files is not None:
        key = tuple(str(p) for pair in files.values() for p in pair)
        if key not in _IDX_CACHE:
            _IDX_CACHE[key] = (load_idx(*files["train"]), load_idx(*files["test"]))
        train, test = _IDX_CACHE[key]
        if d.test_cap:
            test = test.subset(np.arange(min(d.test_cap, len(test))))
        return split_fmnist(train, test, substream(seed, "split"), d.train_cap, d.cv_size), "fmnist"
    kind = "two_moons" if source == "auto" else source
    dataset = make_synthetic(kind, d.n_samples, d.noise, substream(d.seed, "data", kind))
    return split(dataset, d.fractions, substream(seed, "split"), train_cap=d.train_cap or None), kind


def build_model(cfg: ExperimentConfig, data: DatasetSplit, regularize: str | None = None, hidden=None) -> MlpModel:
    hidden = list(hidden or cfg.model.hidden) or ([128] if data.n_features > 2 else [32])
    widths = (data.n_features, *hidden, data.n_classes)
    n_layers = len(widths) - 1
    spec_reg = (regularize or cfg.model.regularize).strip()
    if spec_reg == "none":
        reg = ()
    elif spec_reg == "hidden":
        reg = (0,)
    elif spec_reg == "all":
        reg = tuple(range(n_layers))
    else:
        try:
            reg = tuple(int(x) for x in spec_reg.split(","))
        except ValueError:
            raise ConfigError(f"model.regularize: cannot parse {spec_reg!r}") from None
    return MlpModel(MlpSpec(widths, reg))


def _streams(cfg: ExperimentConfig, data: DatasetSplit):
    bs = cfg.popdescent.batch_size
    return (
        BatchStream(data.train.inputs, data.train.targets, bs),
        BatchStream(data.cv.inputs, data.cv.targets, min(bs, len(data.cv))),
    )


# ------------------------------------------------------------------------ methods


@dataclass
class MethodOutcome:
    individual: Individual
    gradient_steps: int
    expected_steps: int
    trace: list[tuple[int, float]]
    best_cv_loss: float
    best_ever_cv_fitness: float = math.nan


@dataclass
class PopDescentSettings:
    population_size: int
    elite: int
    iterations: int
    learning_rate: float
    regularization_rate: float
    mutate: bool = True
    fitness_source: str = "cv"


def _pd_settings(cfg: ExperimentConfig, **changes) -> PopDescentSettings:
    pd = cfg.popdescent
    base = PopDescentSettings(pd.population_size, pd.elite, pd.iterations, pd.learning_rate, pd.regularization_rate)
    return replace(base, **changes)


def _mutation_config(cfg: ExperimentConfig) -> MutationConfig:
    m = cfg.mutation
    return MutationConfig(beta1=m.beta1, beta2=m.beta2, base=m.base)


def run_popdescent(cfg, settings: PopDescentSettings, model, train_stream, cv_stream, seed) -> MethodOutcome:
    pd = cfg.popdescent
    mcfg = _mutation_config(cfg)
    alpha = None
    if pd.init == "default":
        alpha = {LEARNING_RATE: settings.learning_rate, REGULARIZATION_RATE: settings.regularization_rate}
    pop = init_population(model, settings.population_size, settings.elite, seed, alpha=alpha, mutation=mcfg)
    config = PopDescentConfig(
        m=settings.elite,
        iterations=settings.iterations,
        batches_per_iteration=pd.batches_per_iteration,
        epochs_per_iteration=pd.epochs_per_iteration,
        cv_batch_size=pd.cv_batch_size,
        optimizer=pd.optimizer,
        mutation=mcfg,
        mutate=settings.mutate,
        fitness_source=settings.fitness_source,
    )
    result = run(pop, model, train_stream, cv_stream, config, seed)
    trace, steps = [], 0
    for t in result.traces:
        steps += t.gradient_steps
        trace.append((steps, t.best_loss))
    expected = gradient_steps(settings.iterations, settings.population_size, pd.batches_per_iteration, pd.epochs_per_iteration)
    return MethodOutcome(result.best, result.gradient_steps, expected, trace, result.best_loss, result.best_ever_fitness)


def _popdescent_budget(cfg: ExperimentConfig) -> int:
    pd = cfg.popdescent
    return gradient_steps(pd.iterations, pd.population_size, pd.batches_per_iteration, pd.epochs_per_iteration)


def run_grid(cfg, model, train_stream, cv_stream, seed) -> MethodOutcome:
    regs = cfg.grid.regularization_rates if model.spec.regularized else [0.0]
    space = SearchSpace({LEARNING_RATE: cfg.grid.learning_rates, REGULARIZATION_RATE: regs})
    trainer = Trainer(model, train_stream, cv_stream, seed, cfg.popdescent.optimizer)
    budget = cfg.grid.iterations * cfg.popdescent.batches_per_iteration
    res = grid_search(space, trainer, budget, chunk=cfg.popdescent.batches_per_iteration)
    expected = grid_steps(len(space.grid()), budget)
    return MethodOutcome(res.individual, trainer.steps, expected, res.trace, res.cv_loss)


def run_random(cfg, model, train_stream, cv_stream, seed, schedules: bool = False) -> MethodOutcome:
    section = cfg.schedule_search if schedules else cfg.random_search
    rs = cfg.random_search
    space = SearchSpace({
        LEARNING_RATE: LogRange(rs.lr_low, rs.lr_high),
        REGULARIZATION_RATE: LogRange(rs.reg_low, rs.reg_high),
    })
    sched_space = None
    if schedules:
        ss = cfg.schedule_search
        sched_space = ScheduleSpace(
            decay_rate=UniformRange(ss.decay_rate_low, ss.decay_rate_high),
            decay_steps=(ss.decay_steps_low, ss.decay_steps_high),
            end_lr=LogRange(ss.end_lr_low, ss.end_lr_high),
            power=UniformRange(ss.power_low, ss.power_high),
        )
    trainer = Trainer(model, train_stream, cv_stream, seed, cfg.popdescent.optimizer)
    res = random_search(
        space,
        section.trials,
        section.probe_epochs,
        trainer,
        substream(seed, "schedule_search" if schedules else "random_search"),
        max_epochs=section.max_epochs,
        patience=section.patience,
        step_budget=section.step_budget or _popdescent_budget(cfg),
        schedules=sched_space,
    )
    expected = search_steps(section.trials, section.probe_epochs, res.epochs_trained, trainer.batches_per_epoch)
    return MethodOutcome(res.individual, trainer.steps, expected, res.trace, res.cv_loss)


def _run_method(cfg, method, model, train_stream, cv_stream, seed, settings=None) -> MethodOutcome:
    if method == "popdescent":
        return run_popdescent(cfg, settings or _pd_settings(cfg), model, train_stream, cv_stream, seed)
    if method == "population_fixed":
        return run_popdescent(cfg, settings or _pd_settings(cfg, mutate=False), model, train_stream, cv_stream, seed)
    if method == "grid_search":
        return run_grid(cfg, model, train_stream, cv_stream, seed)
    if method == "random_search":
        return run_random(cfg, model, train_stream, cv_stream, seed)
    if method == "schedule_search":
        return run_random(cfg, model, train_stream, cv_stream, seed, schedules=True)
    raise ConfigError(f"unknown method {method!r}")


def evaluate_trial(mode, label, seed, outcome: MethodOutcome, model, data: DatasetSplit) -> TrialRow:
    if outcome.gradient_steps != outcome.expected_steps:
        raise AccountingError(
            f"{label}: counted {outcome.gradient_steps} gradient steps, formula gives {outcome.expected_steps}")
    ind = outcome.individual
    train_loss = evaluate_loss(model, ind.theta, Batch(data.train.inputs, data.train.targets)).data_loss

    def _test(batch):
        return evaluate_loss(model, ind.theta, batch).data_loss, model.accuracy(ind.theta, batch)

    test_loss, test_acc = data.test.evaluate((label, seed), _test)
    return TrialRow(
        mode=mode,
        method=label,
        seed=seed,
        test_loss=test_loss,
        train_loss=train_loss,
        test_accuracy=test_acc,
        gradient_steps=outcome.gradient_steps,
        expected_steps=outcome.expected_steps,
        best_cv_loss=outcome.best_cv_loss,
        best_ever_cv_fitness=outcome.best_ever_cv_fitness,
        learning_rate=ind.alpha.get(LEARNING_RATE, math.nan),
        regularization_rate=ind.alpha.get(REGULARIZATION_RATE, 0.0) if model.spec.regularized else 0.0,
    )


# -------------------------------------------------------------------------- modes


@dataclass
class _Job:
    label: str
    method: str
    settings: PopDescentSettings | None = None
    regularize: str | None = None
    hidden: list | None = None


def _jobs(cfg: ExperimentConfig) -> list[_Job]:
    mode = cfg.experiment.mode
    if mode in ("benchmark", "convergence"):
        return [_Job(m, m) for m in cfg.experiment.methods]
    if mode == "ablation":
        ab = cfg.ablation
        table = {
            "randomization": dict(mutate=True, fitness_source="cv", regularize="all"),
            "no_randomization": dict(mutate=False, fitness_source="cv", regularize="all"),
            "cv_selection": dict(mutate=True, fitness_source="cv", regularize="none"),
            "train_selection": dict(mutate=True, fitness_source="train", regularize="none"),
        }
        jobs = []
        for variant in ab.variants:
            opts = dict(table[variant])
            regularize = opts.pop("regularize")
            settings = _pd_settings(cfg, population_size=ab.population_size, elite=ab.elite, iterations=ab.iterations, **opts)
            jobs.append(_Job(variant, "popdescent", settings, regularize, ab.hidden or None))
        return jobs
    if mode == "sensitivity":
        sv = cfg.sensitivity
        jobs = []
        for method in sv.methods:
            for value in sv.values:
                changes = dict(population_size=sv.population_size, elite=sv.elite, iterations=sv.iterations,
                               mutate=(method == "popdescent"))
                if sv.parameter == "learning_rate":
                    changes["learning_rate"] = float(value)
                else:
                    changes["iterations"] = int(value)
                label = f"{method}[{sv.parameter}={value:g}]"
                jobs.append(_Job(label, method, _pd_settings(cfg, **changes)))
        return jobs
    raise ConfigError(f"mode {mode!r} has no training jobs")


ABLATION_FLAGS = {
    "randomization": ("on", "on", "on"),
    "no_randomization": ("off", "on", "on"),
    "cv_selection": ("on", "on", "off"),
    "train_selection": ("on", "off", "off"),
}


def run_experiment(cfg: ExperimentConfig) -> TrialReport:
    cfg.validate()
    mode = cfg.experiment.mode
    if mode == "sample-dist":
        return run_sample_dist(cfg)
    jobs = _jobs(cfg)
    seeds = list(cfg.experiment.seeds)
    report = TrialReport(mode=mode, methods=[j.label for j in jobs], seeds=seeds, rows=[])
    for seed in seeds:
        data, source = prepare_data(cfg, seed)
        report.data_source = source
        train_stream, cv_stream = _streams(cfg, data)
        expected_keys = []
        for job in jobs:
            log.info("mode=%s seed=%d method=%s", mode, seed, job.label)
            try:
                model = build_model(cfg, data, job.regularize, job.hidden)
                outcome = _run_method(cfg, job.method, model, train_stream, cv_stream, seed, job.settings)
                row = evaluate_trial(mode, job.label, seed, outcome, model, data)
                expected_keys.append((job.label, seed))
                report.traces[(job.label, seed)] = outcome.trace
            except TestSetAccessError:
                raise
            except Exception as exc:  # recorded per (method, seed); the run continues
                log.warning("%s failed for seed %d: %s", job.label, seed, exc)
                row = TrialRow(mode, job.label, seed, status="failed", error=f"{type(exc).__name__}: {exc}")
            report.rows.append(asdict(row))
        data.test.verify(expected_keys)
    if mode == "sensitivity":
        report.summary["sensitivity"] = sensitivity_summary(report, cfg)
    if mode == "ablation":
        report.summary["ablation_flags"] = {v: ABLATION_FLAGS[v] for v in cfg.ablation.variants}
    return report


def sensitivity_summary(report: TrialReport, cfg: ExperimentConfig) -> dict:
    """Per method: spread (population sd) of the final test loss across the sweep, per seed."""
    sv = cfg.sensitivity
    out = {}
    for method in sv.methods:
        labels = [f"{method}[{sv.parameter}={v:g}]" for v in sv.values]
        per_seed = []
        for seed in report.seeds:
            vals = [r["test_loss"] for r in report.rows
                    if r["method"] in labels and r["seed"] == seed and r["status"] == "ok"]
            if len(vals) == len(labels):
                per_seed.append(float(np.std(vals)))
        pooled = [r["test_loss"] for r in report.rows if r["method"] in labels and r["status"] == "ok"]
        out[method] = {
            "per_seed_sd": per_seed,
            "median_sd": float(np.median(per_seed)) if per_seed else math.nan,
            "mean_test_loss": float(np.mean(pooled)) if pooled else math.nan,
        }
    return out


SAMPLE_DIST_COLUMNS = ["mode", "method", "seed", "draws", "p_low", "p_high", "log10_median", "log10_sd"]


def run_sample_dist(cfg: ExperimentConfig) -> TrialReport:
    """Empirical checks of the mutation and initialization samplers."""
    sd = cfg.sample_dist
    mcfg = _mutation_config(cfg)
    methods = ["log_symmetry_base10", "log_symmetry_base2", "init_learning_rate", "init_regularization_rate"]
    rows = []
    for seed in cfg.experiment.seeds:
        p_low, p_high = log_symmetry_check(1.0, 10.0, sd.draws, substream(seed, "symmetry", 10))
        rows.append(dict(mode="sample-dist", method=methods[0], seed=seed, draws=sd.draws, p_low=p_low, p_high=p_high,
                         log10_median=math.nan, log10_sd=math.nan))
        p_low, p_high = factor_tail_fractions(1.0, 2.0, sd.draws, substream(seed, "symmetry", 2), factor=2.0)
        rows.append(dict(mode="sample-dist", method=methods[1], seed=seed, draws=sd.draws, p_low=p_low, p_high=p_high,
                         log10_median=math.nan, log10_sd=math.nan))
        rng = substream(seed, "init-draws")
        draws = [init_hyperparams(mcfg, rng) for _ in range(sd.init_draws)]
        for name, key in ((methods[2], LEARNING_RATE), (methods[3], REGULARIZATION_RATE)):
            logs = np.log10([a[key] for a in draws])
            rows.append(dict(mode="sample-dist", method=name, seed=seed, draws=sd.init_draws, p_low=math.nan,
                             p_high=math.nan, log10_median=float(np.median(logs)), log10_sd=float(np.std(logs))))
    return TrialReport("sample-dist", methods, list(cfg.experiment.seeds), rows, columns=list(SAMPLE_DIST_COLUMNS))
