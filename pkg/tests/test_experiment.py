import numpy as np
import pytest

from popdescent.errors import ConfigError, TestSetAccessError
from popdescent.harness import experiment as ex
from popdescent.harness.accounting import gradient_steps
from popdescent.harness.config import load_config
from popdescent.harness.report import write_report

SMALL = dict(
    data__n_samples=800,
    data__train_cap=0,
    popdescent__iterations=3,
    popdescent__batches_per_iteration=6,
    grid__iterations=2,
    grid__learning_rates=[0.01, 0.001],
    grid__regularization_rates=[0.001],
    random_search__trials=3,
    random_search__max_epochs=2,
    schedule_search__trials=3,
    schedule_search__max_epochs=2,
    ablation__iterations=2,
    ablation__population_size=4,
    ablation__elite=2,
    sensitivity__iterations=2,
    sensitivity__population_size=4,
    sensitivity__elite=2,
    sample_dist__draws=100_000,
    sample_dist__init_draws=1000,
)


def small(**changes):
    return load_config(**{**SMALL, **changes})


def test_benchmark_rows_and_accounting():
    cfg = small(experiment__seeds=[0, 1])
    report = ex.run_experiment(cfg)
    assert len(report.rows) == 2 * 5
    assert all(r["status"] == "ok" for r in report.rows)
    for r in report.rows:
        assert r["gradient_steps"] == r["expected_steps"]
    pd = [r for r in report.rows if r["method"] == "popdescent"]
    assert pd[0]["gradient_steps"] == gradient_steps(3, 5, 6, 1)
    assert report.data_source == "two_moons"
    assert set(report.traces) == {(m, s) for m in report.methods for s in (0, 1)}


def test_deterministic_csv(tmp_path):
    cfg = small(experiment__seeds=[3])
    write_report(ex.run_experiment(cfg), tmp_path / "a", ["csv"])
    write_report(ex.run_experiment(cfg), tmp_path / "b", ["csv"])
    for name in ("results.csv", "traces.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_shared_start_between_population_methods():
    # iteration 0 is scored before any mutation, so both report the same first loss
    cfg = small(experiment__seeds=[0], experiment__methods=["popdescent", "population_fixed"])
    report = ex.run_experiment(cfg)
    a = report.traces[("popdescent", 0)][0]
    b = report.traces[("population_fixed", 0)][0]
    assert a == b


def test_failure_recorded_and_run_continues(monkeypatch):
    real = ex.run_grid

    def broken(*args, **kwargs):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(ex, "run_grid", broken)
    report = ex.run_experiment(small(experiment__seeds=[0], experiment__methods=["grid_search", "popdescent"]))
    status = {r["method"]: r["status"] for r in report.rows}
    assert status == {"grid_search": "failed", "popdescent": "ok"}
    assert "diverged" in report.rows[0]["error"]
    monkeypatch.setattr(ex, "run_grid", real)


def test_accounting_mismatch_is_a_failure(monkeypatch):
    real = ex.run_popdescent

    def miscounted(*args, **kwargs):
        out = real(*args, **kwargs)
        out.expected_steps += 1
        return out

    monkeypatch.setattr(ex, "run_popdescent", miscounted)
    report = ex.run_experiment(small(experiment__seeds=[0], experiment__methods=["popdescent"]))
    assert report.rows[0]["status"] == "failed"
    assert "AccountingError" in report.rows[0]["error"]


def test_second_test_access_aborts(monkeypatch):
    real = ex.evaluate_trial

    def greedy(mode, label, seed, outcome, model, data):
        row = real(mode, label, seed, outcome, model, data)
        data.test.evaluate((label, seed), lambda b: 0.0)
        return row

    monkeypatch.setattr(ex, "evaluate_trial", greedy)
    with pytest.raises(TestSetAccessError):
        ex.run_experiment(small(experiment__seeds=[0], experiment__methods=["popdescent"]))


def test_ablation_variants():
    report = ex.run_experiment(small(experiment__mode="ablation", experiment__seeds=[0]))
    assert report.methods == ["randomization", "no_randomization", "cv_selection", "train_selection"]
    assert report.summary["ablation_flags"]["train_selection"] == ("on", "off", "off")
    rows = {r["method"]: r for r in report.rows}
    assert rows["cv_selection"]["regularization_rate"] == 0.0
    assert rows["randomization"]["regularization_rate"] > 0
    # no_randomization never mutates, so the learning rate stays at the default
    assert rows["no_randomization"]["learning_rate"] == 0.001
    assert all(r["gradient_steps"] == 2 * 4 * 6 for r in report.rows)


def test_sensitivity_summary():
    report = ex.run_experiment(small(experiment__mode="sensitivity", experiment__seeds=[0, 1]))
    assert report.methods[0] == "popdescent[learning_rate=0.01]"
    assert len(report.methods) == 6
    summary = report.summary["sensitivity"]
    for method in ("popdescent", "population_fixed"):
        per_seed = summary[method]["per_seed_sd"]
        assert len(per_seed) == 2
        vals = [r["test_loss"] for r in report.rows if r["method"].startswith(method + "[") and r["seed"] == 0]
        assert per_seed[0] == pytest.approx(float(np.std(vals)))
    fixed = [r for r in report.rows if r["method"] == "population_fixed[learning_rate=0.05]"]
    assert all(r["learning_rate"] == 0.05 for r in fixed)


def test_sample_dist():
    report = ex.run_experiment(small(experiment__mode="sample-dist", experiment__seeds=[0]))
    rows = {r["method"]: r for r in report.rows}
    assert abs(rows["log_symmetry_base10"]["p_low"] - 0.1587) < 0.005
    assert -4.3 < rows["init_learning_rate"]["log10_median"] < -3.7


def test_fmnist_layout_is_used(tmp_path):
    from popdescent.harness.data import FMNIST_FILES, write_idx

    rng = np.random.default_rng(0)
    for part, n in (("train", 120), ("test", 30)):
        images = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=n, dtype=np.uint8)
        names = FMNIST_FILES[part]
        write_idx(images, labels, tmp_path / names[0], tmp_path / names[1])
    cfg = small(
        experiment__seeds=[0],
        experiment__methods=["popdescent"],
        data__data_dir=str(tmp_path),
        data__train_cap=64,
        data__cv_size=40,
        model__hidden=[8],
    )
    report = ex.run_experiment(cfg)
    assert report.data_source == "fmnist"
    assert report.rows[0]["status"] == "ok"


def test_fmnist_required_but_missing(tmp_path):
    cfg = small(experiment__seeds=[0], experiment__methods=["popdescent"], data__source="fmnist", data__data_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        ex.run_experiment(cfg)


def test_build_model_regularize_options():
    cfg = small()
    data, _ = ex.prepare_data(cfg, 0)
    assert ex.build_model(cfg, data).spec.regularized == (0,)
    assert ex.build_model(cfg, data, "all").spec.regularized == (0, 1)
    assert ex.build_model(cfg, data, "none").spec.regularized == ()
    assert ex.build_model(cfg, data, "1").spec.regularized == (1,)
    assert ex.build_model(cfg, data).spec.widths == (2, 32, 2)
    with pytest.raises(ConfigError):
        ex.build_model(cfg, data, "first")
