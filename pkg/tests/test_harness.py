import json
import math

import numpy as np
import pytest

from nc_lab import oracles
from nc_lab.errors import DomainError
from nc_lab.harness import (
    CSV_HEADER,
    ExperimentConfig,
    MetricRecord,
    SweepSpec,
    TrainResult,
    check_coupled_rowsum_recursion,
    check_coupled_sign_oscillation,
    check_decoupled_rowsum_decay,
    check_decoupled_sign_plateau,
    config_from_mapping,
    config_to_mapping,
    derive_run_seed,
    emit_csv,
    emit_summary_json,
    format_metric_csv,
    load_config,
    parse_config_text,
    parse_metric_csv,
    parse_sweep_summary_csv,
    pivot_csv,
    regress_rows,
    regress_runs,
    run_sweep,
    run_training,
    sweep_summary_csv,
    write_sweep_outputs,
)
from nc_lab.metrics import METRIC_KEYS
from nc_lab.optim import LRSchedule, OptimizerConfig


def _ufm_sign_config(kind, lr, wd, steps, schedule="constant", shrink=0.5, k=4,
                     metric_period=None):
    wd_field = {"coupled_wd": wd} if kind.endswith("_coupled") else {"decoupled_wd": wd}
    sched = LRSchedule(kind=schedule, base_lr=lr, shrink_factor=shrink)
    return ExperimentConfig(
        model_kind="ufm_fixed_features",
        init="zero",
        num_classes=k,
        per_class=1,
        epochs=steps,
        metric_period=metric_period or max(1, steps // 20),
        optimizer=OptimizerConfig(kind=kind, lr=lr, schedule=sched, **wd_field),
    )


def _mlp_config(**overrides):
    opt = overrides.pop("optimizer", None) or OptimizerConfig(
        kind="sgd_coupled", lr=0.05, momentum=0.9, coupled_wd=0.01
    )
    base = dict(model_kind="mlp", num_classes=4, dim=8, per_class=25,
                epochs=60, metric_period=10, optimizer=opt)
    base.update(overrides)
    return ExperimentConfig(**base)


def test_csv_header_contract():
    assert CSV_HEADER == (
        "epoch,lr,train_loss,train_acc,nc0,nc0_alpha,nc0_normalized,nc1,nc2,nc2n,"
        "nc2a,nc2w,nc2wn,nc2wa,nc2m,nc3,nc4,sigma_min_w,sigma_avg_w,sigma_min_m,sigma_avg_m"
    )


def test_config_parse_round_trip():
    text = """
# experiment file
model.kind = mlp
model.hidden_sizes = 16,16
data.k = 4
data.per_class = 25
optimizer.kind = sgd_decoupled
optimizer.lr = 0.05
optimizer.momentum = 0.9
optimizer.decoupled_wd = 0.1
optimizer.schedule = step_decay
optimizer.decay_factor = 10
optimizer.milestone_fractions = 1/3,2/3
train.epochs = 300
train.batch_size = full
train.seed = 7
train.metric_period = 10
"""
    mapping = parse_config_text(text)
    cfg = config_from_mapping(mapping)
    assert cfg.model_kind == "mlp"
    assert cfg.hidden_sizes == (16, 16)
    assert cfg.optimizer.kind == "sgd_decoupled"
    assert cfg.optimizer.schedule.kind == "step_decay"
    assert cfg.optimizer.schedule.milestone_fractions == pytest.approx((1 / 3, 2 / 3))
    assert cfg.batch_size is None
    assert cfg.seed == 7
    echo = config_to_mapping(cfg)
    again = config_from_mapping({k: str(v) for k, v in echo.items()})
    assert again == cfg


def test_config_errors():
    with pytest.raises(DomainError):
        parse_config_text("train.epochs = 5\ntrain.epochs = 6\n")
    with pytest.raises(DomainError):
        parse_config_text("not a key value line\n")
    with pytest.raises(DomainError):
        config_from_mapping({"bogus.key": "1"})
    with pytest.raises(DomainError):
        config_from_mapping({"train.epochs": "0"})
    with pytest.raises(DomainError):
        config_from_mapping({"train.epochs": "many"})
    with pytest.raises(DomainError):
        ExperimentConfig(model_kind="mlp", init="zero")
    with pytest.raises(DomainError):
        ExperimentConfig(model_kind="submarine")


def test_load_config_path_error(tmp_path):
    with pytest.raises(OSError) as exc:
        load_config(tmp_path / "missing.cfg")
    assert "missing.cfg" in str(exc.value)


def test_metric_csv_round_trip_and_empty():
    assert format_metric_csv([]) == CSV_HEADER + "\n"
    values = {k: v for k, v in zip(METRIC_KEYS, np.random.default_rng(26).uniform(0, 1, 13))}
    values["nc2a"] = None
    rec = MetricRecord(epoch=3, lr=0.012345678901234567, train_loss=1.0 / 3.0,
                       train_acc=0.99, values=values,
                       sigma_min_w=1e-17, sigma_avg_w=2.5, sigma_min_m=None, sigma_avg_m=0.5)
    text = format_metric_csv([rec])
    back = parse_metric_csv(text)
    assert len(back) == 1
    got = back[0]
    assert got.epoch == 3
    assert got.lr == rec.lr
    assert got.train_loss == rec.train_loss
    for k in METRIC_KEYS:
        assert got.values[k] == values[k]
    assert got.values["nc2a"] is None
    assert got.sigma_min_w == 1e-17
    assert got.sigma_min_m is None
    row = text.splitlines()[1]
    assert ",," in row  # empty cells, not zeros
    with pytest.raises(DomainError):
        parse_metric_csv("epoch,lr\n1,0.1\n")
    with pytest.raises(DomainError):
        parse_metric_csv(CSV_HEADER + "\n1,0.1\n")


def test_run_training_deterministic_csv(tmp_path):
    outputs = []
    for name in ("a.csv", "b.csv"):
        cfg = _mlp_config(batch_size=10, epochs=30,
                          output_csv=str(tmp_path / name))
        run_training(cfg)
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]
    assert outputs[0].startswith(CSV_HEADER.encode())


def test_run_training_records_and_summary(tmp_path):
    csv_path = tmp_path / "run.csv"
    summary_path = tmp_path / "run.json"
    cfg = _mlp_config(epochs=40, metric_period=10,
                      output_csv=str(csv_path), output_summary=str(summary_path))
    result = run_training(cfg)
    assert result.status == "ok"
    epochs = [r.epoch for r in result.records]
    assert epochs == [0, 10, 20, 30, 40]
    summary = json.loads(summary_path.read_text())
    assert summary["status"] == "ok"
    assert summary["num_records"] == 5
    assert summary["config"]["model.kind"] == "mlp"
    assert summary["final"]["epoch"] == 40
    assert summary["wall_time_s"] >= 0.0
    parsed = parse_metric_csv(csv_path.read_text())
    assert [r.epoch for r in parsed] == epochs


def test_run_training_batch_size_errors():
    with pytest.raises(DomainError):
        run_training(_mlp_config(batch_size=101))
    with pytest.raises(DomainError):
        ExperimentConfig(model_kind="mlp", batch_size=0)


def test_run_training_did_not_train():
    cfg = _mlp_config(
        epochs=40, metric_period=5,
        optimizer=OptimizerConfig(kind="sgd_coupled", lr=0.1, coupled_wd=10.0),
    )
    result = run_training(cfg)
    assert result.status == "did_not_train"
    assert result.records[-1].train_acc <= 0.25 + 0.05


def test_run_training_divergence_diagnostic():
    cfg = _mlp_config(
        epochs=10, metric_period=2,
        optimizer=OptimizerConfig(kind="sgd_coupled", lr=1e8, momentum=0.9),
    )
    with np.errstate(over="ignore", invalid="ignore"):
        result = run_training(cfg)
    assert result.status == "diverged"
    last = result.records[-1]
    assert not math.isfinite(last.train_loss)
    assert last.epoch < 10


def test_degenerate_metrics_serialize_as_empty(tmp_path):
    # zero-init classifier: the normalized metrics are undefined at epoch 0
    cfg = _ufm_sign_config("signgd_decoupled", 0.1, 0.5, steps=4)
    cfg.output_csv = str(tmp_path / "degen.csv")
    result = run_training(cfg)
    first = result.records[0]
    assert first.values["nc0"] == 0.0
    assert first.values["nc0_normalized"] is None
    text = (tmp_path / "degen.csv").read_text()
    first_row = text.splitlines()[1]
    assert ",," in first_row
    parsed = parse_metric_csv(text)
    assert parsed[0].values["nc0_normalized"] is None


def test_ufm_decoupled_sign_plateau_run():
    cfg = _ufm_sign_config("signgd_decoupled", 0.1, 0.5, steps=2000, k=4)
    result = run_training(cfg)
    final = result.records[-1].values["nc0_alpha"]
    limit = oracles.alpha_signgd_decoupled_limit(4, 0.5)
    assert limit == 16.0
    assert abs(final - limit) <= 0.01 * limit


def test_ufm_oscillation_decay_run():
    cfg = _ufm_sign_config("signgd_coupled", 0.1, 0.5, steps=400,
                           schedule="oscillation_decay", shrink=0.5, k=4,
                           metric_period=1)
    result = run_training(cfg)
    alphas = [r.values["nc0_alpha"] for r in result.records]
    assert max(alphas) > 1e-4
    assert alphas[-1] < 1e-4
    assert result.records[-1].lr < 0.1
    assert result.records[-1].epoch == 400


def test_oscillation_routing_errors():
    osc = LRSchedule(kind="oscillation_decay", base_lr=0.1, shrink_factor=0.5)
    bad_model = _mlp_config(
        optimizer=OptimizerConfig(kind="signgd_coupled", lr=0.1, coupled_wd=0.5,
                                  schedule=osc),
    )
    with pytest.raises(DomainError):
        run_training(bad_model)
    bad_opt = _ufm_sign_config("signgd_decoupled", 0.1, 0.5, steps=10,
                               schedule="oscillation_decay")
    with pytest.raises(DomainError):
        run_training(bad_opt)


def test_derive_run_seed_stable_and_distinct():
    a = derive_run_seed(0, "sgd_coupled", 0.05, 0.9, 0.1)
    assert a == derive_run_seed(0, "sgd_coupled", 0.05, 0.9, 0.1)
    others = {
        derive_run_seed(0, "sgd_coupled", 0.05, 0.9, 0.2),
        derive_run_seed(0, "sgd_decoupled", 0.05, 0.9, 0.1),
        derive_run_seed(1, "sgd_coupled", 0.05, 0.9, 0.1),
    }
    assert a not in others
    assert a >= 0


def test_sweep_single_cell_matches_run_training():
    base = _mlp_config(epochs=50, metric_period=10)
    spec = SweepSpec(kinds=("sgd_coupled",), lrs=(0.05,), momenta=(0.9,), wds=(0.01,))
    sweep = run_sweep(base, spec)
    assert len(sweep.rows) == 1
    row = sweep.rows[0]
    assert row["status"] == "ok"
    direct_cfg = _mlp_config(
        epochs=50, metric_period=10,
        seed=derive_run_seed(0, "sgd_coupled", 0.05, 0.9, 0.01),
        optimizer=OptimizerConfig(kind="sgd_coupled", lr=0.05, momentum=0.9, coupled_wd=0.01),
    )
    direct = run_training(direct_cfg)
    final = direct.records[-1]
    assert row["nc0_alpha"] == final.values["nc0_alpha"]
    assert row["train_acc"] == final.train_acc
    assert row["epoch"] == final.epoch


def test_sweep_records_failures_without_aborting():
    base = _mlp_config(epochs=5)
    spec = SweepSpec(kinds=("sgd_coupled",), lrs=(0.05, -1.0), momenta=(0.0,), wds=(0.01,))
    sweep = run_sweep(base, spec)
    statuses = sorted(row["status"] for row in sweep.rows)
    assert statuses == ["error", "ok"]
    bad = next(row for row in sweep.rows if row["status"] == "error")
    assert bad["lr"] == -1.0
    assert bad["error"]
    assert sweep.results[sweep.rows.index(bad)] is None


def test_sweep_momentum_ordering_follows_spectral_radius():
    base = _mlp_config(epochs=300, metric_period=300)
    spec = SweepSpec(kinds=("sgd_coupled",), lrs=(0.05,), momenta=(0.0, 0.9), wds=(0.1,))
    sweep = run_sweep(base, spec)
    finals = {row["momentum"]: row["nc0_alpha"] for row in sweep.rows}
    rho0 = oracles.char_roots(0.0, 0.05, 0.1).spectral_radius
    rho9 = oracles.char_roots(0.9, 0.05, 0.1).spectral_radius
    assert rho9 < rho0
    assert finals[0.9] < finals[0.0]


def test_sweep_outputs_and_round_trip(tmp_path):
    base = _mlp_config(epochs=200, metric_period=100)
    spec = SweepSpec(kinds=("sgd_coupled",), lrs=(0.05,), momenta=(0.0, 0.9),
                     wds=(0.01, 10.0))
    sweep = run_sweep(base, spec)
    text = sweep_summary_csv(sweep)
    rows = parse_sweep_summary_csv(text)
    assert len(rows) == len(sweep.rows) == 4
    for parsed, raw in zip(rows, sweep.rows):
        assert parsed["kind"] == raw["kind"]
        assert parsed["status"] == raw["status"]
        assert parsed["nc0_alpha"] == raw.get("nc0_alpha")
    # raw rows keep the over-regularized runs; only summaries filter them
    statuses = {row["status"] for row in sweep.rows}
    assert statuses == {"ok", "did_not_train"}
    piv = pivot_csv(sweep, "sgd_coupled", 0.05, "nc0")
    lines = piv.strip().splitlines()
    assert lines[0] == "momentum_wd,0.01,10.0"
    assert len(lines) == 3
    for ln in lines[1:]:
        cells = ln.split(",")
        assert cells[2] == ""
        assert cells[1] != ""
    with pytest.raises(DomainError):
        pivot_csv(sweep, "sgd_coupled", 0.05, "not_a_metric")
    files = write_sweep_outputs(sweep, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "summary.csv" in names
    assert any(n.startswith("pivot_nc0_") for n in names)
    assert len(files) == 4


def test_regress_rows_exact_line_and_errors():
    rows = []
    for nc0 in (0.1, 0.2, 0.3, 0.4, 0.5):
        rows.append({"status": "ok", "train_acc": 1.0, "nc0": nc0, "nc3": 0.16 * nc0})
    fit = regress_rows(rows)
    assert fit.slope == pytest.approx(0.16, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        regress_rows(rows[:2])
    constant = [{"status": "ok", "train_acc": 1.0, "nc0": 0.3, "nc3": float(i)}
                for i in range(5)]
    with pytest.raises(DomainError):
        regress_rows(constant)
    # rows failing the accuracy filter are invisible to the fit
    filtered = rows + [{"status": "ok", "train_acc": 0.5, "nc0": 9.9, "nc3": -3.0}]
    fit2 = regress_rows(filtered)
    assert fit2.slope == pytest.approx(0.16, rel=1e-12)


def test_pooled_sweep_regression_direction():
    base = _mlp_config(
        epochs=200, metric_period=200,
        optimizer=OptimizerConfig(kind="sgd_coupled", lr=0.05),
    )
    spec = SweepSpec(kinds=("sgd_coupled", "sgd_decoupled"), lrs=(0.05, 0.1),
                     momenta=(0.0, 0.5, 0.9), wds=(0.001, 0.01, 0.05))
    sweep = run_sweep(base, spec)
    fit = regress_runs(sweep)
    assert fit.r_squared > 0.5


def test_emit_summary_json_nulls_non_finite(tmp_path):
    rec = MetricRecord(epoch=1, lr=0.1, train_loss=float("nan"), train_acc=0.25,
                       values={k: (float("inf") if k == "nc0" else None) for k in METRIC_KEYS})
    cfg = _mlp_config(epochs=1)
    result = TrainResult(config=cfg, records=[rec], status="diverged",
                         wall_time=0.0, model=None)
    path = tmp_path / "diverged.json"
    emit_summary_json(result, path)
    summary = json.loads(path.read_text())
    assert summary["final"]["train_loss"] is None
    assert summary["final"]["nc0"] is None
    assert summary["status"] == "diverged"


def test_emit_csv_writes_file(tmp_path):
    path = tmp_path / "empty.csv"
    emit_csv([], path)
    assert path.read_text() == CSV_HEADER + "\n"


def test_check_functions_report_pass():
    res = check_decoupled_rowsum_decay(epochs=60)
    assert res.passed
    assert res.details["logged_alpha_ok"]
    assert res.rows
    res = check_coupled_rowsum_recursion(momentum=0.9, epochs=40)
    assert res.passed
    assert res.details["envelope_ok"]
    res = check_decoupled_sign_plateau(steps=2000)
    assert res.passed
    assert res.details["within_1pct_of_limit"]
    res = check_coupled_sign_oscillation()
    assert res.passed
    assert res.details["family_dev_max"] <= 1e-12


def test_check_functions_report_failure_without_raising():
    res = check_decoupled_sign_plateau(steps=50)
    assert not res.passed
    assert not res.details["within_1pct_of_limit"]
