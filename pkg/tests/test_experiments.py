import json
import math

import numpy as np
import pytest

from roann.checkpoint import CheckpointError, describe, load_checkpoint, save_checkpoint
from roann.experiments import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    MetricRow,
    ablation_config,
    area_under_loss,
    build_model,
    preset,
    read_metrics,
    run_ablation,
    run_certify,
    run_experiment,
)
from roann.fnn import RoaFnnModel
from roann.optim import OptimizerConfig, OptimizerState, step
from roann.rnn import RoaRnnModel


def tiny_moon(**kw):
    base = dict(dims=[2, 3, 3, 1], rho=1.0, epochs=2, batch_size=50, n_points=100,
                optimizer=OptimizerConfig("sgd", 0.1))
    base.update(kw)
    return ExperimentConfig(**base)


def tiny_add(**kw):
    base = dict(task="addprob", model="roarnn", length=6, hidden=5, rho=1.0, batch_size=4,
                iterations=6, eval_every=3, optimizer=OptimizerConfig("adam", 0.01))
    base.update(kw)
    return ExperimentConfig(**base)


def test_alpha_conventions():
    assert preset("double-moon").resolved_alpha() == pytest.approx(5 / 48)
    assert preset("copymem").resolved_alpha() == pytest.approx(3 / 110)
    assert preset("addprob").resolved_alpha() == pytest.approx(1 / 200 / 200)
    assert preset("psmnist").resolved_alpha() == pytest.approx(1 / (2 * 784))
    assert preset("copymem").sequence_length() == 120
    assert tiny_moon(model="fnn-vanilla").resolved_alpha() == 1.0


@pytest.mark.parametrize("kw", [
    dict(task="nope"), dict(model="nope"), dict(model="roarnn"), dict(alpha=0.1),
    dict(batch_size=0), dict(dims=[3, 2, 1]), dict(eval_every=0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        tiny_moon(**kw).validate()


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope")


def test_double_moon_run_writes_csv_and_checkpoint(tmp_path):
    res = run_experiment(tiny_moon(output_dir=str(tmp_path)))
    lines = res.metrics_path.read_text().splitlines()
    assert lines[0].split(",") == CSV_HEADER
    rows = read_metrics(res.metrics_path)
    assert [r.step for r in rows] == [0, 1, 2]
    assert all(r.split == "train" for r in rows)
    model, state, meta = load_checkpoint(res.checkpoint_path)
    assert isinstance(model, RoaFnnModel) and meta["config"]["epochs"] == 2
    assert state.step == 4
    for k, v in res.model.parameters().items():
        assert np.array_equal(v, model.parameters()[k])


def test_runs_are_deterministic():
    a = run_experiment(tiny_add(seed=3))
    b = run_experiment(tiny_add(seed=3))
    assert [r.loss for r in a.metrics] == [r.loss for r in b.metrics]
    assert [r.split for r in a.metrics].count("eval") == 2


def test_nan_event_ends_run(tmp_path):
    cfg = tiny_moon(output_dir=str(tmp_path))
    model = build_model(cfg)
    model.weights[0][0, 0] = math.nan
    res = run_experiment(cfg, model=model)
    assert res.diverged
    rows = read_metrics(res.metrics_path)
    assert rows[-1].split == "nan-event" and math.isnan(rows[-1].loss)


def test_early_stop():
    res = run_experiment(tiny_add(iterations=50), stop_when=lambda r: r.step >= 4)
    assert res.stopped_early and res.metrics[-1].step == 4


def test_copymem_and_certify_fresh_model():
    cfg = ExperimentConfig(task="copymem", model="roarnn", length=5, n_symbols=3, hidden=6, rho=1.0,
                           batch_size=4, iterations=2, optimizer=OptimizerConfig("adam", 0.01))
    res = run_experiment(cfg)
    assert res.metrics[0].accuracy is not None
    report = run_certify(cfg, probes=3)
    assert report.L == 11 and len(report.spectra) == 3


def test_certify_checkpoint_roundtrip(tmp_path):
    cfg = tiny_moon(output_dir=str(tmp_path))
    res = run_experiment(cfg)
    out = tmp_path / "cert.json"
    report = run_certify(cfg, checkpoint=str(res.checkpoint_path), probes=4, output=str(out))
    assert json.loads(out.read_text())["passed"] == report.passed
    with pytest.raises(ConfigError):
        run_certify(tiny_moon(dims=[2, 4, 1]), checkpoint=str(res.checkpoint_path))


def test_checkpoint_keeps_optimizer_buffers(tmp_path):
    m = RoaRnnModel.init(4, 2, 1, alpha=0.2, seed=0)
    state = OptimizerState()
    step(m.parameters(), {k: np.ones_like(v) for k, v in m.parameters().items()},
         OptimizerConfig("adam", 0.1), state)
    save_checkpoint(tmp_path / "c.json", m, state, {"note": "x"})
    m2, s2, meta = load_checkpoint(tmp_path / "c.json")
    assert np.array_equal(m2.O, m.O) and m2.alpha == m.alpha and meta["note"] == "x"
    assert s2.step == 1
    for p, bufs in state.buffers.items():
        assert set(bufs) == set(s2.buffers[p])
        for k in bufs:
            assert np.array_equal(bufs[k], s2.buffers[p][k])
    info = describe(tmp_path / "c.json")
    assert info["type"] == "roarnn" and info["shapes"]["W_h"] == [4, 4] and info["optimizer_step"] == 1


def test_bad_checkpoint(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    p.write_text(json.dumps({"format": 99}))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_ablation_pairs_share_parameters(tmp_path):
    pairs = run_ablation("addprob", [0, 1, 2, 3, 4], output_dir=str(tmp_path), iterations=2, length=5,
                         hidden=4)
    assert len(list(tmp_path.glob("*.csv"))) == 10
    for pair in pairs:
        fresh_eye = build_model(pair.eye.config)
        fresh_roa = build_model(pair.roa.config)
        for k, v in fresh_eye.parameters().items():
            assert np.array_equal(v, fresh_roa.parameters()[k])
        assert np.array_equal(pair.eye.model.O, np.eye(4))
        assert pair.eye.config.optimizer.learning_rate == pytest.approx(0.05)


def test_ablation_config_errors():
    with pytest.raises(ConfigError):
        ablation_config("double-moon", 0)
    with pytest.raises(ConfigError):
        run_ablation("addprob", [])


def test_area_under_loss():
    rows = [MetricRow(s, "train", float(s)) for s in range(5)]
    assert area_under_loss(rows) == pytest.approx(8.0)
    assert area_under_loss(rows, upto=2) == pytest.approx(2.0)
    assert math.isnan(area_under_loss(rows[:1]))


def test_metric_steps_monotone(tmp_path):
    from roann.experiments import MetricLog
    log = MetricLog(tmp_path / "m.csv")
    log.add(MetricRow(2, "train", 1.0))
    with pytest.raises(ValueError):
        log.add(MetricRow(1, "train", 1.0))
    log.close()
