"""Training loops, certification runs and the eyeRNN ablation harness.

Metrics go to CSV with the fixed header ``step,split,loss,accuracy,grad_norm,seconds``.
``accuracy`` and ``grad_norm`` are left empty where undefined; a divergent run
writes one final row with split ``nan-event`` and stops.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tasks
from .checkpoint import load_checkpoint, save_checkpoint
from .fnn import RoaFnnModel, fnn_backward, fnn_forward, fnn_loss_mse
from .isometry import IsometryReport, certify_fnn, certify_rnn
from .optim import OptimizerConfig, OptimizerState, apply_schedule, global_norm, step
from .rnn import RoaRnnModel, rnn_backward, rnn_forward, rnn_loss_cross_entropy, rnn_loss_mse

CSV_HEADER = ["step", "split", "loss", "accuracy", "grad_norm", "seconds"]

TASKS = ("double-moon", "copymem", "addprob", "smnist", "psmnist")
MODELS = ("roafnn", "fnn-vanilla", "roarnn", "rnn-vanilla", "eyernn")
SEQUENCE_TASKS = ("copymem", "addprob", "smnist", "psmnist")
RHO_GRID = (1 / 300, 1 / 200, 1 / 100, 1 / 50, 1 / 10, 1 / 2, 1, 2, 3, 5, 10, 50)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "double-moon"
    model: str = "roafnn"
    # feedforward layer sizes, input first
    dims: list[int] = field(default_factory=lambda: [2] + [2] * 48 + [1])
    # copymem lag, addprob/MNIST sequence length
    length: int = 100
    n_symbols: int = 10
    hidden: int = 128
    rho: float | None = 5.0
    alpha: float | None = None
    activation: str = "tanh"
    filter_kind: str = "random-orthogonal"
    recycle: bool = False
    weight_std: float = 1.0
    recurrent_std: float | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 100
    epochs: int = 250
    iterations: int = 2000
    seed: int = 0
    eval_every: int = 100
    eval_batch_size: int | None = None
    certify_every: int = 0  # epochs between in-run certifications (feedforward only)
    certify_probes: int = 10
    n_points: int = 1000
    data_dir: str | None = None
    subset_fraction: float = 1.0
    permutation_file: str | None = None
    output_dir: str | None = None
    name: str | None = None

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        recurrent = self.model in ("roarnn", "rnn-vanilla", "eyernn")
        if (self.task in SEQUENCE_TASKS) != recurrent:
            kind = "recurrent" if self.task in SEQUENCE_TASKS else "feedforward"
            raise ConfigError(f"task {self.task} needs a {kind} model, got {self.model}")
        if self.model in ("roafnn", "roarnn", "eyernn") and (self.rho is None) == (self.alpha is None):
            raise ConfigError("give exactly one of rho and alpha")
        if self.batch_size < 1 or self.epochs < 0 or self.iterations < 0:
            raise ConfigError("batch size must be positive and run lengths non-negative")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be positive")
        if self.task == "double-moon" and (self.dims[0] != 2 or self.dims[-1] != 1):
            raise ConfigError(f"double-moon needs input size 2 and output size 1, got {self.dims}")

    def sequence_length(self) -> int:
        if self.task == "copymem":
            return self.length + 2 * self.n_symbols
        if self.task in ("smnist", "psmnist"):
            return tasks.MNIST_PIXELS
        return self.length

    def alpha_scale(self) -> int:
        """Denominator turning rho into alpha for this task."""
        if self.task == "double-moon":
            return len(self.dims) - 2
        if self.task == "copymem":
            return self.length + self.n_symbols
        return self.sequence_length()

    def resolved_alpha(self) -> float:
        if self.model in ("fnn-vanilla", "rnn-vanilla"):
            return 1.0
        if self.alpha is not None:
            return float(self.alpha)
        return float(self.rho) / self.alpha_scale()

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["optimizer"]["kind"] = self.optimizer.kind.value
        return out


def _preset_double_moon() -> ExperimentConfig:
    return ExperimentConfig(optimizer=OptimizerConfig("sgd", 1.0))


def _preset_double_moon_deep() -> ExperimentConfig:
    return ExperimentConfig(dims=[2] + [2] * 4998 + [1], epochs=10, certify_every=1,
                            optimizer=OptimizerConfig("adam", 1e-3))


def _preset_copymem() -> ExperimentConfig:
    # unit-variance recurrent weights make ReLU states explode at this width; 1/sqrt(N_h) keeps them bounded
    return ExperimentConfig(task="copymem", model="roarnn", length=100, hidden=190, rho=3.0,
                            activation="relu", recurrent_std=190 ** -0.5, batch_size=128, iterations=4000,
                            optimizer=OptimizerConfig("adam", 0.5))


def _preset_addprob() -> ExperimentConfig:
    return ExperimentConfig(task="addprob", model="roarnn", length=200, hidden=128, rho=1 / 200,
                            activation="relu", batch_size=50, iterations=5000,
                            optimizer=OptimizerConfig("adam", 0.5))


def _preset_psmnist() -> ExperimentConfig:
    return ExperimentConfig(task="psmnist", model="roarnn", hidden=128, rho=0.5, activation="relu",
                            batch_size=100, epochs=20,
                            optimizer=OptimizerConfig("adam", 0.1, schedule=[(10, 0.01)]))


PRESETS: dict[str, Callable[[], ExperimentConfig]] = {
    "double-moon": _preset_double_moon,
    "double-moon-deep": _preset_double_moon_deep,
    "copymem": _preset_copymem,
    "addprob": _preset_addprob,
    "psmnist": _preset_psmnist,
}


def preset(name: str, **overrides) -> ExperimentConfig:
    try:
        cfg = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return dataclasses.replace(cfg, **overrides)


@dataclass
class MetricRow:
    step: int
    split: str
    loss: float
    accuracy: float | None = None
    grad_norm: float | None = None
    seconds: float = 0.0

    def as_csv(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return [str(self.step), self.split, fmt(self.loss), fmt(self.accuracy), fmt(self.grad_norm),
                f"{self.seconds:.3f}"]


class MetricLog:
    """Collects rows in memory and mirrors them to a CSV file when given a path."""

    def __init__(self, path: str | Path | None = None):
        self.rows: list[MetricRow] = []
        self._fh = None
        self._writer = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(CSV_HEADER)

    def add(self, row: MetricRow) -> None:
        if self.rows and row.step < self.rows[-1].step:
            raise ValueError("metric steps must be nondecreasing")
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow(row.as_csv())
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def split(self, name: str) -> list[MetricRow]:
        return [r for r in self.rows if r.split == name]


def read_metrics(path) -> list[MetricRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for rec in reader:
            opt = [None if v == "" else float(v) for v in rec[2:5]]
            rows.append(MetricRow(int(rec[0]), rec[1], opt[0], opt[1], opt[2], float(rec[5])))
    return rows


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    model: object
    metrics: list[MetricRow]
    diverged: bool = False
    stopped_early: bool = False
    certifications: list[IsometryReport] = field(default_factory=list)
    metrics_path: Path | None = None
    checkpoint_path: Path | None = None


def build_model(cfg: ExperimentConfig):
    cfg.validate()
    alpha = cfg.resolved_alpha()
    if cfg.model in ("roafnn", "fnn-vanilla"):
        filter_kind = cfg.filter_kind
        return RoaFnnModel.init(cfg.dims, alpha=alpha, activation=cfg.activation, filter_kind=filter_kind,
                                recycle=cfg.recycle, seed=cfg.seed, weight_std=cfg.weight_std)
    n_in, n_out, readout = _rnn_io(cfg.task)
    if cfg.model == "rnn-vanilla":
        return RoaRnnModel.init_vanilla(cfg.hidden, n_in, n_out, activation=cfg.activation,
                                        readout=readout, seed=cfg.seed)
    model = RoaRnnModel.init(cfg.hidden, n_in, n_out, alpha=alpha, activation=cfg.activation,
                             readout=readout, filter="identity" if cfg.model == "eyernn" else "orthogonal",
                             seed=cfg.seed, weight_std=cfg.weight_std, recurrent_std=cfg.recurrent_std)
    model.rho = cfg.rho
    return model


def _rnn_io(task: str) -> tuple[int, int, str]:
    if task == "copymem":
        return tasks.COPY_INPUT_CLASSES, tasks.COPY_OUTPUT_CLASSES, "identity"
    if task == "addprob":
        return 2, 1, "identity"
    return 1, 10, "identity"


def _finite(*values) -> bool:
    return all(v is None or math.isfinite(v) for v in values)


def _grads_finite(grads: dict) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


# -- per-task batch objectives: return (loss, accuracy or None, gradients or None)

def _fnn_objective(model, x, y, with_grad: bool):
    out, trace = fnn_forward(model, x)
    loss, err = fnn_loss_mse(out, y)
    acc = float(np.mean(np.sign(out[:, 0]) == y[:, 0]))
    grads = fnn_backward(model, trace, err).as_dict() if with_grad else None
    return loss, acc, grads


def _copy_objective(model, x, y, n_symbols: int, with_grad: bool):
    logits, trace = rnn_forward(model, None, x, readout_steps="all")
    loss, err = rnn_loss_cross_entropy(logits, y)
    acc = float(np.mean(np.argmax(logits[-n_symbols:], axis=-1) == y[-n_symbols:]))
    grads = rnn_backward(model, trace, err).as_dict() if with_grad else None
    return loss, acc, grads


def _add_objective(model, x, y, with_grad: bool):
    out, trace = rnn_forward(model, None, x, readout_steps="last")
    loss, err = rnn_loss_mse(out[0], y)
    grads = rnn_backward(model, trace, err[None]).as_dict() if with_grad else None
    return loss, None, grads


def _class_objective(model, x, y, with_grad: bool):
    logits, trace = rnn_forward(model, None, x, readout_steps="last")
    loss, err = rnn_loss_cross_entropy(logits[0], y)
    acc = float(np.mean(np.argmax(logits[0], axis=-1) == y))
    grads = rnn_backward(model, trace, err[None]).as_dict() if with_grad else None
    return loss, acc, grads


class _Run:
    def __init__(self, cfg: ExperimentConfig, model, stop_when, progress):
        self.cfg = cfg
        self.model = model
        self.stop_when = stop_when
        self.progress = progress
        self.out_dir = Path(cfg.output_dir) if cfg.output_dir else None
        name = cfg.name or f"{cfg.task}-{cfg.model}-seed{cfg.seed}"
        self.metrics_path = self.out_dir / f"{name}.csv" if self.out_dir else None
        self.checkpoint_path = self.out_dir / f"{name}.ckpt.json" if self.out_dir else None
        self.log = MetricLog(self.metrics_path)
        self.opt_state = OptimizerState()
        self.t0 = time.perf_counter()
        self.diverged = False
        self.stopped = False
        self.certs: list[IsometryReport] = []

    def record(self, step_idx, split, loss, acc=None, gnorm=None) -> bool:
        """Log a row; returns False when the run must stop."""
        seconds = time.perf_counter() - self.t0
        if not _finite(loss, acc, gnorm):
            self.log.add(MetricRow(step_idx, "nan-event", loss, acc, gnorm, seconds))
            self.diverged = True
            return False
        row = MetricRow(step_idx, split, loss, acc, gnorm, seconds)
        self.log.add(row)
        if self.progress:
            self.progress(row)
        if self.stop_when is not None and self.stop_when(row):
            self.stopped = True
            return False
        return True

    def update(self, grads, epoch: int) -> bool:
        if not _grads_finite(grads):
            return False
        lr = apply_schedule(self.cfg.optimizer, epoch)
        step(self.model.parameters(), grads, self.cfg.optimizer, self.opt_state, learning_rate=lr)
        return True

    def finish(self) -> ExperimentResult:
        self.log.close()
        if self.checkpoint_path is not None:
            save_checkpoint(self.checkpoint_path, self.model, self.opt_state,
                            {"config": self.cfg.to_dict(), "diverged": self.diverged})
        return ExperimentResult(self.cfg, self.model, self.log.rows, self.diverged, self.stopped,
                                self.certs, self.metrics_path, self.checkpoint_path)


def run_experiment(cfg: ExperimentConfig, model=None, stop_when: Callable[[MetricRow], bool] | None = None,
                   progress: Callable[[MetricRow], None] | None = None) -> ExperimentResult:
    """Train ``model`` (built from ``cfg`` when omitted) and log metrics.

    ``stop_when`` is called on every logged row and ends training when it
    returns True.
    """
    cfg.validate()
    if model is None:
        model = build_model(cfg)
    run = _Run(cfg, model, stop_when, progress)
    if cfg.task == "double-moon":
        _train_double_moon(run)
    elif cfg.task in ("copymem", "addprob"):
        _train_synthetic(run)
    else:
        _train_mnist(run)
    return run.finish()


def _train_double_moon(run: _Run) -> None:
    cfg, model = run.cfg, run.model
    x, y = tasks.gen_double_moon(tasks.DoubleMoonConfig(n_points=cfg.n_points, seed=cfg.seed))
    y = y[:, None]
    rng = np.random.default_rng([cfg.seed, 1])
    probe_rng = np.random.default_rng([cfg.seed, 2])
    loss, acc, _ = _fnn_objective(model, x, y, False)
    if not run.record(0, "train", loss, acc):
        return
    it = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        gnorm = None
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # the loss error already carries the 1/batch factor, so these are mean gradients
            _, _, grads = _fnn_objective(model, x[idx], y[idx], True)
            gnorm = global_norm(grads)
            it += 1
            if not run.update(grads, epoch):
                run.record(it, "train", math.nan, None, gnorm)
                return
        loss, acc, _ = _fnn_objective(model, x, y, False)
        if not run.record(epoch + 1, "train", loss, acc, gnorm):
            return
        if cfg.certify_every and (epoch + 1) % cfg.certify_every == 0:
            probes = probe_rng.uniform(-20.0, 30.0, size=(cfg.certify_probes, 2))
            run.certs.append(certify_fnn(model, probes, track_norms=False))


def _train_synthetic(run: _Run) -> None:
    cfg, model = run.cfg, run.model
    rng = np.random.default_rng([cfg.seed, 1])
    eval_rng = np.random.default_rng([cfg.seed, 2])
    eval_bs = cfg.eval_batch_size or cfg.batch_size
    if cfg.task == "copymem":
        def batch(r, bs):
            return tasks.gen_copy_batch(tasks.CopyMemConfig(cfg.length, cfg.n_symbols, bs), r)

        def objective(x, y, g):
            return _copy_objective(model, x, y, cfg.n_symbols, g)
    else:
        def batch(r, bs):
            return tasks.gen_add_batch(tasks.AddProbConfig(cfg.length, bs), r)

        def objective(x, y, g):
            return _add_objective(model, x, y, g)

    for it in range(1, cfg.iterations + 1):
        x, y = batch(rng, cfg.batch_size)
        loss, acc, grads = objective(x, y, True)
        gnorm = global_norm(grads)
        if not run.record(it, "train", loss, acc, gnorm):
            return
        if not run.update(grads, 0):
            run.record(it, "train", math.nan, None, gnorm)
            return
        if it % cfg.eval_every == 0:
            ex, ey = batch(eval_rng, eval_bs)
            eloss, eacc, _ = objective(ex, ey, False)
            if not run.record(it, "eval", eloss, eacc):
                return


def _train_mnist(run: _Run) -> None:
    cfg, model = run.cfg, run.model
    mcfg = tasks.MnistConfig(data_dir=cfg.data_dir, permuted=cfg.task == "psmnist",
                             subset_fraction=cfg.subset_fraction, subset_seed=cfg.seed)
    if cfg.permutation_file:
        mcfg.permutation = tasks.load_permutation(cfg.permutation_file).tolist()
    train, test = tasks.load_mnist(mcfg)
    rng = np.random.default_rng([cfg.seed, 1])
    eval_bs = cfg.eval_batch_size or 500
    it = 0
    for epoch in range(cfg.epochs):
        gnorm = None
        for x, y in train.batches(cfg.batch_size, rng):
            loss, acc, grads = _class_objective(model, x, y, True)
            gnorm = global_norm(grads)
            it += 1
            if not run.update(grads, epoch):
                run.record(it, "train", math.nan, None, gnorm)
                return
            if it % cfg.eval_every == 0 and not run.record(it, "train", loss, acc, gnorm):
                return
        total, correct, loss_sum = 0, 0, 0.0
        for x, y in test.batches(eval_bs):
            loss, acc, _ = _class_objective(model, x, y, False)
            total += len(y)
            correct += acc * len(y)
            loss_sum += loss * len(y)
        if not run.record(it, "test", loss_sum / total, correct / total, gnorm):
            return


def probe_inputs(cfg: ExperimentConfig, model, n: int, length: int | None = None,
                 seed: int | None = None) -> np.ndarray:
    """Certification probes: input points or (n, L, input_dim) sequences."""
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 3])
    if isinstance(model, RoaFnnModel):
        return rng.uniform(-20.0, 30.0, size=(n, model.layer_dims[0]))
    L = length or cfg.sequence_length()
    if cfg.task == "copymem" and length is None:
        x, _ = tasks.gen_copy_batch(tasks.CopyMemConfig(cfg.length, cfg.n_symbols, n), rng)
        return np.transpose(x, (1, 0, 2))
    if cfg.task == "addprob" and L >= 2:
        x, _ = tasks.gen_add_batch(tasks.AddProbConfig(L, n), rng)
        return np.transpose(x, (1, 0, 2))
    return rng.uniform(-1.0, 1.0, size=(n, L, model.input_dim))


def run_certify(cfg: ExperimentConfig, checkpoint: str | None = None, probes: int = 10,
                length: int | None = None, output: str | None = None) -> IsometryReport:
    """Certify a fresh model (or a checkpoint) and optionally write the JSON report."""
    if checkpoint is not None:
        model, _, _ = load_checkpoint(checkpoint)
        expected = build_model(cfg)
        _check_shapes(model, expected)
    else:
        model = build_model(cfg)
    x = probe_inputs(cfg, model, probes, length)
    if isinstance(model, RoaFnnModel):
        report = certify_fnn(model, x)
    else:
        report = certify_rnn(model, x)
    if output is not None:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(report.to_json(indent=1))
    return report


def _check_shapes(model, expected) -> None:
    if type(model) is not type(expected):
        raise ConfigError(f"checkpoint holds a {type(model).__name__}, config builds {type(expected).__name__}")
    got = {k: v.shape for k, v in model.parameters().items()}
    want = {k: v.shape for k, v in expected.parameters().items()}
    if got != want:
        diff = {k: (got.get(k), want.get(k)) for k in set(got) | set(want) if got.get(k) != want.get(k)}
        raise ConfigError(f"checkpoint shapes do not match the config: {diff}")


@dataclass
class AblationPair:
    seed: int
    eye: ExperimentResult
    roa: ExperimentResult


def ablation_config(task: str, seed: int, **overrides) -> ExperimentConfig:
    """roaRNN settings of the identity-versus-orthogonal comparison."""
    base = {
        "copymem": dict(task="copymem", length=100, activation="relu", batch_size=128, iterations=4000),
        "addprob": dict(task="addprob", length=200, activation="tanh", batch_size=50, iterations=3000),
        "psmnist": dict(task="psmnist", activation="relu", batch_size=100, epochs=20),
    }
    if task not in base:
        raise ConfigError(f"no ablation defined for task {task!r}")
    opt = OptimizerConfig("adam", 0.5) if task != "psmnist" else OptimizerConfig("adam", 0.1, schedule=[(10, 0.01)])
    cfg = ExperimentConfig(model="roarnn", hidden=128, rho=1.0, seed=seed, optimizer=opt, **base[task])
    return dataclasses.replace(cfg, **overrides)


def run_ablation(task: str, seeds: list[int], output_dir: str | None = None,
                 stop_when: Callable[[MetricRow], bool] | None = None, **overrides) -> list[AblationPair]:
    """eyeRNN and roaRNN from identical parameters, eyeRNN at a tenth of the learning rate."""
    if not seeds:
        raise ConfigError("at least one seed is required")
    pairs = []
    for seed in seeds:
        roa_cfg = ablation_config(task, seed, output_dir=output_dir, **overrides)
        eye_opt = dataclasses.replace(roa_cfg.optimizer,
                                      learning_rate=roa_cfg.optimizer.learning_rate / 10,
                                      schedule=[(e, lr / 10) for e, lr in roa_cfg.optimizer.schedule])
        eye_cfg = dataclasses.replace(roa_cfg, model="eyernn", optimizer=eye_opt)
        eye = run_experiment(eye_cfg, stop_when=stop_when)
        roa = run_experiment(roa_cfg, stop_when=stop_when)
        pairs.append(AblationPair(seed, eye, roa))
    return pairs


def area_under_loss(rows: list[MetricRow], split: str = "train", upto: int | None = None) -> float:
    """Trapezoidal area of the loss curve over the logged steps."""
    pts = [(r.step, r.loss) for r in rows if r.split == split and (upto is None or r.step <= upto)]
    if len(pts) < 2:
        return math.nan
    s = np.array(pts, dtype=np.float64)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz  # renamed in numpy 2.0
    return float(trapezoid(s[:, 1], s[:, 0]))


def config_from_file(path) -> dict:
    """Load a JSON or TOML config file into a plain dictionary."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)
