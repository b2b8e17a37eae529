"""Repeated train/validation/test experiments comparing forests, neural forests and plain networks.

Every repeat draws its own 50/25/25 split, grows one forest on the
training rows and fits each requested model on top of it. Given a
configuration the whole run is deterministic, including the emitted CSV
bytes; wall times are the only non-reproducible quantity and are written
to a separate file.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import init_mlp, mlp_from_forest_shape
from .cart import ExactLeaves, MaxDepth
from .data import DataError, Dataset, load_csv, split_dataset, synth_sine
from .forest import Bootstrap, ForestParams, FullSample, Subsample, fit_forest, predict_forest
from .train import (History, Method, Mode, TrainConfig, fit_nrf, predict_arrays, predict_nrf,
                    rmse, train_network)

logger = logging.getLogger(__name__)

NRF_MODELS = ("NRF1-sparse", "NRF1-full", "NRF2-sparse", "NRF2-full")
NN_MODELS = ("NN1", "NN2", "NN3")
KNOWN_MODELS = ("RF",) + NRF_MODELS + NN_MODELS
DEFAULT_MODELS = ("RF",) + NRF_MODELS


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``dataset`` is a CSV path or ``"synth"``. Repeat ``r`` uses seed
    ``seeds[r]`` when ``seeds`` is given and ``seed + r`` otherwise; that
    seed drives the split, the forest, the shuffling and any random
    initialization. When ``sizes`` is set (synthetic data only) the
    experiment runs once per size with a fresh sample of ``2 * size`` rows,
    so that the training set holds exactly ``size`` rows.
    """

    dataset: str = "synth"
    target: str | None = None
    synth_n: int = 1000
    synth_d: int = 2
    synth_sigma: float = 0.01
    synth_seed: int = 0
    sizes: tuple[int, ...] | None = None
    repeats: int = 10
    seed: int = 0
    seeds: tuple[int, ...] | None = None
    models: tuple[str, ...] = DEFAULT_MODELS
    n_trees: int = 30
    max_depth: int = 6
    exact_leaves: int | None = None
    mtry: int | None = None
    resample: str = "bootstrap"
    subsample_size: int | None = None
    gamma1: float = 100.0
    gamma2: float = 1.0
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.seeds is not None and len(self.seeds) < self.repeats:
            raise ConfigError(f"{self.repeats} repeats but only {len(self.seeds)} seeds")
        if not self.models:
            raise ConfigError("model list is empty")
        unknown = [m for m in self.models if m not in KNOWN_MODELS]
        if unknown:
            raise ConfigError(f"unknown model(s) {unknown}; known: {', '.join(KNOWN_MODELS)}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("duplicate model names")
        if self.resample not in ("bootstrap", "subsample", "full"):
            raise ConfigError("resample must be bootstrap, subsample or full")
        if self.sizes is not None:
            if self.dataset != "synth":
                raise ConfigError("sizes requires dataset = synth")
            if min(self.sizes) < 2:
                raise ConfigError("sizes must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def repeat_seed(self, r: int) -> int:
        return int(self.seeds[r]) if self.seeds is not None else self.seed + r

    def forest_params(self, seed: int) -> ForestParams:
        resample = {"bootstrap": Bootstrap(), "full": FullSample()}.get(self.resample) \
            or Subsample(self.subsample_size)
        stop = ExactLeaves(self.exact_leaves) if self.exact_leaves is not None else MaxDepth(self.max_depth)
        return ForestParams(self.n_trees, resample, self.mtry, stop, seed)

    def train_config(self, mode: Mode, seed: int) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.beta1,
                           self.beta2, self.eps, mode, seed)


def _converter(name):
    ints = {"synth_n", "synth_d", "synth_seed", "repeats", "seed", "n_trees", "max_depth",
            "epochs", "batch_size", "workers"}
    opt_ints = {"exact_leaves", "mtry", "subsample_size"}
    floats = {"synth_sigma", "gamma1", "gamma2", "learning_rate", "beta1", "beta2", "eps"}
    int_lists = {"sizes", "seeds"}
    if name in ints:
        return int
    if name in floats:
        return float
    if name in opt_ints:
        return lambda s: None if s.lower() == "none" else int(s)
    if name in int_lists:
        return lambda s: None if s.lower() == "none" else tuple(int(v) for v in s.split(",") if v.strip())
    if name == "models":
        return lambda s: tuple(v.strip() for v in s.split(",") if v.strip())
    if name == "target":
        return lambda s: None if s.lower() == "none" else s
    return str


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored.

    List values (``models``, ``seeds``, ``sizes``) are comma-separated.
    Keyword ``overrides`` win over the file.
    """
    names = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _converter(key)(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


def format_config(config: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config`."""
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if v is None:
            s = "none"
        elif isinstance(v, tuple):
            s = ", ".join(str(x) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ModelRecord:
    model: str
    n_train: int
    repeat: int
    seed: int
    val_rmse: float
    test_rmse: float
    fallback: bool
    wall_time: float


@dataclass(frozen=True)
class Curve:
    """Per-epoch RMSE of one trained model next to its forest's validation RMSE."""

    model: str
    n_train: int
    repeat: int
    history: History
    rf_val_rmse: float


@dataclass(frozen=True)
class Aggregate:
    model: str
    n_train: int
    count: int
    mean_test_rmse: float
    std_test_rmse: float
    mean_val_rmse: float
    fallbacks: int


def sample_std(values) -> float:
    """Standard deviation with the n - 1 divisor; NaN for a single value."""
    values = np.asarray(values, dtype=np.float64)
    return float(np.std(values, ddof=1)) if values.size > 1 else float("nan")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list[ModelRecord] = field(default_factory=list)
    curves: list[Curve] = field(default_factory=list)

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(m for m in self.config.models if any(r.model == m for r in self.records))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(sorted({r.n_train for r in self.records}))

    def select(self, model: str, n_train: int | None = None) -> list[ModelRecord]:
        return [r for r in self.records if r.model == model and n_train in (None, r.n_train)]

    def aggregates(self) -> list[Aggregate]:
        """Mean and sample standard deviation of test RMSE per (model, training size)."""
        out = []
        for n in self.sizes:
            for model in self.models:
                rows = self.select(model, n)
                if not rows:
                    continue
                test = [r.test_rmse for r in rows]
                out.append(Aggregate(model, n, len(rows), float(np.mean(test)), sample_std(test),
                                     float(np.mean([r.val_rmse for r in rows])),
                                     sum(r.fallback for r in rows)))
        return out


def _load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == "synth":
        return synth_sine(config.synth_n, config.synth_d, config.synth_sigma, config.synth_seed)
    ds, report = load_csv(config.dataset, config.target)
    if report.rows_dropped or report.columns_dropped:
        logger.info("%s: dropped %d rows and columns %s", config.dataset, report.rows_dropped,
                    list(report.columns_dropped))
    return ds


def _nn_depth(name: str) -> int:
    return int(name[2:])


def _run_repeat(config: ExperimentConfig, ds: Dataset | None, size: int | None, r: int):
    """Fit every requested model for one repeat; returns (records, curves)."""
    seed = config.repeat_seed(r)
    if ds is None:
        ds = synth_sine(2 * size, config.synth_d, config.synth_sigma, [config.synth_seed, size, r])
    split = split_dataset(ds, seed)
    n_train = split.train.size
    Xva, yva = ds.features[split.val], ds.target[split.val]
    Xte, yte = ds.features[split.test], ds.target[split.test]
    records, curves = [], []

    t0 = time.perf_counter()
    forest = fit_forest(ds, split.train, config.forest_params(seed))
    rf_time = time.perf_counter() - t0
    rf_val = rmse(predict_forest(forest, Xva), yva)
    if "RF" in config.models:
        records.append(ModelRecord("RF", n_train, r, seed, rf_val, rmse(predict_forest(forest, Xte), yte),
                                   False, rf_time))

    for name in config.models:
        if name == "RF":
            continue
        t0 = time.perf_counter()
        if name in NRF_MODELS:
            method, mode = name[3], Mode(name.split("-")[1])
            model = fit_nrf(forest, ds, split, Method(method), config.gamma1, config.gamma2,
                            config.train_config(mode, seed))
            val, test = model.val_rmse, rmse(predict_nrf(model, Xte), yte)
            fallback, history = model.fallback_to_rf, model.history
        else:
            depth = _nn_depth(name)
            spec = mlp_from_forest_shape(forest, depth, config.gamma1, config.gamma2, seed)
            net = init_mlp(spec, ds.d)
            res = train_network(net, (ds.features[split.train], ds.target[split.train]), (Xva, yva),
                                config.train_config(Mode.FULL, seed), stream=(1000 + depth,))
            val = res.best_val_rmse
            test = rmse(predict_arrays(res.params.arrays(), res.params.gammas, Xte), yte)
            fallback, history = False, res.history
        elapsed = time.perf_counter() - t0
        logger.info("n=%d repeat %d %s: val %.6g test %.6g%s", n_train, r, name, val, test,
                    " (forest fallback)" if fallback else "")
        records.append(ModelRecord(name, n_train, r, seed, val, test, bool(fallback), elapsed))
        if history is not None:
            curves.append(Curve(name, n_train, r, history, rf_val))
    return records, curves


def _run_job(job):
    return _run_repeat(*job)


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run all repeats (and sizes) of ``config``.

    With ``config.workers > 1`` repeats run in worker processes; results are
    collected in job order, so the report is identical to a serial run.
    Raises :class:`DataError` when the dataset cannot be loaded.
    """
    if config.sizes is None:
        ds = _load_dataset(config)
        jobs = [(config, ds, None, r) for r in range(config.repeats)]
    else:
        jobs = [(config, None, s, r) for s in config.sizes for r in range(config.repeats)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]
    report = ExperimentReport(config)
    for records, curves in results:
        report.records.extend(records)
        report.curves.extend(curves)
    return report


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


REPORT_COLUMNS = ("row", "model", "n_train", "repeat", "seed", "val_rmse", "test_rmse", "fallback",
                  "mean_test_rmse", "std_test_rmse")


def report_csv(report: ExperimentReport) -> str:
    """Detail rows, one per (model, size, repeat), then one aggregate row per (model, size).

    Aggregate rows carry the mean validation RMSE in ``val_rmse``, the
    repeat count in ``repeat`` and the number of forest fallbacks in
    ``fallback``.
    """
    if not report.records:
        raise ValueError("report has no records")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for n in report.sizes:
        for model in report.models:
            for r in sorted(report.select(model, n), key=lambda rec: rec.repeat):
                w.writerow(map(_fmt, ("detail", r.model, r.n_train, r.repeat, r.seed, r.val_rmse,
                                      r.test_rmse, r.fallback, None, None)))
    for a in report.aggregates():
        w.writerow(map(_fmt, ("aggregate", a.model, a.n_train, a.count, None, a.mean_val_rmse, None,
                              a.fallbacks, a.mean_test_rmse, a.std_test_rmse)))
    return buf.getvalue()


def _cell(mean: float, std: float) -> str:
    return f"{mean:.4g} ({std:.2g})" if not math.isnan(std) else f"{mean:.4g}"


def report_markdown(report: ExperimentReport) -> str:
    """Test RMSE grid: one row per model, one column per training size, ``mean (std)`` cells."""
    if not report.records:
        raise ValueError("report has no records")
    aggs = {(a.model, a.n_train): a for a in report.aggregates()}
    sizes = report.sizes
    label = Path(report.config.dataset).stem if report.config.dataset != "synth" else "synth"
    header = ["model"] + [f"{label} (n_train={n})" for n in sizes]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for model in report.models:
        cells = [model]
        for n in sizes:
            a = aggs.get((model, n))
            cells.append(_cell(a.mean_test_rmse, a.std_test_rmse) if a else "")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, format: str, path) -> Path:
    """Write the report as ``csv`` or ``markdown``; raises ``ValueError`` for an empty report."""
    if format == "csv":
        text = report_csv(report)
    elif format in ("markdown", "md"):
        text = report_markdown(report)
    else:
        raise ValueError(f"unknown report format {format!r}")
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def emit_timings(report: ExperimentReport, path) -> Path:
    """Wall-clock seconds per record. RF time covers forest growing; other models exclude it."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "n_train", "repeat", "wall_time"))
        for r in report.records:
            w.writerow((r.model, r.n_train, r.repeat, f"{r.wall_time:.3f}"))
    return path


def emit_curves(curves, path) -> Path:
    """Long-format learning curves: ``model, n_train, repeat, epoch, split, rmse``.

    Each curve contributes a train and a val row per epoch (epoch 0 is the
    untrained network). The forest's validation RMSE is repeated over the
    same epochs as model ``RF``, once per (n_train, repeat).
    """
    curves = list(curves)
    if not curves:
        raise ValueError("no learning curves to write")
    path = Path(path)
    seen_rf = set()
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "n_train", "repeat", "epoch", "split", "rmse"))
        for c in curves:
            for split, series in (("train", c.history.train_rmse), ("val", c.history.val_rmse)):
                for epoch, v in enumerate(series):
                    w.writerow((c.model, c.n_train, c.repeat, epoch, split, repr(float(v))))
            key = (c.n_train, c.repeat)
            if key not in seen_rf:
                seen_rf.add(key)
                for epoch in range(len(c.history.val_rmse)):
                    w.writerow(("RF", c.n_train, c.repeat, epoch, "val", repr(float(c.rf_val_rmse))))
    return path


def read_report_csv(path, config: ExperimentConfig | None = None) -> ExperimentReport:
    """Rebuild a report from the detail rows of :func:`report_csv` output.

    Wall times are not stored in that file and come back as NaN.
    """
    records = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise DataError(f"{path} is not a report CSV")
        for row in reader:
            if row["row"] != "detail":
                continue
            records.append(ModelRecord(row["model"], int(row["n_train"]), int(row["repeat"]),
                                       int(row["seed"]), float(row["val_rmse"]), float(row["test_rmse"]),
                                       row["fallback"] == "1", float("nan")))
    if not records:
        raise DataError(f"{path} holds no detail rows")
    if config is None:
        models = tuple(dict.fromkeys(r.model for r in records))
        config = ExperimentConfig(dataset=Path(path).stem, models=models)
    return ExperimentReport(config, records)


def write_outputs(report: ExperimentReport, directory) -> dict[str, Path]:
    """``report.csv``, ``report.md``, ``timings.csv`` and, when any model trained, ``curves.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {
        "csv": emit_report(report, "csv", directory / "report.csv"),
        "markdown": emit_report(report, "markdown", directory / "report.md"),
        "timings": emit_timings(report, directory / "timings.csv"),
    }
    if report.curves:
        out["curves"] = emit_curves(report.curves, directory / "curves.csv")
    return out


__all__ = [
    "Aggregate", "ConfigError", "Curve", "DataError", "ExperimentConfig", "ExperimentReport",
    "KNOWN_MODELS", "ModelRecord", "emit_curves", "emit_report", "emit_timings", "format_config",
    "load_config", "parse_config", "read_report_csv", "report_csv", "report_markdown", "run_experiment", "sample_std",
    "write_outputs",
]
