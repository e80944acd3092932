"""
GPD Experiments
Command-line runner for replicated classification experiments: fit/evaluate
runs, alpha_eps and inducing-point sweeps, reliability-diagram data, and the
synthetic convergence and fit-time studies
"""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from classifiers.base_classifier import BaseClassifier
from classifiers.dirichlet_classifier import DirichletGPClassifier
from classifiers.gpr_labels import LeastSquaresGPClassifier
from classifiers.laplace_gpc import LaplaceGPClassifier
from classifiers.predict_calibrate import CalibrationReport, ReliabilityBand, evaluate, mnll, reliability_band
from gp_models.errors import ConfigError, GPDError
from gpd_experiments.config import METHODS, ExperimentConfig, load_config
from utils.data_io import (Dataset, SplitSpec, atomic_write_text, frame_to_csv_text, load_dataset, split,
                           standardize, synth_bernoulli_1d, truth_grid)

logger = logging.getLogger(__name__)

RUN_RECORD_FILE = "run_record.json"
METRICS_FILE = "metrics.csv"
ALPHA_SWEEP_FILE = "alpha_sweep.csv"
INDUCING_SWEEP_FILE = "inducing_sweep.csv"
RELIABILITY_SUMMARY_FILE = "reliability_summary.csv"
CONVERGENCE_FILE = "convergence.csv"
CONVERGENCE_SUMMARY_FILE = "convergence_summary.csv"
SPEEDUP_FILE = "speedup.csv"

METRIC_COLUMNS = ["replicate", "error_rate", "mnll", "ece"]
ALPHA_SWEEP_COLUMNS = ["alpha_eps", "train_mnll", "test_mnll", "replicate"]
INDUCING_SWEEP_COLUMNS = ["m", "error_rate", "fit_seconds", "replicate"]
RELIABILITY_COLUMNS = ["bin_lo", "bin_hi", "count", "confidence", "accuracy", "lower_accuracy", "upper_accuracy"]
CONVERGENCE_METHODS = ("gpd", "gpr", "laplace_gpc")
CONVERGENCE_GRID_POINTS = 200
# alpha_eps of the timed GPD fit when the config leaves it on "auto"
SPEEDUP_ALPHA_EPS = 0.01


def replicate_seed(seed: int, replicate: int) -> int:
    """Seed for the classifier's restart and Monte-Carlo streams in one replicate"""
    return int(np.random.SeedSequence([seed, replicate]).generate_state(1)[0])


def make_classifier(config: ExperimentConfig, method: Optional[str] = None, seed: int = 0,
                    **overrides) -> BaseClassifier:
    """Instantiate the classifier for a method with the config's settings"""
    method = method or config.method
    if method == "gpd":
        options = dict(alpha_eps=config.alpha_eps, alpha_grid=config.alpha_grid, inducing=config.inducing,
                       inducing_selection=config.inducing_selection, restarts=config.restarts, seed=seed,
                       mc_samples=config.mc_samples)
        options.update(overrides)
        return DirichletGPClassifier(**options)
    if method in ("gpr", "gpr_platt"):
        options = dict(platt=method == "gpr_platt", inducing=config.inducing,
                       inducing_selection=config.inducing_selection, restarts=config.restarts, seed=seed)
        options.update(overrides)
        return LeastSquaresGPClassifier(**options)
    if method == "laplace_gpc":
        return LaplaceGPClassifier(restarts=config.restarts, seed=seed)
    raise ConfigError(f"Unknown method '{method}'")


def _json_default(value: Any):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


@dataclass
class ReplicateResult:
    """Outcome of one train/test replicate; error is set when any stage failed"""

    replicate: int
    method: str
    report: Optional[CalibrationReport] = None
    fit_seconds: Optional[float] = None
    predict_seconds: Optional[float] = None
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    alpha_eps: Optional[float] = None
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.error is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "replicate": self.replicate,
            "method": self.method,
            "success": self.success,
            "error": self.error,
            "report": self.report.to_dict() if self.report else None,
            "fit_seconds": self.fit_seconds,
            "predict_seconds": self.predict_seconds,
            "hyperparameters": self.hyperparameters,
            "alpha_eps": self.alpha_eps,
        }


@dataclass
class RunRecord:
    """Config echo plus every replicate's report, timings and hyperparameters"""

    config: ExperimentConfig
    config_hash: str
    dataset: str
    num_points: int
    num_classes: int
    replicates: List[ReplicateResult]

    @property
    def all_failed(self) -> bool:
        return not any(r.success for r in self.replicates)

    def summary(self) -> Dict[str, Optional[float]]:
        reports = [r.report for r in self.replicates if r.success]
        if not reports:
            return {"error_rate": None, "mnll": None, "ece": None, "successful_replicates": 0}
        return {
            "error_rate": float(np.mean([r.error_rate for r in reports])),
            "mnll": float(np.mean([r.mnll for r in reports])),
            "ece": float(np.mean([r.ece for r in reports])),
            "successful_replicates": len(reports),
        }

    def metrics_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.replicates:
            if r.success:
                rows.append([r.replicate, r.report.error_rate, r.report.mnll, r.report.ece])
            else:
                rows.append([r.replicate, np.nan, np.nan, np.nan])
        return pd.DataFrame(rows, columns=METRIC_COLUMNS)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "config": self.config.to_dict(),
            "dataset": {"name": self.dataset, "num_points": self.num_points, "num_classes": self.num_classes},
            "summary": self.summary(),
            "replicates": [r.to_dict() for r in self.replicates],
        }


class ExperimentRunner:
    """Replicated split → standardize → fit → evaluate protocol for one config"""

    def __init__(self, config: ExperimentConfig, dataset: Optional[Dataset] = None, show_progress: bool = True):
        self.config = config.validate()
        self.show_progress = show_progress
        self.logger = logging.getLogger(f"{__name__}.ExperimentRunner")
        self._dataset = dataset
        if dataset is not None:
            config.validate_for_dataset(dataset.num_classes)

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            data = load_dataset(self.config.dataset, self.config.label_column, self.config.seed)
            self.config.validate_for_dataset(data.num_classes)
            self._dataset = data
        return self._dataset

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def prepare(self, replicate: int, method: Optional[str] = None) -> Tuple[Dataset, Dataset, Dataset]:
        """Stratified split of one replicate, standardized by training statistics"""
        method = method or self.config.method
        calibration_fraction = self.config.calibration_fraction if method == "gpr_platt" else 0.0
        spec = SplitSpec(self.config.test_fraction, calibration_fraction, self.config.seed, replicate)
        train, calibration, test = split(self.dataset, spec)
        train, (calibration, test), _, _ = standardize(train, [calibration, test])
        return train, calibration, test

    def fit(self, replicate: int, method: Optional[str] = None, **overrides):
        """Fit one replicate; returns (classifier, train, calibration, test)"""
        method = method or self.config.method
        train, calibration, test = self.prepare(replicate, method)
        classifier = make_classifier(self.config, method, replicate_seed(self.config.seed, replicate), **overrides)

        def progress(step: int, total: int, status: str):
            self.logger.debug(f"{method} replicate {replicate} - step {step}/{total}: {status}")

        classifier.fit(train, calibration, progress_callback=progress)
        return classifier, train, calibration, test

    def map(self, func: Callable, items: Sequence, desc: str) -> list:
        """Apply func to every item, concurrently when jobs > 1; results keep item order"""
        results: list = [None] * len(items)
        with tqdm(total=len(items), desc=desc, disable=not self.show_progress) as bar:
            if self.config.jobs > 1 and len(items) > 1:
                with ThreadPoolExecutor(max_workers=self.config.jobs) as executor:
                    futures = {executor.submit(func, item): i for i, item in enumerate(items)}
                    for future in as_completed(futures):
                        results[futures[future]] = future.result()
                        bar.update(1)
            else:
                for i, item in enumerate(items):
                    results[i] = func(item)
                    bar.update(1)
        return results

    def run_replicate(self, replicate: int, method: Optional[str] = None) -> ReplicateResult:
        method = method or self.config.method
        result = ReplicateResult(replicate=replicate, method=method)
        try:
            classifier, _, _, test = self.fit(replicate, method)
            start = time.perf_counter()
            probs = classifier.predict_proba(test.X)
            result.predict_seconds = time.perf_counter() - start
            result.report = evaluate(probs, test.y, self.config.bins)
            result.fit_seconds = classifier.fit_seconds
            result.hyperparameters = classifier.hyperparameters()
            result.alpha_eps = result.hyperparameters.get("alpha_eps")
            self.logger.info(f"{method} replicate {replicate}: error {result.report.error_rate:.4f}, "
                             f"MNLL {result.report.mnll:.4f}, ECE {result.report.ece:.4f}")
        except Exception as e:
            self.logger.warning(f"{method} replicate {replicate} failed: {e}")
            result.error = str(e)
        return result

    def run(self) -> RunRecord:
        data = self.dataset
        self.logger.info(f"Running {self.config.method} on {data.name} ({data.num_points} points, "
                         f"{data.num_classes} classes), {self.config.replicates} replicates")
        results = self.map(self.run_replicate, list(range(self.config.replicates)),
                           f"{self.config.method} replicates")
        return RunRecord(config=self.config, config_hash=self.config_hash, dataset=data.name,
                         num_points=data.num_points, num_classes=data.num_classes, replicates=results)

    def sweep_alpha_eps(self, grid: Optional[Sequence[float]] = None) -> pd.DataFrame:
        """Training and test MNLL of GPD for every alpha_eps and replicate"""
        if self.config.method != "gpd":
            raise ConfigError("alpha_eps sweeps apply to gpd only")
        grid = list(grid if grid is not None else self.config.alpha_grid)
        _ = self.dataset

        def task(item: Tuple[int, float]) -> Dict[str, Any]:
            replicate, alpha = item
            row = {"alpha_eps": alpha, "train_mnll": np.nan, "test_mnll": np.nan, "replicate": replicate}
            try:
                classifier, train, _, test = self.fit(replicate, "gpd", alpha_eps=alpha)
                row["train_mnll"] = mnll(classifier.predict_proba(train.X), train.y)
                row["test_mnll"] = mnll(classifier.predict_proba(test.X), test.y)
            except Exception as e:
                self.logger.warning(f"alpha_eps={alpha:g} replicate {replicate} failed: {e}")
            return row

        tasks = [(r, a) for r in range(self.config.replicates) for a in grid]
        return pd.DataFrame(self.map(task, tasks, "alpha_eps sweep"), columns=ALPHA_SWEEP_COLUMNS)

    def sweep_inducing(self, m_list: Optional[Sequence[int]] = None) -> pd.DataFrame:
        """Test error and fit time for every inducing-point count and replicate"""
        if self.config.method == "laplace_gpc":
            raise ConfigError("laplace_gpc has no inducing-point variant")
        m_list = list(m_list if m_list is not None else self.config.m_list)
        _ = self.dataset

        def task(item: Tuple[int, int]) -> Dict[str, Any]:
            replicate, m = item
            row = {"m": m, "error_rate": np.nan, "fit_seconds": np.nan, "replicate": replicate}
            try:
                train, _, _ = self.prepare(replicate)
                row["m"] = min(m, train.num_points)
                classifier, _, _, test = self.fit(replicate, inducing=row["m"])
                row["error_rate"] = classifier.evaluate(test, self.config.bins).error_rate
                row["fit_seconds"] = classifier.fit_seconds
            except Exception as e:
                self.logger.warning(f"m={m} replicate {replicate} failed: {e}")
            return row

        tasks = [(r, m) for r in range(self.config.replicates) for m in m_list]
        return pd.DataFrame(self.map(task, tasks, "inducing sweep"), columns=INDUCING_SWEEP_COLUMNS)

    def reliability(self) -> List[Tuple[int, Optional[ReliabilityBand]]]:
        """Reliability band of the configured method per replicate (None when it failed)"""
        _ = self.dataset

        def task(replicate: int) -> Tuple[int, Optional[ReliabilityBand]]:
            try:
                classifier, _, _, test = self.fit(replicate)
                band = reliability_band(classifier, test.X, test.y, self.config.quantile,
                                        self.config.mc_samples, replicate_seed(self.config.seed, replicate),
                                        self.config.bins)
                return replicate, band
            except Exception as e:
                self.logger.warning(f"Reliability replicate {replicate} failed: {e}")
                return replicate, None

        return self.map(task, list(range(self.config.replicates)), f"{self.config.method} reliability")

    def convergence(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        MSE between predicted class-1 probabilities and f_p on a fixed grid

        For every n in sizes and seed in seed .. seed + replicates - 1, GPD,
        uncalibrated GPR and the Laplace GPC are trained on the same synthetic
        sample. Returns the per-run table and the (n, method) median/sd summary.
        """
        grid_X, truth = truth_grid(self.config.f_p, CONVERGENCE_GRID_POINTS)
        seeds = [self.config.seed + s for s in range(self.config.replicates)]
        tasks = [(n, s, method) for n in self.config.sizes for s in seeds for method in CONVERGENCE_METHODS]

        def task(item: Tuple[int, int, str]) -> Dict[str, Any]:
            n, seed, method = item
            row = {"n": n, "seed": seed, "method": method, "mse": np.nan}
            try:
                data = synth_bernoulli_1d(n, self.config.f_p, seed)
                grid = Dataset(X=grid_X, y=np.zeros(grid_X.shape[0], dtype=int), num_classes=2)
                train, (grid,), _, _ = standardize(data, [grid])
                classifier = make_classifier(self.config, method, replicate_seed(seed, n))
                classifier.fit(train)
                p1 = classifier.predict_proba(grid.X).probs[:, 1]
                row["mse"] = float(np.mean((p1 - truth) ** 2))
            except Exception as e:
                self.logger.warning(f"{method} n={n} seed={seed} failed: {e}")
            return row

        frame = pd.DataFrame(self.map(task, tasks, "convergence"), columns=["n", "seed", "method", "mse"])
        summary = (frame.groupby(["n", "method"], sort=True)["mse"]
                   .agg(median_mse="median", sd_mse="std").reset_index())
        return frame, summary

    def speedup(self) -> pd.DataFrame:
        """Wall-clock fit time of GPD against the Laplace GPC on the same splits"""
        if self.dataset.num_classes != 2:
            raise ConfigError("The fit-time comparison needs a binary dataset")
        if self.config.jobs > 1:
            self.logger.warning("Concurrent replicates share the CPU; fit times are not comparable across runs")
        alpha = SPEEDUP_ALPHA_EPS if self.config.alpha_eps == "auto" else self.config.alpha_eps

        def task(replicate: int) -> Dict[str, Any]:
            row = {"replicate": replicate, "gpd_fit_seconds": np.nan, "laplace_fit_seconds": np.nan,
                   "speedup": np.nan}
            try:
                gpd, _, _, _ = self.fit(replicate, "gpd", alpha_eps=alpha, inducing=None)
                laplace, _, _, _ = self.fit(replicate, "laplace_gpc")
                row["gpd_fit_seconds"] = gpd.fit_seconds
                row["laplace_fit_seconds"] = laplace.fit_seconds
                row["speedup"] = laplace.fit_seconds / gpd.fit_seconds
            except Exception as e:
                self.logger.warning(f"Timing replicate {replicate} failed: {e}")
            return row

        columns = ["replicate", "gpd_fit_seconds", "laplace_fit_seconds", "speedup"]
        return pd.DataFrame(self.map(task, list(range(self.config.replicates)), "fit timing"), columns=columns)


def _write_csv(frame: pd.DataFrame, path: Path, config_hash: str) -> Path:
    atomic_write_text(path, frame_to_csv_text(frame, f"config_hash={config_hash}"))
    logger.info(f"Wrote {path}")
    return path


def run_experiment(config: ExperimentConfig, dataset: Optional[Dataset] = None,
                   show_progress: bool = True) -> RunRecord:
    """Run every replicate and write run_record.json and metrics.csv"""
    record = ExperimentRunner(config, dataset, show_progress).run()
    out = Path(config.out)
    atomic_write_text(out / RUN_RECORD_FILE, json.dumps(record.to_dict(), indent=2, default=_json_default) + "\n")
    logger.info(f"Wrote {out / RUN_RECORD_FILE}")
    _write_csv(record.metrics_frame(), out / METRICS_FILE, record.config_hash)
    return record


def sweep_alpha_eps(config: ExperimentConfig, grid: Optional[Sequence[float]] = None,
                    dataset: Optional[Dataset] = None, show_progress: bool = True) -> pd.DataFrame:
    runner = ExperimentRunner(config, dataset, show_progress)
    frame = runner.sweep_alpha_eps(grid)
    _write_csv(frame, Path(config.out) / ALPHA_SWEEP_FILE, runner.config_hash)
    return frame


def sweep_inducing(config: ExperimentConfig, m_list: Optional[Sequence[int]] = None,
                   dataset: Optional[Dataset] = None, show_progress: bool = True) -> pd.DataFrame:
    runner = ExperimentRunner(config, dataset, show_progress)
    frame = runner.sweep_inducing(m_list)
    _write_csv(frame, Path(config.out) / INDUCING_SWEEP_FILE, runner.config_hash)
    return frame


def reliability_path(out: Path, method: str, replicate: int) -> Path:
    return Path(out) / f"reliability_{method}_r{replicate}.csv"


def emit_reliability(config: ExperimentConfig, dataset: Optional[Dataset] = None,
                     show_progress: bool = True) -> List[Path]:
    """
    Write one reliability CSV per replicate plus a per-replicate ECE summary

    Each CSV has exactly `bins` data rows with the columns bin_lo, bin_hi,
    count, confidence, accuracy, lower_accuracy, upper_accuracy.
    """
    runner = ExperimentRunner(config, dataset, show_progress)
    out = Path(config.out)
    written, summary = [], []
    for replicate, band in runner.reliability():
        if band is None:
            summary.append({"method": config.method, "replicate": replicate, "ece": np.nan, "z": np.nan})
            continue
        frame = pd.DataFrame(band.rows(), columns=RELIABILITY_COLUMNS)
        written.append(_write_csv(frame, reliability_path(out, config.method, replicate), runner.config_hash))
        summary.append({"method": config.method, "replicate": replicate, "ece": band.ece, "z": band.z})
    _write_csv(pd.DataFrame(summary, columns=["method", "replicate", "ece", "z"]),
               out / RELIABILITY_SUMMARY_FILE, runner.config_hash)
    return written


def convergence_study(config: ExperimentConfig, show_progress: bool = True) -> Tuple[pd.DataFrame, pd.DataFrame]:
    runner = ExperimentRunner(config, show_progress=show_progress)
    frame, summary = runner.convergence()
    _write_csv(frame, Path(config.out) / CONVERGENCE_FILE, runner.config_hash)
    _write_csv(summary, Path(config.out) / CONVERGENCE_SUMMARY_FILE, runner.config_hash)
    return frame, summary


def speedup_study(config: ExperimentConfig, dataset: Optional[Dataset] = None,
                  show_progress: bool = True) -> pd.DataFrame:
    runner = ExperimentRunner(config, dataset, show_progress)
    frame = runner.speedup()
    _write_csv(frame, Path(config.out) / SPEEDUP_FILE, runner.config_hash)
    return frame


VERBS = {
    "run": "fit and evaluate the method over replicated splits",
    "sweep-alpha": "training/test MNLL of GPD over the alpha_eps grid",
    "sweep-inducing": "test error and fit time over inducing-point counts",
    "reliability": "reliability-diagram CSVs with latent quantile bands",
    "convergence": "MSE to the true class probability on synthetic data as n grows",
    "speedup": "fit time of GPD against the Laplace GP classifier",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="CSV path or synth:<f_p>:<n>")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--inducing", help="number of inducing points, or 'exact'")
    common.add_argument("--alpha-eps", help="Dirichlet pseudo-count, or 'auto' (gpd only)")
    common.add_argument("--replicates", type=int)
    common.add_argument("--mc-samples", type=int, help="Monte-Carlo samples per test point")
    common.add_argument("--bins", type=int, help="reliability / ECE bins")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="KEY=value config file (flags take precedence)")
    common.add_argument("--jobs", type=int, help="replicates run concurrently")
    common.add_argument("--test-fraction", type=float)
    common.add_argument("--calibration-fraction", type=float, help="share of training data held out for Platt scaling")
    common.add_argument("--restarts", type=int, help="optimizer starts per fit")
    common.add_argument("--quantile", type=float, help="central mass between the lower and upper latent quantiles of the reliability band")
    common.add_argument("--inducing-selection", choices=("kmeans", "uniform"))
    common.add_argument("--label-column", help="'last' or a header name")
    common.add_argument("--alpha-grid", help="comma-separated alpha_eps values")
    common.add_argument("--m-list", help="comma-separated inducing-point counts")
    common.add_argument("--sizes", help="comma-separated training sizes for the convergence study")
    common.add_argument("--f-p", help="class-1 probability function of the synthetic data")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="gpd-experiments",
                                     description="Dirichlet-based GP classification experiments")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for verb, help_text in VERBS.items():
        subparsers.add_parser(verb, parents=[common], help=help_text)
    return parser


def _all_missing(frame: pd.DataFrame, column: str) -> bool:
    return bool(frame[column].isna().all())


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}

    try:
        config = load_config(args.config, overrides)
        logger.info(f"{args.command}: config hash {config.config_hash()}")
        if args.command == "run":
            failed = run_experiment(config).all_failed
        elif args.command == "sweep-alpha":
            failed = _all_missing(sweep_alpha_eps(config), "test_mnll")
        elif args.command == "sweep-inducing":
            failed = _all_missing(sweep_inducing(config), "error_rate")
        elif args.command == "reliability":
            failed = not emit_reliability(config)
        elif args.command == "convergence":
            failed = _all_missing(convergence_study(config)[0], "mse")
        else:
            failed = _all_missing(speedup_study(config), "speedup")
    except GPDError as e:
        logger.error(str(e))
        return 2

    if failed:
        logger.error(f"{args.command}: every replicate failed")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
