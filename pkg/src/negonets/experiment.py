"""End-to-end experiment: data -> NegoNets + baseline -> side-by-side metrics.

The same functions back the command line, the acceptance tests and the
scripts in ``scripts/``, so a result reported by one is reproducible by the
others from the config alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import BaselineSeller, baseline_price, fit_baseline_seller, train_forecaster
from .data import Dataset, holdout, load_csv, split
from .losses import LossConfig
from .metrics import EvalRecords, MetricsReport, evaluate
from .neural import ConfigurationError, Mlp, forward
from .simulator import PRESET_NAMES, ScenarioError, load_scenarios, preset_bundle, simulate_market
from .training import TrainConfig, TrainHistory, suggest_prices, train_negonets

MODEL_NAMES = ("NegoNets", "Baseline")


@dataclass
class ExperimentConfig:
    """One run. ``scenario`` is a preset name or scenario file; ``dataset`` a CSV or directory."""

    scenario: str | None = "paper-sim"
    dataset: str | None = None
    seed: int = 0
    baseline: bool = True
    out_dir: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            bad = {"seed", "loss"} & set(self.train)
            if bad:
                raise ConfigurationError(f"set {sorted(bad)} at the top level, not inside 'train'")
            self.train = TrainConfig(**self.train)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if (self.scenario is None) == (self.dataset is None):
            raise ConfigurationError("specify exactly one of 'scenario' and 'dataset'")
        self.seed = int(self.seed)
        # keep the nested copies in step with the top-level seed and loss
        self.train = dataclasses.replace(self.train, seed=self.seed, loss=self.loss)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        del train["seed"], train["loss"]
        train["hidden"] = list(train["hidden"])
        return {
            "scenario": self.scenario,
            "dataset": self.dataset,
            "seed": self.seed,
            "baseline": self.baseline,
            "out_dir": self.out_dir,
            "train": train,
            "loss": dataclasses.asdict(self.loss),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        """Hash of everything that determines the results (not the output location)."""
        d = self.to_dict()
        del d["out_dir"]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def effective_loss(loss: LossConfig) -> dict:
    """Human-readable account of which terms are active, for manifests."""
    seller = ["revenue"]
    if loss.pointwise_in_seller:
        seller.append("pointwise")
    if loss.lam > 0:
        seller.append(f"-{loss.lam:g}*boundary")
    buyer = ["revenue", "pointwise"]
    if loss.lam > 0:
        buyer.append(f"{loss.lam:g}*cross_entropy")
    return {"seller_maximises": seller, "buyer_minimises": buyer}


# -- data ---------------------------------------------------------------------


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def from_train_test(train: Dataset, test: Dataset, seed: int) -> Splits:
    trn, val = holdout(train, 0.2, seed)
    return Splits(trn, val, test)


def from_pool(data: Dataset, seed: int) -> Splits:
    return Splits(*split(data, seed=seed))


def simulate_bundle(scenario: str, seed: int) -> dict[str, Dataset]:
    """Simulate a preset or scenario file. Every scenario seed is shifted by ``seed``."""
    if scenario in PRESET_NAMES:
        scenarios = preset_bundle(scenario, seed)
    else:
        path = Path(scenario)
        if not path.is_file():
            raise ScenarioError(f"{scenario!r} is neither a preset ({', '.join(PRESET_NAMES)}) nor a file")
        scenarios = {
            k: dataclasses.replace(s, seed=s.seed + seed) for k, s in load_scenarios(path).items()
        }
    return {name: simulate_market(s) for name, s in scenarios.items()}


def splits_from_bundle(bundle: dict[str, Dataset], seed: int) -> Splits:
    if set(bundle) == {"train", "test"}:
        return from_train_test(bundle["train"], bundle["test"], seed)
    if set(bundle) == {"data"}:
        return from_pool(bundle["data"], seed)
    raise ScenarioError(f"expected scenarios 'train' and 'test', or a single one; got {sorted(bundle)}")


def load_dataset_bundle(path) -> dict[str, Dataset]:
    """A CSV file, or a directory holding train.csv + test.csv or data.csv."""
    path = Path(path)
    if path.is_file():
        return {"data": load_csv(path)}
    if (path / "train.csv").is_file() and (path / "test.csv").is_file():
        return {"train": load_csv(path / "train.csv"), "test": load_csv(path / "test.csv")}
    if (path / "data.csv").is_file():
        return {"data": load_csv(path / "data.csv")}
    raise ConfigurationError(f"{path}: expected a CSV file or a directory with train.csv and test.csv")


def prepare_data(cfg: ExperimentConfig) -> Splits:
    if cfg.scenario is not None:
        bundle = simulate_bundle(cfg.scenario, cfg.seed)
    else:
        bundle = load_dataset_bundle(cfg.dataset)
    return splits_from_bundle(bundle, cfg.seed)


# -- models -------------------------------------------------------------------


@dataclass
class TrainedModels:
    seller: Mlp
    buyer: Mlp
    history: TrainHistory
    forecaster: Mlp | None = None
    baseline: BaselineSeller | None = None
    forecaster_curve: list[float] = field(default_factory=list)


def train_models(cfg: ExperimentConfig, splits: Splits, seller=None, buyer=None) -> TrainedModels:
    seller, buyer, history = train_negonets(splits.train, splits.val, cfg.train, seller, buyer)
    models = TrainedModels(seller, buyer, history)
    if cfg.baseline:
        models.forecaster, models.forecaster_curve = train_forecaster(splits.train, splits.val, cfg.train)
        # price response summarised over the training contexts
        models.baseline = fit_baseline_seller(models.forecaster, splits.train.x)
    return models


def model_outputs(models: TrainedModels, data: Dataset) -> dict[str, tuple[np.ndarray, np.ndarray, Mlp]]:
    """Per model: (suggested prices, buyer probabilities at offered prices, buyer-side net)."""
    _check_compatible(models, data)
    inputs = data.buyer_inputs()
    out = {"NegoNets": (suggest_prices(models.seller, data.x), forward(models.buyer, inputs)[0], models.buyer)}
    if models.baseline is not None:
        f = models.baseline.forecaster
        out["Baseline"] = (baseline_price(models.baseline, data.x), forward(f, inputs)[0], f)
    return out


def _check_compatible(models: TrainedModels, data: Dataset):
    if models.seller.input_dim != data.dim:
        raise ConfigurationError(
            f"checkpoints expect {models.seller.input_dim} context features, dataset has {data.dim}"
        )


def evaluate_models(models: TrainedModels, data: Dataset, cfg: ExperimentConfig) -> dict[str, MetricsReport]:
    if len(data) == 0:
        raise ConfigurationError("evaluation set is empty")
    reports = {}
    for name, (fs, q, net) in model_outputs(models, data).items():
        records = EvalRecords(data.p, fs, q, data.y)
        reports[name] = evaluate(records, net, data.x, cfg.loss.classification_threshold, seed=cfg.seed)
    return reports


def run_experiment(cfg: ExperimentConfig):
    """Simulate or load, train, evaluate on the test split. Returns (splits, models, reports)."""
    splits = prepare_data(cfg)
    models = train_models(cfg, splits)
    return splits, models, evaluate_models(models, splits.test, cfg)


# -- figure data ----------------------------------------------------------------

PRICE_BINS = 20
HEATMAP_BINS = 10


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if np.isnan(v) else repr(round(v, 12))


def price_histogram(data: Dataset, suggestions: dict[str, np.ndarray], bins=PRICE_BINS) -> str:
    """Counts of offered and suggested prices on equal-width bins of [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    cols = {"offered": np.histogram(data.p, edges)[0]}
    for name, fs in suggestions.items():
        cols[name.lower()] = np.histogram(fs, edges)[0]
    rows = [(edges[i], edges[i + 1], *(c[i] for c in cols.values())) for i in range(bins)]
    return _csv(["bin_lo", "bin_hi", *cols], rows)


def conversion_table(data: Dataset, bins=PRICE_BINS) -> str:
    """Conversion rate and frequency per offered-price bucket (nan where empty)."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    which = np.clip(np.searchsorted(edges, data.p, side="right") - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    buys = np.bincount(which, weights=data.y, minlength=bins)
    n = max(len(data), 1)
    rows = []
    for i in range(bins):
        rate = buys[i] / counts[i] if counts[i] else float("nan")
        rows.append((edges[i], edges[i + 1], counts[i], counts[i] / n, rate))
    return _csv(["bucket_lo", "bucket_hi", "count", "frequency", "conversion"], rows)


def suggestion_heatmap(data: Dataset, fs, bins=HEATMAP_BINS) -> str:
    """Offered-vs-suggested 2-D counts, one block per outcome: ``bins**2 * 2`` rows."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    fs = np.asarray(fs, dtype=np.float64)
    rows = []
    for outcome in (0, 1):
        mask = data.y == outcome
        counts = np.histogram2d(data.p[mask], fs[mask], bins=[edges, edges])[0].astype(np.int64)
        for i in range(bins):
            for j in range(bins):
                rows.append((outcome, edges[i], edges[i + 1], edges[j], edges[j + 1], counts[i, j]))
    return _csv(["outcome", "offered_lo", "offered_hi", "suggested_lo", "suggested_hi", "count"], rows)


def figure_files(models: TrainedModels, data: Dataset) -> dict[str, str]:
    """File name -> CSV text for every figure-data table."""
    outputs = model_outputs(models, data)
    files = {
        "price_histogram.csv": price_histogram(data, {k: v[0] for k, v in outputs.items()}),
        "conversion_by_price.csv": conversion_table(data),
    }
    for name, (fs, _, _) in outputs.items():
        files[f"heatmap_{name.lower()}.csv"] = suggestion_heatmap(data, fs)
    return files
