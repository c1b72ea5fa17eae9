"""Experiment orchestration: configs, deterministic parallel execution, reports.

Reports are a per-example CSV plus an aggregate JSON; both carry the config
hash and master seed so any number can be traced back to its run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import streams
from .ais import AisConfig, combine_chains, forward_ais, make_schedule, reverse_ais
from .data import Dataset, binarize, dequantize, load_mnist_idx, select_examples
from .estimators import KdeConfig, elbo, iwae_bound, kde_estimate, prior_bank
from .hmc import HmcParams
from .models import (AnnealingPath, EncoderProposal, GenerativeModel,
                     ObservationModel)
from .nets import load_model_file
from .parallel import parallel_map

KNOWN_ESTIMATORS = ("ais", "kde", "elbo", "iwae", "bdmc")

CSV_COLUMNS = {
    "ais": ("ais", "ais_stderr"),
    "kde": ("kde",),
    "elbo": ("elbo",),
    "iwae": ("iwae",),
    "bdmc": ("reverse_upper", "bdmc_gap"),
}


@dataclass
class ExperimentConfig:
    decoder: str = ""
    encoder: str | None = None
    obs_kind: str = "gaussian"
    sigma: float = 0.1
    data_kind: str = "synthetic"  # synthetic | mnist | array
    data_images: str | None = None
    data_labels: str | None = None
    data_path: str | None = None
    data_dequantize: bool = False
    data_binarize: str | None = None  # stochastic | threshold | file
    data_binarize_source: str | None = None
    label_filter: int | None = None
    split: str = "test"
    n_examples: int = 20
    estimators: tuple = ("ais",)
    ais_init: str = "prior"  # prior | encoder
    n_intermediate: int = 1000
    n_chains: int = 16
    schedule: str = "linear"
    n_leapfrog: int = 10
    step_size: float = 0.1
    kde_samples: int = 100_000
    kde_share: bool = False
    iwae_samples: int = 10_000
    elbo_samples: int = 100
    seed: int = 0
    output_dir: str = "."

    def __post_init__(self):
        self.estimators = tuple(self.estimators)
        unknown = set(self.estimators) - set(KNOWN_ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        for name, value in (("n_examples", self.n_examples),
                            ("n_intermediate", self.n_intermediate),
                            ("n_chains", self.n_chains),
                            ("kde_samples", self.kde_samples),
                            ("iwae_samples", self.iwae_samples),
                            ("elbo_samples", self.elbo_samples)):
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if "bdmc" in self.estimators:
            if self.data_kind != "synthetic":
                raise ValueError("bdmc needs simulated data (data_kind='synthetic')")
            if "ais" not in self.estimators:
                raise ValueError("bdmc needs the ais estimator for the lower bound")
        if (set(self.estimators) & {"elbo", "iwae"} or self.ais_init == "encoder") \
                and not self.encoder:
            raise ValueError("elbo/iwae/encoder-initialized ais need an encoder file")

    def to_dict(self):
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")  # does not affect results
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class EstimateReport:
    rows: list
    aggregates: dict
    runtimes: dict
    config: ExperimentConfig
    config_hash: str
    csv_path: str | None = None
    json_path: str | None = None

    @property
    def fully_failed(self) -> bool:
        return all(r.get("error") for r in self.rows)


def build_model(config: ExperimentConfig):
    decoder = load_model_file(config.decoder)
    if config.obs_kind == "gaussian":
        obs = ObservationModel("gaussian", config.sigma)
    elif config.obs_kind == "bernoulli":
        obs = ObservationModel("bernoulli")
    else:
        raise ValueError(f"unknown obs_kind {config.obs_kind!r}")
    model = GenerativeModel(decoder, obs)
    encoder = EncoderProposal(load_model_file(config.encoder)) if config.encoder else None
    return model, encoder


def ais_config(config: ExperimentConfig) -> AisConfig:
    return AisConfig(
        schedule=make_schedule(config.n_intermediate, config.schedule),
        n_chains=config.n_chains,
        hmc=HmcParams(step_size=config.step_size, n_leapfrog=config.n_leapfrog),
        seed=config.seed,
    )


def load_dataset(config: ExperimentConfig, model: GenerativeModel):
    """Resolve the configured data source to (ids, examples, exact_latents|None)."""
    if config.data_kind == "synthetic":
        zs, xs = [], []
        for i in range(config.n_examples):
            rng = streams.stream(config.seed, i, 0, streams.SIMULATE)
            z, x = model.simulate(rng)
            zs.append(z)
            xs.append(x)
        return np.arange(config.n_examples), np.array(xs), zs
    if config.data_kind == "mnist":
        ds = load_mnist_idx(config.data_images, config.data_labels)
    elif config.data_kind == "array":
        x = np.load(config.data_path) if str(config.data_path).endswith(".npy") \
            else np.loadtxt(config.data_path, ndmin=2)
        binary = bool(np.all((x == 0) | (x == 1)))
        ds = Dataset(x, binary=binary, note=str(config.data_path))
    else:
        raise ValueError(f"unknown data_kind {config.data_kind!r}")
    if config.data_dequantize:
        ds = dequantize(ds, config.seed)
    if config.data_binarize:
        ds = binarize(ds, config.data_binarize, seed=config.seed,
                      source=config.data_binarize_source)
    if config.label_filter is not None:
        ds = ds.filter_label(config.label_filter)
    if config.obs_kind == "bernoulli" and not ds.binary:
        raise ValueError("bernoulli observation model needs a binary dataset")
    ids, xs = select_examples(ds, config.n_examples, config.seed)
    return ids, xs, None


def _ais_column(xs, model, encoder, config, map_fn):
    """Forward AIS lower bound per example, chains fanned out over the map."""
    cfg = ais_config(config)
    initial = encoder if config.ais_init == "encoder" else "prior"
    values, stderrs, chains = [], [], []
    for i, x in enumerate(xs):
        path = AnnealingPath(model, x, initial)
        runs = forward_ais(x, path, cfg, example_index=i, map_fn=map_fn)
        est, se = combine_chains([r.log_weight for r in runs], "lower")
        values.append(est)
        stderrs.append(se)
        chains.append(runs)
    return values, stderrs, chains


def _reverse_column(xs, zs, model, config, map_fn):
    cfg = ais_config(config)
    uppers = []
    for i, (x, z) in enumerate(zip(xs, zs)):
        path = AnnealingPath(model, x, "prior")
        runs = reverse_ais(x, z, path, cfg, example_index=i, map_fn=map_fn)
        est, _ = combine_chains([r.log_weight for r in runs], "upper")
        uppers.append(est)
    return uppers


def _kde_task(args):
    x, model, cfg, seed, i, bank = args
    return kde_estimate(x, model, cfg, seed, example_index=i, bank=bank)


def _elbo_task(args):
    x, model, q, n, seed, i = args
    return elbo(x, model, q, n, seed, example_index=i)


def _iwae_task(args):
    x, model, q, n, seed, i = args
    return iwae_bound(x, model, q, n, seed, example_index=i)


def run_experiment(config: ExperimentConfig, map_fn=None, write_files=True
                   ) -> EstimateReport:
    """Execute the selected estimators over the example set and write reports.

    Output is a pure function of (config, seed): all draws come from derived
    streams and results are gathered by example index, so worker count and
    scheduling order never change a row.
    """
    if map_fn is None:
        map_fn = parallel_map
    model, encoder = build_model(config)
    ids, xs, zs = load_dataset(config, model)

    columns = ["example_id", "split"]
    for est in KNOWN_ESTIMATORS:
        if est in config.estimators:
            columns.extend(CSV_COLUMNS[est])
    columns.append("error")

    rows = [{"example_id": int(ids[i]), "split": config.split, "error": ""}
            for i in range(len(xs))]
    runtimes = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as e:  # per-estimator failure poisons its column only
            for r in rows:
                r["error"] = (r["error"] + f" {name}: {e}").strip()
            out = None
        runtimes[name] = time.perf_counter() - t0
        return out

    ais_values = None
    if "ais" in config.estimators:
        out = timed("ais", lambda: _ais_column(xs, model, encoder, config, map_fn))
        if out:
            ais_values, stderrs, _ = out
            for r, v, se in zip(rows, ais_values, stderrs):
                r["ais"], r["ais_stderr"] = v, se
    if "bdmc" in config.estimators and ais_values is not None:
        uppers = timed("bdmc", lambda: _reverse_column(xs, zs, model, config, map_fn))
        if uppers:
            for r, up, lo in zip(rows, uppers, ais_values):
                r["reverse_upper"] = up
                r["bdmc_gap"] = up - lo
    if "kde" in config.estimators:
        kde_cfg = KdeConfig(config.kde_samples, config.kde_share)
        bank = prior_bank(model, config.kde_samples, config.seed) \
            if config.kde_share else None
        tasks = [(x, model, kde_cfg, config.seed, i, bank)
                 for i, x in enumerate(xs)]
        vals = timed("kde", lambda: map_fn(_kde_task, tasks))
        if vals:
            for r, v in zip(rows, vals):
                r["kde"] = v
    if "elbo" in config.estimators:
        tasks = [(x, model, encoder, config.elbo_samples, config.seed, i)
                 for i, x in enumerate(xs)]
        vals = timed("elbo", lambda: map_fn(_elbo_task, tasks))
        if vals:
            for r, v in zip(rows, vals):
                r["elbo"] = v
    if "iwae" in config.estimators:
        tasks = [(x, model, encoder, config.iwae_samples, config.seed, i)
                 for i, x in enumerate(xs)]
        vals = timed("iwae", lambda: map_fn(_iwae_task, tasks))
        if vals:
            for r, v in zip(rows, vals):
                r["iwae"] = v

    aggregates = {}
    for col in columns:
        if col in ("example_id", "split", "error"):
            continue
        vals = np.array([r[col] for r in rows if col in r], dtype=np.float64)
        if vals.size:
            aggregates[col] = {
                "mean": float(vals.mean()),
                "stderr": float(vals.std(ddof=1) / np.sqrt(vals.size))
                if vals.size > 1 else None,
                "n": int(vals.size),
            }
    report = EstimateReport(rows, aggregates, runtimes, config, config.hash())
    if write_files:
        write_report(report, columns)
    return report


def write_report(report: EstimateReport, columns) -> None:
    out = Path(report.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "per_example.csv"
    with open(csv_path, "w", newline="") as f:
        f.write(f"# config_hash: {report.config_hash}\n")
        f.write(f"# seed: {report.config.seed}\n")
        writer = csv.writer(f)
        writer.writerow(columns)
        for r in report.rows:
            writer.writerow([_fmt(r.get(c, "")) for c in columns])
    json_path = out / "aggregate.json"
    doc = {
        "config": report.config.to_dict(),
        "config_hash": report.config_hash,
        "seed": report.config.seed,
        "aggregates": report.aggregates,
        "runtimes_sec": report.runtimes,
    }
    with open(json_path, "w") as f:
        json.dump(doc, f, indent=1)
    report.csv_path = str(csv_path)
    report.json_path = str(json_path)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


_EPOCH_RE = re.compile(r"(\d+)")


def list_checkpoints(checkpoint_dir, pattern="decoder*.json"):
    """Checkpoint files sorted by the last integer tag in the name."""
    found = []
    for p in sorted(Path(checkpoint_dir).glob(pattern)):
        tags = _EPOCH_RE.findall(p.stem)
        if not tags:
            warnings.warn(f"skipping checkpoint without an epoch tag: {p.name}")
            continue
        found.append((int(tags[-1]), p))
    found.sort(key=lambda t: (t[0], t[1].name))
    return found


def checkpoint_curve(config: ExperimentConfig, checkpoint_dir, valid_config=None,
                     map_fn=None):
    """Evaluate every checkpoint on fixed subsets with a fixed seed.

    Returns rows (epoch, split, estimator, mean, stderr, n) in epoch order,
    regardless of directory order. Unreadable checkpoints are skipped with
    a warning.
    """
    rows = []
    split_configs = [(config.split, config)]
    if valid_config is not None:
        split_configs.append((valid_config.split, valid_config))
    for epoch, path in list_checkpoints(checkpoint_dir):
        for split, base in split_configs:
            sub = ExperimentConfig.from_dict({**base.to_dict(),
                                              "decoder": str(path),
                                              "encoder": _sibling_encoder(path, base),
                                              "split": split})
            try:
                report = run_experiment(sub, map_fn=map_fn, write_files=False)
            except Exception as e:
                warnings.warn(f"skipping checkpoint {path.name}: {e}")
                continue
            for est, agg in report.aggregates.items():
                rows.append({"epoch": epoch, "split": split, "estimator": est,
                             "mean": agg["mean"], "stderr": agg["stderr"],
                             "n": agg["n"]})
    return rows


def _sibling_encoder(decoder_path: Path, config: ExperimentConfig):
    if not config.encoder:
        return None
    candidate = decoder_path.with_name(decoder_path.name.replace("decoder", "encoder"))
    return str(candidate) if candidate.exists() else config.encoder


def write_curve(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "split", "estimator",
                                               "mean", "stderr", "n"])
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})
