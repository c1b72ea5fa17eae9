"""Command-line entry points for the evaluation engine."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import streams
from .ais import AisConfig, bdmc, posterior_decode
from .estimators import KdeConfig, SigmaGrid, optimal_sigma_eval, sigma_sweep
from .harness import (ExperimentConfig, ais_config, build_model, checkpoint_curve,
                      load_dataset, run_experiment, write_curve, _fmt)
from .images import export_image_grid
from .models import AnnealingPath
from .parallel import parallel_map


def _add_config_flags(p: argparse.ArgumentParser, seed_required=False):
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--decoder", help="decoder ModelFile path")
    p.add_argument("--encoder", help="encoder ModelFile path")
    p.add_argument("--obs", dest="obs_kind", choices=["gaussian", "bernoulli"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--data", dest="data_kind",
                   choices=["synthetic", "mnist", "array"])
    p.add_argument("--images", dest="data_images", help="IDX image file")
    p.add_argument("--labels", dest="data_labels", help="IDX label file")
    p.add_argument("--array", dest="data_path", help=".npy or text matrix file")
    p.add_argument("--dequantize", dest="data_dequantize", action="store_true",
                   default=None)
    p.add_argument("--binarize", dest="data_binarize",
                   choices=["stochastic", "threshold", "file"])
    p.add_argument("--binarize-source", dest="data_binarize_source")
    p.add_argument("--label-filter", dest="label_filter", type=int)
    p.add_argument("--split")
    p.add_argument("--n-examples", dest="n_examples", type=int)
    p.add_argument("--estimators", help="comma list from ais,kde,elbo,iwae,bdmc")
    p.add_argument("--ais-init", dest="ais_init", choices=["prior", "encoder"])
    p.add_argument("--n-dist", dest="n_intermediate", type=int,
                   help="number of annealing distributions")
    p.add_argument("--chains", dest="n_chains", type=int)
    p.add_argument("--schedule", choices=["linear", "sigmoid"])
    p.add_argument("--leapfrog", dest="n_leapfrog", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--kde-samples", dest="kde_samples", type=int)
    p.add_argument("--kde-share", dest="kde_share", action="store_true", default=None)
    p.add_argument("--iwae-samples", dest="iwae_samples", type=int)
    p.add_argument("--elbo-samples", dest="elbo_samples", type=int)
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--out", dest="output_dir")


def _config_from_args(args) -> ExperimentConfig:
    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
    names = {f.name for f in fields(ExperimentConfig)}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    if isinstance(base.get("estimators"), str):
        base["estimators"] = tuple(s for s in base["estimators"].split(",") if s)
    return ExperimentConfig.from_dict(base)


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    report = run_experiment(config)
    for name, agg in report.aggregates.items():
        se = agg["stderr"]
        print(f"{name}: {agg['mean']:.4f}"
              + (f" +- {se:.4f}" if se is not None else "")
              + f" nats over {agg['n']} examples")
    print(f"wrote {report.csv_path} and {report.json_path}")
    return 1 if report.fully_failed else 0


def cmd_bdmc(args) -> int:
    config = _config_from_args(args)
    model, _ = build_model(config)
    report = bdmc(model, ais_config(config), config.n_examples, map_fn=parallel_map)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bdmc.csv", "w", newline="") as f:
        f.write(f"# config_hash: {config.hash()}\n# seed: {config.seed}\n")
        w = csv.writer(f)
        w.writerow(["example_id", "forward_lower", "reverse_upper", "gap"])
        for i, e in enumerate(report.examples):
            w.writerow([i, _fmt(e.lower), _fmt(e.upper), _fmt(e.gap)])
    with open(out / "bdmc.json", "w") as f:
        json.dump({"config": config.to_dict(), "config_hash": config.hash(),
                   "seed": config.seed,
                   "forward_lower": report.forward_lower,
                   "reverse_upper": report.reverse_upper,
                   "gap": report.gap}, f, indent=1)
    print(f"forward lower {report.forward_lower:.4f}, reverse upper "
          f"{report.reverse_upper:.4f}, mean gap {report.gap:.4f} nats")
    print(f"wrote {out / 'bdmc.csv'} and {out / 'bdmc.json'}")
    return 0


def _parse_grid(spec: str) -> SigmaGrid:
    return SigmaGrid(tuple(float(s) for s in spec.split(",") if s))


def cmd_sweep_sigma(args) -> int:
    config = _config_from_args(args)
    model, _ = build_model(config)
    _, xs, _ = load_dataset(config, model)
    grid = _parse_grid(args.grid)
    points = sigma_sweep(xs, model, grid, ais_config(config),
                         KdeConfig(config.kde_samples, config.kde_share),
                         seed=config.seed, map_fn=parallel_map)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sigma_sweep.csv", "w", newline="") as f:
        f.write(f"# config_hash: {config.hash()}\n# seed: {config.seed}\n")
        w = csv.writer(f)
        w.writerow(["sigma", "ais_mean", "ais_stderr", "kde_mean", "kde_stderr"])
        for p in points:
            w.writerow([_fmt(p.sigma), _fmt(p.ais_mean), _fmt(p.ais_stderr),
                        _fmt(p.kde_mean), _fmt(p.kde_stderr)])
    print(f"wrote {out / 'sigma_sweep.csv'}")
    return 0


def cmd_optimal_sigma(args) -> int:
    config = _config_from_args(args)
    model, _ = build_model(config)
    _, xs, _ = load_dataset(config, model)
    grid = _parse_grid(args.grid)
    report = optimal_sigma_eval(
        xs, model, grid, args.estimator, args.fixed_sigma,
        ais_cfg=ais_config(config),
        kde_cfg=KdeConfig(config.kde_samples, config.kde_share),
        seed=config.seed, map_fn=parallel_map)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "optimal_sigma.csv", "w", newline="") as f:
        f.write(f"# config_hash: {config.hash()}\n# seed: {config.seed}\n")
        w = csv.writer(f)
        w.writerow(["example_id", "best_sigma", "best_nats", "fixed_nats",
                    "improvement"])
        for r in report.rows:
            w.writerow([r.example_index, _fmt(r.best_sigma), _fmt(r.best_nats),
                        _fmt(r.fixed_nats), _fmt(r.improvement)])
    with open(out / "optimal_sigma.json", "w") as f:
        json.dump({"config": config.to_dict(), "config_hash": config.hash(),
                   "fixed_sigma": report.fixed_sigma,
                   "estimator": report.estimator,
                   "mean_best": report.mean_best,
                   "mean_fixed": report.mean_fixed,
                   "mean_improvement": report.mean_improvement}, f, indent=1)
    print(f"mean improvement {report.mean_improvement:.4f} nats "
          f"(best {report.mean_best:.4f} vs fixed {report.mean_fixed:.4f})")
    return 0


def cmd_curve(args) -> int:
    config = _config_from_args(args)
    valid_config = None
    if args.valid_array:
        valid_config = ExperimentConfig.from_dict({
            **config.to_dict(), "data_kind": "array",
            "data_path": args.valid_array, "split": "valid"})
    rows = checkpoint_curve(config, args.checkpoint_dir, valid_config=valid_config,
                            map_fn=parallel_map)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_curve(rows, out / "curve.csv")
    print(f"wrote {out / 'curve.csv'} ({len(rows)} rows)")
    return 0


def cmd_posterior(args) -> int:
    config = _config_from_args(args)
    model, encoder = build_model(config)
    ids, xs, _ = load_dataset(config, model)
    cfg = ais_config(config)
    initial = encoder if config.ais_init == "encoder" else "prior"
    n_show = min(args.show_chains, config.n_chains)
    grid_rows = []
    gaps_note = None
    for i, x in enumerate(xs):
        path = AnnealingPath(model, x, initial)
        dec = posterior_decode(x, path, cfg, example_index=i, map_fn=parallel_map)
        order = np.argsort(dec.log_weights)[::-1]
        row = [x, dec.mean] + [dec.all_means[j] for j in order[: n_show - 1]]
        grid_rows.append(row)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = [im for row in grid_rows for im in row]
    cols = 1 + n_show
    export_image_grid(images, rows=len(grid_rows), cols=cols,
                      path=out / "posterior_grid.pgm",
                      height=args.height, width=args.width)
    doc = {"config": config.to_dict(), "config_hash": config.hash(),
           "seed": config.seed, "example_ids": [int(i) for i in ids],
           "grid": {"rows": len(grid_rows), "cols": cols,
                    "height": args.height, "width": args.width,
                    "layout": "observation, resampled decode, remaining chains"}}
    if args.bdmc_examples > 0:
        # the BDMC gap on simulated data bounds how far these approximate
        # posterior samples are from the true posterior
        gap_report = bdmc(model, cfg, args.bdmc_examples, map_fn=parallel_map)
        doc["bdmc_gap"] = gap_report.gap
        gaps_note = f", bdmc gap {gap_report.gap:.4f} nats ({args.bdmc_examples} simulated examples)"
    with open(out / "posterior.json", "w") as f:
        json.dump(doc, f, indent=1)
    print(f"wrote {out / 'posterior_grid.pgm'}{gaps_note or ''}")
    return 0


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    model, _ = build_model(config)
    zs, xs, means = [], [], []
    for i in range(config.n_examples):
        rng = streams.stream(config.seed, i, 0, streams.SIMULATE)
        z, x = model.simulate(rng)
        zs.append(z)
        xs.append(x)
        means.append(model.decode(z))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "x.npy", np.array(xs))
    written = [out / "x.npy"]
    if args.with_latents:
        np.save(out / "z.npy", np.array(zs))
        written.append(out / "z.npy")
    if args.with_means:
        np.save(out / "means.npy", np.array(means))
        written.append(out / "means.npy")
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aisbench",
        description="Log-likelihood evaluation for decoder-based generative models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="run the selected estimators over a dataset")
    _add_config_flags(p, seed_required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bdmc", help="forward/reverse AIS gap on simulated data")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_bdmc)

    p = sub.add_parser("sweep-sigma", help="AIS and KDE curves over a sigma grid")
    _add_config_flags(p)
    p.add_argument("--grid", required=True, help="comma list of sigma values")
    p.set_defaults(fn=cmd_sweep_sigma)

    p = sub.add_parser("optimal-sigma", help="per-example best sigma over a grid")
    _add_config_flags(p)
    p.add_argument("--grid", required=True, help="comma list of sigma values")
    p.add_argument("--fixed-sigma", type=float, required=True)
    p.add_argument("--estimator", choices=["ais", "kde"], default="ais")
    p.set_defaults(fn=cmd_optimal_sigma)

    p = sub.add_parser("curve", help="evaluate a directory of checkpoints")
    _add_config_flags(p)
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--valid-array", help="second split as an array file")
    p.set_defaults(fn=cmd_curve)

    p = sub.add_parser("posterior", help="decode AIS posterior samples to a PGM grid")
    _add_config_flags(p)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--show-chains", type=int, default=7,
                   help="chain decodes per example in the grid")
    p.add_argument("--bdmc-examples", type=int, default=2,
                   help="simulated examples for the gap diagnostic (0 disables)")
    p.set_defaults(fn=cmd_posterior)

    p = sub.add_parser("simulate", help="emit a synthetic dataset from a model")
    _add_config_flags(p)
    p.add_argument("--with-latents", action="store_true")
    p.add_argument("--with-means", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
