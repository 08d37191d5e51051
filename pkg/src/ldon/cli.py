"""Command line pipeline: generate data, fit reducers, train and compare
operator models, and export artifacts.

Exit codes: 0 success, 2 configuration or argument problem, 3 missing or
unreadable artifact, 4 numeric failure during training or evaluation. The
LDON_THREADS environment variable caps compare workers (default 1); results
are identical for any worker count.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .autodiff import NumericError
from .config import ConfigError, ExperimentConfig, load_config
from .containers import ContainerError, read_container
from .datagen import FieldDataset, generate_diffusion_dataset
from .dimred import MLAEReducer, PCAReducer, assemble_snapshots
from .model_io import load_model, save_model
from .operators import DeepONet, FNO2d, LatentDeepONet, evaluate_mse
from .random_fields import GrfConfig
from .reporting import PhaseTimer, RunReport


def _say(args, message: str):
    if not args.quiet:
        print(message)


def _load_cfg(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def _worker_count() -> int:
    raw = os.environ.get("LDON_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"LDON_THREADS must be a positive integer, got '{raw}'") from None
    if count < 1:
        raise ConfigError(f"LDON_THREADS must be a positive integer, got '{raw}'")
    return count


def _make_reducer(cfg: ExperimentConfig, d=None, seed=None):
    kind = cfg["reducer.kind"]
    d = cfg["reducer.d"] if d is None else d
    seed = cfg["seed"] if seed is None else seed
    if kind == "pca":
        return PCAReducer(d=d)
    if kind == "mlae":
        return MLAEReducer(d=d, epochs=cfg["reducer.epochs"],
                           batch_size=cfg["reducer.batch_size"],
                           lr=cfg["reducer.lr"], seed=seed)
    raise ConfigError(f"reducer.kind must be 'pca' or 'mlae', got '{kind}'")


def _make_operator(cfg: ExperimentConfig, seed=None) -> DeepONet:
    return DeepONet(p=cfg["operator.p"], width=cfg["operator.width"],
                    branch=cfg["operator.branch"], epochs=cfg["operator.epochs"],
                    batch_size=cfg["operator.batch_size"], lr=cfg["operator.lr"],
                    seed=cfg["seed"] if seed is None else seed)


def _make_fno(cfg: ExperimentConfig, seed=None) -> FNO2d:
    return FNO2d(d_v=cfg["fno.d_v"], k_max=cfg["fno.k_max"], n_layers=cfg["fno.n_layers"],
                 epochs=cfg["fno.epochs"], batch_size=cfg["fno.batch_size"],
                 lr=cfg["fno.lr"], seed=cfg["seed"] if seed is None else seed)


def _cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    if cfg["data.problem"] != "diffusion":
        raise ConfigError(f"data.problem '{cfg['data.problem']}' is not supported;"
                          " only 'diffusion' can be generated here")
    size = cfg["data.grid"]
    scale = cfg["data.length_scale"]
    grf = GrfConfig(grid=(size, size), length_scales=(scale, scale),
                    variance=cfg["data.variance"], energy=cfg["data.energy"],
                    seed=cfg["seed"])
    ds = generate_diffusion_dataset(
        grf, cfg["data.samples"], cfg["data.m_t"], cfg["data.diffusivity"],
        cfg["data.reaction_rate"], cfg["data.t_final"], cfg["data.train_fraction"])
    ds.save(args.out)
    _say(args, f"wrote dataset: {cfg['data.samples']} samples on a {size}x{size} grid,"
               f" {cfg['data.m_t']} snapshots -> {args.out}")
    return 0


def _cmd_fit_reducer(args) -> int:
    cfg = _load_cfg(args)
    ds = FieldDataset.load(args.data)
    reducer = _make_reducer(cfg)
    timer = PhaseTimer()
    with timer.phase("reduce"):
        reducer.fit(assemble_snapshots(ds, "train"))
    save_model(reducer, args.out)
    _say(args, f"fit {cfg['reducer.kind']} reducer (d={reducer.d}) in"
               f" {timer.elapsed['reduce']:.2f}s -> {args.out}")
    return 0


def _cmd_train_operator(args) -> int:
    cfg = _load_cfg(args)
    ds = FieldDataset.load(args.data)
    kind = cfg["operator.model"]
    timer = PhaseTimer()
    if kind == "latent":
        if args.reducer is None:
            raise ConfigError("operator.model=latent needs --reducer with a fitted reducer")
        reducer = load_model(args.reducer)
        if not isinstance(reducer, (PCAReducer, MLAEReducer)):
            raise ConfigError(f"--reducer file holds {type(reducer).__name__}, not a reducer")
        model = LatentDeepONet(reducer, _make_operator(cfg))
        with timer.phase("train"):
            model.fit(ds)
        log = model.operator_.training_log_
    elif kind == "full":
        model = _make_operator(cfg)
        with timer.phase("train"):
            model.fit(ds.train_inputs(), ds.train_outputs(), ds.zeta)
        log = model.training_log_
    elif kind == "fno":
        model = _make_fno(cfg)
        with timer.phase("train"):
            model.fit(ds.train_inputs(), ds.train_outputs(), ds.zeta)
        log = model.training_log_
    else:
        raise ConfigError(f"operator.model must be 'latent', 'full' or 'fno', got '{kind}'")
    save_model(model, args.out)
    if args.report:
        RunReport(command="train-operator", config_hash=cfg.hash(), seed=cfg["seed"],
                  metrics={"final_train_loss": log[-1]},
                  wall_clock=dict(timer.elapsed),
                  parameter_counts={"operator": model.parameter_count()},
                  training_log=list(log)).save(args.report)
    _say(args, f"trained {kind} operator ({model.parameter_count()} parameters) in"
               f" {timer.elapsed['train']:.2f}s, final loss {log[-1]:.6e} -> {args.out}")
    return 0


def _test_predictions(model, ds: FieldDataset) -> np.ndarray:
    if isinstance(model, LatentDeepONet):
        return model.predict_normalized(ds.test_inputs(), ds.zeta)
    if isinstance(model, (DeepONet, FNO2d)):
        return model.predict(ds.test_inputs(), ds.zeta)
    raise ConfigError(f"--model file holds {type(model).__name__}, not an operator model")


def _cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    ds = FieldDataset.load(args.data)
    model = load_model(args.model)
    timer = PhaseTimer()
    with timer.phase("predict"):
        pred = _test_predictions(model, ds)
    metrics = {"test_mse": evaluate_mse(pred, ds.test_outputs())}
    if isinstance(model, LatentDeepONet):
        n, m_t, width = ds.test_outputs().shape
        lat_target = model.reducer_.transform(
            ds.test_outputs().reshape(n * m_t, width)).reshape(n, m_t, -1)
        lat_pred = model.operator_.predict(
            model.reducer_.transform(ds.test_inputs()), ds.zeta)
        metrics["latent_mse"] = evaluate_mse(lat_pred, lat_target)
    for name in sorted(metrics):
        _say(args, f"{name} = {metrics[name]:.17g}")
    if args.report:
        RunReport(command="evaluate", config_hash=cfg.hash(), seed=cfg["seed"],
                  metrics=metrics, wall_clock=dict(timer.elapsed)).save(args.report)
    return 0


def _compare_job(payload, cache=None):
    """Train and score one (model, d, seed) cell; returns (mse, timings)."""
    data_path, cfg_values, model_name, d, seed = payload
    cfg = ExperimentConfig(cfg_values)
    ds = FieldDataset.load(data_path)
    timer = PhaseTimer()
    if model_name == "latent":
        key = (cfg["reducer.kind"], d, seed)
        reducer = cache.get(key) if cache is not None else None
        if reducer is None:
            with timer.phase("reduce"):
                reducer = _make_reducer(cfg, d=d, seed=seed).fit(assemble_snapshots(ds, "train"))
            if cache is not None:
                cache[key] = reducer
        model = LatentDeepONet(reducer, _make_operator(cfg, seed=seed))
        with timer.phase("train"):
            model.fit(ds)
    elif model_name == "full":
        model = _make_operator(cfg, seed=seed)
        with timer.phase("train"):
            model.fit(ds.train_inputs(), ds.train_outputs(), ds.zeta)
    elif model_name == "fno":
        model = _make_fno(cfg, seed=seed)
        with timer.phase("train"):
            model.fit(ds.train_inputs(), ds.train_outputs(), ds.zeta)
    else:
        raise ConfigError(f"compare.models entries must be 'latent', 'full' or 'fno',"
                          f" got '{model_name}'")
    with timer.phase("predict"):
        pred = _test_predictions(model, ds)
    return evaluate_mse(pred, ds.test_outputs()), dict(timer.elapsed)


def _cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    ds = FieldDataset.load(args.data)
    width = ds.inputs.shape[1]
    models = cfg.str_list("compare.models")
    dims = cfg.int_list("compare.dims")
    seeds = cfg.int_list("compare.seeds")
    if not models or not dims or not seeds:
        raise ConfigError("compare.models, compare.dims and compare.seeds must be non-empty")
    for name in models:
        if name not in ("latent", "full", "fno"):
            raise ConfigError(f"compare.models entries must be 'latent', 'full' or 'fno',"
                              f" got '{name}'")
    jobs = []
    for name in models:
        for d in (dims if name == "latent" else [None]):
            for seed in seeds:
                jobs.append((name, d, seed))
    payloads = [(args.data, cfg.as_dict(), name, d, seed) for name, d, seed in jobs]
    workers = _worker_count()
    if workers == 1:
        cache = {}
        results = [_compare_job(p, cache) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
            results = list(pool.map(_compare_job, payloads))

    rows = ["model,d,seed,mse"]
    timing_rows = ["model,d,seed,reduce_seconds,train_seconds,predict_seconds"]
    for (name, d, seed), (mse, elapsed) in zip(jobs, results):
        d_out = d if d is not None else width
        rows.append(f"{name},{d_out},{seed},{mse:.17g}")
        timing_rows.append(
            f"{name},{d_out},{seed},{elapsed.get('reduce', 0.0):.6f},"
            f"{elapsed.get('train', 0.0):.6f},{elapsed.get('predict', 0.0):.6f}")
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write("\n".join(rows) + "\n")
    timings_path = args.timings or f"{args.out}.timings.csv"
    with open(timings_path, "w", encoding="ascii") as fh:
        fh.write("\n".join(timing_rows) + "\n")
    _say(args, f"compared {len(jobs)} runs with {workers} worker(s) -> {args.out}")
    return 0


def _cmd_export(args) -> int:
    tensors, manifest = read_container(args.input)
    lines = [f"# {key} = {manifest[key]}" for key in sorted(manifest)]
    lines.append("tensor,index,value")
    for name in sorted(tensors):
        flat = tensors[name].ravel()
        if tensors[name].dtype == np.uint8:
            lines.extend(f"{name},{i},{int(v)}" for i, v in enumerate(flat))
        else:
            lines.extend(f"{name},{i},{v:.17g}" for i, v in enumerate(flat))
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    _say(args, f"exported {len(tensors)} tensors -> {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldon",
        description="Operator learning on latent representations of PDE fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="experiment config file")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = sub.add_parser("gen-data", help="sample random fields and integrate trajectories")
    common(p)
    p.add_argument("--out", required=True, help="output dataset container")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("fit-reducer", help="fit a dimension reducer on training snapshots")
    common(p)
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--out", required=True, help="output reducer container")
    p.set_defaults(func=_cmd_fit_reducer)

    p = sub.add_parser("train-operator", help="train an operator model on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--reducer", default=None, help="fitted reducer (latent model only)")
    p.add_argument("--out", required=True, help="output model container")
    p.add_argument("--report", default=None, help="write a JSON run report here")
    p.set_defaults(func=_cmd_train_operator)

    p = sub.add_parser("evaluate", help="score a trained model on the test split")
    common(p)
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--model", required=True, help="trained model container")
    p.add_argument("--report", default=None, help="write a JSON run report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="train and score a grid of models")
    common(p)
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--timings", default=None,
                   help="timings CSV path (default: <out>.timings.csv)")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("export", help="dump container tensors to CSV")
    common(p)
    p.add_argument("--input", required=True, help="any container file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing artifact: {exc.filename}", file=sys.stderr)
        return 3
    except ContainerError as exc:
        print(f"error: unreadable artifact: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
