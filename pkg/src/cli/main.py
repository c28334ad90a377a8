from config import load_config
from src.cli.options import (
    COMMA_LIST,
    TIME_UNIT,
    convert_rate,
    node_id_map,
    parse_betas,
    parse_duration,
    parse_ints,
    read_events,
    read_json,
    save_membership,
    summary,
    write_json,
)
from src.exceptions import MulchError
from src.hawkes.model import MulchModel
from src.hawkes.simulate import SimConfig, generate_network, simulate_from_model
from src.logs import configure_logging, log_entry
from src.ml import evaluate
from src.ml.fit import FitConfig, fit_mulch, select_k
from src.ml.spectral import spectral_cluster
from src.network.events import (
    count_matrix,
    save_events,
    split_train_test,
    train_test_sizes,
)
from src.network.motifs import MotifMatrix, count_temporal_motifs, motif_mape

import numpy as np
import jsonschema
import logging
import click
import time


HANDLED_ERRORS = (MulchError, ValueError, OSError, jsonschema.ValidationError)


class MulchGroup(click.Group):
    """Library errors become a one-line message on stderr and exit status 1."""

    def invoke(self, ctx):
        try:
            return super(MulchGroup, self).invoke(ctx)
        except HANDLED_ERRORS as e:
            message = e.message if isinstance(e, jsonschema.ValidationError) else str(e)
            log_entry("cli", {"error": message, "type": type(e).__name__}, logging.ERROR)
            raise click.ClickException(message) from e


def _setting(ctx, value, key):
    """Explicit flag, else the config file or packaged default."""
    return value if value is not None else ctx.obj["config"][key]


def _betas(ctx, betas, time_unit):
    config = ctx.obj["config"]
    unit = time_unit or config["time_unit"]
    if betas is not None:
        return parse_betas(betas, unit), unit
    return [convert_rate(b, config["time_unit"], unit) for b in config["betas"]], unit


def _n_train(n_events, n_train, train_frac):
    if n_train is not None and train_frac is not None:
        raise click.UsageError("Use only one of --n-train and --train-frac")
    if train_frac is not None:
        return train_test_sizes(n_events, train_frac)
    return n_train


def _emit(ctx, command, seed, outputs, **extra):
    seconds = time.time() - ctx.obj["started"]
    click.echo(summary(command, seed, seconds, outputs, **extra))


@click.group(cls=MulchGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON settings file; flags take precedence over its values.")
@click.option("--log-file", default=None, help="Rotating JSON-lines log file.")
@click.option("--verbose", is_flag=True, help="Log debug entries.")
@click.pass_context
def cli(ctx, config_path, log_file, verbose):
    """Community Hawkes models for timestamped relational events."""
    config = load_config(config_path)
    if log_file is not None:
        config["log_file"] = log_file
    configure_logging(config["log_file"], logging.DEBUG if verbose else logging.INFO)
    ctx.obj = {"config": config, "started": time.time()}


@cli.command()
@click.option("--config", "sim_path", type=click.Path(dir_okay=False), default=None,
              help="Simulation settings JSON.")
@click.option("--preset", type=click.Choice(["assortative", "disassortative"]), default=None)
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None,
              help="Simulate from a fitted model and its membership.")
@click.option("--duration", default=None, help="Horizon, e.g. 150 or 150d.")
@click.option("--time-unit", type=TIME_UNIT, default=None)
@click.option("--n-nodes", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--allow-unstable", is_flag=True)
@click.option("--max-events", type=int, default=None)
@click.option("--workers", type=int, envvar="MULCH_WORKERS", default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--membership-out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def simulate(ctx, sim_path, preset, model_path, duration, time_unit, n_nodes, seed,
             allow_unstable, max_events, workers, out, membership_out):
    """Generate an event stream."""
    sources = [s for s in (sim_path, preset, model_path) if s is not None]
    if len(sources) != 1:
        raise click.UsageError("Give exactly one of --config, --preset and --model")
    unit = _setting(ctx, time_unit, "time_unit")
    workers = _setting(ctx, workers, "workers")
    max_events = _setting(ctx, max_events, "max_unstable_events")

    if model_path is not None:
        if duration is None:
            raise click.UsageError("--duration is required with --model")
        model = MulchModel.load(model_path)
        seed = _setting(ctx, seed, "seed")
        stream = simulate_from_model(
            model,
            parse_duration(duration, unit),
            seed=seed,
            workers=workers,
            allow_unstable=bool(allow_unstable),
            max_events=max_events,
        )
        membership = model.membership
    else:
        data = read_json(sim_path) if sim_path is not None else {"preset": preset}
        overrides = {
            "duration": parse_duration(duration, unit) if duration is not None else None,
            "n_nodes": n_nodes,
            "seed": seed,
            "allow_unstable": True if allow_unstable else None,
            "max_events": max_events,
            "workers": workers,
        }
        data.update({k: v for k, v in overrides.items() if v is not None})
        data.setdefault("seed", ctx.obj["config"]["seed"])
        cfg = SimConfig.from_json(data)
        seed = cfg.seed
        membership, stream = generate_network(cfg)

    save_events(stream, out)
    outputs = {"events": out}
    if membership_out is not None:
        save_membership(membership, stream, membership_out)
        outputs["membership"] = membership_out
    _emit(ctx, "simulate", seed, outputs, events=len(stream), truncated=stream.truncated)


@cli.command()
@click.option("--events", "events_path", type=click.Path(dir_okay=False), required=True)
@click.option("--k", "n_blocks", type=int, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--drop-self-loops", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def cluster(ctx, events_path, n_blocks, seed, drop_self_loops, out):
    """Spectral clustering of the aggregated count matrix."""
    seed = _setting(ctx, seed, "seed")
    kmeans = ctx.obj["config"]["kmeans"]
    stream = read_events(events_path, drop_self_loops=drop_self_loops)
    membership = spectral_cluster(
        count_matrix(stream),
        n_blocks,
        seed=seed,
        n_init=kmeans["n_init"],
        max_iter=kmeans["max_iter"],
        tol=kmeans["tol"],
    )
    save_membership(membership, stream, out)
    _emit(ctx, "cluster", seed, {"membership": out}, sizes=membership.sizes())


@cli.command()
@click.option("--events", "events_path", type=click.Path(dir_okay=False), required=True)
@click.option("--k", "n_blocks", type=int, required=True)
@click.option("--betas", type=COMMA_LIST, default=None,
              help="Decay rates per time unit, or time scales such as 2w,1d,2h.")
@click.option("--time-unit", type=TIME_UNIT, default=None)
@click.option("--train-frac", type=float, default=None)
@click.option("--n-train", type=int, default=None)
@click.option("--excitations", default=None, help="two, four, six or a comma list of types.")
@click.option("--kernel-weights", type=click.Choice(["normalized", "uniform"]), default=None)
@click.option("--no-refine", is_flag=True)
@click.option("--max-refinement-iters", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, envvar="MULCH_WORKERS", default=None)
@click.option("--rescale-to", type=float, default=None)
@click.option("--drop-self-loops", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def fit(ctx, events_path, n_blocks, betas, time_unit, train_frac, n_train, excitations,
        kernel_weights, no_refine, max_refinement_iters, seed, workers, rescale_to,
        drop_self_loops, out, trace_path):
    """Fit a model: spectral clustering, block pair MLE and refinement."""
    betas, unit = _betas(ctx, betas, time_unit)
    stream = read_events(events_path, rescale_to, drop_self_loops)
    n_train = _n_train(len(stream), n_train, train_frac)
    train = split_train_test(stream, n_train)[0] if n_train is not None else stream

    cfg = FitConfig.from_config(
        ctx.obj["config"],
        n_blocks=n_blocks,
        betas=tuple(betas),
        seed=seed,
        workers=workers,
        excitations=excitations,
        kernel_weights=kernel_weights,
        refine=False if no_refine else None,
        max_refinement_iters=max_refinement_iters,
    )
    result = fit_mulch(train, cfg)
    result.model.save(out)

    outputs = {"model": out}
    if trace_path is not None:
        trace = result.trace()
        trace["time_unit"] = unit
        write_json(trace, trace_path)
        outputs["trace"] = trace_path
    _emit(
        ctx,
        "fit",
        cfg.seed,
        outputs,
        log_likelihood=result.log_likelihood,
        training_events=len(train),
        timings=result.timings,
    )


@cli.command(name="evaluate")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--events", "events_path", type=click.Path(dir_okay=False), required=True)
@click.option("--n-train", type=int, default=None)
@click.option("--train-frac", type=float, default=None)
@click.option("--metrics", type=COMMA_LIST, default="loglik,auc")
@click.option("--windows", type=int, default=None)
@click.option("--window-len", default=None, help="AUC window length, e.g. 1d.")
@click.option("--time-unit", type=TIME_UNIT, default=None)
@click.option("--test-horizon", type=click.Choice(["stream", "last_event"]), default="stream")
@click.option("--seed", type=int, default=None)
@click.option("--rescale-to", type=float, default=None)
@click.option("--drop-self-loops", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def evaluate_command(ctx, model_path, events_path, n_train, train_frac, metrics, windows,
                     window_len, time_unit, test_horizon, seed, rescale_to, drop_self_loops, out):
    """Test log-likelihood and dynamic link prediction of a fitted model."""
    unknown = set(metrics) - {"loglik", "auc"}
    if unknown:
        raise click.UsageError(f"Unknown metrics: {', '.join(sorted(unknown))}")
    seed = _setting(ctx, seed, "seed")
    unit = _setting(ctx, time_unit, "time_unit")
    model = MulchModel.load(model_path)
    stream = read_events(events_path, rescale_to, drop_self_loops, node_id_map(model.node_ids))
    n_train = _n_train(len(stream), n_train, train_frac)
    if n_train is None:
        raise click.UsageError("One of --n-train and --train-frac is required")

    results = {"n_train": n_train, "n_test": len(stream) - n_train}
    if "loglik" in metrics:
        results["test_log_likelihood"] = evaluate.test_log_likelihood_per_event(
            model, stream, n_train, test_horizon
        )
    if "auc" in metrics:
        train, test = split_train_test(stream, n_train, test_horizon)
        mean, std = evaluate.dynamic_link_prediction_auc(
            model,
            test,
            history=train,
            n_windows=_setting(ctx, windows, "auc_windows"),
            window_len=parse_duration(window_len, unit) if window_len is not None else None,
            rng=np.random.default_rng(seed),
            max_retries=ctx.obj["config"]["auc_retries"],
        )
        results["auc_mean"], results["auc_std"] = mean, std

    write_json(results, out)
    _emit(ctx, "evaluate", seed, {"evaluation": out}, **results)


@cli.command()
@click.option("--events", "events_path", type=click.Path(dir_okay=False), required=True)
@click.option("--delta", default=None, help="Motif window, e.g. 7 or 1w.")
@click.option("--time-unit", type=TIME_UNIT, default=None)
@click.option("--drop-self-loops", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def motifs(ctx, events_path, delta, time_unit, drop_self_loops, out):
    """Count 3-edge delta-temporal motifs."""
    unit = _setting(ctx, time_unit, "time_unit")
    delta = parse_duration(_setting(ctx, delta, "motif_delta"), unit)
    stream = read_events(events_path, drop_self_loops=drop_self_loops)
    matrix = count_temporal_motifs(stream, delta)
    matrix.save(out)
    _emit(ctx, "motifs", None, {"motifs": out}, total=matrix.total)


@cli.command(name="motif-compare")
@click.option("--actual", type=click.Path(dir_okay=False), required=True)
@click.option("--sims", type=COMMA_LIST, required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def motif_compare(ctx, actual, sims, out):
    """MAPE between actual motif counts and the mean of simulated ones."""
    score = motif_mape(MotifMatrix.load(actual), [MotifMatrix.load(path) for path in sims])
    results = {"mape": score.value, "excluded_cells": score.excluded_cells, "n_sims": len(sims)}
    write_json(results, out)
    _emit(ctx, "motif-compare", None, {"mape": out}, **results)


@cli.command(name="select-k")
@click.option("--events", "events_path", type=click.Path(dir_okay=False), required=True)
@click.option("--candidates", type=COMMA_LIST, required=True)
@click.option("--metric", type=click.Choice(["test-loglik", "auc"]), default="test-loglik")
@click.option("--betas", type=COMMA_LIST, default=None)
@click.option("--time-unit", type=TIME_UNIT, default=None)
@click.option("--train-frac", type=float, default=None)
@click.option("--n-train", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, envvar="MULCH_WORKERS", default=None)
@click.option("--rescale-to", type=float, default=None)
@click.option("--drop-self-loops", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def select_k_command(ctx, events_path, candidates, metric, betas, time_unit, train_frac,
                     n_train, seed, workers, rescale_to, drop_self_loops, out):
    """Pick K by held-out test log-likelihood or link prediction AUC."""
    betas, _ = _betas(ctx, betas, time_unit)
    stream = read_events(events_path, rescale_to, drop_self_loops)
    n_train = _n_train(len(stream), n_train, train_frac)
    if n_train is None:
        raise click.UsageError("One of --n-train and --train-frac is required")
    candidates = parse_ints(candidates, "candidates")
    cfg = FitConfig.from_config(
        ctx.obj["config"],
        n_blocks=max(candidates),
        betas=tuple(betas),
        seed=seed,
        workers=workers,
    )
    auc_options = {
        "n_windows": ctx.obj["config"]["auc_windows"],
        "max_retries": ctx.obj["config"]["auc_retries"],
    }
    best, scores = select_k(stream, n_train, candidates, cfg, metric, auc_options)
    results = {"K": best, "metric": metric, "scores": {str(k): v for k, v in scores.items()}}
    write_json(results, out)
    _emit(ctx, "select-k", cfg.seed, {"selection": out}, K=best)


if __name__ == "__main__":
    cli()
