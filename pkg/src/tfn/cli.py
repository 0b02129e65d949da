"""Command-line interface: ``tfn synth|train|cv|ablate|eval|gradcheck``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure
(divergence or a gradient-check breach).
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from .autodiff import NonFiniteError
from .config import PRESETS, ConfigError, RunConfig, load_run_config
from .data import DatasetError, load_dataset, save_dataset
from .fusion import FusionVariant
from .gradcheck import run_gradcheck
from .inference import Task
from .metrics import format_table, metrics
from .model import ModelDataMismatchError, ModelFormatError, TfnModel
from .optim import NonFiniteGradientError
from .synth import SynthSpec, dataset_stats, synth_generate
from .training import (DivergenceError, SplitError, ablate, cross_validate_tasks, split_validation,
                       train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ALL_TASKS = (Task.BINARY, Task.FIVE_CLASS, Task.REGRESSION)
TASK_CHOICES = [t.value for t in Task]
VARIANT_CHOICES = [v.value for v in FusionVariant]


class NumericFailure(Exception):
    pass


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, str(exc))
        except (DatasetError, SplitError, ModelFormatError, ModelDataMismatchError) as exc:
            _fail(EXIT_DATA, str(exc))
        except OSError as exc:
            _fail(EXIT_DATA, str(exc))
        except (DivergenceError, NonFiniteError, NonFiniteGradientError, NumericFailure) as exc:
            _fail(EXIT_NUMERIC, str(exc))

    return wrapper


def _emit(report, table: str, report_path: str | None, as_json: bool) -> None:
    text = json.dumps(report, sort_keys=True)
    click.echo(text if as_json else table)
    if report_path:
        Path(report_path).write_text(text + "\n")


def _run_config(config_path, seed, preset=None) -> RunConfig:
    cfg = load_run_config(config_path)
    changes = dict(PRESETS[preset]) if preset else {}
    if seed is not None:
        changes["seed"] = seed
    if changes:
        cfg.train = cfg.train.replace(**changes)
    return cfg


def _tasks(task: str) -> list[Task]:
    return list(ALL_TASKS) if task == "all" else [Task(task)]


def _data_path(data, cfg: RunConfig) -> str:
    path = data or cfg.paths.get("data")
    if not path:
        raise ConfigError("no dataset given (--data or paths.data)")
    return path


report_option = click.option("--report", "report_path", type=click.Path(dir_okay=False),
                             help="Also write the JSON report to this path.")
json_option = click.option("--json", "as_json", is_flag=True,
                           help="Print the JSON report instead of the table.")
config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                             help="Run configuration file (YAML or JSON).")
seed_option = click.option("--seed", type=int, default=None, help="Root seed (overrides config).")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-epoch progress to stderr.")
def main(verbose: bool):
    """Tensor Fusion Network experiments."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("synth")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False),
              help="Config with a synth section, or a bare SynthSpec mapping.")
@click.option("--out", type=click.Path(dir_okay=False), help="Output dataset (.jsonl).")
@seed_option
@json_option
@handle_errors
def cmd_synth(spec_path, out, seed, as_json):
    """Generate a synthetic dataset and print its statistics."""
    cfg = load_run_config(spec_path)
    spec = cfg.synth or SynthSpec()
    if seed is not None:
        spec = SynthSpec.from_dict({**spec.to_dict(), "seed": seed})
    out = out or cfg.paths.get("out")
    if not out:
        raise ConfigError("no output path given (--out or paths.out)")
    dataset = synth_generate(spec)
    save_dataset(dataset, out)
    stats = dataset_stats(dataset)
    click.echo(json.dumps(stats.to_dict(), sort_keys=True) if as_json else stats.format())


@main.command("train")
@click.option("--data", type=click.Path(dir_okay=False))
@click.option("--task", type=click.Choice(TASK_CHOICES), default=None)
@click.option("--variant", type=click.Choice(VARIANT_CHOICES), default=None)
@config_option
@click.option("--out", type=click.Path(dir_okay=False), help="Model file (.npz).")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None,
              help="'overfit' disables regularisation and validates on the training set.")
@seed_option
@handle_errors
def cmd_train(data, task, variant, config_path, out, preset, seed):
    """Train one model; writes the model and <out>.history.json."""
    cfg = _run_config(config_path, seed, preset)
    changes = {k: v for k, v in (("task", task), ("variant", variant)) if v is not None}
    train_cfg = cfg.train.replace(**changes)
    out = out or cfg.paths.get("out")
    if not out:
        raise ConfigError("no output path given (--out or paths.out)")
    dataset = load_dataset(_data_path(data, cfg))
    h = dataset.header
    arch = cfg.arch_for(h.p, h.q, h.word_dim)
    if preset == "overfit":
        train_part = val_part = list(dataset)
    else:
        train_part, val_part = split_validation(list(dataset), cfg.cv["n_val_videos"])
    model, history = train(train_cfg, train_part, val_part, arch)
    model.save(out)
    record = {"config": train_cfg.to_dict(), "arch": arch.to_dict(), **history.to_dict()}
    Path(str(out) + ".history.json").write_text(json.dumps(record, sort_keys=True) + "\n")
    click.echo(f"final train loss {history.train_loss[-1]:.6g}")
    click.echo(f"best epoch {history.best_epoch}  validation score {history.val_score[history.best_epoch]:.6g}")


def _cv_options(fn):
    fn = click.option("--workers", type=int, default=None, help="Parallel fold workers.")(fn)
    fn = click.option("--folds", type=int, default=None)(fn)
    fn = seed_option(fn)
    fn = config_option(fn)
    fn = json_option(fn)
    fn = report_option(fn)
    fn = click.option("--task", type=click.Choice(TASK_CHOICES + ["all"]), default=None,
                      help="'all' trains one network per task and merges their columns.")(fn)
    fn = click.option("--data", type=click.Path(dir_okay=False))(fn)
    return fn


def _cv_setup(data, task, config_path, seed, folds, workers):
    cfg = _run_config(config_path, seed)
    dataset = load_dataset(_data_path(data, cfg))
    h = dataset.header
    tasks = _tasks(task) if task else [cfg.train.task]
    kwargs = dict(k=folds or cfg.cv["folds"], arch=cfg.arch_for(h.p, h.q, h.word_dim),
                  n_val_videos=cfg.cv["n_val_videos"], workers=workers or cfg.cv["workers"],
                  grid=cfg.grid or None)
    return cfg, dataset, tasks, kwargs


@main.command("cv")
@_cv_options
@click.option("--variant", type=click.Choice(VARIANT_CHOICES), default=None)
@handle_errors
def cmd_cv(data, task, report_path, as_json, config_path, seed, folds, workers, variant):
    """Speaker-independent k-fold cross-validation of one variant."""
    cfg, dataset, tasks, kwargs = _cv_setup(data, task, config_path, seed, folds, workers)
    train_cfg = cfg.train.replace(variant=variant) if variant else cfg.train
    report = cross_validate_tasks(dataset, train_cfg, tasks, **kwargs)
    _emit(report.to_dict(), report.format(), report_path, as_json)


@main.command("ablate")
@_cv_options
@handle_errors
def cmd_ablate(data, task, report_path, as_json, config_path, seed, folds, workers):
    """Cross-validate all eight ablation variants."""
    cfg, dataset, tasks, kwargs = _cv_setup(data, task, config_path, seed, folds, workers)
    report = ablate(dataset, cfg.train, tasks, **kwargs)
    _emit(report.to_dict(), report.format(), report_path, as_json)


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--data", type=click.Path(dir_okay=False), required=True)
@report_option
@json_option
@handle_errors
def cmd_eval(model_path, data, report_path, as_json):
    """Score a saved model on a dataset."""
    model = TfnModel.load(model_path)
    dataset = load_dataset(data)
    model.check_compatible(dataset)
    row = metrics(model.predict(list(dataset)), dataset.labels())
    report = {"variant": model.variant.value, "task": model.task.value,
              "n_utterances": len(dataset), "metrics": row.to_dict()}
    table = format_table([(f"{model.variant.value} ({model.task.value})", row)])
    _emit(report, table, report_path, as_json)


@main.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True, help="First of the seeds checked.")
@click.option("--eps", type=float, default=1e-5, show_default=True)
@click.option("--seeds", "n_seeds", type=int, default=20, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@handle_errors
def cmd_gradcheck(seed, eps, n_seeds, tolerance):
    """Compare reverse-mode gradients with central finite differences."""
    if eps <= 0 or n_seeds < 1:
        raise ConfigError("--eps must be positive and --seeds >= 1")
    result = run_gradcheck(seed=seed, eps=eps, n_seeds=n_seeds, tolerance=tolerance)
    click.echo(result.format())
    if not result.passed:
        failed = [k for k, v in result.errors.items() if v >= tolerance]
        raise NumericFailure(f"gradient check failed for: {', '.join(failed)}")


if __name__ == "__main__":
    main()
