"""Command line entry point: ``botcollab <subcommand> --config study.toml``."""
from __future__ import annotations

import json
import logging
import sys

import click

from . import __version__, pipeline
from .config import EXAMPLE_CONFIG, load_config
from .errors import BotCollabError, ConfigError

EXIT_CONFIG = 2
EXIT_FAILURE = 3


def _load(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _report(outcomes) -> None:
    code = 0
    for o in outcomes:
        click.echo(f"{o.name}: {o.status}")
        if o.detail:
            click.echo(json.dumps(o.detail, sort_keys=True, indent=1, default=str))
        code = max(code, o.exit_code)
    sys.exit(code)


def _stage(fn, path):
    cfg = _load(path)
    try:
        outcome = fn(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except BotCollabError as exc:
        click.echo(f"{fn.__name__.removeprefix('cmd_')} failed: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    _report([outcome] if not isinstance(outcome, list) else outcome)


config_option = click.option("--config", "-c", "config_path", required=True, type=click.Path(dir_okay=False),
                             help="TOML study configuration")


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="more logging (repeatable)")
def main(verbose):
    """Mine collaboration networks and test Code Review bot adoption effects."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@config_option
def mine(config_path):
    """Extract co-editing and contribution events for every repository."""
    _stage(pipeline.cmd_mine, config_path)


@main.command()
@config_option
def detect(config_path):
    """Date Code Review Action adoption and build the action census."""
    _stage(pipeline.cmd_detect, config_path)


@main.command()
@config_option
def census(config_path):
    """Action usage census only."""
    _stage(pipeline.cmd_census, config_path)


@main.command()
@config_option
def metrics(config_path):
    """Lifetime networks and metric tables for every mined repository."""
    _stage(pipeline.cmd_metrics, config_path)


@main.command()
@config_option
def study(config_path):
    """Selection, matching, phase and placebo analysis, hypothesis tests."""
    _stage(pipeline.cmd_study, config_path)


@main.command()
@config_option
def report(config_path):
    """Markdown summary and plot-ready CSV files."""
    _stage(pipeline.cmd_report, config_path)


@main.command("run")
@config_option
def run_all(config_path):
    """All stages in order: mine, detect, metrics, study, report."""
    _stage(pipeline.run_all, config_path)


@main.command()
@click.option("--example", is_flag=True, help="print a fully commented default configuration")
def config(example):
    """Configuration helpers."""
    if not example:
        raise click.UsageError("nothing to do; try --example")
    click.echo(EXAMPLE_CONFIG, nl=False)


if __name__ == "__main__":
    main()
