# app/cli.py
"""Command line entry point: run, plan, micro, compare and serve."""
import logging
import sys
from pathlib import Path
from typing import Annotated, List, Optional

import click
import typer

from app.core.logging import setup_logging
from app.schemas.experiment import ExperimentConfig
from app.schemas.planner import CompletionReference, DepthRule, PlannerKind, PlannerParams
from app.services import config_service, export_service, presets, simulation_service
from app.services.micro_service import MicroStudy, micro_csv, run_micro
from app.services.planner_service import plan_static
from app.utils.error_handling import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, ConfigError, LegendError

logger = logging.getLogger(__name__)

cli = typer.Typer(add_completion=False, no_args_is_help=True, help="Federated LoRA fine-tuning simulator.")

LogLevel = Annotated[Optional[str], typer.Option("--log-level", help="DEBUG, INFO, WARNING or ERROR.")]


def _load(config: Optional[Path], preset: Optional[str]) -> ExperimentConfig:
    if (config is None) == (preset is None):
        raise click.UsageError("give exactly one of CONFIG or --preset")
    if preset is not None:
        return presets.get_preset(preset)
    return config_service.parse_config(config)


def _override(config: ExperimentConfig, seed: Optional[int], rounds: Optional[int]) -> ExperimentConfig:
    """Apply command-line overrides and re-validate."""
    data = config.model_dump(mode="json", exclude_none=True)
    if seed is not None:
        data["seed"] = seed
    if rounds is not None:
        data["rounds"] = rounds
    return config_service.config_from_dict(data)


@cli.command()
def run(
    config: Annotated[Optional[Path], typer.Argument(help="TOML experiment configuration.")] = None,
    preset: Annotated[Optional[str], typer.Option(help="Named preset instead of a file.")] = None,
    output_dir: Annotated[Optional[Path], typer.Option("--output-dir", "-o")] = None,
    seed: Annotated[Optional[int], typer.Option()] = None,
    rounds: Annotated[Optional[int], typer.Option()] = None,
    xlsx: Annotated[bool, typer.Option("--xlsx", help="Also write experiment.xlsx.")] = False,
    log_level: LogLevel = None,
) -> None:
    """Run one experiment and write devices.csv, summary.csv and the resolved config."""
    setup_logging(log_level)
    experiment = _override(_load(config, preset), seed, rounds)
    out = config_service.resolve_output_dir(experiment, output_dir)
    config_service.echo_config(experiment, out)
    log = simulation_service.run_experiment(experiment)
    export_service.write_csvs(log, out)
    if xlsx:
        (out / "experiment.xlsx").write_bytes(export_service.create_excel_report(log).getvalue())
    summary = log.summary()
    typer.echo(
        f"{summary.planner}: {summary.rounds} rounds, time {summary.cumulative_time:.3f}s, "
        f"traffic {summary.cumulative_bytes} B, mean wait {summary.mean_wait:.3f}s, "
        f"final acc {summary.final_eval_acc:.4f} -> {out}"
    )


@cli.command()
def plan(
    profile: Annotated[Path, typer.Argument(help="CSV with device_id, mu, beta[, forward_time, compute_budget, comm_budget].")],
    layers: Annotated[int, typer.Option("--layers", "-L")] = 12,
    psi: Annotated[int, typer.Option("--psi", help="Total rank budget.")] = 96,
    lam: Annotated[int, typer.Option("--lambda", help="Rank step between consecutive layers.")] = 1,
    depth_rule: Annotated[DepthRule, typer.Option("--depth-rule")] = DepthRule.ENDPOINT_NORMALIZED,
    wait_threshold: Annotated[float, typer.Option("--epsilon")] = 5.0,
    compute_cost: Annotated[float, typer.Option("--c", help="Compute cost per rank unit.")] = 1.0,
    forward_cost: Annotated[float, typer.Option("--c-hat", help="Fixed forward compute cost.")] = 0.0,
    comm_cost: Annotated[float, typer.Option("--b", help="Communication cost per rank unit.")] = 1.0,
    log_level: LogLevel = None,
) -> None:
    """Plan one round for a static profile table and print the per-device configurations."""
    setup_logging(log_level)
    try:
        params = PlannerParams(
            num_layers=layers,
            rank_budget=psi,
            rank_step=lam,
            wait_threshold=wait_threshold,
            compute_cost_per_rank=compute_cost,
            forward_compute_cost=forward_cost,
            comm_cost_per_rank=comm_cost,
            depth_rule=depth_rule,
            completion_reference=CompletionReference.FULL_DEPTH,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid planner parameters: {exc}") from None
    profiles = config_service.load_profiles(profile)
    typer.echo(export_service.plan_text(plan_static(profiles, params)), nl=False)


@cli.command()
def micro(
    study: Annotated[MicroStudy, typer.Argument()],
    seed: Annotated[int, typer.Option()] = 0,
    output: Annotated[Optional[Path], typer.Option("--output", "-o", help="Write the CSV here instead of stdout.")] = None,
    log_level: LogLevel = None,
) -> None:
    """Placement, depth or rank-distribution micro-study on one model."""
    setup_logging(log_level)
    text = micro_csv(run_micro(study, seed))
    if output is None:
        typer.echo(text, nl=False)
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text, encoding="utf-8")


@cli.command()
def compare(
    config: Annotated[Optional[Path], typer.Argument()] = None,
    preset: Annotated[Optional[str], typer.Option()] = None,
    planners: Annotated[Optional[List[PlannerKind]], typer.Option("--planner", "-p")] = None,
    output_dir: Annotated[Optional[Path], typer.Option("--output-dir", "-o")] = None,
    seed: Annotated[Optional[int], typer.Option()] = None,
    rounds: Annotated[Optional[int], typer.Option()] = None,
    log_level: LogLevel = None,
) -> None:
    """Run the same experiment under several planners and write comparison.csv."""
    setup_logging(log_level)
    experiment = _override(_load(config, preset), seed, rounds)
    kinds = planners or [PlannerKind.LEGEND, PlannerKind.FEDLORA, PlannerKind.HETLORA]
    out = config_service.resolve_output_dir(experiment, output_dir)
    config_service.echo_config(experiment, out)
    logs = simulation_service.run_many(experiment, kinds)
    for kind, log in logs.items():
        export_service.write_csvs(log, out / kind.label)
    text = export_service.to_csv_text(export_service.comparison_frame(logs))
    (out / "comparison.csv").write_text(text, encoding="utf-8")
    typer.echo(text, nl=False)


@cli.command()
def serve(
    host: Annotated[str, typer.Option()] = "127.0.0.1",
    port: Annotated[int, typer.Option()] = 8000,
    log_level: LogLevel = None,
) -> None:
    """Serve the HTTP API."""
    import uvicorn

    setup_logging(log_level)
    uvicorn.run("app.main:app", host=host, port=port)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map failures to exit codes: 1 usage, 2 configuration, 3 runtime."""
    command = typer.main.get_command(cli)
    try:
        result = command.main(args=argv, prog_name="legend", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except ConfigError as exc:
        typer.echo(f"configuration error: {exc}", err=True)
        return exc.exit_code
    except LegendError as exc:
        typer.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_RUNTIME
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
