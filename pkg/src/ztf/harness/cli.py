"""Command line: boot the federation, run scenarios, or demo everything."""

from __future__ import annotations

import json
import signal
import sys
from pathlib import Path

import click

from .runner import Federation
from .scenarios import SCENARIOS, USE_CASES, ScenarioReport, run_scenario, topology_for
from .topology import TopologySpec, default_topology


def _load_topology(path: str | None) -> TopologySpec | None:
    if path is None:
        return None
    return TopologySpec.load(path)


def _print_report(report: ScenarioReport) -> None:
    click.echo(f"scenario {report.scenario}: {report.verdict} "
               f"({len(report.steps)} steps, {report.runtime_s}s)")
    for step in report.steps:
        mark = "ok " if step.ok else "FAIL"
        click.echo(f"  [{mark}] {step.name}")
        if not step.ok:
            click.echo(f"         expected: {step.expected!r}")
            click.echo(f"         actual:   {step.actual!r}")
    violations = report.audit.get("violations", [])
    click.echo(
        f"  scope audit: {report.audit.get('checked_entries', 0)} entries, "
        f"{len(violations)} violations"
    )


@click.group()
def main() -> None:
    """Zero trust federation testbed."""


@main.command()
@click.option("--topology", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--auto-consent/--interactive-consent", default=True, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def boot(topology: str | None, seed: int, auto_consent: bool, host: str) -> None:
    """Boot the federation and serve until interrupted."""
    spec = _load_topology(topology) or default_topology()
    fed = Federation(topology=spec, seed=seed, auto_consent=auto_consent, host=host)
    fed.boot()
    click.echo("federation up:")
    names = fed._service_names()
    for name, url in fed.base_urls.items():
        click.echo(f"  {name:<6} {url}  ({names[name]})")
    click.echo("Ctrl-C to shut down")
    try:
        signal.pause()
    except (KeyboardInterrupt, AttributeError):
        pass
    finally:
        fed.shutdown()
        click.echo("shut down")


@main.command()
@click.argument("scenario", type=click.Choice(sorted(SCENARIOS)))
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="write the JSON report here")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--auto-consent/--interactive-consent", default=True, show_default=True)
@click.option("--topology", type=click.Path(exists=True), default=None)
def run(scenario: str, report_path: str | None, seed: int, auto_consent: bool,
        topology: str | None) -> None:
    """Run one scenario and report pass/fail per step."""
    report = run_scenario(
        scenario,
        seed=seed,
        auto_consent=auto_consent,
        topology=_load_topology(topology),
    )
    _print_report(report)
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_json(), indent=2))
        click.echo(f"report written to {report_path}")
    sys.exit(0 if report.verdict == "PASS" else 1)


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--report-dir", type=click.Path(), default=None)
def demo(seed: int, report_dir: str | None) -> None:
    """Boot and run all four use cases."""
    verdicts = {}
    for name in USE_CASES:
        report = run_scenario(name, seed=seed)
        _print_report(report)
        verdicts[name] = report.verdict
        if report_dir:
            directory = Path(report_dir)
            directory.mkdir(parents=True, exist_ok=True)
            (directory / f"{name}.json").write_text(
                json.dumps(report.to_json(), indent=2)
            )
    click.echo("")
    for name, verdict in verdicts.items():
        click.echo(f"{verdict:4}  {name}")
    sys.exit(0 if all(v == "PASS" for v in verdicts.values()) else 1)


@main.command()
def scenarios() -> None:
    """List available scenarios."""
    for name in sorted(SCENARIOS):
        click.echo(name)


if __name__ == "__main__":
    main()
