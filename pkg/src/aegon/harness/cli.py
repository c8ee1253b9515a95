"""``aegon-harness``: run named scenarios or the latency benchmark."""

from __future__ import annotations

import json
import logging
import sys

import click

from aegon.harness.bench import PROFILES, run_bench
from aegon.harness.scenarios import SCENARIOS, ScenarioError, run_scenario


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="log actor activity")
def cli(verbose: bool) -> None:
    """End-to-end scenarios and benchmarks for an in-process Aegon deployment."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not verbose:
        logging.getLogger("httpx").setLevel(logging.WARNING)


@cli.command("list")
def list_cmd() -> None:
    """List built-in scenarios."""
    for name, spec in SCENARIOS.items():
        click.echo(f"{name:40s} {spec.kind:13s} expects {spec.expected}")


@cli.command()
@click.argument("name")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--transcript", is_flag=True, help="print the full JSON transcript")
def scenario(name: str, seed: int, transcript: bool) -> None:
    """Run scenario NAME (or 'all')."""
    names = list(SCENARIOS) if name == "all" else [name]
    failed = 0
    for n in names:
        try:
            result = run_scenario(n, seed)
        except ScenarioError as exc:
            raise click.UsageError(str(exc)) from None
        status = "PASS" if result.passed else "FAIL"
        click.echo(f"{status} {n} seed={seed} observed={result.observed} "
                   f"transcript={result.transcript_digest[:16]}")
        if transcript:
            click.echo(json.dumps(result.to_json(), indent=2, sort_keys=True))
        failed += not result.passed
    sys.exit(1 if failed else 0)


@cli.command()
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default="quick", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="write the JSON report here")
@click.option("--seed", default=0, type=int)
def bench(profile: str, out: str | None, seed: int) -> None:
    """Measure hot-path latencies against their targets."""
    report = run_bench(profile, seed)
    for cell in report.cells:
        target = f"target P95 < {cell.target_p95_ms} ms" if cell.target_p95_ms else "no target"
        verdict = {True: "PASS", False: "FAIL", None: "info"}[cell.passed]
        rate = f" rate {cell.achieved_rate}/{cell.target_rate} req/s" if cell.target_rate else ""
        click.echo(f"{verdict:4s} {cell.operation:26s} P50 {cell.p50_ms:8.3f}  P95 {cell.p95_ms:8.3f}  "
                   f"P99 {cell.p99_ms:8.3f} ms  n={cell.samples}{rate}  ({target})")
    click.echo(f"{'PASS' if report.receipt_size_passed else 'FAIL'} receipt size {report.receipt_size_bytes} bytes "
               f"(limit 4096)")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2)
    sys.exit(0 if report.passed else 1)


def main(argv: list[str] | None = None) -> None:
    cli.main(args=argv, prog_name="aegon-harness")


if __name__ == "__main__":
    main()
