import argparse

from app.utils.analysis import render_table, score_rows
from app.utils.pipeline import Pipeline, read_results
from app.utils.settings import add_config_arguments, config_from_args


def register(subparsers) -> None:
    parser = subparsers.add_parser("run", help="Code every report and score the predictions")
    add_config_arguments(parser)
    parser.set_defaults(handler=handle)


async def handle(args: argparse.Namespace) -> int:
    """
    Run the coding pipeline described by the configuration.

    Prints the LINK/MATCH table of the results file and a ledger summary.
    """
    config = config_from_args(args)
    summary = await Pipeline(config).run()

    records = read_results(summary.results_path)
    print(render_table(score_rows(records, config.macro, config.zero_fill_unpaired)))
    print()
    print(f"Results: {summary.results_path}")
    print(f"Work items: {summary.work_items} new, {summary.resumed} resumed, {summary.malformed} malformed")
    if summary.ledger:
        counts = ", ".join(f"{key}={value}" for key, value in sorted(summary.ledger.items()))
        print(f"Ledger: {counts}")
    return 0
