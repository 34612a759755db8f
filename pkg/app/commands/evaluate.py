import argparse

from app.utils.analysis import render_table, score_rows
from app.utils.backends import create_embedder
from app.utils.corpus import load_dataset
from app.utils.pipeline import read_results, rescore, results_path, write_results
from app.utils.settings import add_config_arguments, config_from_args


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Re-score existing records with the current threshold and embedder")
    add_config_arguments(parser)
    parser.add_argument("--results", help="Results file; defaults to the configured one")
    parser.add_argument("--output", help="Write here instead of rewriting the results file")
    parser.set_defaults(handler=handle)


async def handle(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    dataset = load_dataset(config.dataset)
    source = args.results or results_path(config, dataset)
    embedder = create_embedder(config)
    try:
        records = await rescore(read_results(source), dataset, embedder, config.fuzzy_threshold)
    finally:
        await embedder.aclose()

    target = args.output or source
    write_results(target, records)
    print(render_table(score_rows(records, config.macro, config.zero_fill_unpaired)))
    return 0
