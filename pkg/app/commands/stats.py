import argparse
import json

from app.errors import DataIOError
from app.utils.corpus import compute_stats, load_dataset, render_stats, stats_to_dict
from app.utils.pipeline import read_results


def register(subparsers) -> None:
    parser = subparsers.add_parser("stats", help="Print length statistics of one or more datasets")
    parser.add_argument("datasets", nargs="+", help="Dataset JSONL files")
    parser.add_argument("--results", help="Results file; adds the extracted-symptom column")
    parser.add_argument("--model", help="Model whose records fill the extracted-symptom column")
    parser.add_argument("--strategy", choices=["taco", "tasi"],
                        help="Strategy whose records fill the extracted-symptom column")
    parser.add_argument("--json", dest="json_path", help="Also write the statistics as JSON")
    parser.set_defaults(handler=handle)


async def handle(args: argparse.Namespace) -> int:
    records = read_results(args.results) if args.results else None
    stats = [
        compute_stats(load_dataset(path), records, model=args.model, strategy=args.strategy)
        for path in args.datasets
    ]
    print(render_stats(stats))

    if args.json_path:
        try:
            with open(args.json_path, "w", encoding="utf-8") as f:
                json.dump([stats_to_dict(item) for item in stats], f, indent=2)
        except OSError as e:
            raise DataIOError(f"could not write {args.json_path}: {str(e)}")
    return 0
