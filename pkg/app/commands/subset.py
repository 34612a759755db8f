import argparse

from app.utils.corpus import BOTTOM, TOP, build_subset, load_dataset, save_dataset


def register(subparsers) -> None:
    parser = subparsers.add_parser("subset", help="Keep reports linking the k most or least frequent terms")
    parser.add_argument("dataset", help="Annotated dataset JSONL file")
    parser.add_argument("--selector", choices=[TOP, BOTTOM], required=True)
    parser.add_argument("-k", type=int, required=True, help="Number of terms")
    parser.add_argument("--output", required=True, help="Subset JSONL file to write")
    parser.set_defaults(handler=handle)


async def handle(args: argparse.Namespace) -> int:
    subset = build_subset(load_dataset(args.dataset), args.selector, args.k)
    save_dataset(subset, args.output)
    print(f"{subset.name}: {len(subset)} reports written to {args.output}")
    return 0
