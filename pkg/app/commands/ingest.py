import argparse

from app.utils.corpus import ingest_vaers, save_dataset


def register(subparsers) -> None:
    parser = subparsers.add_parser("ingest", help="Build a dataset file from raw VAERS CSV tables")
    parser.add_argument("--data", required=True, help="VAERS data table (VAERS_ID, SYMPTOM_TEXT)")
    parser.add_argument("--symptoms", required=True, help="VAERS symptoms table (VAERS_ID, SYMPTOM1..5)")
    parser.add_argument("--output", required=True, help="Dataset JSONL file to write")
    parser.add_argument("--encoding", default="utf-8", help="CSV encoding (VAERS files are often latin-1)")
    parser.add_argument("--name", default="vaers", help="Dataset name")
    parser.set_defaults(handler=handle)


async def handle(args: argparse.Namespace) -> int:
    """
    Ingest raw VAERS tables into an unannotated dataset file.

    Args:
        args: Parsed command-line arguments
    """
    dataset = ingest_vaers(args.data, args.symptoms, encoding=args.encoding, name=args.name)
    save_dataset(dataset, args.output)
    print(f"Wrote {len(dataset)} reports to {args.output}")
    return 0
