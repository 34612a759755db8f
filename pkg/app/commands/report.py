import argparse

from app.errors import ConfigError
from app.utils.analysis import (
    COLUMN_SETS,
    FORMATS,
    TABLE_TEXT,
    emit_charts,
    exhibit,
    export_report,
    render_exhibit,
    score_rows,
    subset_compare,
    symptom_breakdown,
)
from app.utils.corpus import BOTTOM, TOP, build_subset, load_dataset, symptom_count_histogram
from app.utils.pipeline import read_results


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="Export LINK/MATCH tables, subset comparisons and exhibits")
    parser.add_argument("results", nargs="+", help="One or more results files")
    parser.add_argument("--dataset", help="Dataset file; required for subsets, breakdowns and exhibits")
    parser.add_argument("--format", dest="fmt", choices=FORMATS, default=TABLE_TEXT)
    parser.add_argument("--columns", choices=list(COLUMN_SETS), default="all")
    parser.add_argument("--output", help="Write the score export here")
    parser.add_argument("--common-k", dest="common_k", type=int, help="Compare on the k most frequent terms")
    parser.add_argument("--rare-k", dest="rare_k", type=int, help="Compare on the k least frequent terms")
    parser.add_argument("--breakdown", action="append", default=[], metavar="TERM",
                        help="Per-term mention variant table (repeatable)")
    parser.add_argument("--exhibit", action="append", default=[], metavar="REPORT_ID",
                        help="Side-by-side model comparison for a report (repeatable)")
    parser.add_argument("--charts", metavar="DIR", help="Write chart series and PNG charts here")
    parser.add_argument("--macro", action="store_true")
    parser.add_argument("--zero-fill-unpaired", dest="zero_fill_unpaired", action="store_true")
    parser.set_defaults(handler=handle)


def _print_breakdowns(breakdowns) -> None:
    for item in breakdowns:
        precision = "-" if item.precision is None else f"{item.precision:.3f}"
        recall = "-" if item.recall is None else f"{item.recall:.3f}"
        cosine = "-" if item.mean_cosine is None else f"{item.mean_cosine:.3f}"
        print(f"{item.term} ({item.dataset}, {item.report_count} reports) "
              f"precision={precision} recall={recall} similarity={cosine}")
        gold = ", ".join(f"{form} ({count})" for form, count in item.gold_variants.items())
        model = ", ".join(f"{form} ({count})" for form, count in item.model_variants.items())
        print(f"  original mentions: {gold or '-'}")
        print(f"  model output:      {model or '-'}")


async def handle(args: argparse.Namespace) -> int:
    """
    Aggregate results files into the requested exports.

    Args:
        args: Parsed command-line arguments
    """
    records = [record for path in args.results for record in read_results(path)]
    needs_dataset = args.common_k or args.rare_k or args.breakdown or args.exhibit
    if needs_dataset and not args.dataset:
        raise ConfigError("--dataset is required for subsets, breakdowns and exhibits")
    dataset = load_dataset(args.dataset) if args.dataset else None

    subsets = []
    if args.common_k:
        subsets.append(build_subset(dataset, TOP, args.common_k))
    if args.rare_k:
        subsets.append(build_subset(dataset, BOTTOM, args.rare_k))

    rows = score_rows(records, args.macro, args.zero_fill_unpaired)
    if subsets:
        rows = rows + subset_compare(records, subsets, args.macro, args.zero_fill_unpaired)

    content = export_report(rows, args.fmt, args.output, args.columns)
    if args.output:
        print(f"Wrote {len(rows)} score rows to {args.output}")
    else:
        print(content, end="")

    if args.charts:
        histogram = symptom_count_histogram(dataset) if dataset and dataset.gold else None
        for path in emit_charts(rows, args.charts, histogram=histogram):
            print(f"Wrote {path}")

    if args.breakdown:
        print()
        _print_breakdowns(symptom_breakdown(records, dataset, args.breakdown))

    for report_id in args.exhibit:
        print()
        print(render_exhibit(exhibit(report_id, records, dataset)))
    return 0
