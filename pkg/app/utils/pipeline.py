import asyncio
import logging
import os
import tempfile
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError

from app.errors import DataIOError, DatasetParseError, MalformedOutput, NotFoundError, SymptomCoderError
from app.models.run import RunStatus
from app.schemas.backend import RawCompletion
from app.schemas.coded import CodedOutput, ExtractionList
from app.schemas.config import RunConfig
from app.schemas.corpus import Dataset, GoldAnnotation, Report
from app.schemas.metrics import MatchMode
from app.schemas.prompt import PromptTemplate, Strategy, TasiTemplates
from app.schemas.records import EvaluationRecord, PhaseOneTrace
from app.utils.backends import ChatBackend, Embedder, create_backend, create_embedder
from app.utils.corpus import load_dataset
from app.utils.distillation import distill, distill_extraction
from app.utils.ledger import RunLedger
from app.utils.metrics import align_all_modes, score_mentions
from app.utils.prompting import (
    TACO_PLACEHOLDERS,
    TASI_PHASE1_PLACEHOLDERS,
    TASI_PHASE2_PLACEHOLDERS,
    build_taco_prompt,
    build_tasi_prompts,
    default_taco_template,
    default_tasi_templates,
    load_template,
)

logger = logging.getLogger(__name__)


class RunSummary(BaseModel):
    """What a pipeline run did."""
    results_path: str
    work_items: int = 0
    resumed: int = 0
    malformed: int = 0
    ledger: Dict[str, int] = Field(default_factory=dict)


def results_path(config: RunConfig, dataset: Dataset) -> str:
    name = config.results_name or f"{dataset.name}.results.jsonl"
    return os.path.join(config.output_dir, name)


def read_results(path: str, tolerate_partial: bool = False) -> List[EvaluationRecord]:
    """
    Load evaluation records from a results file.

    Args:
        path: JSONL results file
        tolerate_partial: Skip unreadable lines instead of failing, for resuming
            after an interrupted write

    Returns:
        List[EvaluationRecord]: Records in file order

    Raises:
        DataIOError: If the file cannot be read
        DatasetParseError: If a line is not a valid record
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise DataIOError(f"results file not found: {path}")
    except OSError as e:
        raise DataIOError(f"could not read {path}: {str(e)}")

    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(EvaluationRecord.model_validate_json(line))
        except ValidationError as e:
            if tolerate_partial:
                logger.warning("Skipping unreadable line %d of %s", number, path)
                continue
            raise DatasetParseError(f"invalid evaluation record: {e.errors()[0]['msg']}", line=number)
    return records


def write_results(path: str, records: Sequence[EvaluationRecord]) -> None:
    """Atomically replace a results file with the given records."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            for record in records:
                f.write(record.to_line() + "\n")
        os.replace(tmp, path)
    except OSError as e:
        raise DataIOError(f"could not write {path}: {str(e)}")


def order_records(records: Sequence[EvaluationRecord], dataset: Dataset) -> List[EvaluationRecord]:
    """Deduplicate by (report, model, strategy), keeping the last, and sort into dataset order."""
    position = {report.id: i for i, report in enumerate(dataset.reports)}
    strategies = {strategy: i for i, strategy in enumerate(Strategy)}
    latest: Dict[Tuple[str, str, str], EvaluationRecord] = {}
    for record in records:
        latest[record.key()] = record
    return sorted(
        latest.values(),
        key=lambda r: (r.model, strategies[r.strategy], position.get(r.report_id, len(position)), r.report_id),
    )


async def score_record(
    record: EvaluationRecord,
    gold: Optional[GoldAnnotation],
    embedder: Embedder,
    threshold: float,
) -> EvaluationRecord:
    """
    Attach LINK alignments for all three modes and MATCH triples to a record.

    Mention pairs are taken under the EMFuzzy term pairs. A report without a
    gold annotation scores against an empty gold set.
    """
    gold_links = gold.links if gold is not None else {}
    alignments = align_all_modes(record.links, gold_links, threshold)
    pairs, unpaired = await score_mentions(alignments[MatchMode.EM_FUZZY], record.links, gold_links, embedder)
    return record.model_copy(update={
        "alignments": alignments,
        "match_pairs": pairs,
        "unpaired_mentions": unpaired,
    })


def _distill_or_empty(completion: RawCompletion, report: Report) -> CodedOutput:
    try:
        return distill(completion, report)
    except MalformedOutput as e:
        logger.warning("Report %s: %s; scoring as an empty prediction", report.id, e.detail)
        return CodedOutput(report_id=report.id, malformed=True)


def _extract_or_empty(completion: RawCompletion, report: Report) -> ExtractionList:
    try:
        return distill_extraction(completion, report.id)
    except MalformedOutput as e:
        logger.warning("Report %s phase 1: %s; continuing with no mentions", report.id, e.detail)
        return ExtractionList(report_id=report.id, malformed=True)


class Pipeline:
    """
    Runs every (report, strategy) work item of a configuration through
    prompting, completion, distillation and scoring.

    Args:
        config: Run configuration
        dataset: Dataset to run over; loaded from config.dataset when omitted
        backend: Chat backend; built from the configuration when omitted
        embedder: Embedder for MATCH cosine; built from the configuration when omitted
    """

    def __init__(
        self,
        config: RunConfig,
        dataset: Optional[Dataset] = None,
        backend: Optional[ChatBackend] = None,
        embedder: Optional[Embedder] = None,
    ):
        self.config = config
        self.dataset = dataset if dataset is not None else load_dataset(config.dataset)
        self.backend = backend if backend is not None else create_backend(config, self.dataset)
        self.embedder = embedder if embedder is not None else create_embedder(config)
        self.params = config.backend.params
        self.taco_template, self.tasi_templates = self._templates()
        self._write_lock = asyncio.Lock()

    def _templates(self) -> Tuple[PromptTemplate, TasiTemplates]:
        paths = self.config.templates
        taco = load_template(paths.taco, TACO_PLACEHOLDERS) if paths.taco else default_taco_template()
        defaults = default_tasi_templates()
        tasi = TasiTemplates(
            phase1=load_template(paths.tasi_phase1, TASI_PHASE1_PLACEHOLDERS) if paths.tasi_phase1 else defaults.phase1,
            phase2=load_template(paths.tasi_phase2, TASI_PHASE2_PLACEHOLDERS) if paths.tasi_phase2 else defaults.phase2,
        )
        return taco, tasi

    async def code_report(self, report: Report, strategy: Strategy) -> Tuple[EvaluationRecord, bool]:
        """
        Prompt, complete and distill one report under one strategy.

        Returns:
            Tuple[EvaluationRecord, bool]: Unscored record and whether every
            completion it needed came from cache
        """
        phase1 = None
        if strategy == Strategy.TACO:
            completion = await self.backend.complete(build_taco_prompt(report, self.taco_template), self.params)
            cached = completion.retrieved_from_cache
        else:
            first_prompt, continue_with = build_tasi_prompts(report, self.tasi_templates)
            first = await self.backend.complete(first_prompt, self.params)
            extraction = _extract_or_empty(first, report)
            phase1 = PhaseOneTrace(
                raw_ref=first.prompt_fingerprint,
                raw=first.text,
                mentions=extraction.mentions,
                salvage_notes=extraction.salvage_notes,
                malformed=extraction.malformed,
            )
            completion = await self.backend.complete(continue_with(extraction.mentions), self.params)
            cached = first.retrieved_from_cache and completion.retrieved_from_cache

        coded = _distill_or_empty(completion, report)
        record = EvaluationRecord(
            report_id=report.id,
            model=self.params.model,
            strategy=strategy,
            raw_ref=completion.prompt_fingerprint,
            raw=completion.text,
            truncated=completion.truncated,
            phase1=phase1,
            links=coded.links,
            unlinkable_keys=coded.unlinkable_keys,
            salvage_notes=coded.salvage_notes,
            malformed=coded.malformed,
        )
        return record, cached

    async def _process(self, report: Report, strategy: Strategy, ledger: RunLedger, handle) -> EvaluationRecord:
        started = time.perf_counter()
        run_id = await ledger.start(report.id, self.params.model, strategy.value)
        try:
            record, cached = await self.code_report(report, strategy)
            record = await score_record(
                record, self.dataset.gold.get(report.id), self.embedder, self.config.fuzzy_threshold
            )
        except SymptomCoderError as e:
            elapsed = int((time.perf_counter() - started) * 1000)
            await ledger.finish(run_id, RunStatus.FAILED, elapsed, error_message=e.detail)
            raise

        elapsed = int((time.perf_counter() - started) * 1000)
        async with self._write_lock:
            handle.write(record.to_line() + "\n")
            handle.flush()
        await ledger.finish(
            run_id,
            RunStatus.COMPLETED,
            elapsed,
            from_cache=cached,
            malformed=record.malformed,
            truncated=record.truncated,
            salvage_notes=record.salvage_notes,
        )
        logger.info(
            "Report %s [%s] done in %d ms%s notes=%s",
            report.id, strategy.value, elapsed, " (cached)" if cached else "", record.salvage_notes,
        )
        return record

    async def run(self) -> RunSummary:
        """
        Execute all pending work items with a bounded worker pool.

        Records are appended to the results file as they finish, so an
        interrupted run resumes by skipping the keys already present. The file
        is rewritten in dataset order at the end.

        Raises:
            TransportError: If the backend fails beyond its retry budget
        """
        path = results_path(self.config, self.dataset)
        existing = []
        if Path(path).exists():
            existing = read_results(path, tolerate_partial=True)
            # drop any half-written trailing line before appending again
            write_results(path, existing)
        done = {record.key() for record in existing}

        items = [
            (report, strategy)
            for strategy in self.config.strategies()
            for report in self.dataset.reports
            if (report.id, self.params.model, strategy.value) not in done
        ]
        summary = RunSummary(results_path=path, work_items=len(items), resumed=len(existing))
        if done:
            logger.info("Resuming: %d record(s) already in %s", len(done), path)

        if items:
            await self.backend.ping()
            await self.embedder.ping()

        ledger = await RunLedger(self.config.output_dir).open()
        queue: asyncio.Queue = asyncio.Queue()
        for item in items:
            queue.put_nowait(item)

        async def worker(handle) -> int:
            malformed = 0
            while True:
                try:
                    report, strategy = queue.get_nowait()
                except asyncio.QueueEmpty:
                    return malformed
                record = await self._process(report, strategy, ledger, handle)
                malformed += int(record.malformed)

        try:
            os.makedirs(self.config.output_dir, exist_ok=True)
            with open(path, "a", encoding="utf-8") as handle:
                tasks = [
                    asyncio.create_task(worker(handle))
                    for _ in range(min(self.config.concurrency, len(items)))
                ]
                if tasks:
                    finished, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
                    for task in pending:
                        task.cancel()
                    await asyncio.gather(*pending, return_exceptions=True)
                    for task in finished:
                        if task.exception() is not None:
                            raise task.exception()
                    summary.malformed = sum(task.result() for task in finished)

            write_results(path, order_records(read_results(path, tolerate_partial=True), self.dataset))
            summary.ledger = await ledger.summary()
        except OSError as e:
            raise DataIOError(f"could not write {path}: {str(e)}")
        finally:
            await ledger.close()
            await self.backend.aclose()
            await self.embedder.aclose()
        return summary


async def run_pipeline(config: RunConfig, **components) -> RunSummary:
    return await Pipeline(config, **components).run()


async def rescore(
    records: Sequence[EvaluationRecord],
    dataset: Dataset,
    embedder: Embedder,
    threshold: float,
) -> List[EvaluationRecord]:
    """Recompute alignments and MATCH triples of existing records."""
    return [
        await score_record(record, dataset.gold.get(record.report_id), embedder, threshold)
        for record in records
    ]


async def redistill(
    records: Sequence[EvaluationRecord],
    dataset: Dataset,
    embedder: Embedder,
    threshold: float,
) -> List[EvaluationRecord]:
    """
    Re-run distillation on the raw text stored in each record, then rescore.

    TASI phase-one traces are kept as recorded; the linking output is re-distilled.

    Raises:
        NotFoundError: If a record references a report missing from the dataset
    """
    updated = []
    for record in records:
        report = dataset.report(record.report_id)
        if report is None:
            raise NotFoundError(f"record for unknown report '{record.report_id}' in dataset {dataset.name}")
        coded = _distill_or_empty(
            RawCompletion(text=record.raw, model=record.model, prompt_fingerprint=record.raw_ref), report
        )
        updated.append(record.model_copy(update={
            "links": coded.links,
            "unlinkable_keys": coded.unlinkable_keys,
            "salvage_notes": coded.salvage_notes,
            "malformed": coded.malformed,
        }))
    return await rescore(updated, dataset, embedder, threshold)

