import uuid
from datetime import datetime
from typing import Dict, List, Optional

from sqlalchemy import func
from sqlalchemy.future import select

from app.database.db import create_engine_for, session_factory
from app.database.init_db import init_db
from app.models.run import ReportRun, RunStatus


class RunLedger:
    """
    SQLite audit log of a run: one row per work item with status, timing and
    the salvage notes the distiller applied.

    Each RunLedger instance is one session; rows from earlier invocations in
    the same output directory stay in the file but are kept out of summary().
    """

    def __init__(self, output_dir: str):
        self.engine = create_engine_for(output_dir)
        self.sessions = session_factory(self.engine)
        self.session = uuid.uuid4().hex

    async def open(self) -> "RunLedger":
        await init_db(self.engine)
        return self

    async def start(self, report_id: str, model: str, strategy: str) -> int:
        async with self.sessions() as db:
            run = ReportRun(
                session=self.session,
                report_id=report_id,
                model=model,
                strategy=strategy,
                status=RunStatus.PROCESSING.value,
            )
            db.add(run)
            await db.commit()
            await db.refresh(run)
            return run.id

    async def finish(
        self,
        run_id: int,
        status: RunStatus,
        elapsed_ms: int,
        from_cache: bool = False,
        malformed: bool = False,
        truncated: bool = False,
        salvage_notes: Optional[List[str]] = None,
        error_message: Optional[str] = None,
    ) -> None:
        """
        Close a ledger row.

        Args:
            run_id: Row returned by start()
            status: COMPLETED or FAILED
            elapsed_ms: Wall time of the work item
            from_cache: Every completion of the item came from cache
            malformed: The distiller gave up and the item scored as empty
            truncated: A completion hit the token limit
            salvage_notes: Recovery strategies applied
            error_message: Error message if the item failed
        """
        async with self.sessions() as db:
            result = await db.execute(select(ReportRun).where(ReportRun.id == run_id))
            run = result.scalars().first()
            if run is None:
                return
            run.status = status.value
            run.elapsed_ms = elapsed_ms
            run.from_cache = from_cache
            run.malformed = malformed
            run.truncated = truncated
            run.salvage_notes = salvage_notes or []
            if status == RunStatus.COMPLETED:
                run.completed_at = datetime.utcnow()
            elif status == RunStatus.FAILED:
                run.error_message = error_message
            await db.commit()

    async def summary(self, all_sessions: bool = False) -> Dict[str, int]:
        """
        Row counts per status, plus malformed and cached item counts.

        Args:
            all_sessions: Count every row in the ledger file instead of this session's
        """
        def scoped(statement):
            return statement if all_sessions else statement.where(ReportRun.session == self.session)

        async with self.sessions() as db:
            result = await db.execute(
                scoped(select(ReportRun.status, func.count())).group_by(ReportRun.status)
            )
            counts = {str(status): count for status, count in result.all()}
            malformed = await db.execute(
                scoped(select(func.count()).select_from(ReportRun).where(ReportRun.malformed.is_(True)))
            )
            cached = await db.execute(
                scoped(select(func.count()).select_from(ReportRun).where(ReportRun.from_cache.is_(True)))
            )
            counts["malformed"] = malformed.scalar_one()
            counts["from_cache"] = cached.scalar_one()
            return counts

    async def close(self) -> None:
        await self.engine.dispose()
