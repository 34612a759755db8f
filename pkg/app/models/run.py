from sqlalchemy import Column, Integer, String, DateTime, Text, JSON, Boolean
from sqlalchemy.sql import func
import enum

from app.database.db import Base


class RunStatus(str, enum.Enum):
    """Enum for report run status."""
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"


class ReportRun(Base):
    """
    Ledger row for one (report, model, strategy) work item of a run.
    """
    __tablename__ = "report_runs"

    id = Column(Integer, primary_key=True, index=True)
    session = Column(String, nullable=False, index=True)  # one per pipeline invocation
    report_id = Column(String, nullable=False, index=True)
    model = Column(String, nullable=False)
    strategy = Column(String, nullable=False)
    status = Column(String, default=RunStatus.PROCESSING.value)

    from_cache = Column(Boolean, default=False)
    malformed = Column(Boolean, default=False)
    truncated = Column(Boolean, default=False)
    salvage_notes = Column(JSON, nullable=True)  # recovery strategies the distiller applied
    elapsed_ms = Column(Integer, nullable=True)

    created_at = Column(DateTime(timezone=True), server_default=func.now())
    completed_at = Column(DateTime(timezone=True), nullable=True)
    error_message = Column(Text, nullable=True)
