# Models package initialization
from app.models.run import ReportRun, RunStatus

__all__ = ["ReportRun", "RunStatus"]
