import os

from sqlalchemy.ext.asyncio import create_async_engine, AsyncSession, AsyncEngine
from sqlalchemy.orm import sessionmaker, declarative_base

# Ledger file name inside a run's output directory
LEDGER_FILENAME = "run_ledger.db"

# Create a Base class for declarative models
Base = declarative_base()


def ledger_url(output_dir: str) -> str:
    """SQLite URL of the run ledger kept next to a results file."""
    return f"sqlite+aiosqlite:///{os.path.join(output_dir, LEDGER_FILENAME)}"


def create_engine_for(output_dir: str) -> AsyncEngine:
    """
    Create the async engine of one run's ledger.

    Args:
        output_dir: Directory holding the results file

    Returns:
        AsyncEngine: Engine bound to <output_dir>/run_ledger.db
    """
    os.makedirs(output_dir, exist_ok=True)
    return create_async_engine(ledger_url(output_dir), connect_args={"check_same_thread": False})


def session_factory(engine: AsyncEngine) -> sessionmaker:
    # Create async session factory
    return sessionmaker(engine, expire_on_commit=False, class_=AsyncSession)
