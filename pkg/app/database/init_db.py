import asyncio
import logging
import sys

from sqlalchemy.ext.asyncio import AsyncEngine

from app.database.db import Base, create_engine_for
import app.models  # noqa: F401  registers the ledger tables on Base

logger = logging.getLogger(__name__)


async def init_db(engine: AsyncEngine):
    """
    Initialize the ledger database by creating all tables.
    """
    async with engine.begin() as conn:
        # Create all tables
        await conn.run_sync(Base.metadata.create_all)

    logger.debug("Ledger initialized at %s", engine.url)


# Run this file directly to initialize a ledger in the given output directory
if __name__ == "__main__":
    async def _main(output_dir: str):
        engine = create_engine_for(output_dir)
        await init_db(engine)
        await engine.dispose()

    asyncio.run(_main(sys.argv[1] if len(sys.argv) > 1 else "results"))
