# Command package initialization
from app.commands import ingest, stats, subset, run, distill, evaluate, report

COMMANDS = [ingest, stats, subset, run, distill, evaluate, report]
