import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional

from app.errors import DataIOError
from app.schemas.backend import InferenceParams

logger = logging.getLogger(__name__)


def prompt_fingerprint(prompt_text: str, params: InferenceParams, namespace: str = "") -> str:
    """
    Stable content address of a request.

    Args:
        prompt_text: The rendered prompt
        params: Inference parameters (model included)
        namespace: Distinguishes backends that answer the same prompt differently

    Returns:
        str: Hex SHA-256 digest
    """
    material = json.dumps(
        {"namespace": namespace, "params": params.model_dump(), "prompt": prompt_text},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class CompletionCache:
    """
    Content-addressed response store, one file per fingerprint.

    Bodies are kept byte-exact. Without a directory the cache lives in memory
    for the lifetime of the object.
    """

    def __init__(self, directory: Optional[str] = None):
        self.directory = Path(directory) if directory else None
        self._memory: Dict[str, bytes] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, fingerprint: str) -> Optional[Path]:
        if self.directory is None:
            return None
        return self.directory / f"{fingerprint}.json"

    def get(self, fingerprint: str) -> Optional[bytes]:
        if fingerprint in self._memory:
            return self._memory[fingerprint]
        path = self.path(fingerprint)
        if path is None or not path.exists():
            return None
        body = path.read_bytes()
        self._memory[fingerprint] = body
        return body

    def put(self, fingerprint: str, body: bytes) -> None:
        self._memory[fingerprint] = body
        path = self.path(fingerprint)
        if path is None:
            return
        # Write to a sibling temp file and rename so readers never see a partial body
        try:
            fd, tmp = tempfile.mkstemp(dir=str(self.directory), suffix=".part")
            with os.fdopen(fd, "wb") as f:
                f.write(body)
            os.replace(tmp, path)
        except OSError as e:
            raise DataIOError(f"could not write cache entry {path}: {str(e)}")
        logger.debug("Cached %s", fingerprint)
