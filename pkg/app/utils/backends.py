import asyncio
import hashlib
import json
import logging
import os
from abc import ABC, abstractmethod
from typing import Callable, Dict, List, Optional, Union

import httpx
import numpy as np
from tenacity import AsyncRetrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.errors import ConfigError, CredentialError, EmptyInputError, TransportError
from app.schemas.backend import EmbeddingVector, InferenceParams, RawCompletion
from app.schemas.config import BackendConfig, BackendKind, EmbedderKind, RunConfig
from app.schemas.prompt import Prompt
from app.utils.cache import CompletionCache, prompt_fingerprint
from app.utils.normalize import normalize_term
from app.utils.ratelimit import TokenBucket

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {429, 500, 502, 503, 504}
CREDENTIAL_STATUS = {401, 403}


class _Retryable(Exception):
    def __init__(self, detail: str, status_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        self.status_code = status_code


class _Truncated(_Retryable):
    def __init__(self, body: bytes, status_code: int):
        super().__init__("completion truncated at the token limit", status_code)
        self.body = body


def completion_body(text: str, model: str, finish_reason: str = "stop") -> bytes:
    """Serialize text as an OpenAI chat-completion response body."""
    return json.dumps({
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": finish_reason,
        }],
    }, ensure_ascii=False).encode("utf-8")


def _first_choice(body: bytes) -> dict:
    try:
        payload = json.loads(body.decode("utf-8"))
        return payload["choices"][0]
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise TransportError(f"unexpected completion body: {str(e)}")


def parse_completion(body: bytes, model: str, fingerprint: str, cached: bool) -> RawCompletion:
    """
    Build a RawCompletion from a chat-completion body.

    Args:
        body: Raw response bytes, as returned by the endpoint or read from cache
        model: Model identifier recorded on the completion
        fingerprint: Prompt fingerprint the body is stored under
        cached: Whether the body came from the cache

    Returns:
        RawCompletion: First choice text with its truncation flag
    """
    choice = _first_choice(body)
    content = (choice.get("message") or {}).get("content") or ""
    return RawCompletion(
        text=content,
        model=model,
        prompt_fingerprint=fingerprint,
        retrieved_from_cache=cached,
        truncated=choice.get("finish_reason") == "length",
    )


class ChatBackend(ABC):
    """
    Chat-completion contract shared by remote, mock and oracle backends.

    Responses are cached by prompt fingerprint before being returned, and at
    most max_in_flight requests run at once across all workers sharing the backend.
    """
    namespace = ""

    def __init__(self, cache: Optional[CompletionCache] = None, max_in_flight: int = 4):
        self.cache = cache or CompletionCache()
        self.max_in_flight = max_in_flight
        self._semaphore = asyncio.Semaphore(max_in_flight)

    async def complete(self, prompt: Prompt, params: InferenceParams) -> RawCompletion:
        fingerprint = prompt_fingerprint(prompt.text, params, self.namespace)
        body = self.cache.get(fingerprint)
        if body is not None:
            logger.debug("Cache hit for report %s (%s)", prompt.report_id, prompt.strategy.value)
            return parse_completion(body, params.model, fingerprint, cached=True)

        async with self._semaphore:
            body = await self._request(prompt, params)
        completion = parse_completion(body, params.model, fingerprint, cached=False)
        self.cache.put(fingerprint, body)
        if completion.truncated:
            logger.warning("Completion for report %s was truncated", prompt.report_id)
        return completion

    @abstractmethod
    async def _request(self, prompt: Prompt, params: InferenceParams) -> bytes:
        """Return the raw response body for one uncached prompt."""

    async def ping(self) -> None:
        """Check the backend is usable before a run starts."""

    async def aclose(self) -> None:
        pass


class OpenAIClient:
    """
    Thin httpx client for OpenAI-compatible endpoints with retry and rate limiting.

    429, 5xx and network failures are retried with exponential backoff.
    401/403 raise CredentialError immediately; other 4xx raise TransportError.
    """

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        max_retries: int = 3,
        backoff_seconds: float = 1.0,
        timeout_seconds: float = 60.0,
        rate_limiter: Optional[TokenBucket] = None,
        transport: Optional[httpx.AsyncBaseTransport] = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.base_url = base_url.rstrip("/")
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.rate_limiter = rate_limiter
        self.client = httpx.AsyncClient(
            base_url=self.base_url, headers=headers, timeout=timeout_seconds, transport=transport
        )

    async def post(self, path: str, payload: dict, retry_truncated: bool = False) -> bytes:
        """
        POST a JSON payload and return the response body.

        Args:
            path: Endpoint path, e.g. /v1/chat/completions
            payload: JSON request body
            retry_truncated: Treat finish_reason "length" as retryable

        Returns:
            bytes: Raw response body. A truncated body is returned once the
            retry budget for truncation is spent.

        Raises:
            CredentialError: On 401/403
            TransportError: On other client errors or when retries are exhausted
        """
        retrying = AsyncRetrying(
            stop=stop_after_attempt(self.max_retries),
            wait=wait_exponential(multiplier=self.backoff_seconds, min=self.backoff_seconds),
            retry=retry_if_exception_type(_Retryable),
            reraise=True,
        )
        try:
            async for attempt in retrying:
                with attempt:
                    return await self._post_once(path, payload, retry_truncated)
        except _Truncated as e:
            return e.body
        except _Retryable as e:
            raise TransportError(
                f"{path} failed after {self.max_retries} attempt(s): {e.detail}", status_code=e.status_code
            )

    async def _post_once(self, path: str, payload: dict, retry_truncated: bool) -> bytes:
        if self.rate_limiter is not None:
            await self.rate_limiter.acquire()
        try:
            response = await self.client.post(path, json=payload)
        except httpx.HTTPError as e:
            logger.warning("Request to %s failed: %s", path, str(e))
            raise _Retryable(f"network error: {str(e)}")

        status = response.status_code
        if status in CREDENTIAL_STATUS:
            raise CredentialError(f"{path} rejected credentials (status {status})", status_code=status)
        if status in RETRYABLE_STATUS or status >= 500:
            logger.warning("Request to %s returned %s, retrying", path, status)
            raise _Retryable(f"status {status}", status_code=status)
        if status >= 400:
            raise TransportError(f"{path} returned status {status}: {response.text[:200]}", status_code=status)

        body = response.content
        if retry_truncated and _first_choice(body).get("finish_reason") == "length":
            raise _Truncated(body, status)
        return body

    async def ping(self) -> None:
        try:
            response = await self.client.get("/v1/models")
        except httpx.HTTPError as e:
            raise ConfigError(f"backend unreachable at {self.base_url}: {str(e)}")
        if response.status_code in CREDENTIAL_STATUS:
            raise ConfigError(f"backend at {self.base_url} rejected credentials (status {response.status_code})")
        if response.status_code >= 400:
            raise ConfigError(f"backend at {self.base_url} answered status {response.status_code}")

    async def aclose(self) -> None:
        await self.client.aclose()


class OpenAIChatBackend(ChatBackend):
    """Remote chat backend speaking the OpenAI chat-completions protocol."""

    def __init__(
        self,
        client: OpenAIClient,
        cache: Optional[CompletionCache] = None,
        max_in_flight: int = 4,
        retry_on_truncation: bool = False,
    ):
        super().__init__(cache, max_in_flight)
        self.client = client
        self.retry_on_truncation = retry_on_truncation

    async def _request(self, prompt: Prompt, params: InferenceParams) -> bytes:
        payload = {
            "model": params.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "max_tokens": params.max_new_tokens,
            "temperature": params.temperature,
        }
        return await self.client.post("/v1/chat/completions", payload, retry_truncated=self.retry_on_truncation)

    async def ping(self) -> None:
        await self.client.ping()

    async def aclose(self) -> None:
        await self.client.aclose()


class MockBackend(ChatBackend):
    """
    Deterministic in-process backend for tests and dry runs.

    Args:
        response: Fixed response text, or a callable producing it from the prompt
        delay: Seconds each request sleeps, to make concurrency observable
        fail_after: Raise TransportError once this many requests have succeeded
        finish_reason: Reported finish reason; "length" marks output as truncated
    """
    namespace = "mock"

    def __init__(
        self,
        response: Union[str, Callable[[Prompt], str]] = "{}",
        delay: float = 0.0,
        fail_after: Optional[int] = None,
        finish_reason: str = "stop",
        cache: Optional[CompletionCache] = None,
        max_in_flight: int = 4,
    ):
        super().__init__(cache, max_in_flight)
        self.response = response
        self.delay = delay
        self.fail_after = fail_after
        self.finish_reason = finish_reason
        self.calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0

    async def _request(self, prompt: Prompt, params: InferenceParams) -> bytes:
        if self.fail_after is not None and self.calls >= self.fail_after:
            raise TransportError("mock backend interrupted", status_code=503)
        self.in_flight += 1
        self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            if self.delay:
                await asyncio.sleep(self.delay)
            text = self.response(prompt) if callable(self.response) else self.response
        finally:
            self.in_flight -= 1
        self.calls += 1
        return completion_body(text, params.model, self.finish_reason)


class Embedder(ABC):
    """Embedding contract. Vectors are memoized per text for the session."""
    identifier = ""

    def __init__(self):
        self._memo: Dict[str, EmbeddingVector] = {}

    async def embed(self, text: str) -> EmbeddingVector:
        """
        Embed a term or mention.

        Raises:
            EmptyInputError: If text is empty or whitespace
        """
        if not text or not text.strip():
            raise EmptyInputError("cannot embed empty text")
        vector = self._memo.get(text)
        if vector is None:
            vector = EmbeddingVector(values=await self._embed(text), source=self.identifier)
            self._memo[text] = vector
        return vector

    @abstractmethod
    async def _embed(self, text: str) -> List[float]:
        pass

    async def ping(self) -> None:
        pass

    async def aclose(self) -> None:
        pass


class OfflineEmbedder(Embedder):
    """Hashed character-trigram bag of features, L2-normalized. Stable across processes."""

    def __init__(self, dimension: int = 256):
        super().__init__()
        self.dimension = dimension
        self.identifier = f"offline-trigram-{dimension}"

    def vector(self, text: str) -> List[float]:
        padded = f"#{normalize_term(text)}#"
        counts = np.zeros(self.dimension, dtype=np.float64)
        for i in range(len(padded) - 2):
            digest = hashlib.blake2b(padded[i:i + 3].encode("utf-8"), digest_size=8).digest()
            counts[int.from_bytes(digest, "big") % self.dimension] += 1.0
        norm = np.linalg.norm(counts)
        if norm > 0:
            counts /= norm
        return counts.tolist()

    async def _embed(self, text: str) -> List[float]:
        return self.vector(text)


class RemoteEmbedder(Embedder):
    """Embeddings from an OpenAI-compatible /v1/embeddings endpoint, cached on disk."""

    def __init__(self, client: OpenAIClient, model: str, cache: Optional[CompletionCache] = None):
        super().__init__()
        self.client = client
        self.model = model
        self.identifier = f"remote:{model}"
        self.cache = cache or CompletionCache()

    async def _embed(self, text: str) -> List[float]:
        fingerprint = hashlib.sha256(
            json.dumps({"input": text, "model": self.model}, sort_keys=True, ensure_ascii=False).encode("utf-8")
        ).hexdigest()
        body = self.cache.get(fingerprint)
        if body is None:
            body = await self.client.post("/v1/embeddings", {"model": self.model, "input": text})
            self.cache.put(fingerprint, body)
        try:
            return [float(x) for x in json.loads(body.decode("utf-8"))["data"][0]["embedding"]]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"unexpected embedding body: {str(e)}")

    async def ping(self) -> None:
        await self.client.ping()

    async def aclose(self) -> None:
        await self.client.aclose()


def _client_from_config(config: BackendConfig, transport: Optional[httpx.AsyncBaseTransport] = None) -> OpenAIClient:
    api_key = os.getenv(config.api_key_env)
    if not api_key:
        logger.warning("Environment variable %s is not set; calling %s without credentials",
                       config.api_key_env, config.base_url)
    limiter = TokenBucket(config.requests_per_second) if config.requests_per_second else None
    return OpenAIClient(
        config.base_url,
        api_key=api_key,
        max_retries=config.max_retries,
        backoff_seconds=config.backoff_seconds,
        timeout_seconds=config.timeout_seconds,
        rate_limiter=limiter,
        transport=transport,
    )


def create_backend(config: RunConfig, dataset=None, transport: Optional[httpx.AsyncBaseTransport] = None) -> ChatBackend:
    """
    Build the chat backend a run configuration asks for.

    Args:
        config: Run configuration
        dataset: Dataset with gold annotations, required by the oracle backend
        transport: Optional httpx transport, used by tests to stub the endpoint

    Returns:
        ChatBackend: The configured backend

    Raises:
        ConfigError: If the oracle backend is requested without gold annotations
    """
    cache = CompletionCache(config.cache_dir)
    backend_config = config.backend
    if backend_config.kind == BackendKind.MOCK:
        return MockBackend(backend_config.mock_response, cache=cache, max_in_flight=config.concurrency)
    if backend_config.kind == BackendKind.ORACLE:
        from app.utils.oracle import OracleBackend

        if dataset is None or not dataset.gold:
            raise ConfigError("the oracle backend needs a dataset with gold annotations")
        return OracleBackend(dataset, config.oracle, cache=cache, max_in_flight=config.concurrency)
    return OpenAIChatBackend(
        _client_from_config(backend_config, transport),
        cache=cache,
        max_in_flight=config.concurrency,
        retry_on_truncation=backend_config.retry_on_truncation,
    )


def create_embedder(config: RunConfig, transport: Optional[httpx.AsyncBaseTransport] = None) -> Embedder:
    if config.embedder == EmbedderKind.REMOTE:
        cache = CompletionCache(os.path.join(config.cache_dir, "embeddings"))
        return RemoteEmbedder(_client_from_config(config.backend, transport), config.embedding_model, cache)
    return OfflineEmbedder()
