import asyncio
import json

import httpx
import pytest

from app.errors import ConfigError, CredentialError, EmptyInputError, NotFoundError, RangeError, TransportError
from app.schemas.backend import InferenceParams, NoiseProfile
from app.schemas.prompt import Prompt, PromptKind
from app.utils.backends import (
    MockBackend,
    OfflineEmbedder,
    OpenAIChatBackend,
    OpenAIClient,
    RemoteEmbedder,
    completion_body,
    create_backend,
    create_embedder,
)
from app.utils.cache import CompletionCache, prompt_fingerprint
from app.utils.distillation import distill, distill_extraction
from app.utils.metrics import cosine_similarity
from app.utils.oracle import OracleBackend, frequency_index, oracle_mapping
from app.utils.ratelimit import TokenBucket
from conftest import make_dataset

PARAMS = InferenceParams(model="gpt-4o")


def prompt(text="Code this report.", report_id="A", kind=PromptKind.TACO):
    return Prompt(text=text, strategy=kind, report_id=report_id)


def chat_client(handler, max_retries=3):
    return OpenAIClient(
        "http://llm.test", api_key="sk-test", max_retries=max_retries, backoff_seconds=0,
        transport=httpx.MockTransport(handler),
    )


def chat_reply(text, finish_reason="stop"):
    return httpx.Response(200, content=completion_body(text, "gpt-4o", finish_reason))


def test_fingerprint_depends_on_prompt_params_and_namespace():
    base = prompt_fingerprint("p", PARAMS)
    assert base == prompt_fingerprint("p", InferenceParams(model="gpt-4o"))
    assert base != prompt_fingerprint("q", PARAMS)
    assert base != prompt_fingerprint("p", InferenceParams(model="gpt-4o", temperature=0.0))
    assert base != prompt_fingerprint("p", PARAMS, namespace="mock")


def test_cache_persists_between_instances(tmp_path):
    CompletionCache(str(tmp_path)).put("abc", b'{"x": 1}')
    assert CompletionCache(str(tmp_path)).get("abc") == b'{"x": 1}'
    assert CompletionCache(str(tmp_path)).get("missing") is None
    assert not list(tmp_path.glob("*.part"))


@pytest.mark.anyio
async def test_mock_backend_caches_responses(tmp_path):
    backend = MockBackend('{"Pyrexia": ["fever"]}', cache=CompletionCache(str(tmp_path)))
    first = await backend.complete(prompt(), PARAMS)
    second = await backend.complete(prompt(), PARAMS)
    assert first.text == second.text == '{"Pyrexia": ["fever"]}'
    assert not first.retrieved_from_cache
    assert second.retrieved_from_cache
    assert backend.calls == 1

    restarted = MockBackend("something else", cache=CompletionCache(str(tmp_path)))
    again = await restarted.complete(prompt(), PARAMS)
    assert again.text == first.text
    assert restarted.calls == 0


@pytest.mark.anyio
async def test_mock_backend_respects_in_flight_limit():
    backend = MockBackend("{}", delay=0.01, max_in_flight=2)
    await asyncio.gather(*(backend.complete(prompt(f"report {i}", str(i)), PARAMS) for i in range(6)))
    assert backend.calls == 6
    assert backend.peak_in_flight == 2


@pytest.mark.anyio
async def test_mock_backend_fail_after():
    backend = MockBackend("{}", fail_after=1)
    await backend.complete(prompt("one"), PARAMS)
    with pytest.raises(TransportError):
        await backend.complete(prompt("two"), PARAMS)


@pytest.mark.anyio
async def test_truncated_completion_is_flagged():
    backend = MockBackend('{"Pyrexia": ["fev', finish_reason="length")
    completion = await backend.complete(prompt(), PARAMS)
    assert completion.truncated


@pytest.mark.anyio
async def test_rate_limited_request_is_retried():
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        if len(calls) == 1:
            return httpx.Response(429, json={"error": "slow down"})
        return chat_reply('{"Rash": ["rash"]}')

    backend = OpenAIChatBackend(chat_client(handler))
    completion = await backend.complete(prompt(), PARAMS)
    assert completion.text == '{"Rash": ["rash"]}'
    assert len(calls) == 2
    assert calls[0]["model"] == "gpt-4o"
    assert calls[0]["max_tokens"] == 256
    assert calls[0]["messages"] == [{"role": "user", "content": "Code this report."}]
    await backend.aclose()


@pytest.mark.anyio
async def test_credentials_are_not_retried():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(401, json={"error": "bad key"})

    backend = OpenAIChatBackend(chat_client(handler))
    with pytest.raises(CredentialError):
        await backend.complete(prompt(), PARAMS)
    assert len(calls) == 1


@pytest.mark.anyio
async def test_client_error_is_not_retried():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(400, json={"error": "context too long"})

    backend = OpenAIChatBackend(chat_client(handler))
    with pytest.raises(TransportError) as e:
        await backend.complete(prompt(), PARAMS)
    assert e.value.status_code == 400
    assert len(calls) == 1


@pytest.mark.anyio
async def test_retries_exhausted():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(503)

    backend = OpenAIChatBackend(chat_client(handler, max_retries=3))
    with pytest.raises(TransportError) as e:
        await backend.complete(prompt(), PARAMS)
    assert e.value.status_code == 503
    assert len(calls) == 3


@pytest.mark.anyio
async def test_network_errors_are_retried():
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) < 3:
            raise httpx.ConnectError("connection refused", request=request)
        return chat_reply("{}")

    backend = OpenAIChatBackend(chat_client(handler, max_retries=3))
    assert (await backend.complete(prompt(), PARAMS)).text == "{}"
    assert len(calls) == 3


@pytest.mark.anyio
async def test_retry_on_truncation():
    replies = [chat_reply('{"Rash": ["ra', "length"), chat_reply('{"Rash": ["rash"]}')]

    backend = OpenAIChatBackend(chat_client(lambda request: replies.pop(0)), retry_on_truncation=True)
    completion = await backend.complete(prompt(), PARAMS)
    assert completion.text == '{"Rash": ["rash"]}'
    assert not completion.truncated


@pytest.mark.anyio
async def test_truncation_kept_when_retries_spent():
    backend = OpenAIChatBackend(
        chat_client(lambda request: chat_reply('{"Rash": ["ra', "length"), max_retries=2),
        retry_on_truncation=True,
    )
    completion = await backend.complete(prompt(), PARAMS)
    assert completion.truncated
    assert completion.text == '{"Rash": ["ra'


@pytest.mark.anyio
async def test_ping_rejected_credentials():
    backend = OpenAIChatBackend(chat_client(lambda request: httpx.Response(403)))
    with pytest.raises(ConfigError):
        await backend.ping()


@pytest.mark.anyio
async def test_token_bucket_spaces_requests():
    now = [0.0]
    slept = []

    async def sleep(seconds):
        slept.append(seconds)
        now[0] += seconds

    bucket = TokenBucket(2.0, capacity=1, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        await bucket.acquire()
    assert slept == [0.5, 0.5]


def test_token_bucket_rejects_zero_rate():
    with pytest.raises(ValueError):
        TokenBucket(0)


@pytest.mark.anyio
async def test_offline_embedder():
    embedder = OfflineEmbedder()
    fever = await embedder.embed("fever")
    assert fever.source == "offline-trigram-256"
    assert len(fever.values) == 256
    assert cosine_similarity(fever, OfflineEmbedder().vector("Fever.")) == pytest.approx(1.0)
    assert cosine_similarity(fever, await embedder.embed("fevers")) > cosine_similarity(
        fever, await embedder.embed("swollen arm")
    )
    with pytest.raises(EmptyInputError):
        await embedder.embed("   ")


@pytest.mark.anyio
async def test_remote_embedder_uses_cache(tmp_path):
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [0.6, 0.8]}]})

    client = OpenAIClient("http://llm.test", backoff_seconds=0, transport=httpx.MockTransport(handler))
    embedder = RemoteEmbedder(client, "text-embedding-3-small", CompletionCache(str(tmp_path)))
    vector = await embedder.embed("fever")
    assert vector.values == [0.6, 0.8]
    assert vector.source == "remote:text-embedding-3-small"
    assert calls == [{"model": "text-embedding-3-small", "input": "fever"}]

    second = RemoteEmbedder(client, "text-embedding-3-small", CompletionCache(str(tmp_path)))
    assert (await second.embed("fever")).values == [0.6, 0.8]
    assert len(calls) == 1
    await client.aclose()


def test_create_backend_and_embedder(run_config, synthetic):
    assert isinstance(create_backend(run_config(), synthetic), OracleBackend)
    assert isinstance(create_backend(run_config(backend={"kind": "mock"})), MockBackend)
    assert isinstance(create_embedder(run_config()), OfflineEmbedder)
    with pytest.raises(ConfigError):
        create_backend(run_config(), make_dataset({"A": {}}))


@pytest.fixture
def coded():
    dataset = make_dataset(
        {
            "A": {"Pyrexia": ["fever"], "Rash": ["rash", "blotchy skin"], "Headache": ["headache"]},
            "B": {"Pyrexia": ["high temperature"]},
            "C": {"Pyrexia": ["feverish"]},
        },
        extra_terms=("Vomiting", "Chills"),
    )
    return dataset, dataset.report("A"), dataset.gold["A"]


def test_oracle_without_noise_reproduces_gold(coded):
    dataset, report, gold = coded
    assert oracle_mapping(report, gold, NoiseProfile()) == gold.links


def test_oracle_drops_least_frequent_terms(coded):
    dataset, report, gold = coded
    frequencies = frequency_index(dataset)
    assert list(oracle_mapping(report, gold, NoiseProfile(drop_terms=1), frequencies)) == ["Pyrexia", "Rash"]
    assert list(oracle_mapping(report, gold, NoiseProfile(drop_terms=2), frequencies)) == ["Pyrexia"]
    with pytest.raises(RangeError):
        oracle_mapping(report, gold, NoiseProfile(drop_terms=4), frequencies)


def test_oracle_adds_spurious_terms(coded):
    _, report, gold = coded
    mapping = oracle_mapping(report, gold, NoiseProfile(add_spurious=1))
    assert mapping["Vomiting"] == ["possible vomiting"]
    assert "Chills" not in mapping
    with pytest.raises(RangeError):
        oracle_mapping(report, gold, NoiseProfile(add_spurious=3))


def test_oracle_perturbs_mentions_deterministically(coded):
    _, report, gold = coded
    noise = NoiseProfile(perturb_mentions=1.0, seed=7)
    mapping = oracle_mapping(report, gold, noise)
    assert mapping == oracle_mapping(report, gold, noise)
    for term, mentions in gold.links.items():
        for original, perturbed in zip(mentions, mapping[term]):
            assert perturbed != original
            assert len(perturbed) == len(original) + 1


@pytest.mark.anyio
async def test_oracle_backend_answers_both_prompt_kinds(coded):
    dataset, report, _ = coded
    backend = OracleBackend(dataset)
    mapping = await backend.complete(prompt(report_id="A"), InferenceParams(model="oracle"))
    assert distill(mapping, report).links == {
        "pyrexia": ["fever"], "rash": ["rash", "blotchy skin"], "headache": ["headache"],
    }
    mentions = await backend.complete(prompt(report_id="A", kind=PromptKind.TASI_PHASE1), InferenceParams(model="oracle"))
    assert distill_extraction(mentions, "A").mentions == ["fever", "rash", "blotchy skin", "headache"]

    with pytest.raises(NotFoundError):
        await backend.complete(prompt(report_id="Z"), InferenceParams(model="oracle"))
