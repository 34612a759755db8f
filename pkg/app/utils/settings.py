import argparse
import logging
import os
from typing import Any, Dict, Optional

import tomli
from pydantic import ValidationError

from app.errors import ConfigError
from app.schemas.config import RunConfig

logger = logging.getLogger(__name__)

# flag destination -> dotted config key
FLAG_KEYS = {
    "dataset": "dataset",
    "strategy": "strategy",
    "embedder": "embedder",
    "embedding_model": "embedding_model",
    "threshold": "fuzzy_threshold",
    "concurrency": "concurrency",
    "cache_dir": "cache_dir",
    "output_dir": "output_dir",
    "results_name": "results_name",
    "macro": "macro",
    "zero_fill_unpaired": "zero_fill_unpaired",
    "backend": "backend.kind",
    "base_url": "backend.base_url",
    "model": "backend.params.model",
    "api_key_env": "backend.api_key_env",
    "max_new_tokens": "backend.params.max_new_tokens",
    "temperature": "backend.params.temperature",
    "max_retries": "backend.max_retries",
    "backoff": "backend.backoff_seconds",
    "requests_per_second": "backend.requests_per_second",
    "retry_on_truncation": "backend.retry_on_truncation",
    "timeout": "backend.timeout_seconds",
    "mock_response": "backend.mock_response",
    "drop_terms": "oracle.drop_terms",
    "add_spurious": "oracle.add_spurious",
    "perturb_mentions": "oracle.perturb_mentions",
    "seed": "oracle.seed",
    "taco_template": "templates.taco",
    "tasi_phase1_template": "templates.tasi_phase1",
    "tasi_phase2_template": "templates.tasi_phase2",
}


def _set_dotted(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    node = tree
    for part in parents:
        node = node.setdefault(part, {})
    node[leaf] = value


def read_toml(path: str) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomli.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path} is not valid TOML: {str(e)}")
    except OSError as e:
        raise ConfigError(f"could not read {path}: {str(e)}")


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    require_paths: bool = True,
) -> RunConfig:
    """
    Build a RunConfig from a TOML file and flag overrides.

    Args:
        path: TOML file; defaults only when omitted
        overrides: Dotted keys (e.g. "backend.params.model") set after the file is read
        require_paths: Check that the dataset and template files exist

    Returns:
        RunConfig: The validated configuration

    Raises:
        ConfigError: If the file is unreadable, a value is invalid or a path is missing
    """
    tree = read_toml(path) if path else {}

    # [backend] model sits next to the other backend keys in the file
    backend = tree.get("backend")
    if isinstance(backend, dict) and "model" in backend:
        backend.setdefault("params", {})["model"] = backend.pop("model")

    for dotted, value in (overrides or {}).items():
        _set_dotted(tree, dotted, value)

    if "params" in tree.get("backend", {}) and "model" not in tree["backend"]["params"]:
        tree["backend"]["params"]["model"] = "gpt-4o"

    try:
        config = RunConfig.model_validate(tree)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"invalid configuration value {where}: {first['msg']}")

    if require_paths:
        if not os.path.exists(config.dataset):
            raise ConfigError(f"dataset not found: {config.dataset}")
        for name, template in config.templates.model_dump().items():
            if template and not os.path.exists(template):
                raise ConfigError(f"template {name} not found: {template}")

    logger.debug("Loaded configuration: %s", config.model_dump())
    return config


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags for every configuration key. Unset flags leave the file value alone."""
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--dataset", help="Dataset JSONL file")
    parser.add_argument("--strategy", choices=["taco", "tasi", "both"])
    parser.add_argument("--embedder", choices=["offline", "remote"])
    parser.add_argument("--embedding-model", dest="embedding_model")
    parser.add_argument("--threshold", type=float, help="Fuzzy match threshold in (0, 1]")
    parser.add_argument("--concurrency", type=int)
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--results-name", dest="results_name")
    parser.add_argument("--macro", action="store_true", default=None, help="Macro-average LINK scores")
    parser.add_argument("--zero-fill-unpaired", dest="zero_fill_unpaired", action="store_true", default=None,
                        help="Score unpaired mentions as zero in MATCH means")

    backend = parser.add_argument_group("backend")
    backend.add_argument("--backend", choices=["openai", "mock", "oracle"])
    backend.add_argument("--base-url", dest="base_url")
    backend.add_argument("--model")
    backend.add_argument("--api-key-env", dest="api_key_env", help="Environment variable holding the API key")
    backend.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    backend.add_argument("--temperature", type=float)
    backend.add_argument("--max-retries", dest="max_retries", type=int)
    backend.add_argument("--backoff", type=float, help="Initial retry backoff in seconds")
    backend.add_argument("--requests-per-second", dest="requests_per_second", type=float)
    backend.add_argument("--retry-on-truncation", dest="retry_on_truncation", action="store_true", default=None)
    backend.add_argument("--timeout", type=float)
    backend.add_argument("--mock-response", dest="mock_response")

    oracle = parser.add_argument_group("oracle noise")
    oracle.add_argument("--drop-terms", dest="drop_terms", type=int)
    oracle.add_argument("--add-spurious", dest="add_spurious", type=int)
    oracle.add_argument("--perturb-mentions", dest="perturb_mentions", type=float)
    oracle.add_argument("--seed", type=int)

    templates = parser.add_argument_group("templates")
    templates.add_argument("--taco-template", dest="taco_template")
    templates.add_argument("--tasi-phase1-template", dest="tasi_phase1_template")
    templates.add_argument("--tasi-phase2-template", dest="tasi_phase2_template")


def config_from_args(args: argparse.Namespace, require_paths: bool = True) -> RunConfig:
    overrides = {
        dotted: getattr(args, flag)
        for flag, dotted in FLAG_KEYS.items()
        if getattr(args, flag, None) is not None
    }
    return load_config(getattr(args, "config", None), overrides, require_paths=require_paths)
