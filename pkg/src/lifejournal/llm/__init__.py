"""LLM/VLM access: prompts, providers, the gateway and cost accounting."""

from lifejournal.llm.gateway import Gateway, LlmExchange, RoleBinding, hallucination_rate
from lifejournal.llm.ledger import CostLedger, LedgerReport, ledger_report
from lifejournal.llm.parsing import parse_summary, parse_timed_lines
from lifejournal.llm.prompts import PromptCatalog, PromptTemplate, render_prompt
from lifejournal.llm.providers import (
    CompletionRequest,
    HallucinatingProvider,
    HttpChatProvider,
    MockProvider,
    RecordingProvider,
    ReplayProvider,
    mock_token_count,
)

__all__ = [
    "CompletionRequest",
    "CostLedger",
    "Gateway",
    "HallucinatingProvider",
    "HttpChatProvider",
    "LedgerReport",
    "LlmExchange",
    "MockProvider",
    "PromptCatalog",
    "PromptTemplate",
    "RecordingProvider",
    "ReplayProvider",
    "RoleBinding",
    "hallucination_rate",
    "ledger_report",
    "mock_token_count",
    "parse_summary",
    "parse_timed_lines",
    "render_prompt",
]
