"""goalforge: a mixed-initiative dialogue runtime that composes IoT service
applications on the fly, plus its Tourist-Guide evaluation bench."""

__version__ = "0.1.0"

from .engine import Engine
from .knowledge import DataSchema, KnowledgeStore, SensorReading, ServiceDefinition, UserProfile
from .llm import CompletionRequest, LlmGateway, MockScript, ProviderConfig, TokenUsage

__all__ = [
    "Engine",
    "KnowledgeStore",
    "ServiceDefinition",
    "DataSchema",
    "SensorReading",
    "UserProfile",
    "LlmGateway",
    "MockScript",
    "ProviderConfig",
    "CompletionRequest",
    "TokenUsage",
    "__version__",
]
