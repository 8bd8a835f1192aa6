"""asrbridge: JSON-lines scoring adapter for autoregressive ASR models."""

from .adapter import Adapter, AdapterConfig, detokenize, pieces_to_tokens
from .models import StubModel, load_model

__version__ = "0.1.0"
