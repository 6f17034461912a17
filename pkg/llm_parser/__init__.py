"""
LLM Output Parser
Pulls structured payloads out of free-form model text: JSON values wrapped in
prose or Markdown fences, and code strings that still carry fences or escapes.
"""

from .engine import extract_json, normalize_source
from .models import EmptyAfterNormalize, FencedBlock, NoJsonFound, UnbalancedJson
from .utils import find_fenced_blocks, scan_balanced

__all__ = [
    "extract_json",
    "normalize_source",
    "find_fenced_blocks",
    "scan_balanced",
    "EmptyAfterNormalize",
    "FencedBlock",
    "NoJsonFound",
    "UnbalancedJson",
]
