from typing import Any

from .models import EmptyAfterNormalize, NoJsonFound, UnbalancedJson
from .utils import (
    candidate_starts,
    find_fenced_blocks,
    first_balanced_value,
    strip_outer_fences,
    try_loads,
    unescape_literals,
)


def extract_json(text: str) -> Any:
    """
    Extract the first complete JSON value from model output.

    Tries, in order: the whole text, each fenced block, then a balanced
    bracket scan over the raw text.
    """
    if text is None:
        raise NoJsonFound("No text to parse")

    ok, value = try_loads(text.strip())
    if ok:
        return value

    for block in find_fenced_blocks(text):
        ok, value = try_loads(block.body.strip())
        if ok:
            return value
        ok, value = first_balanced_value(block.body)
        if ok:
            return value

    if next(candidate_starts(text), None) is None:
        raise NoJsonFound("No JSON object or array found in text")

    ok, value = first_balanced_value(text)
    if ok:
        return value
    raise UnbalancedJson("No complete JSON value found in text")


def normalize_source(raw: str) -> str:
    """
    Turn a model-supplied code payload into a source file body.

    A payload with no real line breaks but literal escape sequences is
    treated as a still-escaped JSON string and unescaped first. Fences
    wrapping the whole payload are dropped with their info string. The
    result ends with exactly one newline.
    """
    text = (raw or "").replace("\r\n", "\n")

    if "\n" not in text:
        while "\n" not in text and "\\n" in text:
            unescaped = unescape_literals(text)
            if unescaped == text:
                break
            text = unescaped
        if "\n" not in text and ("\\t" in text or '\\"' in text):
            text = unescape_literals(text)

    text = strip_outer_fences(text).rstrip()
    if not text.strip():
        raise EmptyAfterNormalize("Source is empty after normalization")
    return text + "\n"
