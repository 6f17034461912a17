import json
from typing import Any, Iterator, List, Optional, Tuple

from .constants import CLOSERS, ESCAPE_MAP, ESCAPE_SEQUENCE, FENCE, FENCED_BLOCK, OPENERS
from .models import FencedBlock


def find_fenced_blocks(text: str) -> List[FencedBlock]:
    """Return every ``` fenced block in order of appearance."""
    return [
        FencedBlock(body=match.group(2), info=match.group(1).strip(), start=match.start())
        for match in FENCED_BLOCK.finditer(text)
    ]


def candidate_starts(text: str) -> Iterator[int]:
    for index, char in enumerate(text):
        if char in OPENERS:
            yield index


def scan_balanced(text: str, start: int) -> Optional[str]:
    """
    Return the bracket-balanced slice of text beginning at start, or None if
    the brackets never close or close out of order. String literals are
    skipped so brackets inside them do not count.
    """
    stack = []
    in_string = False
    escaped = False

    for index in range(start, len(text)):
        char = text[index]
        if in_string:
            if escaped:
                escaped = False
            elif char == "\\":
                escaped = True
            elif char == '"':
                in_string = False
            continue

        if char == '"':
            in_string = True
        elif char in OPENERS:
            stack.append(OPENERS[char])
        elif char in CLOSERS:
            if not stack or stack.pop() != char:
                return None
            if not stack:
                return text[start : index + 1]
    return None


def try_loads(text: str) -> Tuple[bool, Any]:
    try:
        return True, json.loads(text)
    except (ValueError, TypeError):
        return False, None


def first_balanced_value(text: str) -> Tuple[bool, Any]:
    """Try a balanced scan from every opening bracket; first parseable value wins."""
    for start in candidate_starts(text):
        candidate = scan_balanced(text, start)
        if candidate is None:
            continue
        ok, value = try_loads(candidate)
        if ok:
            return True, value
    return False, None


def unescape_literals(text: str) -> str:
    """Turn literal \\n, \\t, \\" and \\\\ sequences into the characters they name."""
    return ESCAPE_SEQUENCE.sub(lambda m: ESCAPE_MAP[m.group(1)], text)


def strip_outer_fences(text: str) -> str:
    """Remove fence pairs wrapping the whole text, outermost first. Indentation of the body is kept."""
    while text.lstrip().startswith(FENCE):
        text = text.lstrip()
        if "\n" in text:
            text = text.split("\n", 1)[1]
            if text.rstrip().endswith(FENCE):
                text = text.rstrip()[: -len(FENCE)]
        else:
            text = text[len(FENCE) :]
            if text.endswith(FENCE):
                text = text[: -len(FENCE)]
        text = text.rstrip()
    return text
