from typing import Dict, Optional


class NoJsonFound(ValueError):
    """Raised when the text holds no '{' or '[' to start a JSON value."""


class UnbalancedJson(ValueError):
    """Raised when every candidate JSON value is unterminated or invalid."""


class EmptyAfterNormalize(ValueError):
    """Raised when nothing is left of a source payload once fences are removed."""


class FencedBlock:
    def __init__(self, body: str, info: Optional[str] = None, start: int = 0):
        self.body = body
        self.info = info or None
        self.start = start

    def to_dict(self) -> Dict:
        return {"info": self.info, "body": self.body, "start": self.start}
