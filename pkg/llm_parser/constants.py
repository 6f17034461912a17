import re

FENCE = "```"

# ```info\n ... ``` ; the info string is optional and ignored
FENCED_BLOCK = re.compile(r"```([^\n`]*)\n(.*?)```", re.DOTALL)

OPENERS = {"{": "}", "[": "]"}
CLOSERS = {"}", "]"}

# Two-character escapes left behind when a code string was never JSON-decoded
ESCAPE_SEQUENCE = re.compile(r'\\(n|t|"|\\)')
ESCAPE_MAP = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}
