"""Small helpers shared by the demo scripts."""

import re
import string

from crane.token_mask import Vocabulary


def word_vocab(texts, extra=()) -> Vocabulary:
    """Printable ASCII characters plus the word, number and delimiter pieces of ``texts``."""
    pieces = list(string.printable[:95]) + ["\n"]
    for text in texts:
        pieces += re.findall(r" ?[A-Za-z_]+| ?[0-9]+| ?<<|>>|//", text)
    pieces += list(extra)
    return Vocabulary.from_strings(list(dict.fromkeys(pieces)))
