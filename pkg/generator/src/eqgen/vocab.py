"""Token vocabulary for equation strings.

Symbol-level with the multi-character variables g_p/g_c kept whole, so the
decoder can never emit fragments like "g_".  Start/end/pad markers are
internal and never appear inside equation text.
"""

from __future__ import annotations

PAD = "<pad>"
SOS = "<s>"
EOS = "</s>"

EQUATION_TOKENS = (
    "g_p", "g_c", "a",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".",
    "+", "-", "*", "/", "(", ")",
)
OPERATORS = ("+", "-", "*", "/")


class TokenizeError(ValueError):
    pass


class TokenVocabulary:
    def __init__(self):
        self.tokens = (PAD, SOS, EOS) + EQUATION_TOKENS
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.index[PAD]
        self.sos_id = self.index[SOS]
        self.eos_id = self.index[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    def tokenize(self, text: str) -> list[str]:
        out = []
        i = 0
        while i < len(text):
            ch = text[i]
            if ch.isspace():
                i += 1
                continue
            if text.startswith("g_p", i):
                out.append("g_p")
                i += 3
            elif text.startswith("g_c", i):
                out.append("g_c")
                i += 3
            elif ch in self.index and ch not in (PAD, SOS, EOS):
                out.append(ch)
                i += 1
            else:
                raise TokenizeError(f"cannot tokenize {text!r} at offset {i}")
        return out

    def encode(self, text: str, max_len: int | None = None) -> list[int]:
        """Token ids for SOS + equation + EOS, padded to max_len when given."""
        ids = [self.sos_id]
        ids += [self.index[t] for t in self.tokenize(text)]
        ids.append(self.eos_id)
        if max_len is not None:
            if len(ids) > max_len:
                raise TokenizeError(f"equation longer than {max_len} tokens: {text!r}")
            ids += [self.pad_id] * (max_len - len(ids))
        return ids

    def decode(self, ids) -> str:
        """Text from ids, stopping at EOS; spaces re-inserted around operators
        so round trips reproduce the canonical equation format."""
        parts = []
        for i in ids:
            tok = self.tokens[int(i)]
            if tok == EOS:
                break
            if tok in (PAD, SOS):
                continue
            parts.append(tok)
        text = ""
        for tok in parts:
            text += f" {tok} " if tok in OPERATORS else tok
        return " ".join(text.split())
