"""Token vocabulary shared by the decoder, the table encoder and the inference network."""
from collections import Counter
from typing import Dict, Iterable, List, Sequence

import torch

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"
EOS = "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(SPECIALS)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        """Words sorted by frequency, then alphabetically (stable across runs)."""
        counts = Counter(t for s in sentences for t in s)
        words = sorted((w for w, n in counts.items() if n >= min_count), key=lambda w: (-counts[w], w))
        return cls(words)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    def encode(self, tokens: Sequence[str]) -> List[int]:
        unk = self.unk_id
        return [self.stoi.get(t, unk) for t in tokens]

    def tensor(self, tokens: Sequence[str]) -> torch.Tensor:
        return torch.tensor(self.encode(tokens), dtype=torch.long)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.itos[int(i)] for i in ids]

    def oov_rate(self, sentences: Iterable[Sequence[str]]) -> float:
        total = oov = 0
        for s in sentences:
            total += len(s)
            oov += sum(1 for t in s if t not in self.stoi)
        return oov / total if total else 0.0

    def to_list(self) -> List[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if tuple(itos[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary list must start with the special tokens")
        return cls(itos[len(SPECIALS):])
