"""Test doubles shared across test modules."""

from typing import Dict, Optional, Sequence

import torch
from torch import nn

from lifeseq.core.encoding import LifeSequence
from lifeseq.core.vocabulary import EOL_ID, PAD_ID

CERTAIN, IMPOSSIBLE = 0.0, -1.0e4


class ReplayModel(nn.Module):
    """Predicts the next token of whichever stored sequence matches the input longest.

    Positions past the end of the matched sequence predict EOL. An optional
    replacement map rewrites predicted ids (for example to suppress an event).
    """

    def __init__(
        self,
        sequences: Sequence[LifeSequence],
        vocab_size: int,
        replace: Optional[Dict[int, int]] = None,
        max_len: Optional[int] = None,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.replace = dict(replace or {})
        self.anchor = nn.Parameter(torch.zeros(1))
        width = max(len(s) for s in sequences) + 1
        truths = torch.full((len(sequences), width), EOL_ID, dtype=torch.long)
        for i, seq in enumerate(sequences):
            truths[i, : len(seq)] = torch.tensor(seq.tokens, dtype=torch.long)
        self.register_buffer("truths", truths)

    def _match(self, row: torch.Tensor) -> int:
        length = min(len(row), self.truths.shape[1])
        agree = (self.truths[:, :length] == row[:length]).long()
        common = torch.cumprod(agree, dim=1).sum(dim=1)
        return int(torch.argmax(common))

    def forward(self, token_ids: torch.Tensor, year_index: torch.Tensor, age: torch.Tensor) -> torch.Tensor:
        if token_ids.dim() == 1:
            token_ids = token_ids[None]
        batch, length = token_ids.shape
        logits = torch.full((batch, length, self.vocab_size), IMPOSSIBLE, dtype=torch.float64)
        for b in range(batch):
            truth = self.truths[self._match(token_ids[b])]
            upcoming = torch.full((length,), EOL_ID, dtype=torch.long)
            available = min(length, truth.shape[0] - 1)
            upcoming[:available] = truth[1 : available + 1]
            for old, new in self.replace.items():
                upcoming[upcoming == old] = new
            upcoming[upcoming == PAD_ID] = EOL_ID
            logits[b, torch.arange(length), upcoming] = CERTAIN
        return logits
