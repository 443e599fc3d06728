"""Concept-token vocabulary: string/id bijection partitioned by token category."""

import json
import re
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from .quantization import INTENSITY_LEVELS, N_INCOME_BINS
from .schema import (
    MAX_BIRTH_YEAR,
    MIN_BIRTH_YEAR,
    N_AREAS,
    N_FIRM_SIZES,
    N_PROVINCES,
    N_TITLES,
    SECTOR_CODES,
    STATUS_NAMES,
)

SPECIAL_TOKENS = ("PAD", "UNK", "BOL", "EOL", "EOY", "MASK", "SEP", "CLS", "RES_1", "RES_2", "RES_3")
PAD_ID, UNK_ID, BOL_ID, EOL_ID, EOY_ID = 0, 1, 2, 3, 4

TOKEN_CATEGORIES = (
    "special",
    "background",
    "month",
    "type",
    "duration",
    "income",
    "sector",
    "title",
    "firm_size",
    "province",
    "part_full",
    "intensity_work",
    "intensity_maternity",
    "intensity_sick",
)

_PREFIX_CATEGORIES = (
    ("MONTH_", "month"),
    ("TYPE_", "type"),
    ("DUR_", "duration"),
    ("INCOME_", "income"),
    ("ATE_", "sector"),
    ("WRKT_", "title"),
    ("FSIZE_", "firm_size"),
    ("WRKP_", "province"),
    ("WRKINT_", "intensity_work"),
    ("MATINT_", "intensity_maternity"),
    ("SIKINT_", "intensity_sick"),
    ("YEAR_", "background"),
)
_AREA_PATTERN = re.compile(r"^A\d+$")


def token_category(token: str) -> str:
    """Category of a token string.

    Raises:
        ValueError: If the string matches no category
    """
    if token in SPECIAL_TOKENS:
        return "special"
    if token in ("F", "M") or _AREA_PATTERN.match(token):
        return "background"
    if token in ("PART_TIME", "FULL_TIME"):
        return "part_full"
    for prefix, category in _PREFIX_CATEGORIES:
        if token.startswith(prefix):
            return category
    raise ValueError(f"unrecognised token {token!r}")


def natural_key(token: str) -> list:
    """Sort key that orders embedded integers numerically (MONTH_2 before MONTH_10)."""
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", token)]


def _sort_key(token: str) -> tuple:
    return (TOKEN_CATEGORIES.index(token_category(token)), natural_key(token))


ALWAYS_PRESENT = tuple(f"MONTH_{m}" for m in range(1, 13)) + tuple(f"DUR_{d}" for d in range(1, 13))


def schema_category_counts() -> Dict[str, int]:
    """Number of distinct token strings the full schema can produce, per category."""
    n_intensity = len(INTENSITY_LEVELS)
    return {
        "special": len(SPECIAL_TOKENS),
        "background": N_AREAS + 2 + (MAX_BIRTH_YEAR - MIN_BIRTH_YEAR + 1),
        "month": 12,
        "type": len(STATUS_NAMES),
        "duration": 12,
        "income": N_INCOME_BINS,
        "sector": len(SECTOR_CODES),
        "title": N_TITLES,
        "firm_size": N_FIRM_SIZES,
        "province": N_PROVINCES,
        "part_full": 2,
        "intensity_work": n_intensity,
        "intensity_maternity": n_intensity,
        "intensity_sick": n_intensity,
    }


class Vocabulary:
    """Immutable bijection between token strings and integer ids.

    Ids are assigned specials first (PAD = 0), then by category in
    TOKEN_CATEGORIES order, naturally sorted within each category.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens in canonical order")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._tokens: List[str] = tokens
        self._ids: Dict[str, int] = {t: i for i, t in enumerate(tokens)}
        self._categories: List[str] = [token_category(t) for t in tokens]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def id(self, token: str) -> int:
        """Id of a token string; unseen strings map to UNK."""
        return self._ids.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> List[int]:
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def token(self, token_id: int) -> str:
        """Token string of an id.

        Raises:
            ValueError: If the id is out of range
        """
        if not 0 <= token_id < len(self._tokens):
            raise ValueError(f"token id {token_id} outside vocabulary of size {len(self)}")
        return self._tokens[token_id]

    def category(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise ValueError(f"token id {token_id} outside vocabulary of size {len(self)}")
        return self._categories[token_id]

    def ids_in_category(self, category: str) -> List[int]:
        return [i for i, c in enumerate(self._categories) if c == category]

    def to_dict(self) -> dict:
        return {
            "tokens": {t: i for i, t in enumerate(self._tokens)},
            "categories": {str(i): c for i, c in enumerate(self._categories)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        mapping = data["tokens"]
        ordered = sorted(mapping.items(), key=lambda item: item[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        return cls([t for t, _ in ordered])

    def save(self, path: str) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return out

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        vocab_path = Path(path)
        if not vocab_path.exists():
            raise FileNotFoundError(f"Vocabulary file not found: {path}")
        with open(vocab_path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def build_vocabulary_from_tokens(streams: Iterable[Iterable[str]]) -> Vocabulary:
    """Build a vocabulary from training token streams.

    Raises:
        ValueError: If no streams are given
    """
    observed = set()
    n_streams = 0
    for stream in streams:
        n_streams += 1
        observed.update(stream)
    if n_streams == 0:
        raise ValueError("cannot build a vocabulary from an empty population")
    observed.difference_update(SPECIAL_TOKENS)
    observed.update(ALWAYS_PRESENT)
    return Vocabulary(list(SPECIAL_TOKENS) + sorted(observed, key=_sort_key))
