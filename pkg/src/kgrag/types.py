from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Literal

QueryVariant = Literal["plain", "kg"]


@dataclass(frozen=True)
class ReferenceDoc:
    """A generated pseudo-reference and the verdicts attached to it.

    ``relevance`` is ``None`` until checked; ``factual_score`` is ``None``
    when no extracted triple could be verified.
    """

    text: str
    source_model: str
    query_variant: QueryVariant = "plain"
    relevance: bool | None = None
    factual_score: float | None = None
    turn_added: int = 0
    triples: tuple[tuple[str, str, str], ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return (self.source_model, self.text)

    def with_(self, **changes) -> "ReferenceDoc":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["triples"] = [list(t) for t in self.triples]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceDoc":
        d = dict(d)
        d["triples"] = tuple(tuple(t) for t in d.get("triples", ()))
        return cls(**d)
