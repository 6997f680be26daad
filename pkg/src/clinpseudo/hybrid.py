"""Union of rule and model predictions with conflict resolution.

Policy: every entity predicted by either side is output.  When two overlap,
the longer span wins; on identical spans or equal-length partial overlaps the
model wins.  The losing entity is cut back to the part the winner does not
cover (dropped when nothing is left), so the merged output never covers fewer
characters than either input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import Entity, Span, spans_overlap


class InternalOverlap(ValueError):
    def __init__(self, side: str, a: Entity, b: Entity):
        super().__init__(f"{side} predictions overlap: {a} / {b}")
        self.side = side


@dataclass(frozen=True)
class MergePolicy:
    union: bool = True
    overlap_rule: str = "largest-span"
    perfect_overlap_rule: str = "model-label-wins"
    equal_length_rule: str = "model-wins"


POLICY = MergePolicy()

_RULE, _MODEL = 0, 1


@dataclass
class _Item:
    entity: Entity
    side: int
    lineage: tuple[str, ...]


def _check(side: str, ents: Sequence[Entity]) -> None:
    ordered = sorted(ents, key=Entity.sort_key)
    for a, b in zip(ordered, ordered[1:]):
        if spans_overlap(a.span, b.span):
            raise InternalOverlap(side, a, b)


def _lineage_of(e: Entity) -> tuple[str, ...]:
    return e.lineage if e.lineage else (e.source,)


def _resolve(a: _Item, b: _Item) -> tuple[_Item, _Item]:
    """Return (winner, loser) for an overlapping pair."""
    la, lb = len(a.entity), len(b.entity)
    if la != lb:
        return (a, b) if la > lb else (b, a)
    if a.side != b.side:
        return (a, b) if a.side == _MODEL else (b, a)
    return (a, b) if a.entity.sort_key() <= b.entity.sort_key() else (b, a)


def _remainder(loser: Entity, winner: Entity) -> Entity | None:
    if loser.begin < winner.begin:
        span = Span(loser.begin, winner.begin)
    elif loser.end > winner.end:
        span = Span(winner.end, loser.end)
    else:
        return None
    return Entity(span, loser.label, loser.source, loser.lineage, loser.score)


def merge(rule_entities: Sequence[Entity], model_entities: Sequence[Entity]) -> list[Entity]:
    _check("rule", rule_entities)
    _check("model", model_entities)
    items = [_Item(e, _RULE, _lineage_of(e)) for e in rule_entities]
    items += [_Item(e, _MODEL, _lineage_of(e)) for e in model_entities]

    def key(it: _Item):
        return (it.entity.begin, it.entity.end, it.side, it.entity.label.value)

    items.sort(key=key)
    # left-to-right pairwise resolution until no adjacent pair overlaps; after
    # sorting by begin, "no adjacent overlap" means no overlap at all
    changed = True
    while changed:
        changed = False
        for i in range(len(items) - 1):
            a, b = items[i], items[i + 1]
            if not spans_overlap(a.entity.span, b.entity.span):
                continue
            winner, loser = _resolve(a, b)
            rest = _remainder(loser.entity, winner.entity)
            merged_lineage = winner.lineage + tuple(s for s in loser.lineage if s not in winner.lineage)
            new = [_Item(winner.entity, winner.side, merged_lineage)]
            if rest is not None:
                new.append(_Item(rest, loser.side, loser.lineage))
            items[i : i + 2] = new
            items.sort(key=key)
            changed = True
            break

    return [
        Entity(it.entity.span, it.entity.label, "merged", it.lineage, it.entity.score)
        for it in items
    ]
