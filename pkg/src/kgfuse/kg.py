"""Knowledge graph loading, indexing, sampling, and subgraph expansion.

The on-disk format is three UTF-8 TSV files: ``entities.tsv`` and
``relations.tsv`` with ``id<TAB>name<TAB>description`` rows, and
``triplets.tsv`` with ``head_id<TAB>relation_id<TAB>tail_id`` rows.  Ids are
decimal u64; fields must not contain tabs or newlines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ValidationError

# Edge direction flags as seen from an entity's adjacency list:
# OUT means the entity is the head of the triplet, IN means it is the tail.
DIR_OUT = 0
DIR_IN = 1

_MAX_U64 = 2 ** 64 - 1


class Triplet(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class NamedRecord:
    name: str
    description: str


class KnowledgeGraph:
    """Immutable multi-relational graph with a bidirectional adjacency index."""

    def __init__(self, entities: dict[int, NamedRecord],
                 relations: dict[int, NamedRecord],
                 triplets: list[Triplet]):
        self.entities = dict(entities)
        self.relations = dict(relations)
        self.triplets = [Triplet(*t) for t in triplets]
        self._triplet_set = set(self.triplets)
        if len(self._triplet_set) != len(self.triplets):
            raise ValidationError("duplicate triplets in knowledge graph")
        for i, t in enumerate(self.triplets):
            if t.head not in self.entities:
                raise ValidationError(f"triplet {i}: unknown head entity {t.head}")
            if t.tail not in self.entities:
                raise ValidationError(f"triplet {i}: unknown tail entity {t.tail}")
            if t.relation not in self.relations:
                raise ValidationError(f"triplet {i}: unknown relation {t.relation}")
        adjacency: dict[int, list[tuple[int, int, int]]] = {e: [] for e in self.entities}
        for t in self.triplets:
            adjacency[t.head].append((t.relation, t.tail, DIR_OUT))
            adjacency[t.tail].append((t.relation, t.head, DIR_IN))
        for entries in adjacency.values():
            entries.sort(key=lambda rec: (rec[1], rec[0], rec[2]))
        self._adjacency = adjacency

    # ---- queries ----------------------------------------------------------

    def entity_ids(self) -> list[int]:
        return sorted(self.entities)

    def relation_ids(self) -> list[int]:
        return sorted(self.relations)

    def has_triplet(self, triplet: Triplet) -> bool:
        return Triplet(*triplet) in self._triplet_set

    def neighbors(self, entity: int) -> list[tuple[int, int, int]]:
        """All (relation, neighbor, direction) records incident to ``entity``.

        Sorted by neighbor id, then relation id, then direction, so the
        order is deterministic; both outgoing and incoming edges appear.
        """
        if entity not in self.entities:
            raise ValidationError(f"unknown entity {entity}")
        return list(self._adjacency[entity])

    def __len__(self) -> int:
        return len(self.entities)


@dataclass
class Subgraph:
    """A locally indexed neighborhood extracted around seed entities.

    ``entity_ids[i]`` is the global id of local node ``i``; seeds come
    first, in their given order.  ``triplets_local`` lists each contained
    triplet once as (head_local, relation_id, tail_local).  Self-loops are
    never stored; message passing adds an implicit self term instead.
    """

    entity_ids: list[int]
    seed_flags: list[bool]
    triplets_local: list[tuple[int, int, int]]
    _local: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._local:
            self._local = {e: i for i, e in enumerate(self.entity_ids)}

    @property
    def num_nodes(self) -> int:
        return len(self.entity_ids)

    @property
    def seed_locals(self) -> list[int]:
        return [i for i, s in enumerate(self.seed_flags) if s]

    def local_index(self, entity: int) -> int:
        try:
            return self._local[entity]
        except KeyError:
            raise ValidationError(f"entity {entity} not in subgraph") from None

    def __contains__(self, entity: int) -> bool:
        return entity in self._local

    def edges(self) -> list[tuple[int, int, int, int]]:
        """Directed message edges (src_local, dst_local, relation, direction).

        Every triplet yields two entries: head-to-tail tagged DIR_OUT and
        tail-to-head tagged DIR_IN, so each node sees all incident edges.
        """
        out = []
        for h, r, t in self.triplets_local:
            out.append((h, t, r, DIR_OUT))
            out.append((t, h, r, DIR_IN))
        return out

    def triplets_global(self) -> list[Triplet]:
        ids = self.entity_ids
        return [Triplet(ids[h], r, ids[t]) for h, r, t in self.triplets_local]

    def with_triplets(self, triplets_local: list[tuple[int, int, int]]) -> "Subgraph":
        """Same nodes, different edge set (used to drop held-out edges)."""
        return Subgraph(self.entity_ids, self.seed_flags, list(triplets_local),
                        dict(self._local))


@dataclass
class EdgeHoldout:
    """A disjoint split of a graph's triplets into visible and held-out sets."""

    visible: KnowledgeGraph
    held_out: list[Triplet]
    drop_rate: float


# ---- TSV ingestion -----------------------------------------------------------


def _parse_id(text: str, path: str, line_no: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ValidationError(f"{path}:{line_no}: non-integer id {text!r}") from None
    if not (0 <= value <= _MAX_U64):
        raise ValidationError(f"{path}:{line_no}: id {value} outside u64 range")
    return value


def _load_records(path: str | Path) -> dict[int, NamedRecord]:
    records: dict[int, NamedRecord] = {}
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(
                    f"{path}:{line_no}: expected 3 tab-separated fields, got {len(parts)}")
            rec_id = _parse_id(parts[0], str(path), line_no)
            if rec_id in records:
                raise ValidationError(f"{path}:{line_no}: duplicate id {rec_id}")
            records[rec_id] = NamedRecord(parts[1], parts[2])
    return records


def load_kg(entities_path, relations_path, triplets_path) -> KnowledgeGraph:
    """Load and fully index a knowledge graph from three TSV files."""
    entities = _load_records(entities_path)
    relations = _load_records(relations_path)

    triplets: list[Triplet] = []
    seen: set[Triplet] = set()
    tpath = Path(triplets_path)
    with open(tpath, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(
                    f"{tpath}:{line_no}: expected 3 tab-separated fields, got {len(parts)}")
            h = _parse_id(parts[0], str(tpath), line_no)
            r = _parse_id(parts[1], str(tpath), line_no)
            t = _parse_id(parts[2], str(tpath), line_no)
            if h not in entities:
                raise ValidationError(f"{tpath}:{line_no}: unknown head entity {h}")
            if r not in relations:
                raise ValidationError(f"{tpath}:{line_no}: unknown relation {r}")
            if t not in entities:
                raise ValidationError(f"{tpath}:{line_no}: unknown tail entity {t}")
            trip = Triplet(h, r, t)
            if trip in seen:
                raise ValidationError(f"{tpath}:{line_no}: duplicate triplet {trip}")
            seen.add(trip)
            triplets.append(trip)
    return KnowledgeGraph(entities, relations, triplets)


def _check_field(text: str, what: str) -> str:
    if "\t" in text or "\n" in text or "\r" in text:
        raise ValidationError(f"{what} contains a tab or newline: {text!r}")
    return text


def save_kg(kg: KnowledgeGraph, entities_path, relations_path, triplets_path) -> None:
    """Write a graph back to the three-file TSV format (ids ascending)."""
    with open(entities_path, "w", encoding="utf-8") as fh:
        for eid in sorted(kg.entities):
            rec = kg.entities[eid]
            fh.write(f"{eid}\t{_check_field(rec.name, 'entity name')}\t"
                     f"{_check_field(rec.description, 'entity description')}\n")
    with open(relations_path, "w", encoding="utf-8") as fh:
        for rid in sorted(kg.relations):
            rec = kg.relations[rid]
            fh.write(f"{rid}\t{_check_field(rec.name, 'relation name')}\t"
                     f"{_check_field(rec.description, 'relation description')}\n")
    with open(triplets_path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triplets:
            fh.write(f"{h}\t{r}\t{t}\n")


# ---- sampling operations -------------------------------------------------------


def neighbors(kg: KnowledgeGraph, entity: int) -> list[tuple[int, int, int]]:
    return kg.neighbors(entity)


def expand_subgraph(kg: KnowledgeGraph, seeds: list[int], per_node_cap: int,
                    seed: int) -> Subgraph:
    """Seeds plus up to ``per_node_cap`` sampled one-hop neighbors per seed.

    Neighbors are sampled without replacement per seed with the given RNG
    seed; the edge set is every graph triplet whose endpoints both landed in
    the node set.  Local indices follow insertion order, seeds first.
    """
    if not seeds:
        raise ValidationError("expand_subgraph requires at least one seed")
    if per_node_cap < 1:
        raise ValidationError("per_node_cap must be >= 1")
    ordered: list[int] = []
    for s in seeds:
        if s not in kg.entities:
            raise ValidationError(f"unknown seed entity {s}")
        if s not in ordered:
            ordered.append(s)

    rng = np.random.default_rng(seed)
    nodes = list(ordered)
    node_set = set(nodes)
    for s in ordered:
        candidates = sorted({nbr for _, nbr, _ in kg.neighbors(s)})
        if len(candidates) > per_node_cap:
            picked_idx = rng.choice(len(candidates), size=per_node_cap, replace=False)
            picked = [candidates[i] for i in sorted(picked_idx)]
        else:
            picked = candidates
        for nbr in picked:
            if nbr not in node_set:
                node_set.add(nbr)
                nodes.append(nbr)

    local = {e: i for i, e in enumerate(nodes)}
    triplets_local = [(local[h], r, local[t]) for h, r, t in kg.triplets
                      if h in node_set and t in node_set]
    flags = [i < len(ordered) for i in range(len(nodes))]
    return Subgraph(nodes, flags, triplets_local, local)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def holdout_edges(kg: KnowledgeGraph, drop_rate: float, seed: int) -> EdgeHoldout:
    """Uniformly hold out round(drop_rate * |triplets|) edges from the graph."""
    if not (0.0 < drop_rate < 1.0):
        raise ValidationError(f"drop_rate must be in (0,1), got {drop_rate}")
    n = len(kg.triplets)
    k = _round_half_up(drop_rate * n)
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(n, size=k, replace=False).tolist())
    held = [kg.triplets[i] for i in sorted(chosen)]
    visible = [t for i, t in enumerate(kg.triplets) if i not in chosen]
    return EdgeHoldout(KnowledgeGraph(kg.entities, kg.relations, visible), held, drop_rate)


def split_triplet_list(triplets: list, drop_rate: float, seed: int):
    """(kept, held_out) split of an arbitrary triplet list at the same rate rule."""
    if not (0.0 < drop_rate < 1.0):
        raise ValidationError(f"drop_rate must be in (0,1), got {drop_rate}")
    n = len(triplets)
    k = _round_half_up(drop_rate * n)
    if n == 0 or k == 0:
        return list(triplets), []
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(n, size=k, replace=False).tolist())
    kept = [t for i, t in enumerate(triplets) if i not in chosen]
    held = [triplets[i] for i in sorted(chosen)]
    return kept, held


def sample_negatives(kg: KnowledgeGraph, positive: Triplet, n: int,
                     seed: int, max_retries: int = 1000) -> list[Triplet]:
    """Corrupt head or tail (fair coin each sample) with a uniform entity.

    Corruptions that reproduce a positive triplet of ``kg`` are resampled;
    after ``max_retries`` failures for a single sample the graph is deemed
    too dense and an error is raised.  The relation is never touched.
    """
    if n < 1:
        raise ValidationError("negative sample count must be >= 1")
    positive = Triplet(*positive)
    rng = np.random.default_rng(seed)
    ids = kg.entity_ids()
    out: list[Triplet] = []
    for _ in range(n):
        for attempt in range(max_retries + 1):
            if attempt == max_retries:
                raise ValidationError(
                    f"no valid negative found for {positive} after {max_retries} retries")
            corrupt_head = bool(rng.integers(0, 2))
            replacement = ids[int(rng.integers(0, len(ids)))]
            if corrupt_head:
                candidate = Triplet(replacement, positive.relation, positive.tail)
            else:
                candidate = Triplet(positive.head, positive.relation, replacement)
            if not kg.has_triplet(candidate):
                out.append(candidate)
                break
    return out
