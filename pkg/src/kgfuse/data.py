"""Deterministic synthetic corpus: a structured toy KG plus paired images and captions.

The graph is drawn from a latent-factor model (trilinear scores over
latent entity and relation vectors, triplets sampled by a softmax over all
candidate scores), so held-out edges are genuinely predictable rather than
uniform noise.  Each example's image tiles noisy copies of its ground-truth
entities' description embeddings into patch regions, and its caption
contains the matching entity tokens among random filler, so retrieval,
contrast, and masked modeling all have learnable signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .errors import ValidationError
from .kg import KnowledgeGraph, NamedRecord, Triplet
from .retriever import embed_description

_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))
KG_LATENT_DIM = 4
KG_SCORE_TEMPERATURE = 0.5
FILLER_POOL = 32  # distinct filler token types per corpus, Zipf-weighted


def _pseudo_word(rng: np.random.Generator) -> str:
    length = int(rng.integers(3, 9))
    return "".join(_LETTERS[rng.integers(0, 26, size=length)])


def _description(rng: np.random.Generator, words: list[str]) -> str:
    picks = rng.integers(0, len(words), size=6)
    return " ".join(words[i] for i in picks)


@dataclass
class SyntheticCorpus:
    kg: KnowledgeGraph
    images: list[np.ndarray]          # H x W x C arrays
    captions: list[list[int]]         # token ids, CLS first
    ground_truth: list[list[int]]     # entity ids behind each example
    config: Config
    seed: int                         # feeds embed_description; the entity
                                      # memory must be built with this seed

    def __len__(self) -> int:
        return len(self.images)


def entity_token(config: Config, entity_id: int) -> int:
    return Config.RESERVED_TOKENS + entity_id


def generate_kg(config: Config, rng: np.random.Generator) -> KnowledgeGraph:
    """Latent-factor toy graph with config-sized entity/relation/triplet counts."""
    n_e, n_r, n_t = (config.corpus_entities, config.corpus_relations,
                     config.corpus_triplets)
    capacity = n_e * (n_e - 1) * n_r
    if n_t > capacity:
        raise ValidationError(
            f"cannot place {n_t} triplets among {capacity} possible (h, r, t)")

    words = [_pseudo_word(rng) for _ in range(12 * max(4, int(np.sqrt(n_e))))]
    entities = {i: NamedRecord(f"ent_{words[i % len(words)]}_{i}",
                               _description(rng, words)) for i in range(n_e)}
    relations = {i: NamedRecord(f"rel_{words[(7 * i) % len(words)]}_{i}",
                                _description(rng, words)) for i in range(n_r)}

    z = rng.standard_normal((n_e, KG_LATENT_DIM))
    w = rng.standard_normal((n_r, KG_LATENT_DIM))
    # Scores of every ordered (h, r, t) pair with h != t, flattened.
    scores = np.einsum("hl,rl,tl->hrt", z, w, z)
    mask = ~np.eye(n_e, dtype=bool)
    flat_scores = scores.transpose(0, 2, 1)[mask].reshape(-1)
    candidates = np.array([(h, r, t) for h in range(n_e) for t in range(n_e)
                           if h != t for r in range(n_r)], dtype=np.int64)
    logits = flat_scores / KG_SCORE_TEMPERATURE
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    chosen = rng.choice(len(candidates), size=n_t, replace=False, p=probs)
    triplets = [Triplet(int(h), int(r), int(t)) for h, r, t in candidates[sorted(chosen)]]
    return KnowledgeGraph(entities, relations, triplets)


def generate_corpus(config: Config, seed: int | None = None) -> SyntheticCorpus:
    """Build the full corpus; identical seeds give identical corpora."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    kg = generate_kg(config, rng)

    embeddings = {e: embed_description(kg.entities[e].description, config.d_e, seed)
                  for e in kg.entity_ids()}

    p, c = config.patch_size, config.image_c
    grid_rows = config.image_h // p
    grid_cols = config.image_w // p
    n_patches = grid_rows * grid_cols
    entity_ids = kg.entity_ids()

    # Captions mix ground-truth entity tokens with filler drawn from a small
    # Zipf-weighted pool, so the masked-token distribution is learnable.
    filler_lo = Config.RESERVED_TOKENS + config.corpus_entities
    pool_size = min(FILLER_POOL, config.vocab - filler_lo)
    filler_pool = rng.choice(np.arange(filler_lo, config.vocab),
                             size=pool_size, replace=False)
    filler_weights = 1.0 / np.arange(1, pool_size + 1)
    filler_weights /= filler_weights.sum()

    images, captions, ground_truth = [], [], []
    for _ in range(config.corpus_examples):
        gt_idx = rng.choice(len(entity_ids), size=config.entities_per_example,
                            replace=False)
        gt = [entity_ids[i] for i in gt_idx]
        image = np.empty((config.image_h, config.image_w, c))
        for patch in range(n_patches):
            emb = embeddings[gt[patch % len(gt)]]
            tile = np.resize(emb, p * p * c)
            noisy = tile + config.corpus_noise * rng.standard_normal(tile.shape)
            r, col = divmod(patch, grid_cols)
            image[r * p:(r + 1) * p, col * p:(col + 1) * p, :] = \
                noisy.reshape(p, p, c)
        images.append(image)

        length = int(rng.integers(config.caption_min_len, config.caption_max_len + 1))
        body = rng.choice(filler_pool, size=length, p=filler_weights).tolist()
        slots = rng.choice(length, size=min(len(gt), length), replace=False)
        for slot, ent in zip(slots, gt):
            body[slot] = entity_token(config, ent)
        captions.append([Config.CLS_ID] + [int(t) for t in body])
        ground_truth.append(gt)
    return SyntheticCorpus(kg, images, captions, ground_truth, config, seed)


def corpus_memory(corpus: SyntheticCorpus):
    """The entity memory matching a corpus (same description-embedding seed)."""
    from .retriever import build_memory
    return build_memory(corpus.kg, corpus.config.d_e, corpus.seed)


def oracle_patch_projection(config: Config) -> np.ndarray:
    """Linear map recovering an embedding from its cyclically tiled patch.

    Rows of the tiled patch average back into their source coordinates, so
    with zero noise the recovered vector equals the original embedding and
    inner-product retrieval ranks the true entity first.
    """
    rows = config.patch_dim
    cols = config.d_e
    m = np.zeros((rows, cols))
    counts = np.zeros(cols)
    for j in range(rows):
        counts[j % cols] += 1
    for j in range(rows):
        m[j, j % cols] = 1.0 / counts[j % cols]
    return m
