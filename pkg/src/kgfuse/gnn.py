"""Graph-attention message passing over a retrieved entity subgraph.

For each node i the layer scores every incident edge j -> i (plus an
implicit self term) with f_q(e_i)^T f_k(e_j, r_ij) / sqrt(D), normalizes the
scores by softmax, mixes messages f_m(e_j, r_ij), and adds the residual:

    e_i' = f_n(sum_j alpha_ij * f_m(e_j, r_ij)) + e_i

f_k and f_m read the concatenation of the node and relation vectors.  Edges
are typed and directed: every relation owns separate forward and reverse
embedding rows, and a dedicated row serves the self term.  One relation
table is shared by all layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ValidationError
from .kg import DIR_IN, DIR_OUT, KnowledgeGraph, Subgraph
from .retriever import embed_description
from .tensor import Parameters, Tensor

SELF_ROW = 0


@dataclass
class GnnLayerParams:
    f_q_w: Tensor
    f_q_b: Tensor
    f_k_w: Tensor  # (d + d) x D, over concat(node, relation)
    f_k_b: Tensor
    f_m_w: Tensor  # (d + d) x d
    f_m_b: Tensor
    f_n_w: Tensor  # d x d
    f_n_b: Tensor
    attn_width: int


@dataclass
class GnnParams:
    relation_table: Tensor  # (1 + 2 * |relations|) x d; row 0 is the self row
    relation_rows: dict[tuple[int, int], int]
    layers: list[GnnLayerParams]
    width: int


def init_gnn_layer(params: Parameters, prefix: str, rng: np.random.Generator,
                   d: int, attn_width: int) -> GnnLayerParams:
    from .encoders import init_matrix
    return GnnLayerParams(
        f_q_w=params.add(f"{prefix}.f_q_w", Tensor(init_matrix(rng, d, attn_width))),
        f_q_b=params.add(f"{prefix}.f_q_b", Tensor(np.zeros(attn_width))),
        f_k_w=params.add(f"{prefix}.f_k_w", Tensor(init_matrix(rng, 2 * d, attn_width))),
        f_k_b=params.add(f"{prefix}.f_k_b", Tensor(np.zeros(attn_width))),
        f_m_w=params.add(f"{prefix}.f_m_w", Tensor(init_matrix(rng, 2 * d, d))),
        f_m_b=params.add(f"{prefix}.f_m_b", Tensor(np.zeros(d))),
        f_n_w=params.add(f"{prefix}.f_n_w", Tensor(init_matrix(rng, d, d))),
        f_n_b=params.add(f"{prefix}.f_n_b", Tensor(np.zeros(d))),
        attn_width=attn_width)


def init_gnn(params: Parameters, rng: np.random.Generator, kg: KnowledgeGraph,
             d: int, d_e: int, attn_width: int, depth: int,
             description_seed: int) -> GnnParams:
    """Build the shared relation table and the layer stack.

    Forward and reverse rows of each relation start from the same projected
    description embedding and diverge during training; the self row starts
    at zero.
    """
    relation_ids = kg.relation_ids()
    rows = np.zeros((1 + 2 * len(relation_ids), d))
    relation_rows: dict[tuple[int, int], int] = {}
    proj = np.random.default_rng([description_seed, 7]).standard_normal((d_e, d))
    proj /= np.sqrt(d_e)
    for i, rid in enumerate(relation_ids):
        desc = kg.relations[rid].description
        base = embed_description(desc, d_e, description_seed) @ proj
        rows[1 + 2 * i] = base
        rows[2 + 2 * i] = base
        relation_rows[(rid, DIR_OUT)] = 1 + 2 * i
        relation_rows[(rid, DIR_IN)] = 2 + 2 * i
    layers = [init_gnn_layer(params, f"gnn.layer{i}", rng, d, attn_width)
              for i in range(depth)]
    table = params.add("gnn.relation_table", Tensor(rows))
    return GnnParams(table, relation_rows, layers, d)


def relation_embedding(gp: GnnParams, relation_id: int, direction: int) -> Tensor:
    """Trainable embedding row for (relation, direction); row 0 is the self loop."""
    key = (relation_id, direction)
    if key not in gp.relation_rows:
        raise ValidationError(f"relation {relation_id} direction {direction} not in table")
    return T.reshape(T.take_rows(gp.relation_table, [gp.relation_rows[key]]),
                     (gp.width,))


def _edge_lists(sub: Subgraph, gp: GnnParams):
    """Flattened (dst, src, relation-row) arrays: self term first per node."""
    per_node: list[list[tuple[int, int]]] = [[(i, SELF_ROW)] for i in range(sub.num_nodes)]
    for src, dst, rel, direction in sub.edges():
        key = (rel, direction)
        if key not in gp.relation_rows:
            raise ValidationError(f"relation {rel} missing from the GNN table")
        per_node[dst].append((src, gp.relation_rows[key]))
    dst_idx, src_idx, rel_idx, slot_idx = [], [], [], []
    for i, entries in enumerate(per_node):
        for slot, (src, rel_row) in enumerate(entries):
            dst_idx.append(i)
            src_idx.append(src)
            rel_idx.append(rel_row)
            slot_idx.append(slot)
    max_deg = max(len(entries) for entries in per_node)
    return (np.array(dst_idx), np.array(src_idx), np.array(rel_idx),
            np.array(slot_idx), max_deg)


def gnn_layer(sub: Subgraph, embeddings: Tensor, layer: GnnLayerParams,
              gp: GnnParams) -> Tensor:
    """One round of attention-weighted message passing with a residual."""
    k = sub.num_nodes
    if embeddings.shape != (k, gp.width):
        raise ValidationError(
            f"embeddings shape {embeddings.shape} does not match {k} nodes x {gp.width}")
    dst_idx, src_idx, rel_idx, slot_idx, max_deg = _edge_lists(sub, gp)

    src_nodes = T.take_rows(embeddings, src_idx)
    rel_rows = T.take_rows(gp.relation_table, rel_idx)
    pair_input = T.concat([src_nodes, rel_rows], axis=1)

    queries = T.add(T.matmul(embeddings, layer.f_q_w), layer.f_q_b)
    keys = T.add(T.matmul(pair_input, layer.f_k_w), layer.f_k_b)
    logits = T.mul(T.tensor_sum(T.mul(T.take_rows(queries, dst_idx), keys), axis=1),
                   1.0 / np.sqrt(layer.attn_width))

    padded = T.pairs_to_padded(logits, dst_idx, slot_idx, (k, max_deg),
                               fill=-1e30)
    alpha = T.softmax(padded, axis=1)

    messages = T.add(T.matmul(pair_input, layer.f_m_w), layer.f_m_b)
    # Route each message into its (node, slot) cell; padding slots point at a
    # zero row and receive zero attention.
    ext = T.concat([messages, T.constant(np.zeros((1, gp.width)))], axis=0)
    slot_map = np.full((k, max_deg), len(dst_idx), dtype=np.int64)
    slot_map[dst_idx, slot_idx] = np.arange(len(dst_idx))
    routed = T.take_rows(ext, slot_map)  # k x max_deg x d
    weighted = T.mul(routed, T.reshape(alpha, (k, max_deg, 1)))
    aggregated = T.tensor_sum(weighted, axis=1)

    return T.add(T.add(T.matmul(aggregated, layer.f_n_w), layer.f_n_b), embeddings)


def gnn_encode(sub: Subgraph, initial: Tensor, gp: GnnParams) -> Tensor:
    """Apply the full layer stack in order."""
    if not gp.layers:
        raise ValidationError("GNN stack is empty")
    x = initial
    for layer in gp.layers:
        x = gnn_layer(sub, x, layer, gp)
    return x


def attention_weights(sub: Subgraph, embeddings: Tensor, layer: GnnLayerParams,
                      gp: GnnParams) -> list[np.ndarray]:
    """Per-node softmax weights over self + incident edges (for invariants)."""
    dst_idx, src_idx, rel_idx, slot_idx, _ = _edge_lists(sub, gp)
    e = embeddings.data
    table = gp.relation_table.data
    pair = np.concatenate([e[src_idx], table[rel_idx]], axis=1)
    q = e @ layer.f_q_w.data + layer.f_q_b.data
    kx = pair @ layer.f_k_w.data + layer.f_k_b.data
    logits = (q[dst_idx] * kx).sum(axis=1) / np.sqrt(layer.attn_width)
    weights = []
    for i in range(sub.num_nodes):
        li = logits[dst_idx == i]
        ex = np.exp(li - li.max())
        weights.append(ex / ex.sum())
    return weights
