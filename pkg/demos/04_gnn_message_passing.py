"""Watch attention-weighted messages flow over a small entity subgraph.

Run:  python demos/04_gnn_message_passing.py
"""

import numpy as np

from kgfuse.gnn import attention_weights, gnn_encode, init_gnn
from kgfuse.kg import KnowledgeGraph, NamedRecord, Subgraph, Triplet
from kgfuse.tensor import Parameters, Tensor

entities = {i: NamedRecord(f"node{i}", f"concept number {i}") for i in range(5)}
relations = {0: NamedRecord("linked_to", "generic link"),
             1: NamedRecord("part_of", "containment")}
kg = KnowledgeGraph(entities, relations,
                    [Triplet(0, 0, 1), Triplet(1, 1, 2), Triplet(3, 0, 1)])

params = Parameters()
gp = init_gnn(params, np.random.default_rng(0), kg, d=8, d_e=8, attn_width=8,
              depth=2, description_seed=0)

# A path-ish subgraph: node 4 is isolated and only talks to itself.
sub = Subgraph([0, 1, 2, 3, 4], [True, True, False, False, False],
               [(0, 0, 1), (1, 1, 2), (3, 0, 1)])
emb = Tensor(np.random.default_rng(1).standard_normal((5, 8)))

print("attention over self + incident edges, per node (layer 0):")
for node, weights in enumerate(attention_weights(sub, emb, gp.layers[0], gp)):
    print(f"  node {node}: " + "  ".join(f"{w:.3f}" for w in weights))

out = gnn_encode(sub, emb, gp)
delta = np.linalg.norm(out.data - emb.data, axis=1)
print("\nembedding movement after 2 rounds (L2 per node):")
print("  " + "  ".join(f"{d:.3f}" for d in delta))
print("\nisolated node 4 still moved: the self-loop relation row carries "
      "a message even without neighbors.")
