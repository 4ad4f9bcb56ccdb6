"""Pretrain on a small synthetic corpus and watch the four losses fall.

Run:  python demos/06_pretrain_toy.py        (~30 s)
"""

from kgfuse import Config, corpus_memory, generate_corpus
from kgfuse.train import eval_retrieval, pretrain

config = Config(corpus_entities=80, corpus_relations=6, corpus_triplets=320,
                corpus_examples=60, batch_size=6, per_node_cap=6,
                n_negatives=16, steps=80, lr=2e-3, seed=17)
corpus = generate_corpus(config)
memory = corpus_memory(corpus)

result = pretrain(config, corpus)

print("step   mlm    mvm    linkpred  itc    total")
for row in result.metrics[::10] + [result.metrics[-1]]:
    step, mlm, mvm, lp, itc, total = row
    print(f"{step:4d}  {mlm:5.3f}  {mvm:5.3f}  {lp:7.3f}  {itc:5.3f}  {total:6.3f}")

first = sum(r[5] for r in result.metrics[:10]) / 10
last = sum(r[5] for r in result.metrics[-10:]) / 10
print(f"\nmean total, first 10 steps: {first:.3f}")
print(f"mean total, last 10 steps:  {last:.3f}  ({last / first:.2f}x)")

recall = eval_retrieval(result.params, memory, corpus)
print(f"\nground-truth recall@{config.k_final} after training: {recall:.2f}")
