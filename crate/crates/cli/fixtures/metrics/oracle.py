"""Independent reference values for the metric fixture (linear gain,
log2(rank + 1) discount, relevance threshold 2 for MRR and AP)."""

import math
from collections import defaultdict

run = defaultdict(list)
for line in open("run.txt"):
    q, _, d, _, s, _ = line.split()
    run[q].append((-float(s), d))
qrels = defaultdict(dict)
for line in open("qrels.txt"):
    q, _, d, g = line.split()
    qrels[q][d] = int(g)

def ndcg(r, g, k):
    dcg = sum(g.get(d, 0) / math.log2(i + 2) for i, d in enumerate(r[:k]))
    ideal = sorted((x for x in g.values() if x > 0), reverse=True)[:k]
    idcg = sum(x / math.log2(i + 2) for i, x in enumerate(ideal))
    return dcg / idcg

def mrr(r, g, k, t=2):
    for i, d in enumerate(r[:k]):
        if g.get(d, 0) >= t:
            return 1 / (i + 1)
    return 0.0

def ap(r, g, k, t=2):
    rel = sum(1 for x in g.values() if x >= t)
    if rel == 0:
        return 0.0
    hits, total = 0, 0.0
    for i, d in enumerate(r[:k]):
        if g.get(d, 0) >= t:
            hits += 1
            total += hits / (i + 1)
    return total / rel

evaluated = sorted(q for q, g in qrels.items() if any(x >= 1 for x in g.values()))
for name, f, k in [("ndcg@10", ndcg, 10), ("mrr@10", mrr, 10), ("map@100", ap, 100)]:
    vals = {}
    for q in evaluated:
        ranking = [d for _, d in sorted(run.get(q, []))]
        vals[q] = f(ranking, qrels[q], k)
    for q, v in vals.items():
        print(f"{name}\t{q}\t{v:.12f}")
    print(f"{name}\tall\t{sum(vals.values()) / len(vals):.12f}")
