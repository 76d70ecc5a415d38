"""Regenerates the toy corpus in this directory.

Documents belong to topics; each document is split into passages `D<n>#<p>`.
Two encoders see the same text with different term weights. Six reranker
score files cover every (query, passage) pair with topic-aware noisy scores.
"""

import json
import random
from pathlib import Path

HERE = Path(__file__).parent
TOPICS = 6
DOCS_PER_TOPIC = 8
PASSAGES = 3
QUERIES = 12
RERANKERS = ["debertav2", "debertav3", "electra", "t0pp", "albert", "roberta"]


def topic_vocab(t):
    return [f"t{t}w{i}" for i in range(10)]


COMMON = [f"c{i}" for i in range(20)]


def encode(terms, rng, scale):
    vec = {}
    for term in terms:
        vec[term] = vec.get(term, 0.0) + rng.uniform(0.2, 1.0) * scale
    return {t: round(w, 3) for t, w in sorted(vec.items())}


def main():
    rng = random.Random(7)
    passages = []
    for t in range(TOPICS):
        vocab = topic_vocab(t)
        for d in range(DOCS_PER_TOPIC):
            doc = f"D{t * DOCS_PER_TOPIC + d}"
            for p in range(PASSAGES):
                terms = rng.sample(vocab, 3) + rng.sample(COMMON, 3)
                passages.append((f"{doc}#{p}", t, terms))

    queries = []
    for q in range(QUERIES):
        t = q % TOPICS
        queries.append((f"q{q}", t, rng.sample(topic_vocab(t), 2) + rng.sample(COMMON, 1)))

    for model, scale in [("edistil", 1.0), ("sdistil", 1.3)]:
        mrng = random.Random(f"{model}")
        out = HERE / model
        out.mkdir(exist_ok=True)
        with open(out / "docs.jsonl", "w") as f:
            for pid, _, terms in passages:
                f.write(json.dumps({"id": pid, "vector": encode(terms, mrng, scale)}) + "\n")
        with open(out / "queries.jsonl", "w") as f:
            for qid, _, terms in queries:
                f.write(json.dumps({"id": qid, "vector": encode(terms, mrng, scale)}) + "\n")

    rr = HERE / "rerankers"
    rr.mkdir(exist_ok=True)
    for name in RERANKERS:
        nrng = random.Random(name)
        with open(rr / f"{name}.scores", "w") as f:
            for qid, qt, qterms in queries:
                for pid, pt, pterms in passages:
                    base = 2.0 * (pt == qt) + 0.5 * len(set(qterms) & set(pterms))
                    f.write(f"{qid} Q0 {pid} 0 {base + nrng.gauss(0, 0.8):.4f} {name}\n")

    with open(HERE / "qrels.txt", "w") as f:
        for qid, qt, qterms in queries:
            for t in range(TOPICS):
                for d in range(DOCS_PER_TOPIC):
                    doc = t * DOCS_PER_TOPIC + d
                    if t == qt:
                        grade = 1 + rng.randrange(3)
                    elif rng.random() < 0.1:
                        grade = 0
                    else:
                        continue
                    f.write(f"{qid} 0 D{doc} {grade}\n")


if __name__ == "__main__":
    main()
