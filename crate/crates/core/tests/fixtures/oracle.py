"""Reference values for the 8-document fixture.

Independent re-derivation of the evaluation run (BM25 scorer, greedy sentence
explainer) working directly on token lists. Writes expected.json next to this
file. Run: python3 oracle.py
"""
import itertools
import json
import math
import re
from pathlib import Path

HERE = Path(__file__).parent
STOPWORDS = {
    l.strip().lower()
    for l in (HERE / "../../data/stopwords_en.txt").read_text().splitlines()
    if l.strip() and not l.startswith("#")
}
K, M, FID_M_MAX = 5, 2, 2
K1, B = 1.2, 0.75


def tokens(text):
    out, cur = [], []
    for ch in text:
        if ch.isalnum():
            cur.append(ch.lower())
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def sentences(text):
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+(?=[A-Z0-9])", text.strip()) if s.strip()]


corpus = {}
for line in (HERE / "corpus.jsonl").read_text().splitlines():
    rec = json.loads(line)
    corpus[rec["id"]] = rec["text"]
queries = dict(l.split("\t", 1) for l in (HERE / "queries.tsv").read_text().splitlines())
grades = {}
for l in (HERE / "qrels.txt").read_text().splitlines():
    q, _, d, g = l.split()
    grades.setdefault(q, {})[d] = int(g)
passages, spans = {}, {}
for l in (HERE / "subdoc.jsonl").read_text().splitlines():
    r = json.loads(l)
    passages[(r["query_id"], r["doc_id"])] = r["passages"]
for l in (HERE / "human_spans.jsonl").read_text().splitlines():
    r = json.loads(l)
    spans[(r["query_id"], r["doc_id"])] = r["spans"]

N = len(corpus)
doc_tokens = {d: tokens(t) for d, t in corpus.items()}
avgdl = sum(len(t) for t in doc_tokens.values()) / N
df = {}
for toks in doc_tokens.values():
    for t in set(toks):
        df[t] = df.get(t, 0) + 1


def bm25(query, toks):
    score = 0.0
    seen = []
    for t in tokens(query):
        if t not in seen:
            seen.append(t)
    for t in seen:
        tf = toks.count(t)
        if tf == 0:
            continue
        n = df.get(t, 0)
        idf = math.log((N - n + 0.5) / (n + 0.5) + 1.0)
        score += idf * tf * (K1 + 1) / (tf + K1 * (1 - B + B * len(toks) / avgdl))
    return score


def sent_tokens(doc):
    return [tokens(s) for s in sentences(corpus[doc])]


def keep(doc, removed):
    st = sent_tokens(doc)
    return [t for i, s in enumerate(st) if i not in removed for t in s]


def greedy(query, doc, m):
    sents = sentences(corpus[doc])
    base = bm25(query, doc_tokens[doc])
    if base == 0:
        return list(range(min(m, len(sents)))), True, False
    removed, remaining, picks = [], list(range(len(sents))), []
    resid = base
    truncated = False
    while len(picks) < m and remaining:
        if resid == 0:
            truncated = True
            picks.extend(remaining[: m - len(picks)])
            break
        scores = [bm25(query, keep(doc, set(removed + [r]))) for r in remaining]
        best = min(range(len(scores)), key=lambda i: (scores[i], i))
        chosen = remaining.pop(best)
        picks.append(chosen)
        removed.append(chosen)
        resid = scores[best]
    return picks, False, truncated


def tau_a(order_a, order_b):
    pos = {d: i for i, d in enumerate(order_b)}
    c = d = 0
    for i, j in itertools.combinations(range(len(order_a)), 2):
        if pos[order_a[i]] < pos[order_a[j]]:
            c += 1
        else:
            d += 1
    return (c - d) / (c + d)


def cosine(a, b):
    va, vb = {}, {}
    for t in tokens(a):
        if t not in STOPWORDS:
            va[t] = va.get(t, 0) + 1
    for t in tokens(b):
        if t not in STOPWORDS:
            vb[t] = vb.get(t, 0) + 1
    if not va or not vb:
        return 0.0
    dot = sum(x * vb.get(t, 0) for t, x in va.items())
    return min(1.0, dot / math.sqrt(sum(x * x for x in va.values()) * sum(x * x for x in vb.values())))


def ndcg(q, ranked):
    g = grades.get(q, {})
    ideal = sorted((v for v in g.values() if v > 0), reverse=True)
    if not ideal:
        return 0.0
    idcg = sum((2**v - 1) / math.log2(i + 2) for i, v in enumerate(ideal[:K]))
    dcg = sum((2 ** g.get(d, 0) - 1) / math.log2(i + 2) for i, d in enumerate(ranked[:K]))
    return dcg / idcg


def mean(xs):
    return sum(xs) / len(xs)


per_query = []
for q in sorted(queries):
    text = queries[q]
    scored = [(d, bm25(text, doc_tokens[d])) for d in sorted(corpus)]
    scored = [(d, s) for d, s in scored if any(t in doc_tokens[d] for t in tokens(text))]
    ranked = [d for d, _ in sorted(scored, key=lambda x: (-x[1], x[0]))][:K]
    expl = {d: greedy(text, d, M) for d in ranked}

    pseudo = {}
    for d in ranked:
        picks, degenerate, _ = expl[d]
        if degenerate:
            continue
        st = sent_tokens(d)
        pseudo[d] = bm25(text, [t for i in sorted(picks) for t in st[i]])
    live = [d for d in ranked if d in pseudo]
    rerank = sorted(live, key=lambda d: (-pseudo[d], d))
    tau = tau_a(live, rerank) if len(live) >= 2 else None

    mer_sum = 0.0
    for d in ranked:
        ps = passages.get((q, d), [])
        sents = sentences(corpus[d])
        for i in expl[d][0][:M]:
            mer_sum += max((cosine(sents[i], p) for p in ps), default=0.0)
    mer_q = mer_sum / (M * K)

    jac = []
    for d in ranked:
        sents = sentences(corpus[d])
        e = {t for i in expl[d][0] for t in tokens(sents[i])}
        h = {t for s in spans.get((q, d), []) for t in tokens(s)}
        jac.append(len(e & h) / len(e | h) if h else 0.0)

    cs, fids = [], []
    for d in ranked:
        picks, degenerate, _ = expl[d]
        base = bm25(text, doc_tokens[d])
        if degenerate or base == 0:
            continue
        rel, fid = [], {j: None for j in range(len(picks))}
        for size in range(1, min(FID_M_MAX, len(picks)) + 1):
            for combo in itertools.combinations(range(len(picks)), size):
                s = bm25(text, keep(d, {picks[j] for j in combo})) / base
                rel.append(s)
                for j in combo:
                    f = 1 - s
                    fid[j] = f if fid[j] is None else max(fid[j], f)
        cs.append(mean(rel))
        fids.append(mean([v for v in fid.values() if v is not None]))

    per_query.append(
        {
            "query_id": q,
            "ranked": ranked,
            "rationales": {d: [sentences(corpus[d])[i] for i in expl[d][0]] for d in ranked},
            "ndcg": ndcg(q, ranked),
            "mrc": tau,
            "mer": mer_q,
            "s_c": mean(cs),
            "fidelity": mean(fids),
            "jaccard": mean(jac),
        }
    )

agg = {}
for key in ["ndcg", "mrc", "mer", "s_c", "fidelity", "jaccard"]:
    vals = [p[key] for p in per_query if p[key] is not None]
    agg[key] = mean(vals)
out = {"k": K, "m": M, "fidelity_m_max": FID_M_MAX, "per_query": per_query, "aggregate": agg}
(HERE / "expected.json").write_text(json.dumps(out, indent=2) + "\n")
print(json.dumps(agg, indent=2))
