"""Ranking metrics, non-neural baselines, and evaluation report IO.

Hit ratio is truncated recall: hits / min(N, |truth|). NDCG uses binary
relevance with a log2(position + 2) discount. Novelty is smoothed
self-information of item popularity counted strictly before the scored
interval; diversity is the mean pairwise topical dissimilarity of the
recommended list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EVAL_HEADER = "variant,interval,user,N,hr,ndcg,novelty,diversity"
AGG_HEADER = "variant,N,rows,hr,ndcg,novelty,diversity"


@dataclass
class EvalRow:
    variant: str
    interval: int
    user: int
    n: int
    hr: float
    ndcg: float
    novelty: float
    diversity: float


def hit_ratio(topn, truth) -> float:
    """|topn intersect truth| / min(len(topn), |truth|)."""
    truth = set(truth)
    if not truth:
        raise ValueError("ground-truth set is empty; caller must skip this user")
    hits = len(set(topn) & truth)
    return hits / min(len(topn), len(truth))


def ndcg(topn, truth) -> float:
    """Binary-relevance normalized discounted cumulative gain."""
    truth = set(truth)
    if not truth:
        raise ValueError("ground-truth set is empty; caller must skip this user")
    dcg = sum(1.0 / np.log2(pos + 2.0) for pos, item in enumerate(topn) if item in truth)
    ideal_len = min(len(topn), len(truth))
    idcg = sum(1.0 / np.log2(pos + 2.0) for pos in range(ideal_len))
    return float(dcg / idcg)


def novelty(topn, popularity_counts) -> float:
    """Mean self-information -log2((count+1) / (total+M)) over the list."""
    counts = np.asarray(popularity_counts, dtype=float)
    total = counts.sum()
    m = counts.shape[0]
    vals = [-np.log2((counts[i] + 1.0) / (total + m)) for i in topn]
    return float(np.mean(vals))


def _cosine(a, b) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def diversity(topn, item_topics) -> float:
    """Mean pairwise (1 - cosine) over the list's item topic vectors."""
    if len(topn) < 2:
        raise ValueError("diversity needs at least two items")
    vals = []
    for a in range(len(topn)):
        for b in range(a + 1, len(topn)):
            vals.append(1.0 - _cosine(item_topics[topn[a]], item_topics[topn[b]]))
    return float(np.clip(np.mean(vals), 0.0, 1.0))


def counts_before(dataset, t) -> np.ndarray:
    """Per-item interaction counts over all users, intervals strictly < t."""
    counts = np.zeros(dataset.num_items)
    for u in dataset.user_ids():
        for s in range(t):
            for item in dataset.interactions_at(u, s):
                counts[item] += 1.0
    return counts


def _rank_by_count(counts, n):
    ids = np.arange(counts.shape[0])
    order = np.lexsort((ids, -counts))
    return ids[order[:n]].tolist()


def baseline_timepop(dataset, t, n) -> list[int]:
    """Most popular n items of interval t-1; identical for every user."""
    if t < 1:
        raise ValueError("timepop needs t >= 1")
    counts = np.zeros(dataset.num_items)
    for u in dataset.user_ids():
        for item in dataset.interactions_at(u, t - 1):
            counts[item] += 1.0
    return _rank_by_count(counts, n)


def interaction_history_matrix(dataset, t, users) -> np.ndarray:
    """Binary (len(users), M) matrix of interactions strictly before t."""
    mat = np.zeros((len(users), dataset.num_items))
    for row, u in enumerate(users):
        for s in range(t):
            for item in dataset.interactions_at(u, s):
                mat[row, item] = 1.0
    return mat


def baseline_tbknn(dataset, t, user, n, k_values, counters=None) -> dict[int, list[int]]:
    """Time-biased KNN lists, one per neighborhood size K.

    Neighbors are ranked by cosine similarity over full binary histories
    up to t (ties by ascending user id); each K pools the neighbors'
    interval t-1 interactions and ranks items by pooled count, ties by
    id. Metrics downstream are computed per K and averaged. K larger
    than the number of other users is clipped (counted).
    """
    if t < 1:
        raise ValueError("tbknn needs t >= 1")
    users = dataset.user_ids()
    hist = interaction_history_matrix(dataset, t, users)
    row_of = {u: i for i, u in enumerate(users)}
    me = hist[row_of[user]]
    sims = np.array([_cosine(me, hist[i]) for i in range(len(users))])
    others = [u for u in users if u != user]
    order = sorted(others, key=lambda u: (-sims[row_of[u]], u))
    out = {}
    for k in k_values:
        kk = min(k, len(order))
        if kk < k and counters is not None:
            counters["tbknn_k_clipped"] = counters.get("tbknn_k_clipped", 0) + 1
        counts = np.zeros(dataset.num_items)
        for v in order[:kk]:
            for item in dataset.interactions_at(v, t - 1):
                counts[item] += 1.0
        out[k] = _rank_by_count(counts, n)
    return out


def baseline_rows(dataset, cfg, baseline, counters=None) -> list[EvalRow]:
    """EvalRows for a non-neural baseline over the whole test window.

    For each anchor interval t in the test window the baseline predicts
    interval t+1 using only data from intervals <= t; users with no
    ground-truth interactions at t+1 are skipped.
    """
    if baseline not in ("timepop", "tbknn"):
        raise ValueError(f"unknown baseline {baseline!r}")
    t_count = dataset.num_intervals
    cut = cfg.resolved_cut(t_count)
    rows = []
    max_n = max(cfg.top_n)
    for anchor in range(cut - 1, t_count - 1):
        p = anchor + 1
        pop = counts_before(dataset, p)
        if baseline == "timepop":
            full = baseline_timepop(dataset, p, max_n)
        for u in dataset.user_ids():
            truth = dataset.interactions_at(u, p)
            if not truth:
                if counters is not None:
                    counters["eval_skipped_users"] = counters.get("eval_skipped_users", 0) + 1
                continue
            if baseline == "timepop":
                for n in cfg.top_n:
                    lst = full[:n]
                    rows.append(EvalRow("timepop", p, u, n, hit_ratio(lst, truth),
                                        ndcg(lst, truth), novelty(lst, pop),
                                        diversity(lst, dataset.item_topics)))
            else:
                per_k = baseline_tbknn(dataset, p, u, max_n, cfg.tbknn_k, counters)
                for n in cfg.top_n:
                    hr_v, nd_v, no_v, di_v = [], [], [], []
                    for k in cfg.tbknn_k:
                        lst = per_k[k][:n]
                        hr_v.append(hit_ratio(lst, truth))
                        nd_v.append(ndcg(lst, truth))
                        no_v.append(novelty(lst, pop))
                        di_v.append(diversity(lst, dataset.item_topics))
                    rows.append(EvalRow("tbknn", p, u, n, float(np.mean(hr_v)),
                                        float(np.mean(nd_v)), float(np.mean(no_v)),
                                        float(np.mean(di_v))))
    return rows


def aggregate(rows) -> list[dict]:
    """Per-(variant, N) means across all rows, in sorted key order."""
    groups: dict[tuple[str, int], list[EvalRow]] = {}
    for r in rows:
        groups.setdefault((r.variant, r.n), []).append(r)
    out = []
    for (variant, n) in sorted(groups):
        g = groups[(variant, n)]
        out.append({
            "variant": variant,
            "N": n,
            "rows": len(g),
            "hr": float(np.mean([r.hr for r in g])),
            "ndcg": float(np.mean([r.ndcg for r in g])),
            "novelty": float(np.mean([r.novelty for r in g])),
            "diversity": float(np.mean([r.diversity for r in g])),
        })
    return out


def write_eval_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EVAL_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.variant},{r.interval},{r.user},{r.n},"
                     f"{r.hr!r},{r.ndcg!r},{r.novelty!r},{r.diversity!r}\n")


def read_eval_csv(path) -> list[EvalRow]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != EVAL_HEADER:
        raise ValueError(f"{path}: not an evaluation CSV (bad or missing header)")
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ValueError(f"{path}:{line_no}: expected 8 fields, got {len(parts)}")
        rows.append(EvalRow(parts[0], int(parts[1]), int(parts[2]), int(parts[3]),
                            float(parts[4]), float(parts[5]), float(parts[6]),
                            float(parts[7])))
    return rows


def write_aggregate_csv(aggs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(AGG_HEADER + "\n")
        for a in aggs:
            fh.write(f"{a['variant']},{a['N']},{a['rows']},"
                     f"{a['hr']!r},{a['ndcg']!r},{a['novelty']!r},{a['diversity']!r}\n")
