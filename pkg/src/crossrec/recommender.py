"""Siamese pairwise recommender: transfer net, item embeddings, ranking.

A user's latent vector is produced by a transfer net from the
concatenation (target encoding, source encoding, previous-interaction
bits); ratings are inner products with item embeddings. Two pairwise
losses are provided: the classic item-based one over (user, liked item,
unliked item) triplets, and the user-based one over (interacting user,
non-interacting user, item) triplets, which performs two user-side
updates per instance instead of two item-side updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crossrec.config import OptimizerConfig
from crossrec.nn import DenseNet, sigmoid


@dataclass
class ItemEmbeddings:
    """Latent item matrix; row i is item i's factor vector."""

    matrix: np.ndarray  # (num_items, latent_dim)


@dataclass(frozen=True)
class UserTriplet:
    """(u, v, i, t): at interval t, user u interacted with item i, v did not."""

    u: int
    v: int
    i: int
    t: int


@dataclass(frozen=True)
class ItemTriplet:
    """(u, i, j): user u interacted with item i but not with item j."""

    u: int
    i: int
    j: int


def build_transfer_net(encoding_dim, num_items, latent_dim,
                       opt: OptimizerConfig, rng) -> DenseNet:
    dims = [2 * encoding_dim + num_items, opt.hidden_multiplier * latent_dim, latent_dim]
    return DenseNet.create(dims, ("tanh", "identity"), dropout=opt.dropout, rng=rng)


def build_item_embeddings(num_items, latent_dim, rng) -> ItemEmbeddings:
    return ItemEmbeddings(matrix=rng.normal(0.0, 0.1, size=(num_items, latent_dim)))


def user_latent(phi: DenseNet, target_enc, source_enc, prev, train=False, rng=None):
    """Latent user vector from concat(target enc, source enc, prev bits)."""
    joint = np.concatenate([np.asarray(target_enc, dtype=float),
                            np.asarray(source_enc, dtype=float),
                            np.asarray(prev, dtype=float)], axis=-1)
    out, _ = phi.forward(joint, train=train, rng=rng)
    return out


def predict_rating(w, items: ItemEmbeddings, i: int) -> float:
    """Predicted preference of the user with latent w for item i."""
    return float(np.dot(w, items.matrix[i]))


def score_all(w, items: ItemEmbeddings) -> np.ndarray:
    return items.matrix @ np.asarray(w, dtype=float)


def top_n(scores, n: int, exclude=None) -> list[int]:
    """Ids of the n highest-scoring items, ties broken by ascending id.

    ``exclude`` is an optional boolean mask of items to drop before
    ranking (e.g. previously consumed items).
    """
    scores = np.asarray(scores, dtype=float)
    ids = np.arange(scores.shape[0])
    if exclude is not None:
        keep = ~np.asarray(exclude, dtype=bool)
        ids = ids[keep]
        scores = scores[keep]
    order = np.lexsort((ids, -scores))
    return ids[order[:n]].tolist()


def _pair_loss(margin):
    # -ln sigma(margin), computed stably as softplus(-margin)
    return np.logaddexp(0.0, -np.asarray(margin, dtype=float))


def ubpr_loss(triplets, latents, items: ItemEmbeddings, l2_lambda=0.0,
              reg_params=()) -> float:
    """Summed user-based pairwise loss over (u, v, i, t) triplets.

    ``latents`` maps user id to its latent vector (the Siamese branches
    share one transfer net, so both sides come from the same mapping).
    The regularizer adds l2_lambda * sum of squared entries over
    ``reg_params`` plus the item matrix.
    """
    if not triplets:
        raise ValueError("empty triplet set; caller must skip this interval")
    total = 0.0
    for tr in triplets:
        margin = float(np.dot(latents[tr.u] - latents[tr.v], items.matrix[tr.i]))
        total += float(_pair_loss(margin))
    reg = float(np.sum(items.matrix ** 2))
    for p in reg_params:
        reg += float(np.sum(np.asarray(p) ** 2))
    return total + l2_lambda * reg


def bpr_loss(triplets, latents, items: ItemEmbeddings, l2_lambda=0.0,
             reg_params=()) -> float:
    """Summed item-based pairwise loss over (u, i, j) triplets."""
    if not triplets:
        raise ValueError("empty triplet set; caller must skip this interval")
    total = 0.0
    for tr in triplets:
        margin = float(np.dot(latents[tr.u], items.matrix[tr.i] - items.matrix[tr.j]))
        total += float(_pair_loss(margin))
    reg = float(np.sum(items.matrix ** 2))
    for p in reg_params:
        reg += float(np.sum(np.asarray(p) ** 2))
    return total + l2_lambda * reg


def ubpr_grads(latent_rows, row_of, items: ItemEmbeddings, triplets, mean=True):
    """Gradients of the user-based pairwise data loss.

    ``latent_rows`` stacks the latent vectors of all involved users and
    ``row_of`` maps user id to its row. Returns (d_latents, d_items,
    loss) where the loss and gradients are per-triplet means when
    ``mean`` is True, sums otherwise. Only the rows of the users and
    items appearing in the triplets receive nonzero gradient.
    """
    if not triplets:
        raise ValueError("empty triplet set; caller must skip this interval")
    h = items.matrix
    ru = np.array([row_of[tr.u] for tr in triplets])
    rv = np.array([row_of[tr.v] for tr in triplets])
    ii = np.array([tr.i for tr in triplets])
    diff = latent_rows[ru] - latent_rows[rv]
    margin = np.einsum("ij,ij->i", diff, h[ii])
    loss = float(np.sum(_pair_loss(margin)))
    scale = 1.0 / len(triplets) if mean else 1.0
    d_margin = -sigmoid(-margin) * scale
    d_lat = np.zeros_like(latent_rows)
    np.add.at(d_lat, ru, d_margin[:, None] * h[ii])
    np.add.at(d_lat, rv, -d_margin[:, None] * h[ii])
    d_items = np.zeros_like(h)
    np.add.at(d_items, ii, d_margin[:, None] * diff)
    return d_lat, d_items, loss * scale


def bpr_grads(latent_rows, row_of, items: ItemEmbeddings, triplets, mean=True):
    """Gradients of the item-based pairwise data loss; see ubpr_grads."""
    if not triplets:
        raise ValueError("empty triplet set; caller must skip this interval")
    h = items.matrix
    ru = np.array([row_of[tr.u] for tr in triplets])
    ii = np.array([tr.i for tr in triplets])
    jj = np.array([tr.j for tr in triplets])
    diff = h[ii] - h[jj]
    margin = np.einsum("ij,ij->i", latent_rows[ru], diff)
    loss = float(np.sum(_pair_loss(margin)))
    scale = 1.0 / len(triplets) if mean else 1.0
    d_margin = -sigmoid(-margin) * scale
    d_lat = np.zeros_like(latent_rows)
    np.add.at(d_lat, ru, d_margin[:, None] * diff)
    d_items = np.zeros_like(h)
    np.add.at(d_items, ii, d_margin[:, None] * latent_rows[ru])
    np.add.at(d_items, jj, -d_margin[:, None] * latent_rows[ru])
    return d_lat, d_items, loss * scale


def sample_user_triplets(dataset, t, per_item_count, rng, pool=None, counters=None):
    """Training triplets for interval t: one interacting and one
    non-interacting user per item, ``per_item_count`` draws per item.

    ``pool`` restricts both sides to a user subset. Items every pooled
    user interacted with are skipped (counted under
    ``triplet_skipped_items``).
    """
    users = sorted(pool) if pool is not None else dataset.user_ids()
    by_item: dict[int, list[int]] = {}
    for u in users:
        for item in sorted(dataset.interactions_at(u, t)):
            by_item.setdefault(item, []).append(u)
    triplets = []
    n_users = len(users)
    for item in sorted(by_item):
        positives = by_item[item]
        if len(positives) >= n_users:
            if counters is not None:
                counters["triplet_skipped_items"] = counters.get("triplet_skipped_items", 0) + 1
            continue
        pos_set = set(positives)
        for _ in range(per_item_count):
            u = positives[rng.integers(len(positives))]
            while True:
                v = users[rng.integers(n_users)]
                if v not in pos_set:
                    break
            triplets.append(UserTriplet(u=u, v=v, i=item, t=t))
    return triplets
