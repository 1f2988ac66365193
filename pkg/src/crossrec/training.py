"""Multi-task training loop and the sliding-window offline/online protocol.

Offline, per epoch and per interval t inside the training window: the
discriminator and both encoders ascend the three-term value on real,
generated and mismatched pairs; the generator descends its adversarial
plus content objective; then generated source encodings feed the
transfer net to predict interval t+1 interactions, and the user-based
pairwise loss is descended end to end, updating the transfer net, the
item embeddings, the generator and the target encoder.

Online, per test interval: predictions for t+1 are produced and locked
before any t+1 ground truth is read; scoring follows; then the model
retrains for a fixed number of iterations in three steps (recommender
on served inputs, adversarial nets on newly revealed mapping data, and
a recommender pass through generated encodings that backpropagates into
the generator).

Mode rule: a net runs with dropout (train mode) exactly in the steps
that update its parameters; frozen nets run clean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from crossrec import evaluation, gan, recommender
from crossrec.config import TrainConfig
from crossrec.data import prev_interactions
from crossrec.gan import Discriminator, EncoderPair, Generator
from crossrec.nn import Adam, DenseNet, NumericalError
from crossrec.recommender import ItemEmbeddings

CHECKPOINT_VERSION = 1


@dataclass
class ModelBundle:
    """All learnable state of one run plus its rng and progress marker."""

    variant: str
    num_topics: int
    num_items: int
    encoding_dim: int
    latent_dim: int
    encoders: EncoderPair
    generator: Generator | None
    discriminator: Discriminator | None
    phi: DenseNet
    items: ItemEmbeddings
    adam: Adam
    rng: np.random.Generator
    next_anchor: int | None = None
    counters: dict = field(default_factory=dict)

    def bump(self, key, amount=1):
        self.counters[key] = self.counters.get(key, 0) + amount


def build_bundle(num_topics, num_items, cfg: TrainConfig) -> ModelBundle:
    cfg.validate()
    opt = cfg.optimizer
    # Each component draws its init from its own child stream, so at a
    # given seed every variant starts from identical shared weights and
    # variant comparisons are not confounded by init draws.
    child = {name: np.random.default_rng([cfg.seed, i]) for i, name in
             enumerate(("e", "d", "g", "phi", "items", "train"))}
    encoders = gan.build_encoder_pair(num_topics, cfg.encoding_dim, opt, child["e"])
    generator = discriminator = None
    if cfg.uses_gan():
        discriminator = gan.build_discriminator(cfg.encoding_dim, opt, child["d"])
        generator = gan.build_generator(cfg.encoding_dim, opt, child["g"])
    phi = recommender.build_transfer_net(cfg.encoding_dim, num_items, cfg.latent_dim,
                                         opt, child["phi"])
    items = recommender.build_item_embeddings(num_items, cfg.latent_dim, child["items"])
    rng = child["train"]
    adam = Adam(lr=opt.initial_lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
    return ModelBundle(variant=cfg.variant, num_topics=num_topics, num_items=num_items,
                       encoding_dim=cfg.encoding_dim, latent_dim=cfg.latent_dim,
                       encoders=encoders, generator=generator, discriminator=discriminator,
                       phi=phi, items=items, adam=adam, rng=rng)


def participants(dataset, variant) -> list[int]:
    """Users a variant serves: overlapped only for nubpr_o, otherwise all."""
    if variant == "nubpr_o":
        return dataset.overlapped_ids()
    return dataset.user_ids()


def _variant_train_source(variant) -> tuple[str, frozenset[str]]:
    """Source mode and update set for the offline recommender step."""
    if variant in ("proposed", "crgan"):
        return "generated", frozenset({"phi", "items", "g", "e_tn"})
    if variant == "nubpr_o":
        return "real", frozenset({"phi", "items", "e_tn", "e_sn"})
    if variant == "nubpr_no":
        return "zero", frozenset({"phi", "items", "e_tn"})
    raise ValueError(f"unknown variant {variant!r}")


def _target_rows(dataset, users, t):
    return np.stack([dataset.target_dist(u, t).values for u in users])


def _source_rows(dataset, users, t):
    return np.stack([dataset.source_dist(u, t).values for u in users])


def _prev_rows(dataset, users, t):
    return np.stack([prev_interactions(dataset, u, t) for u in users])


def _serving_source_block(bundle, dataset, users, t):
    """Source encodings used at serving time, per the variant contract.

    nubpr_no feeds a zero block; nubpr_o real encodings; the adversarial
    variants use real encodings for overlapped users and generated ones
    for non-overlapped users. All nets run clean (inference mode).
    """
    n = len(users)
    enc_dim = bundle.encoding_dim
    if bundle.variant == "nubpr_no":
        return np.zeros((n, enc_dim))
    if bundle.variant == "nubpr_o":
        rows = _source_rows(dataset, users, t)
        out, _ = bundle.encoders.e_sn.forward(rows, train=False)
        return out
    block = np.zeros((n, enc_dim))
    overlapped = [k for k, u in enumerate(users) if dataset.user(u).overlapped]
    synthetic = [k for k, u in enumerate(users) if not dataset.user(u).overlapped]
    if overlapped:
        rows = _source_rows(dataset, [users[k] for k in overlapped], t)
        out, _ = bundle.encoders.e_sn.forward(rows, train=False)
        block[overlapped] = out
    if synthetic:
        rows = _target_rows(dataset, [users[k] for k in synthetic], t)
        x, _ = bundle.encoders.e_tn.forward(rows, train=False)
        out, _ = bundle.generator.net.forward(x, train=False)
        block[synthetic] = out
    return block


def _check_finite(value, what):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what}")
    return value


def _gan_interval_step(bundle, dataset, cfg, t, mismatch_index):
    """One discriminator ascent plus one generator descent on interval t.

    Returns (d_loss, g_loss, content) where d_loss is the negated
    discriminator value, or None when the interval has no usable real
    mapping pairs.
    """
    by_user, by_interval = mismatch_index
    anchors_u = by_interval.get(t, [])
    if not anchors_u:
        bundle.bump("gan_skipped_intervals")
        return None
    if len(anchors_u) > cfg.gan_batch:
        pick = bundle.rng.choice(len(anchors_u), size=cfg.gan_batch, replace=False)
        anchors_u = [anchors_u[k] for k in sorted(pick)]
    anchors = [(u, t) for u in anchors_u]
    partners = gan.sample_mismatch_partners(anchors, by_user, by_interval,
                                            bundle.rng, bundle.counters)
    mis_anchor = [k for k, p in enumerate(partners) if p is not None]
    mis_pairs = [partners[k] for k in mis_anchor]

    tn_rows = _target_rows(dataset, anchors_u, t)
    sn_rows = _source_rows(dataset, anchors_u, t)
    if mis_pairs:
        mis_rows = np.stack([dataset.source_dist(u, s).values for u, s in mis_pairs])
    else:
        mis_rows = np.zeros((0, dataset.num_topics))

    include_mismatch = bundle.variant == "proposed"
    content_weight = cfg.content_weight if bundle.variant == "proposed" else 0.0
    mis_anchor = np.array(mis_anchor, dtype=int)
    trace = gan.interval_values(
        bundle.encoders, bundle.generator, bundle.discriminator,
        tn_rows, sn_rows, mis_rows, mis_anchor, include_mismatch=include_mismatch,
        content_weight=content_weight, mode=cfg.adversarial)

    value, _, grads = gan.discriminator_objective(
        bundle.encoders, bundle.generator, bundle.discriminator,
        tn_rows, sn_rows, mis_rows, mis_anchor,
        include_mismatch=include_mismatch, train=True, rng=bundle.rng)
    _check_finite(value, "discriminator value")
    # Weight decay on the adversarial blocks bounds the encoder scale;
    # Adam otherwise walks any persistent ascent direction indefinitely.
    gl2 = cfg.optimizer.gan_l2
    bundle.adam.step("d", bundle.discriminator.net.params(), grads["d"], l2=gl2)
    bundle.adam.step("e_tn", bundle.encoders.e_tn.params(), grads["e_tn"], l2=gl2)
    bundle.adam.step("e_sn", bundle.encoders.e_sn.params(), grads["e_sn"], l2=gl2)

    g_value, _, _, g_grads = gan.generator_objective(
        bundle.encoders, bundle.generator, bundle.discriminator, tn_rows, sn_rows,
        content_weight=content_weight, mode=cfg.adversarial, train=True, rng=bundle.rng)
    _check_finite(g_value, "generator value")
    bundle.adam.step("g", bundle.generator.net.params(), g_grads, l2=gl2)
    return trace


def recommender_objective(bundle, dataset, t_in, t_pred, triplets, source_mode,
                          updates, train=False):
    """Pairwise-ranking loss and gradients for fixed triplets.

    Preferences at t_in predict interactions at t_pred. ``source_mode``
    picks the transfer net's source block (generated, real, zero, or
    the mixed serving block); gradients are produced for exactly the
    blocks named in ``updates``. With ``train`` set, each updated net
    runs its dropout from the bundle rng; frozen nets always run clean.
    Returns (mean per-triplet loss, grads dict).
    """
    users = sorted({x for tr in triplets for x in (tr.u, tr.v)})
    row_of = {u: k for k, u in enumerate(users)}
    enc_dim = bundle.encoding_dim
    rng = bundle.rng

    def mode(block):
        on = train and block in updates
        return {"train": on, "rng": rng if on else None}

    tn_rows = _target_rows(dataset, users, t_in)
    x, c_tn = bundle.encoders.e_tn.forward(tn_rows, **mode("e_tn"))

    c_g = c_sn = None
    if source_mode == "generated":
        src, c_g = bundle.generator.net.forward(x, **mode("g"))
    elif source_mode == "real":
        src, c_sn = bundle.encoders.e_sn.forward(
            _source_rows(dataset, users, t_in), **mode("e_sn"))
    elif source_mode == "zero":
        src = np.zeros((len(users), enc_dim))
    elif source_mode == "serving":
        src = _serving_source_block(bundle, dataset, users, t_in)
    else:
        raise ValueError(f"unknown source mode {source_mode!r}")

    prev = _prev_rows(dataset, users, t_pred)
    joint = np.hstack([x, src, prev])
    latents, c_phi = bundle.phi.forward(joint, **mode("phi"))

    d_lat, d_items, loss = recommender.ubpr_grads(latents, row_of, bundle.items, triplets)
    _check_finite(loss, "recommender loss")

    grads = {}
    phi_grads, d_joint = bundle.phi.backward(c_phi, d_lat)
    if "items" in updates:
        grads["items"] = [d_items]
    if "phi" in updates:
        grads["phi"] = phi_grads

    dx = d_joint[:, :enc_dim]
    d_src = d_joint[:, enc_dim:2 * enc_dim]
    if source_mode == "generated" and "g" in updates:
        g_grads, dx_g = bundle.generator.net.backward(c_g, d_src)
        grads["g"] = g_grads
        if "e_tn" in updates:
            dx = dx + dx_g
    elif source_mode == "real" and "e_sn" in updates:
        esn_grads, _ = bundle.encoders.e_sn.backward(c_sn, d_src)
        grads["e_sn"] = esn_grads
    if "e_tn" in updates:
        etn_grads, _ = bundle.encoders.e_tn.backward(c_tn, dx)
        grads["e_tn"] = etn_grads
    return loss, grads


def _block_params(bundle, block):
    if block == "items":
        return [bundle.items.matrix]
    if block == "phi":
        return bundle.phi.params()
    if block == "g":
        return bundle.generator.net.params()
    if block == "e_tn":
        return bundle.encoders.e_tn.params()
    if block == "e_sn":
        return bundle.encoders.e_sn.params()
    if block == "d":
        return bundle.discriminator.net.params()
    raise KeyError(block)


def _recommender_step(bundle, dataset, cfg, t_in, t_pred, pool, source_mode, updates):
    """Sample triplets for t_pred and take one Adam step on them.

    Returns the mean per-triplet loss, or None when the interval yields
    no triplets. The ranking regularizer applies to the transfer net
    and the item embeddings only.
    """
    triplets = recommender.sample_user_triplets(
        dataset, t_pred, cfg.per_item_triplets, bundle.rng, pool=pool,
        counters=bundle.counters)
    if not triplets:
        bundle.bump("rec_skipped_intervals")
        return None
    loss, grads = recommender_objective(bundle, dataset, t_in, t_pred, triplets,
                                        source_mode, updates, train=True)
    l2 = cfg.optimizer.l2_lambda
    for block in sorted(grads):
        bundle.adam.step(block, _block_params(bundle, block), grads[block],
                         l2=l2 if block in ("phi", "items") else 0.0)
    return loss


def offline_train(dataset, cfg: TrainConfig):
    """Offline phase over the first 2T/3 intervals of overlapped users.

    Returns (bundle, traces); traces has one dict per epoch with the
    mean d_loss, g_loss, content_loss (adversarial variants only) and
    r_loss over the epoch's intervals.
    """
    cfg.validate()
    t_count = dataset.num_intervals
    cut = cfg.resolved_cut(t_count)
    pool = dataset.overlapped_ids()
    if not pool:
        raise ValueError("offline training needs at least one overlapped user")
    bundle = build_bundle(dataset.num_topics, dataset.num_items, cfg)
    source_mode, updates = _variant_train_source(cfg.variant)
    mismatch_index = None
    if cfg.uses_gan():
        mismatch_index = gan.active_pair_index(dataset, pool, range(cut))

    traces = []
    for epoch in range(cfg.offline_epochs):
        sums = {"d_loss": 0.0, "g_loss": 0.0, "content_loss": 0.0, "r_loss": 0.0}
        counts = {"gan": 0, "rec": 0}
        for t in range(cut):
            if cfg.uses_gan():
                res = _gan_interval_step(bundle, dataset, cfg, t, mismatch_index)
                if res is not None:
                    sums["d_loss"] += res[0]
                    sums["g_loss"] += res[1]
                    sums["content_loss"] += res[2]
                    counts["gan"] += 1
            if t < cut - 1:
                loss = _recommender_step(bundle, dataset, cfg, t, t + 1, pool,
                                         source_mode, updates)
                if loss is not None:
                    sums["r_loss"] += loss
                    counts["rec"] += 1
        row = {"epoch": epoch, "r_loss": sums["r_loss"] / max(counts["rec"], 1)}
        if cfg.uses_gan():
            row["d_loss"] = sums["d_loss"] / max(counts["gan"], 1)
            row["g_loss"] = sums["g_loss"] / max(counts["gan"], 1)
            row["content_loss"] = sums["content_loss"] / max(counts["gan"], 1)
        traces.append(row)
    bundle.next_anchor = cut - 1
    return bundle, traces


def score_interval(dataset, bundle, anchor, cfg, probe=None):
    """Rank and score interval anchor+1 from preferences at the anchor.

    Rankings for every participating user are computed first, reading
    only data from intervals <= anchor; ``probe.predictions_locked`` is
    then invoked (when given) before any ground truth at anchor+1 is
    read for metric computation. Users without ground truth at anchor+1
    are skipped and counted.
    """
    p = anchor + 1
    users = participants(dataset, bundle.variant)
    tn_rows = _target_rows(dataset, users, anchor)
    x, _ = bundle.encoders.e_tn.forward(tn_rows, train=False)
    src = _serving_source_block(bundle, dataset, users, anchor)
    prev = _prev_rows(dataset, users, p)
    joint = np.hstack([x, src, prev])
    latents, _ = bundle.phi.forward(joint, train=False)
    scores = latents @ bundle.items.matrix.T
    pop = evaluation.counts_before(dataset, p)

    ranked = {}
    max_n = max(cfg.top_n)
    for k, u in enumerate(users):
        exclude = prev[k].astype(bool) if cfg.exclude_prev else None
        ranked[u] = recommender.top_n(scores[k], max_n, exclude=exclude)
    if probe is not None:
        probe.predictions_locked(p)

    rows = []
    for u in users:
        truth = dataset.interactions_at(u, p)
        if not truth:
            bundle.bump("eval_skipped_users")
            continue
        for n in cfg.top_n:
            lst = ranked[u][:n]
            if len(lst) < 2:
                bundle.bump("diversity_skipped_rows")
                continue
            rows.append(evaluation.EvalRow(
                bundle.variant, p, u, n,
                evaluation.hit_ratio(lst, truth), evaluation.ndcg(lst, truth),
                evaluation.novelty(lst, pop),
                evaluation.diversity(lst, dataset.item_topics)))
    return rows


def online_run(dataset, bundle, cfg: TrainConfig, max_steps=None, probe=None,
               retrain=True):
    """Test-and-retrain over the online window, resuming at next_anchor.

    For each anchor t: score predictions for t+1, then retrain
    ``online_iters`` times (recommender on served inputs; adversarial
    nets on the newly revealed mapping data; recommender through
    generated encodings back into the generator). Returns (rows,
    traces) with traces entries {interval, iteration, r_loss}.
    """
    cfg.validate()
    t_count = dataset.num_intervals
    cut = cfg.resolved_cut(t_count)
    start = bundle.next_anchor if bundle.next_anchor is not None else cut - 1
    anchors = list(range(start, t_count - 1))
    if max_steps is not None:
        anchors = anchors[:max_steps]
    pool = participants(dataset, bundle.variant)
    overlapped = dataset.overlapped_ids()

    rows, traces = [], []
    for t in anchors:
        p = t + 1
        rows.extend(score_interval(dataset, bundle, t, cfg, probe=probe))
        if retrain:
            mismatch_index = None
            if cfg.uses_gan():
                mismatch_index = gan.active_pair_index(dataset, overlapped, range(p + 1))
            for it in range(1, cfg.online_iters + 1):
                loss = _recommender_step(bundle, dataset, cfg, t, p, pool,
                                         "serving", frozenset({"phi", "items"}))
                if loss is not None:
                    traces.append({"interval": p, "iteration": it, "r_loss": loss})
                if cfg.uses_gan():
                    _gan_interval_step(bundle, dataset, cfg, p, mismatch_index)
                    _recommender_step(bundle, dataset, cfg, t, p, overlapped,
                                      "generated", frozenset({"phi", "items", "g"}))
        bundle.next_anchor = t + 1
    return rows, traces


def evaluate_frozen(dataset, bundle, cfg: TrainConfig, probe=None):
    """Score the whole test window with frozen parameters; pure."""
    cfg.validate()
    t_count = dataset.num_intervals
    cut = cfg.resolved_cut(t_count)
    rows = []
    for t in range(cut - 1, t_count - 1):
        rows.extend(score_interval(dataset, bundle, t, cfg, probe=probe))
    return rows
