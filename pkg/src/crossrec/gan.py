"""Adversarial mapping from target-network to source-network encodings.

Two encoders project topical distributions into a shared latent space,
a generator maps target encodings onto the source manifold, and a
discriminator scores whether a (target, source) encoding pair is a true
mapping pair. The discriminator objective has three terms: real pairs
scored high, generated pairs scored low, and deliberately mismatched
real pairs scored low, so it must learn the mapping itself rather than
mere realism. The generator objective adds an L1 content term between
generated and real source encodings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from crossrec.config import OptimizerConfig
from crossrec.data import TopicalDistribution
from crossrec.nn import DenseNet

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12  # clip for log() safety; sigmoid can round to exactly 0 or 1


@dataclass
class EncoderPair:
    """Target- and source-network encoders, topics -> encoding_dim."""

    e_tn: DenseNet
    e_sn: DenseNet


@dataclass
class Generator:
    """Maps a target encoding to a synthetic source encoding."""

    net: DenseNet


@dataclass
class Discriminator:
    """Scores concat(target encoding, source encoding) as a mapping pair."""

    net: DenseNet

    def prob(self, target_enc, source_enc):
        """Probability in (0, 1) that the pair is a true mapping pair."""
        x = np.asarray(target_enc, dtype=float)
        y = np.asarray(source_enc, dtype=float)
        joint = np.concatenate([x, y], axis=-1)
        out, _ = self.net.forward(joint, train=False)
        return out[..., 0] if out.ndim > 1 else out[0]


@dataclass
class MappingPair:
    """A (target encoding, source encoding) pair tagged with its provenance."""

    target_enc: np.ndarray
    source_enc: np.ndarray
    kind: str  # real | fake | mismatch
    anchor: tuple[int, int] | None = None
    partner: tuple[int, int] | None = None


def build_encoder_pair(num_topics, encoding_dim, opt: OptimizerConfig, rng) -> EncoderPair:
    dims = [num_topics, opt.hidden_multiplier * encoding_dim, encoding_dim]
    acts = ("tanh", "identity")
    return EncoderPair(
        e_tn=DenseNet.create(dims, acts, dropout=opt.dropout, rng=rng),
        e_sn=DenseNet.create(dims, acts, dropout=opt.dropout, rng=rng),
    )


def build_generator(encoding_dim, opt: OptimizerConfig, rng) -> Generator:
    dims = [encoding_dim, opt.hidden_multiplier * encoding_dim, encoding_dim]
    return Generator(net=DenseNet.create(dims, ("tanh", "identity"), dropout=opt.dropout, rng=rng))


def build_discriminator(encoding_dim, opt: OptimizerConfig, rng) -> Discriminator:
    dims = [2 * encoding_dim, opt.hidden_multiplier * 1, 1]
    return Discriminator(net=DenseNet.create(dims, ("tanh", "sigmoid"), dropout=opt.dropout, rng=rng))


def _values(dist):
    return dist.values if isinstance(dist, TopicalDistribution) else np.asarray(dist, dtype=float)


def encode_target(encoders: EncoderPair, tn) -> np.ndarray:
    out, _ = encoders.e_tn.forward(_values(tn), train=False)
    return out


def encode_source(encoders: EncoderPair, sn) -> np.ndarray:
    out, _ = encoders.e_sn.forward(_values(sn), train=False)
    return out


def generate_source_encoding(generator: Generator, encoders: EncoderPair, tn) -> np.ndarray:
    """Synthetic source encoding for a target topical distribution."""
    out, _ = generator.net.forward(encode_target(encoders, tn), train=False)
    return out


def sample_mismatch_partners(anchors, active_by_user, active_by_interval, rng,
                             counters=None):
    """Pick a mismatching real coordinate for each anchor (u, t).

    With probability 1/2 the partner is (u', t) for a different user,
    otherwise (u, t') for a different interval; if the chosen branch has
    no candidate the other is used, and anchors with no candidate at all
    are skipped (counted under ``mismatch_skipped_anchors``).

    Candidate indexes must cover only coordinates with real source data.
    Returns a list aligned with ``anchors`` whose entries are (u, t)
    partners or None for skipped anchors.
    """
    partners = []
    for u, t in anchors:
        cross_user = [v for v in active_by_interval.get(t, ()) if v != u]
        cross_time = [s for s in active_by_user.get(u, ()) if s != t]
        use_cross_user = rng.random() < 0.5
        if use_cross_user and not cross_user:
            use_cross_user = False
        if not use_cross_user and not cross_time:
            use_cross_user = bool(cross_user)
            if not cross_user:
                partners.append(None)
                if counters is not None:
                    counters["mismatch_skipped_anchors"] = (
                        counters.get("mismatch_skipped_anchors", 0) + 1)
                continue
        if use_cross_user:
            partners.append((cross_user[rng.integers(len(cross_user))], t))
        else:
            partners.append((u, cross_time[rng.integers(len(cross_time))]))
    return partners


def active_pair_index(dataset, user_ids, intervals):
    """Index of coordinates where both networks are active, for mismatch sampling."""
    by_user: dict[int, list[int]] = {}
    by_interval: dict[int, list[int]] = {}
    for u in user_ids:
        for t in intervals:
            sn = dataset.source_dist(u, t)
            if sn is None or not sn.active:
                continue
            if not dataset.target_dist(u, t).active:
                continue
            by_user.setdefault(u, []).append(t)
            by_interval.setdefault(t, []).append(u)
    return by_user, by_interval


def sample_mismatch_pairs(anchors, dataset, encoders: EncoderPair, rng,
                          intervals=None, counters=None) -> list[MappingPair]:
    """Encode mismatch pairs for the given anchor coordinates.

    ``anchors`` is a list of (user, interval) with real mapping data;
    partners are drawn from the same pool, restricted to ``intervals``
    when given (defaults to the anchors' own intervals).
    """
    user_ids = sorted({u for u, _ in anchors})
    span = sorted(intervals) if intervals is not None else sorted({t for _, t in anchors})
    by_user, by_interval = active_pair_index(dataset, user_ids, span)
    partners = sample_mismatch_partners(anchors, by_user, by_interval, rng, counters)
    pairs = []
    for (u, t), partner in zip(anchors, partners):
        if partner is None:
            continue
        pu, pt = partner
        pairs.append(MappingPair(
            target_enc=encode_target(encoders, dataset.target_dist(u, t)),
            source_enc=encode_source(encoders, dataset.source_dist(pu, pt)),
            kind="mismatch", anchor=(u, t), partner=partner))
    return pairs


def _clip_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def discriminator_value(pairs, discriminator) -> float:
    """Three-term discriminator value: higher is better for D.

    mean log D over real pairs, plus mean log(1 - D) over fake pairs,
    plus mean log(1 - D) over mismatch pairs. A kind that is absent
    contributes 0 (with a warning). ``discriminator`` only needs a
    ``prob(target_enc, source_enc)`` method.
    """
    total = 0.0
    for kind in ("real", "fake", "mismatch"):
        group = [p for p in pairs if p.kind == kind]
        if not group:
            logger.warning("discriminator_value: no %s pairs in batch, term contributes 0", kind)
            continue
        x = np.stack([p.target_enc for p in group])
        y = np.stack([p.source_enc for p in group])
        probs = _clip_prob(np.asarray(discriminator.prob(x, y), dtype=float))
        if kind == "real":
            total += float(np.mean(np.log(probs)))
        else:
            total += float(np.mean(np.log(1.0 - probs)))
    return total


def generator_value(encoders, generator, discriminator, tn_batch, sn_batch,
                    content_weight=1.0, mode="nonsaturating") -> float:
    """Generator objective: adversarial term plus weighted L1 content term.

    ``mode`` selects log(1 - D(x, G(x))) (saturating) or -log D(x, G(x))
    (nonsaturating). Lower is better for G.
    """
    if content_weight < 0:
        raise ValueError("content_weight must be >= 0")
    tn = np.stack([_values(v) for v in tn_batch])
    sn = np.stack([_values(v) for v in sn_batch])
    x, _ = encoders.e_tn.forward(tn, train=False)
    y, _ = encoders.e_sn.forward(sn, train=False)
    g_out, _ = generator.net.forward(x, train=False)
    probs = _clip_prob(np.asarray(discriminator.prob(x, g_out), dtype=float))
    if mode == "saturating":
        adv = float(np.mean(np.log(1.0 - probs)))
    elif mode == "nonsaturating":
        adv = float(-np.mean(np.log(probs)))
    else:
        raise ValueError(f"unknown adversarial mode {mode!r}")
    content = float(np.mean(np.sum(np.abs(y - g_out), axis=1)))
    return adv + content_weight * content


def content_l1(real_source_enc, generated_enc) -> float:
    """Mean L1 distance between real and generated source encodings."""
    diff = np.abs(np.asarray(real_source_enc) - np.asarray(generated_enc))
    return float(np.mean(np.sum(diff, axis=-1))) if diff.ndim > 1 else float(diff.sum())


def discriminator_objective(encoders, generator, discriminator,
                            tn_rows, sn_rows, mis_rows, mis_anchor,
                            include_mismatch=True, train=False, rng=None):
    """Value and gradients of the discriminator step.

    The discriminator ascends all three value terms. The encoders
    cooperate through the real and mismatch terms only: generated pairs
    are treated as fixed samples, so the fake term carries no gradient
    into the target encoder (otherwise the encoder is rewarded for
    making the frozen generator's output detectable, which inflates
    encodings without bound). Returns (value, parts, grads) where grads
    maps "d"/"e_tn"/"e_sn" to gradients of the NEGATED objective, ready
    for a descent step.
    """
    e_tn, e_sn, d = encoders.e_tn, encoders.e_sn, discriminator.net
    n = tn_rows.shape[0]
    x, c_tn = e_tn.forward(tn_rows, train=train, rng=rng)
    y, c_sn = e_sn.forward(sn_rows, train=train, rng=rng)
    g_out, _ = generator.net.forward(x, train=False)
    enc_dim = x.shape[1]

    p_real, c_d_real = d.forward(np.hstack([x, y]), train=train, rng=rng)
    p_fake, c_d_fake = d.forward(np.hstack([x, g_out]), train=train, rng=rng)
    pr = _clip_prob(p_real[:, 0])
    pf = _clip_prob(p_fake[:, 0])
    value = float(np.mean(np.log(pr)) + np.mean(np.log(1.0 - pf)))
    parts = {"real": float(np.mean(np.log(pr))), "fake": float(np.mean(np.log(1.0 - pf)))}

    # Gradients of J = -value w.r.t. the discriminator probabilities.
    up_real = (-1.0 / (n * pr))[:, None]
    up_fake = (1.0 / (n * (1.0 - pf)))[:, None]
    d_grads, din_real = d.backward(c_d_real, up_real)
    d_grads_fake, _ = d.backward(c_d_fake, up_fake)
    d_grads = [a + b for a, b in zip(d_grads, d_grads_fake)]

    dx = din_real[:, :enc_dim]
    dy = din_real[:, enc_dim:]

    esn_grads = None
    if include_mismatch and mis_rows.shape[0] > 0:
        m_n = mis_rows.shape[0]
        ym, c_sn_mis = e_sn.forward(mis_rows, train=train, rng=rng)
        p_mis, c_d_mis = d.forward(np.hstack([x[mis_anchor], ym]), train=train, rng=rng)
        pm = _clip_prob(p_mis[:, 0])
        mis_term = float(np.mean(np.log(1.0 - pm)))
        value += mis_term
        parts["mismatch"] = mis_term
        up_mis = (1.0 / (m_n * (1.0 - pm)))[:, None]
        d_grads_mis, din_mis = d.backward(c_d_mis, up_mis)
        d_grads = [a + b for a, b in zip(d_grads, d_grads_mis)]
        np.add.at(dx, mis_anchor, din_mis[:, :enc_dim])
        esn_grads, _ = e_sn.backward(c_sn_mis, din_mis[:, enc_dim:])

    etn_grads, _ = e_tn.backward(c_tn, dx)
    esn_real_grads, _ = e_sn.backward(c_sn, dy)
    if esn_grads is None:
        esn_grads = esn_real_grads
    else:
        esn_grads = [a + b for a, b in zip(esn_grads, esn_real_grads)]

    grads = {"d": d_grads, "e_tn": etn_grads, "e_sn": esn_grads}
    return value, parts, grads


def generator_objective(encoders, generator, discriminator, tn_rows, sn_rows,
                        content_weight=1.0, mode="nonsaturating",
                        train=False, rng=None):
    """Value and gradients of the generator step (generator params only).

    Encoders and discriminator are frozen feature extractors here; the
    adversarial term uses the configured saturating or nonsaturating
    form and the content term is the mean L1 distance to the real
    source encodings of the same anchors.
    """
    if content_weight < 0:
        raise ValueError("content_weight must be >= 0")
    n = tn_rows.shape[0]
    x, _ = encoders.e_tn.forward(tn_rows, train=False)
    y, _ = encoders.e_sn.forward(sn_rows, train=False)
    g_out, c_g = generator.net.forward(x, train=train, rng=rng)
    p, c_d = discriminator.net.forward(np.hstack([x, g_out]), train=False)
    pv = _clip_prob(p[:, 0])
    enc_dim = x.shape[1]

    if mode == "saturating":
        adv = float(np.mean(np.log(1.0 - pv)))
        up = (-1.0 / (n * (1.0 - pv)))[:, None]
    elif mode == "nonsaturating":
        adv = float(-np.mean(np.log(pv)))
        up = (-1.0 / (n * pv))[:, None]
    else:
        raise ValueError(f"unknown adversarial mode {mode!r}")

    _, din = discriminator.net.backward(c_d, up)
    dg = din[:, enc_dim:]

    diff = y - g_out
    content = float(np.mean(np.sum(np.abs(diff), axis=1)))
    if content_weight > 0:
        dg = dg + content_weight * (-np.sign(diff)) / n

    g_grads, _ = generator.net.backward(c_g, dg)
    value = adv + content_weight * content
    return value, adv, content, g_grads


def interval_values(encoders, generator, discriminator, tn_rows, sn_rows,
                    mis_rows, mis_anchor, include_mismatch=True,
                    content_weight=1.0, mode="nonsaturating"):
    """Dropout-free loss readings for the trace curves.

    Returns (d_loss, g_loss, content) on the current parameters, where
    d_loss is the negated discriminator value. Trace values are taken
    clean so the curves reflect mapping quality rather than mask noise.
    """
    x, _ = encoders.e_tn.forward(tn_rows, train=False)
    y, _ = encoders.e_sn.forward(sn_rows, train=False)
    g_out, _ = generator.net.forward(x, train=False)
    p_real, _ = discriminator.net.forward(np.hstack([x, y]), train=False)
    p_fake, _ = discriminator.net.forward(np.hstack([x, g_out]), train=False)
    pr = _clip_prob(p_real[:, 0])
    pf = _clip_prob(p_fake[:, 0])
    value = float(np.mean(np.log(pr)) + np.mean(np.log(1.0 - pf)))
    if include_mismatch and mis_rows.shape[0] > 0:
        ym, _ = encoders.e_sn.forward(mis_rows, train=False)
        p_mis, _ = discriminator.net.forward(np.hstack([x[mis_anchor], ym]), train=False)
        value += float(np.mean(np.log(1.0 - _clip_prob(p_mis[:, 0]))))
    if mode == "saturating":
        adv = float(np.mean(np.log(1.0 - pf)))
    else:
        adv = float(-np.mean(np.log(pf)))
    content = float(np.mean(np.sum(np.abs(y - g_out), axis=1)))
    return -value, adv + content_weight * content, content
