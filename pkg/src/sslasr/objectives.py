"""Self-supervised objectives over encoder hidden states.

Five objectives share one encoder contract: autoregressive prediction
(single lag), its multi-lag extension, a bidirectional pair with weight
sharing, masked contrastive prediction with a Gumbel-softmax codebook,
and masked cluster-id prediction with k-means targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor
from .model import Encoder, EncoderConfig, Linear, Module, build_encoder


def valid_groups(lengths, factor: int) -> np.ndarray:
    """Number of complete length-`factor` frame groups per utterance."""
    return np.asarray(lengths) // factor


def stack_targets(feats: np.ndarray, lengths, factor: int):
    """Concatenate each group of `factor` consecutive frames into one target row.

    Returns (stacked (B, G, factor*D), valid (B,)) where G = ceil(T/factor);
    trailing partial groups are zero-padded and not counted as valid.
    """
    x = np.asarray(feats)
    B, T, D = x.shape
    G = -(-T // factor)
    padded = np.zeros((B, G * factor, D), dtype=x.dtype)
    padded[:, :T] = x
    stacked = padded.reshape(B, G, factor * D)
    return stacked, valid_groups(lengths, factor)


def apc_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray,
             p: int = 1, normalize: bool = False) -> Tensor:
    """Sum of |pred - target|^p over positions where mask is True.

    pred (B, G, D) on the tape, target and boolean mask (B, G) plain
    arrays. normalize divides by the number of contributing elements.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    diff = E.sub(pred, Tensor(np.asarray(target, dtype=pred.dtype)))
    err = E.abs_(diff) if p == 1 else E.mul(diff, diff)
    weights = np.asarray(mask, dtype=pred.dtype)[..., None]
    total = E.sum_(E.mul(err, Tensor(weights)))
    if normalize:
        count = int(mask.sum()) * pred.shape[-1]
        if count == 0:
            raise ValueError("no valid prediction targets")
        total = E.mul(total, Tensor(np.asarray(1.0 / count, dtype=pred.dtype)))
    return total


@dataclass
class APCConfig:
    shift: int = 2       # first prediction lag, in subsampled groups
    n_lags: int = 1      # lags {shift, ..., shift + n_lags - 1}
    p: int = 1           # L1 or squared-L2 regression
    d_feat: int = 8      # raw feature dim (target dim = factor * d_feat)


class EAPCObjective(Module):
    """Future-frame regression with one linear generator per lag.

    n_lags = 1 is plain autoregressive prediction; n_lags > 1 sums the
    same loss over consecutive lags starting at `shift`.
    """

    def __init__(self, cfg: APCConfig, d_model: int, factor: int, rng: np.random.Generator):
        super().__init__()
        if cfg.shift < 1 or cfg.n_lags < 1:
            raise ValueError("shift and n_lags must be >= 1")
        self.cfg = cfg
        self.factor = factor
        self.d_target = factor * cfg.d_feat
        for i in range(cfg.n_lags):
            self.children[f"gen{i}"] = Linear(rng, d_model, self.d_target)

    def lags(self):
        return range(self.cfg.shift, self.cfg.shift + self.cfg.n_lags)

    def loss(self, encoder: Encoder, feats, lengths, normalize: bool = True) -> Tensor:
        hidden, out_lengths = encoder(feats, lengths)
        stacked, valid = stack_targets(feats, lengths, self.factor)
        # cap at the longest valid row so trailing padding cannot change
        # the reduction, not even in the last bit
        G = min(hidden.shape[1], stacked.shape[1], int(np.max(valid, initial=0)))
        total = None
        count = 0
        for i, lag in enumerate(self.lags()):
            pred = self.children[f"gen{i}"](hidden)
            target = np.zeros_like(stacked)
            if lag < stacked.shape[1]:
                target[:, : stacked.shape[1] - lag] = stacked[:, lag:]
            mask = np.arange(G)[None, :] < np.maximum(valid[:, None] - lag, 0)
            if not mask.any():
                continue
            count += int(mask.sum()) * self.d_target
            term = apc_loss(
                E.slice_axis(pred, 1, 0, G), target[:, :G], mask, p=self.cfg.p, normalize=False
            )
            total = term if total is None else E.add(total, term)
        if total is None:
            raise ValueError("no valid prediction targets at any lag")
        if normalize:
            total = E.mul(total, Tensor(np.asarray(1.0 / count, dtype=np.float32)))
        return total


def reverse_group_blocks(feats: np.ndarray, lengths, factor: int) -> np.ndarray:
    """Reverse the order of complete frame groups per utterance.

    Frames inside a group keep their order; the trailing partial group
    and padding stay in place. A palindromic group sequence round-trips
    to itself exactly.
    """
    out = np.array(feats, copy=True)
    for b, n in enumerate(np.asarray(lengths)):
        g = int(n) // factor
        if g == 0:
            continue
        blocks = out[b, : g * factor].reshape(g, factor, -1)
        out[b, : g * factor] = blocks[::-1].reshape(g * factor, -1)
    return out


class BidirectionalAPC:
    """Forward and time-reversed autoregressive models with weight sharing.

    Schemes: 'none' (two independent models), 'share_generator',
    'share_gen_encoder' (generator + transformer blocks + final norm),
    'share_all' (every parameter aliased).
    """

    SCHEMES = ("none", "share_generator", "share_gen_encoder", "share_all")

    def __init__(self, enc_cfg: EncoderConfig, apc_cfg: APCConfig, scheme: str, seed: int):
        if scheme not in self.SCHEMES:
            raise ValueError(f"unknown sharing scheme '{scheme}'")
        self.scheme = scheme
        self.enc_cfg = enc_cfg
        self.apc_cfg = apc_cfg
        self.fwd = build_encoder(enc_cfg, seed)
        self.rev = build_encoder(enc_cfg, seed + 1)
        rng_f = np.random.default_rng([seed, 0x0B1])
        rng_r = np.random.default_rng([seed + 1, 0x0B1])
        self.fwd_obj = EAPCObjective(apc_cfg, enc_cfg.d_model, self.fwd.subsample_factor, rng_f)
        self.rev_obj = EAPCObjective(apc_cfg, enc_cfg.d_model, self.rev.subsample_factor, rng_r)
        self._apply_sharing()

    def _apply_sharing(self) -> None:
        if self.scheme in ("share_generator", "share_gen_encoder", "share_all"):
            self.rev_obj.alias_from(self.fwd_obj)
        if self.scheme in ("share_gen_encoder", "share_all"):
            for i in range(self.enc_cfg.n_blocks):
                self.rev.children[f"block{i}"].alias_from(self.fwd.children[f"block{i}"])
                if self.fwd.adapters_inserted:
                    self.rev.children[f"adapter{i + 1}"].alias_from(self.fwd.children[f"adapter{i + 1}"])
            self.rev.children["final_ln"].alias_from(self.fwd.children["final_ln"])
        if self.scheme == "share_all":
            self.rev.children["conv"].alias_from(self.fwd.children["conv"])
            if "frontend" in self.fwd.children:
                self.rev.children["frontend"].alias_from(self.fwd.children["frontend"])
            if self.fwd.adapters_inserted:
                self.rev.children["adapter0"].alias_from(self.fwd.children["adapter0"])

    def insert_adapters(self, d_adapter: int, rng: np.random.Generator,
                        random_init: bool = False) -> None:
        self.fwd.insert_adapters(d_adapter, rng, random_init=random_init)
        self.rev.insert_adapters(d_adapter, rng, random_init=random_init)
        # adapters follow their host module's sharing
        if self.scheme in ("share_gen_encoder", "share_all"):
            for i in range(self.enc_cfg.n_blocks):
                self.rev.children[f"adapter{i + 1}"].alias_from(self.fwd.children[f"adapter{i + 1}"])
        if self.scheme == "share_all":
            self.rev.children["adapter0"].alias_from(self.fwd.children["adapter0"])

    def loss(self, feats, lengths, normalize: bool = True) -> Tensor:
        factor = self.fwd.subsample_factor
        fwd_loss = self.fwd_obj.loss(self.fwd, feats, lengths, normalize=normalize)
        rev_feats = reverse_group_blocks(np.asarray(feats), lengths, factor)
        rev_loss = self.rev_obj.loss(self.rev, rev_feats, lengths, normalize=normalize)
        return E.add(fwd_loss, rev_loss)

    def named_params(self) -> dict:
        out = {}
        for k, v in self.fwd.named_params().items():
            out["fwd.model." + k] = v
        for k, v in self.fwd_obj.named_params().items():
            out["fwd.gen." + k] = v
        seen = {id(t) for t in out.values()}
        for k, v in self.rev.named_params().items():
            if id(v) not in seen:
                out["rev.model." + k] = v
        for k, v in self.rev_obj.named_params().items():
            if id(v) not in seen:
                out["rev.gen." + k] = v
        return out

    def average_directions(self) -> Encoder:
        """Average unshared forward/reverse weights elementwise, in place.

        Shared tensors pass through untouched. Both directions end up
        identical, so applying this twice is a no-op. Returns the forward
        encoder (now carrying the averaged weights) for downstream use.
        """
        for pair in ((self.fwd, self.rev), (self.fwd_obj, self.rev_obj)):
            f, r = pair[0].named_params(), pair[1].named_params()
            for k in f:
                if f[k] is not r[k]:
                    avg = (f[k].data.astype(np.float64) + r[k].data.astype(np.float64)) / 2.0
                    f[k].data = avg.astype(f[k].dtype)
                    r[k].data = f[k].data.copy()
        return self.fwd


# ---------------------------------------------------------------------------
# span masking shared by the masked objectives
# ---------------------------------------------------------------------------


def sample_mask_spans(valid_len: int, rng: np.random.Generator,
                      mask_prob: float = 0.065, span_len: int = 10,
                      min_spans: int = 1) -> np.ndarray:
    """Boolean mask over [0, valid_len): union of spans with random starts.

    Each position starts a span with probability mask_prob; if none fires
    and min_spans > 0, one start is forced so short utterances still
    contribute masked positions.
    """
    mask = np.zeros(valid_len, dtype=bool)
    if valid_len == 0:
        return mask
    starts = np.nonzero(rng.random(valid_len) < mask_prob)[0]
    if starts.size == 0 and min_spans > 0:
        starts = np.array([int(rng.integers(valid_len))])
    for s in starts:
        mask[s : s + span_len] = True
    return mask


def batch_mask(valid: np.ndarray, g: int, rng: np.random.Generator,
               mask_prob: float, span_len: int) -> np.ndarray:
    out = np.zeros((len(valid), g), dtype=bool)
    for b, n in enumerate(valid):
        n = min(int(n), g)
        out[b, :n] = sample_mask_spans(n, rng, mask_prob, span_len)
    return out


def apply_mask_embedding(latents: Tensor, mask: np.ndarray, mask_emb: Tensor) -> Tensor:
    """Replace masked latent vectors with the learned mask embedding."""
    return E.where_mask(mask_emb, latents, mask[..., None])


# ---------------------------------------------------------------------------
# contrastive objective with Gumbel-softmax quantization
# ---------------------------------------------------------------------------


def gumbel_tau(step: int, start: float = 2.0, end: float = 0.5, anneal_steps: int = 1000) -> float:
    """Linear anneal from start to end over anneal_steps, then constant."""
    if anneal_steps <= 0:
        return end
    frac = min(max(step, 0) / anneal_steps, 1.0)
    return start + (end - start) * frac


class GumbelQuantizer(Module):
    """Latents -> nearest of V learned codes, hard forward / soft backward."""

    def __init__(self, rng, d_latent: int, n_codes: int, d_code: int):
        super().__init__()
        self.n_codes = n_codes
        self.children["proj"] = Linear(rng, d_latent, n_codes)
        limit = math.sqrt(6.0 / (n_codes + d_code))
        self.p["codebook"] = Tensor(
            rng.uniform(-limit, limit, size=(n_codes, d_code)).astype(np.float32),
            requires_grad=True,
        )

    def __call__(self, z: Tensor, rng: np.random.Generator, tau: float):
        logits = self.children["proj"](z)
        u = rng.random(logits.shape)
        noise = -np.log(-np.log(np.clip(u, 1e-12, 1.0 - 1e-12)))
        noisy = E.mul(E.add(logits, Tensor(noise.astype(np.float32))),
                      Tensor(np.asarray(1.0 / tau, dtype=np.float32)))
        soft = E.softmax(noisy, axis=-1)
        hard = np.zeros_like(soft.data)
        np.put_along_axis(hard, np.argmax(soft.data, axis=-1)[..., None], 1.0, axis=-1)
        code = E.straight_through(soft, hard)
        quantized = E.matmul(code, self.p["codebook"])
        return quantized, soft

    @staticmethod
    def diversity_loss(soft: Tensor, weights: np.ndarray) -> Tensor:
        """(V - exp(H(pbar))) / V over the weighted mean code distribution."""
        v = soft.shape[-1]
        w = np.asarray(weights, dtype=soft.dtype)
        total = float(w.sum())
        if total <= 0:
            raise ValueError("diversity loss needs at least one weighted position")
        pbar = E.mul(
            E.sum_(E.mul(soft, Tensor(w[..., None])), axis=tuple(range(soft.ndim - 1))),
            Tensor(np.asarray(1.0 / total, dtype=soft.dtype)),
        )
        ent = -E.sum_(E.mul(pbar, E.log(E.add(pbar, Tensor(np.asarray(1e-10, dtype=soft.dtype))))))
        return E.mul(E.sub(Tensor(np.asarray(float(v), dtype=soft.dtype)), E.exp(ent)),
                     Tensor(np.asarray(1.0 / v, dtype=soft.dtype)))


@dataclass
class ContrastiveConfig:
    n_negatives: int = 10
    tau_cos: float = 0.1
    mask_prob: float = 0.065
    span_len: int = 10
    n_codes: int = 32
    diversity_weight: float = 0.1
    tau_start: float = 2.0
    tau_end: float = 0.5
    tau_anneal_steps: int = 1000


class ContrastiveObjective(Module):
    """Identify the quantized latent behind each masked position among
    distractors sampled from the other masked positions of the same
    utterance."""

    def __init__(self, cfg: ContrastiveConfig, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.children["quantizer"] = GumbelQuantizer(rng, d_model, cfg.n_codes, d_model)
        self.p["mask_emb"] = Tensor(
            rng.uniform(-0.5, 0.5, size=d_model).astype(np.float32), requires_grad=True
        )

    def loss(self, encoder: Encoder, feats, lengths, rng: np.random.Generator, step: int = 0) -> Tensor:
        cfg = self.cfg
        latents, out_lengths = encoder.encode_latents(feats, lengths)
        B, G, D = latents.shape
        valid = np.minimum(valid_groups(lengths, encoder.subsample_factor), G)
        mask = batch_mask(valid, G, rng, cfg.mask_prob, cfg.span_len)
        context = encoder.contextualize(
            apply_mask_embedding(latents, mask, self.p["mask_emb"]), out_lengths
        )
        tau = gumbel_tau(step, cfg.tau_start, cfg.tau_end, cfg.tau_anneal_steps)

        # quantize only the valid positions, packed row-wise, so the gumbel
        # noise and negative draws cannot depend on how much padding the
        # batch carries
        offsets = np.concatenate([[0], np.cumsum(valid)]).astype(np.int64)
        pack_idx = np.concatenate(
            [b * G + np.arange(int(valid[b]), dtype=np.int64) for b in range(B)])
        packed = E.embedding(E.reshape(latents, (B * G, D)), pack_idx)  # (Nv, D)
        quantized, soft = self.children["quantizer"](packed, rng, tau)

        # anchor rows and their candidate rows (positive first, then negatives)
        anchor_idx, cand_idx = [], []
        for b in range(B):
            masked = np.nonzero(mask[b])[0]
            if masked.size < 2:
                continue  # no distractor pool for this utterance
            for t in masked:
                pool = masked[masked != t]
                replace = pool.size < cfg.n_negatives
                negs = rng.choice(pool, size=cfg.n_negatives, replace=replace)
                anchor_idx.append(b * G + t)
                cand_idx.append(offsets[b] + np.concatenate([[t], negs]))
        if not anchor_idx:
            raise ValueError("no contrastive anchors in batch")
        anchor_idx = np.asarray(anchor_idx)
        cand_idx = np.asarray(cand_idx)
        ctx_rows = E.embedding(E.reshape(context, (B * G, D)), anchor_idx)  # (N, D)
        cand_rows = E.embedding(quantized, cand_idx)  # (N, K+1, D)
        sims = E.cosine_similarity(E.reshape(ctx_rows, (len(anchor_idx), 1, D)), cand_rows, axis=-1)
        logits = E.mul(sims, Tensor(np.asarray(1.0 / cfg.tau_cos, dtype=np.float32)))
        nll = E.cross_entropy(logits, np.zeros(len(anchor_idx), dtype=np.int64))
        contrastive = E.mean_(nll)
        pack_w = np.concatenate([mask[b, : int(valid[b])] for b in range(B)])
        diversity = GumbelQuantizer.diversity_loss(soft, pack_w.astype(np.float32))
        return E.add(contrastive, E.mul(diversity, Tensor(np.asarray(cfg.diversity_weight, dtype=np.float32))))


# ---------------------------------------------------------------------------
# masked cluster prediction with k-means targets
# ---------------------------------------------------------------------------


def kmeans_fit(x: np.ndarray, k: int, rng: np.random.Generator, n_iters: int = 25) -> np.ndarray:
    """k-means++ seeding then Lloyd iterations; empty clusters are reseeded
    to the point farthest from its assigned center."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < k:
        raise ValueError("fewer points than clusters")
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(n))]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[i] = x[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    for _ in range(n_iters):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        for i in range(k):
            pts = x[labels == i]
            if len(pts) == 0:
                worst = int(np.argmax(dists[np.arange(n), labels]))
                centers[i] = x[worst]
                labels[worst] = i
            else:
                centers[i] = pts.mean(axis=0)
    return centers


def kmeans_assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = ((np.asarray(x, dtype=np.float64)[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)


def group_mean_features(feats: np.ndarray, length: int, factor: int) -> np.ndarray:
    """Mean feature vector of each complete frame group in one utterance."""
    g = int(length) // factor
    return np.asarray(feats)[: g * factor].reshape(g, factor, -1).mean(axis=1)


@dataclass
class MaskedClusterConfig:
    n_clusters: int = 16
    mask_prob: float = 0.065
    span_len: int = 10
    alpha: float = 1.0  # weight of the masked term; 1 - alpha goes to unmasked


class MaskedClusterObjective(Module):
    """Predict the k-means cluster of each masked group from context."""

    def __init__(self, cfg: MaskedClusterConfig, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.children["classifier"] = Linear(rng, d_model, cfg.n_clusters)
        self.p["mask_emb"] = Tensor(
            rng.uniform(-0.5, 0.5, size=d_model).astype(np.float32), requires_grad=True
        )

    def loss(self, encoder: Encoder, feats, lengths, labels: np.ndarray,
             rng: np.random.Generator) -> Tensor:
        """labels (B, G) int, -1 marks positions without a target."""
        cfg = self.cfg
        latents, out_lengths = encoder.encode_latents(feats, lengths)
        B, G, D = latents.shape
        lab = np.asarray(labels)[:, :G]
        if lab.shape[1] < G:
            lab = np.pad(lab, ((0, 0), (0, G - lab.shape[1])), constant_values=-1)
        valid = (lab >= 0).sum(axis=1)
        mask = batch_mask(valid, G, rng, cfg.mask_prob, cfg.span_len)
        context = encoder.contextualize(
            apply_mask_embedding(latents, mask, self.p["mask_emb"]), out_lengths
        )
        logits = self.children["classifier"](context)
        safe_labels = np.maximum(lab, 0)
        ce = E.cross_entropy(logits, safe_labels)  # (B, G)
        terms = []
        for weight, sel in ((cfg.alpha, mask & (lab >= 0)), (1.0 - cfg.alpha, ~mask & (lab >= 0))):
            count = int(sel.sum())
            if weight == 0.0 or count == 0:
                continue
            w = sel.astype(np.float32) * (weight / count)
            terms.append(E.sum_(E.mul(ce, Tensor(w))))
        if not terms:
            raise ValueError("no labeled positions for cluster prediction")
        total = terms[0]
        for t in terms[1:]:
            total = E.add(total, t)
        return total


def fit_cluster_targets(corpus, factor: int, k: int, rng: np.random.Generator,
                        encoder: Encoder | None = None, n_iters: int = 25) -> np.ndarray:
    """Fit k-means over group features of a corpus.

    corpus is an iterable of (feats (T, D), length) pairs. With an encoder,
    features are its hidden states (one per group); otherwise raw group
    means. Returns the cluster centers.
    """
    rows = []
    for feats, length in corpus:
        if encoder is None:
            rows.append(group_mean_features(feats, length, factor))
        else:
            hidden, _ = encoder(feats[None, :, :], np.array([length]))
            g = int(length) // factor
            rows.append(hidden.data[0, :g])
    return kmeans_fit(np.concatenate(rows, axis=0), k, rng, n_iters=n_iters)


def assign_cluster_labels(feats: np.ndarray, length: int, centers: np.ndarray,
                          factor: int, encoder: Encoder | None = None) -> np.ndarray:
    if encoder is None:
        rows = group_mean_features(feats, length, factor)
    else:
        hidden, _ = encoder(feats[None, :, :], np.array([length]))
        rows = hidden.data[0, : int(length) // factor]
    return kmeans_assign(rows, centers)
