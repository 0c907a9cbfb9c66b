"""Three-stage adaptation pipeline: SSL pretraining on the source domain,
adaptation on the unlabeled target domain (adapter-only or full SAFT),
and supervised CTC finetuning on the labeled target domain.

Every stage reads and writes SSLCKPT1 checkpoints carrying a config
snapshot and a provenance dict that counts optimizer steps applied to
the backbone ("f"), adapters ("ada"), and generator ("g")."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctc import CTCHead, ctc_loss_batch, edit_distance, error_rate, greedy_decode
from .data import CorpusConfig, make_corpus, pad_batch
from .engine import Tape, Tensor, backward
from .features import spec_augment
from .io import append_jsonl, load_checkpoint, save_checkpoint
from .model import Encoder, EncoderConfig, build_encoder
from .objectives import (
    APCConfig,
    BidirectionalAPC,
    ContrastiveConfig,
    ContrastiveObjective,
    EAPCObjective,
    MaskedClusterConfig,
    MaskedClusterObjective,
    assign_cluster_labels,
    fit_cluster_targets,
)
from .optim import Adam, clip_global_norm, noam_lr, tri_stage_lr

OBJECTIVES = ("apc", "eapc", "biapc", "contrastive", "masked_cluster")
ADAPT_MODES = ("draft", "saft")
FINETUNE_MODES = ("full", "adapters_frozen", "adapters_only", "random_adapters", "plus_ra")
_STAGE_IDS = {"pretrain": 1, "adapt": 2, "finetune": 3}

# structural fields that must match between a config and a checkpoint snapshot
_STRUCTURAL = (
    "d_feat", "d_model", "n_heads", "n_blocks", "d_ffn", "causal", "frontend",
    "objective", "biapc_scheme", "apc_shift", "apc_lags", "apc_p",
    "n_codes", "n_clusters", "vocab_size",
)


@dataclass
class PipelineConfig:
    # data (toy domain-shift task)
    vocab_size: int = 8
    d_feat: int = 8
    proto_len: int = 8
    min_tokens: int = 2
    max_tokens: int = 6
    noise_sigma: float = 0.1
    n_train: int = 500
    n_target: int = 200
    n_eval: int = 100
    proto_seed: int = 7
    corpus_seed: int = 100
    # model
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    d_ffn: int = 128
    causal: bool = True
    frontend: str = "logmel"
    # objective
    objective: str = "eapc"
    biapc_scheme: str = "share_generator"
    apc_shift: int = 1
    apc_lags: int = 2
    apc_p: int = 1
    n_codes: int = 32
    n_clusters: int = 16
    mask_prob: float = 0.2
    span_len: int = 2
    n_negatives: int = 10
    tau_cos: float = 0.1
    diversity_weight: float = 0.1
    cluster_alpha: float = 1.0
    # optimization
    seed: int = 0
    batch_size: int = 8
    pretrain_steps: int = 150
    adapt_steps: int = 80
    finetune_steps: int = 60
    noam_factor: float = 0.5
    noam_warmup: int = 50
    saft_lr_scale: float = 0.5
    ft_peak_lr: float = 2e-3
    ft_warmup_frac: float = 0.1
    ft_hold_frac: float = 0.4
    ft_final_scale: float = 0.05
    clip_norm: float = 5.0
    d_adapter: int = 8
    spec_augment: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {k: v for k, v in d.items() if k in cls().__dict__}
        return cls(**known)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d_input=self.d_feat, d_model=self.d_model, n_heads=self.n_heads,
            n_blocks=self.n_blocks, d_ffn=self.d_ffn, causal=self.causal,
            frontend=self.frontend,
        )


def build_corpora(cfg: PipelineConfig) -> dict:
    """Source/target corpora drawn from one underlying task (same proto_seed)."""

    def corpus(domain, n, seed):
        return make_corpus(CorpusConfig(
            n_utterances=n, vocab_size=cfg.vocab_size, d_feat=cfg.d_feat,
            proto_len=cfg.proto_len, min_tokens=cfg.min_tokens, max_tokens=cfg.max_tokens,
            noise_sigma=cfg.noise_sigma, domain=domain, seed=seed, proto_seed=cfg.proto_seed,
        ))

    return {
        "source_train": corpus("source", cfg.n_train, cfg.corpus_seed),
        "target_train": corpus("target", cfg.n_target, cfg.corpus_seed + 2),
        "target_eval": corpus("target", cfg.n_eval, cfg.corpus_seed + 3),
    }


class SSLBundle:
    """Encoder(s) plus self-supervised objective for one recipe."""

    def __init__(self, cfg: PipelineConfig, seed: int):
        if cfg.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective '{cfg.objective}'")
        self.cfg = cfg
        self.kind = cfg.objective
        enc_cfg = cfg.encoder_config()
        self.centers = None  # k-means centers for masked_cluster
        self.centers_encoder = None  # encoder used when assigning labels
        if self.kind == "biapc":
            apc = APCConfig(shift=cfg.apc_shift, n_lags=cfg.apc_lags, p=cfg.apc_p, d_feat=cfg.d_feat)
            self.pair = BidirectionalAPC(enc_cfg, apc, cfg.biapc_scheme, seed)
            self.encoder = self.pair.fwd
        else:
            self.pair = None
            self.encoder = build_encoder(enc_cfg, seed)
            rng = np.random.default_rng([seed, 0x0B1])
            if self.kind in ("apc", "eapc"):
                n_lags = 1 if self.kind == "apc" else cfg.apc_lags
                apc = APCConfig(shift=cfg.apc_shift, n_lags=n_lags, p=cfg.apc_p, d_feat=cfg.d_feat)
                self.obj = EAPCObjective(apc, cfg.d_model, self.encoder.subsample_factor, rng)
            elif self.kind == "contrastive":
                ccfg = ContrastiveConfig(
                    n_negatives=cfg.n_negatives, tau_cos=cfg.tau_cos, mask_prob=cfg.mask_prob,
                    span_len=cfg.span_len, n_codes=cfg.n_codes,
                    diversity_weight=cfg.diversity_weight,
                )
                self.obj = ContrastiveObjective(ccfg, cfg.d_model, rng)
            else:
                mcfg = MaskedClusterConfig(
                    n_clusters=cfg.n_clusters, mask_prob=cfg.mask_prob,
                    span_len=cfg.span_len, alpha=cfg.cluster_alpha,
                )
                self.obj = MaskedClusterObjective(mcfg, cfg.d_model, rng)

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> dict:
        if self.pair is not None:
            return self.pair.named_params()
        out = {"model." + k: v for k, v in self.encoder.named_params().items()}
        out.update({"obj." + k: v for k, v in self.obj.named_params().items()})
        return out

    def param_groups(self) -> dict:
        """Split into backbone 'f', adapters 'ada', generator 'g' (unique tensors)."""
        groups = {"f": {}, "ada": {}, "g": {}}
        for name, t in self.named_params().items():
            if ".adapter" in name or name.startswith("adapter"):
                groups["ada"][name] = t
            elif name.startswith("obj.") or ".gen." in name or name.startswith("fwd.gen") or name.startswith("rev.gen"):
                groups["g"][name] = t
            else:
                groups["f"][name] = t
        return groups

    # -- adapters -----------------------------------------------------------

    def insert_adapters(self, d_adapter: int, rng, random_init: bool = False) -> None:
        if self.pair is not None:
            self.pair.insert_adapters(d_adapter, rng, random_init=random_init)
        else:
            self.encoder.insert_adapters(d_adapter, rng, random_init=random_init)

    @property
    def adapters_inserted(self) -> bool:
        return self.encoder.adapters_inserted

    # -- targets for masked_cluster ------------------------------------------

    def _frozen_encoder_copy(self) -> Encoder:
        """Detached copy of the current encoder for target assignment."""
        copy = build_encoder(self.cfg.encoder_config(), self.cfg.seed)
        if self.encoder.adapters_inserted:
            copy.insert_adapters(self.encoder.d_adapter,
                                 np.random.default_rng([self.cfg.seed, 0xADA]))
        copy.load_params({k: v.data.copy() for k, v in self.encoder.named_params().items()})
        return copy

    def prepare_cluster_targets(self, corpus, rng, use_encoder: bool) -> None:
        """Fit k-means targets and precompute labels for the whole corpus.

        Targets stay frozen for the rest of the stage even while the live
        encoder trains, so encoder-based labeling uses a detached copy."""
        pairs = [(u.feats, u.feats.shape[0]) for u in corpus]
        enc = self._frozen_encoder_copy() if use_encoder else None
        self.centers = fit_cluster_targets(pairs, self.encoder.subsample_factor,
                                           self.cfg.n_clusters, rng, encoder=enc)
        self.centers_encoder = enc
        self._label_cache = {
            u.utt_id: assign_cluster_labels(u.feats, u.feats.shape[0], self.centers,
                                            self.encoder.subsample_factor, encoder=enc)
            for u in corpus
        }

    def cluster_labels(self, batch_utts) -> np.ndarray:
        if self.centers is None:
            raise RuntimeError("cluster targets not prepared")
        factor = self.encoder.subsample_factor
        g = max(-(-u.feats.shape[0] // factor) for u in batch_utts)
        labels = np.full((len(batch_utts), g), -1, dtype=np.int64)
        cache = getattr(self, "_label_cache", {})
        for i, u in enumerate(batch_utts):
            lab = cache.get(u.utt_id)
            if lab is None:
                lab = assign_cluster_labels(u.feats, u.feats.shape[0], self.centers,
                                            factor, encoder=self.centers_encoder)
            labels[i, : len(lab)] = lab
        return labels

    # -- loss ----------------------------------------------------------------

    def loss(self, batch_utts, rng: np.random.Generator, step: int) -> Tensor:
        feats, lengths, _ = pad_batch(batch_utts)
        if self.kind in ("apc", "eapc"):
            return self.obj.loss(self.encoder, feats, lengths, normalize=True)
        if self.kind == "biapc":
            return self.pair.loss(feats, lengths, normalize=True)
        if self.kind == "contrastive":
            return self.obj.loss(self.encoder, feats, lengths, rng, step=step)
        labels = self.cluster_labels(batch_utts)
        return self.obj.loss(self.encoder, feats, lengths, labels, rng)

    def encoder_for_finetune(self) -> Encoder:
        if self.pair is not None:
            return self.pair.average_directions()
        return self.encoder


# ---------------------------------------------------------------------------
# checkpoint plumbing
# ---------------------------------------------------------------------------


def _snapshot(cfg: PipelineConfig, extra: dict) -> dict:
    snap = cfg.to_dict()
    snap.update(extra)
    return snap


def _require_compatible(cfg: PipelineConfig, snapshot: dict) -> None:
    mine = cfg.to_dict()
    bad = [k for k in _STRUCTURAL if k in snapshot and snapshot[k] != mine[k]]
    if bad:
        raise ValueError(f"config mismatch with checkpoint on fields {bad}")


def save_bundle(path, bundle: SSLBundle, cfg: PipelineConfig, provenance: dict,
                stage: str, step: int) -> None:
    params = dict(bundle.named_params())
    if bundle.centers is not None:
        params["aux.cluster_centers"] = bundle.centers
    extra = {
        "stage": stage,
        "adapters_d": bundle.encoder.d_adapter if bundle.adapters_inserted else 0,
        "cluster_targets_from_encoder": bool(bundle.centers_encoder is not None),
    }
    save_checkpoint(path, params, _snapshot(cfg, extra), provenance,
                    rng_state={"seed": cfg.seed, "stage": stage, "step": step})


def load_bundle(cfg: PipelineConfig, ckpt_path) -> tuple:
    """Rebuild an SSLBundle from a checkpoint; returns (bundle, provenance)."""
    ckpt = load_checkpoint(ckpt_path)
    _require_compatible(cfg, ckpt.config)
    snap_cfg = PipelineConfig.from_dict(ckpt.config)
    bundle = SSLBundle(snap_cfg, seed=snap_cfg.seed)
    d_ada = int(ckpt.config.get("adapters_d", 0))
    if d_ada:
        bundle.insert_adapters(d_ada, np.random.default_rng([snap_cfg.seed, 0xADA]))
    params = dict(ckpt.params)
    centers = params.pop("aux.cluster_centers", None)
    _assign_params(bundle.named_params(), params)
    if centers is not None:
        bundle.centers = centers
        if ckpt.config.get("cluster_targets_from_encoder"):
            bundle.centers_encoder = bundle._frozen_encoder_copy()
    return bundle, dict(ckpt.provenance)


def _assign_params(named: dict, flat: dict) -> None:
    if set(named) != set(flat):
        missing = sorted(set(named) - set(flat))
        extra = sorted(set(flat) - set(named))
        raise ValueError(f"checkpoint parameter mismatch: missing={missing[:4]} extra={extra[:4]}")
    for k, t in named.items():
        arr = np.asarray(flat[k])
        if tuple(arr.shape) != t.shape:
            raise ValueError(f"shape mismatch for '{k}': {arr.shape} vs {t.shape}")
        t.data = np.ascontiguousarray(arr.astype(t.dtype))


# ---------------------------------------------------------------------------
# the shared training loop
# ---------------------------------------------------------------------------


def _set_trainable(all_params: dict, trainable: dict) -> None:
    ids = {id(t) for t in trainable.values()}
    for t in all_params.values():
        t.requires_grad = id(t) in ids
        t.grad = None


def _train_loop(stage: str, cfg: PipelineConfig, corpus, loss_fn, all_params: dict,
                trainable: dict, steps: int, lr_fn, metrics_path) -> None:
    if not trainable and steps > 0:
        raise ValueError(f"stage '{stage}' has no trainable parameters")
    _set_trainable(all_params, trainable)
    opt = Adam(trainable)
    n = len(corpus)
    stage_id = _STAGE_IDS[stage]
    for step in range(1, steps + 1):
        rng = np.random.default_rng([cfg.seed, stage_id, step])
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        batch = [corpus[int(i)] for i in idx]
        opt.zero_grad()
        with Tape() as tape:
            loss = loss_fn(batch, rng, step)
            backward(loss, tape)
        clip_global_norm(trainable, cfg.clip_norm)
        lr = lr_fn(step)
        opt.step(lr=lr)
        if metrics_path is not None:
            append_jsonl(metrics_path, {
                "step": step, "stage": stage, "loss": float(loss.data),
                "lr": lr, "seed": cfg.seed,
            })
    # leave every parameter differentiable and grad-free for downstream use
    for t in all_params.values():
        t.requires_grad = True
        t.grad = None


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def run_pretrain(cfg: PipelineConfig, workdir, corpus=None, steps: int | None = None) -> str:
    """SSL pretraining on the source domain; returns the checkpoint path."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if steps is None:
        steps = cfg.pretrain_steps
    if corpus is None:
        corpus = build_corpora(cfg)["source_train"]
    bundle = SSLBundle(cfg, seed=cfg.seed)
    if cfg.objective == "masked_cluster":
        bundle.prepare_cluster_targets(corpus, np.random.default_rng([cfg.seed, 0x535]),
                                       use_encoder=False)
    params = bundle.named_params()
    lr_fn = lambda s: noam_lr(s, cfg.d_model, cfg.noam_warmup, cfg.noam_factor)
    _train_loop("pretrain", cfg, corpus, bundle.loss, params, params, steps, lr_fn,
                workdir / "pretrain_metrics.jsonl")
    groups = bundle.param_groups()
    provenance = {"f": steps if groups["f"] else 0, "ada": 0, "g": steps if groups["g"] else 0}
    out = workdir / "pretrain.ckpt"
    save_bundle(out, bundle, cfg, provenance, "pretrain", steps)
    return str(out)


def run_adapt(cfg: PipelineConfig, ckpt_path, workdir, mode: str = "draft",
              corpus=None, steps: int | None = None) -> str:
    """Unlabeled target-domain adaptation.

    'draft' inserts fresh adapters and trains only them (backbone and
    generator stay bit-identical); 'saft' updates every parameter at a
    reduced peak learning rate."""
    if mode not in ADAPT_MODES:
        raise ValueError(f"unknown adapt mode '{mode}'")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if steps is None:
        steps = cfg.adapt_steps
    if corpus is None:
        corpus = build_corpora(cfg)["target_train"]
    bundle, provenance = load_bundle(cfg, ckpt_path)
    if cfg.objective == "masked_cluster":
        # second-stage targets: refit clusters on the pretrained encoder's features
        bundle.prepare_cluster_targets(corpus, np.random.default_rng([cfg.seed, 0x535, 2]),
                                       use_encoder=True)
    if mode == "draft":
        if bundle.adapters_inserted:
            if bundle.encoder.d_adapter != cfg.d_adapter:
                raise ValueError("checkpoint already has adapters of a different size")
        else:
            bundle.insert_adapters(cfg.d_adapter, np.random.default_rng([cfg.seed, 0xADA]))
        factor = cfg.noam_factor
    else:
        if bundle.adapters_inserted:
            raise ValueError("saft does not apply to a model with adapters")
        factor = cfg.noam_factor * cfg.saft_lr_scale
    params = bundle.named_params()
    groups = bundle.param_groups()
    trainable = groups["ada"] if mode == "draft" else params
    lr_fn = lambda s: noam_lr(s, cfg.d_model, cfg.noam_warmup, factor)
    _train_loop("adapt", cfg, corpus, bundle.loss, params, trainable, steps, lr_fn,
                workdir / f"adapt_{mode}_metrics.jsonl")
    if mode == "draft":
        provenance["ada"] = provenance.get("ada", 0) + steps
    else:
        provenance["f"] = provenance.get("f", 0) + steps
        provenance["g"] = provenance.get("g", 0) + steps
    out = workdir / f"adapt_{mode}.ckpt"
    save_bundle(out, bundle, cfg, provenance, "adapt", steps)
    return str(out)


def run_finetune(cfg: PipelineConfig, ckpt_path, workdir, mode: str = "full",
                 corpus=None, steps: int | None = None) -> str:
    """Supervised CTC finetuning with a fresh generator; returns ckpt path."""
    if mode not in FINETUNE_MODES:
        raise ValueError(f"unknown finetune mode '{mode}'")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if steps is None:
        steps = cfg.finetune_steps
    if corpus is None:
        corpus = build_corpora(cfg)["target_train"]
    bundle, provenance = load_bundle(cfg, ckpt_path)
    encoder = bundle.encoder_for_finetune()

    if mode in ("adapters_frozen", "adapters_only", "random_adapters"):
        if not encoder.adapters_inserted:
            raise ValueError(f"finetune mode '{mode}' requires a checkpoint with adapters")
    if mode == "random_adapters":
        encoder.reinit_adapters(np.random.default_rng([cfg.seed, 0xF00D]))
    if mode == "plus_ra":
        if encoder.adapters_inserted:
            raise ValueError("finetune mode 'plus_ra' requires a checkpoint without adapters")
        encoder.insert_adapters(cfg.d_adapter, np.random.default_rng([cfg.seed, 0xF00D]))

    head = CTCHead(np.random.default_rng([cfg.seed, 0xC7C]), cfg.d_model, cfg.vocab_size)
    all_params = {"model." + k: v for k, v in encoder.named_params().items()}
    all_params.update({"ctc." + k: v for k, v in head.named_params().items()})
    head_params = {"ctc." + k: v for k, v in head.named_params().items()}
    backbone = {"model." + k: v for k, v in encoder.backbone_params().items()}
    adapters = {"model." + k: v for k, v in encoder.adapter_params().items()}
    if mode == "full":
        trainable = dict(all_params)
    elif mode == "adapters_frozen":
        trainable = {**backbone, **head_params}
    else:  # adapters_only, random_adapters, plus_ra
        trainable = {**adapters, **head_params}

    warmup = max(1, int(round(cfg.ft_warmup_frac * steps)))
    hold = int(round(cfg.ft_hold_frac * steps))
    decay = max(1, steps - warmup - hold)
    lr_fn = lambda s: tri_stage_lr(s, cfg.ft_peak_lr, warmup, hold, decay, cfg.ft_final_scale)

    def loss_fn(batch, rng, step):
        feats, lengths, targets = pad_batch(batch)
        if cfg.spec_augment:
            for i, n in enumerate(lengths):
                feats[i, :n] = spec_augment(feats[i, :n], rng)
        hidden, out_lengths = encoder(feats, lengths)
        logits = head(hidden)
        # corpus tokens are 0-based; CTC reserves 0 for the blank
        shifted = [[t + 1 for t in y] for y in targets]
        return ctc_loss_batch(logits, out_lengths, shifted, normalize=True)

    _train_loop("finetune", cfg, corpus, loss_fn, all_params, trainable, steps, lr_fn,
                Path(workdir) / f"finetune_{mode}_metrics.jsonl")

    if trainable.keys() & backbone.keys():
        provenance["f"] = provenance.get("f", 0) + steps
    if trainable.keys() & adapters.keys():
        provenance["ada"] = provenance.get("ada", 0) + steps
    provenance["g"] = provenance.get("g", 0) + steps

    params = dict(all_params)
    extra = {"stage": "finetune", "finetune_mode": mode,
             "adapters_d": encoder.d_adapter if encoder.adapters_inserted else 0}
    out = Path(workdir) / f"finetune_{mode}.ckpt"
    save_checkpoint(out, params, _snapshot(cfg, extra), provenance,
                    rng_state={"seed": cfg.seed, "stage": "finetune", "step": steps})
    return str(out)


def load_finetuned(cfg: PipelineConfig, ckpt_path):
    """Rebuild (encoder, ctc_head) from a finetune checkpoint."""
    ckpt = load_checkpoint(ckpt_path)
    _require_compatible(cfg, ckpt.config)
    snap = PipelineConfig.from_dict(ckpt.config)
    encoder = build_encoder(snap.encoder_config(), snap.seed)
    d_ada = int(ckpt.config.get("adapters_d", 0))
    if d_ada:
        encoder.insert_adapters(d_ada, np.random.default_rng([snap.seed, 0xADA]))
    head = CTCHead(np.random.default_rng([snap.seed, 0xC7C]), snap.d_model, snap.vocab_size)
    named = {"model." + k: v for k, v in encoder.named_params().items()}
    named.update({"ctc." + k: v for k, v in head.named_params().items()})
    _assign_params(named, dict(ckpt.params))
    return encoder, head, dict(ckpt.provenance)


def run_evaluate(cfg: PipelineConfig, ckpt_path, corpus=None) -> dict:
    """Greedy-decode an eval corpus and report the token error rate."""
    if corpus is None:
        corpus = build_corpora(cfg)["target_eval"]
    if not corpus:
        raise ValueError("no utterances")
    encoder, head, provenance = load_finetuned(cfg, ckpt_path)
    refs, hyps = [], []
    b = max(1, cfg.batch_size)
    for i in range(0, len(corpus), b):
        chunk = corpus[i : i + b]
        feats, lengths, targets = pad_batch(chunk)
        hidden, out_lengths = encoder(feats, lengths)
        logits = head(hidden)
        for j, target in enumerate(targets):
            t_j = int(out_lengths[j])
            hyp = greedy_decode(logits.data[j, :t_j], blank=0)
            refs.append(target)
            hyps.append([t - 1 for t in hyp])  # undo the blank offset
    ter = error_rate(refs, hyps)
    edits = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    return {
        "ter": ter,
        "n_utterances": len(refs),
        "total_ref_tokens": int(sum(len(r) for r in refs)),
        "total_edits": int(edits),
        "checkpoint": str(ckpt_path),
        "provenance": provenance,
    }


# ---------------------------------------------------------------------------
# whole-pipeline variants
# ---------------------------------------------------------------------------

PIPELINES = ("draft", "saft", "no_adapt", "scratch")


def run_pipeline(cfg: PipelineConfig, workdir, variant: str = "draft",
                 finetune_mode: str = "full") -> dict:
    """Run one end-to-end variant and return its evaluation report.

    draft:    pretrain (source) -> adapter-only adapt (target) -> finetune
    saft:     pretrain (source) -> full adapt (target) -> finetune
    no_adapt: pretrain (source) -> finetune
    scratch:  random init -> finetune
    """
    if variant not in PIPELINES:
        raise ValueError(f"unknown pipeline variant '{variant}'")
    workdir = Path(workdir)
    corpora = build_corpora(cfg)
    pre_steps = 0 if variant == "scratch" else None
    ckpt = run_pretrain(cfg, workdir, corpus=corpora["source_train"], steps=pre_steps)
    if variant in ("draft", "saft"):
        ckpt = run_adapt(cfg, ckpt, workdir, mode=variant, corpus=corpora["target_train"])
    ckpt = run_finetune(cfg, ckpt, workdir, mode=finetune_mode, corpus=corpora["target_train"])
    report = run_evaluate(cfg, ckpt, corpus=corpora["target_eval"])
    report["variant"] = variant
    return report
