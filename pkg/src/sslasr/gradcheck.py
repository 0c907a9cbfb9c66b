"""Central-difference gradient verification for taped functions."""

from __future__ import annotations

import numpy as np

from . import engine as E
from .ctc import CTCHead, ctc_loss_batch
from .engine import Tape, Tensor, backward
from .model import EncoderConfig, ResidualAdapter, build_encoder
from .objectives import (
    GumbelQuantizer,
    APCConfig,
    BidirectionalAPC,
    ContrastiveConfig,
    ContrastiveObjective,
    EAPCObjective,
    MaskedClusterConfig,
    MaskedClusterObjective,
    group_mean_features,
    kmeans_assign,
    kmeans_fit,
)


def finite_diff_gradcheck(fn, inputs, eps: float = 1e-5) -> float:
    """Compare analytic gradients of fn against central differences.

    fn maps the given leaf Tensors to a scalar Tensor. All inputs must be
    float64 leaves. Returns the worst relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over every
    element of every input. Raises if fn is nondeterministic (two
    evaluations disagree bitwise).
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor) or t.dtype != np.float64:
            raise TypeError("gradcheck requires float64 Tensor inputs")

    def evaluate() -> float:
        out = fn(*inputs)
        if out.size != 1:
            raise ValueError("gradcheck requires a scalar-valued function")
        return float(out.data.reshape(()))

    first, second = evaluate(), evaluate()
    if first != second:
        raise RuntimeError("nondeterministic function under gradcheck")

    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
        backward(out, tape)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = evaluate()
            flat[i] = orig - eps
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst


def _conditioned_check(fn, draw, rng, tries: int = 8) -> float:
    """Gradcheck at a probe point whose gradient elements avoid the
    relative-error floor's blind spot.

    Elements with |g| between ~0 and 1e-3 make the floored relative error
    dominated by float64 noise, so such draws are rejected and redrawn.
    Exactly-zero gradients (masked-out inputs) are fine.
    """
    inputs = draw(rng)
    for _ in range(tries):
        for t in inputs:
            t.requires_grad = True
            t.grad = None
        with Tape() as tape:
            backward(fn(*inputs), tape)
        ok = True
        for t in inputs:
            g = np.abs(t.grad) if t.grad is not None else np.zeros(1)
            if np.any((g > 1e-12) & (g < 1e-3)):
                ok = False
        for t in inputs:
            t.grad = None
        if ok:
            break
        inputs = draw(rng)
    return finite_diff_gradcheck(fn, inputs)


def gradcheck_battery(seed: int) -> float:
    """Worst gradcheck error over the full primitive set for one seed.

    Inputs are drawn away from relu/max kinks so central differences
    stay valid; every primitive (and the composed helpers) appears in
    at least one checked function.
    """
    rng = np.random.default_rng([seed, 0x6C])

    def drawer(*shapes, shifts=None):
        offs = shifts or [0.0] * len(shapes)

        def make(r):
            return [Tensor(r.normal(size=s) + o, dtype=np.float64)
                    for s, o in zip(shapes, offs)]

        return make

    worst = 0.0

    w1 = rng.normal(size=(2, 3)) + 1.5
    worst = max(worst, _conditioned_check(
        lambda a, b: E.sum_(E.mul(E.add(E.log(a), E.sub(E.exp(E.mul(b, Tensor(np.full((), 0.3)))), E.relu(b))), Tensor(w1)))
        + E.sum_(E.mul(E.gelu(b), Tensor(w1))) + E.mean_(E.abs_(b)),
        drawer((2, 3), (2, 3), shifts=[3.5, 0.0]), rng))

    w2 = rng.normal(size=(2, 5, 3)) + 1.5
    worst = max(worst, _conditioned_check(
        lambda p, q: E.sum_(E.mul(E.reshape(E.slice_axis(E.concat(
            [E.transpose(E.matmul(p, q), (0, 2, 1))] * 2, axis=2), 2, 1, 4), (2, 5, 3)), Tensor(w2))),
        drawer((2, 3, 4), (4, 5)), rng))

    mask = np.ones((2, 6), dtype=bool)
    mask[0, 2] = False
    w3 = rng.normal(size=(2, 6)) + 1.5
    worst = max(worst, _conditioned_check(
        lambda v, gg, bv: E.sum_(E.mul(E.softmax(E.layer_norm(v, gg, bv, eps=1e-5), axis=-1, mask=mask), Tensor(w3))),
        drawer((2, 6), (6,), (6,), shifts=[0.0, 1.0, 0.0]), rng))

    for padding, stride in (("causal", 2), ("same", 1), ("none", 2)):
        out_t = {("causal", 2): 5, ("same", 1): 9, ("none", 2): 4}[(padding, stride)]
        wc = rng.normal(size=(2, out_t, 4)) + 1.5
        worst = max(worst, _conditioned_check(
            lambda u, v, z, p=padding, s=stride, w=wc: E.sum_(
                E.mul(E.conv1d(u, v, z, stride=s, padding=p), Tensor(w))),
            drawer((2, 9, 3), (3, 3, 4), (4,)), rng))

    idx = np.array([0, 3, 3])
    sel = np.array([[True], [False], [True]])
    w4 = rng.normal(size=(3, 4)) + 1.5
    worst = max(worst, _conditioned_check(
        lambda tt, oo: E.sum_(E.mul(E.masked_fill(E.where_mask(E.embedding(tt, idx), oo, sel),
                                                  np.array([[False, True, False, False]] * 3), 0.25), Tensor(w4))),
        drawer((5, 4), (3, 4)), rng))

    tg = np.array([0, 2, 1, 1])
    worst = max(worst, _conditioned_check(
        lambda p, q, l: E.sum_(E.cosine_similarity(p, q, axis=-1)) + E.sum_(E.cross_entropy(l, tg))
        + E.sum_(E.max_(l, axis=-1)) + E.sum_(E.log_softmax(l)) + E.sum_(E.logsumexp(l, axis=0)),
        drawer((3, 5), (3, 5), (4, 3), shifts=[0.6, -0.4, 0.0]), rng))

    return worst


def _float64_params(modules: dict) -> dict:
    """Cast every parameter of the given modules to float64 in place.

    Returns a flat name -> Tensor map with the dict keys as prefixes.
    """
    named = {}
    for prefix, m in modules.items():
        for k, t in m.named_params().items():
            t.data = t.data.astype(np.float64)
            named[f"{prefix}.{k}"] = t
    return named


def _param_draw(specs):
    """Draw closure over existing parameter tensors.

    specs is a list of (tensor, shift, scale); each call refreshes the
    tensors' values in place (keeping the array objects the model holds)
    so the enclosing loss sees the redrawn point.
    """

    def make(r):
        out = []
        for t, shift, scale in specs:
            t.data[...] = shift + scale * r.normal(size=t.data.shape)
            out.append(t)
        return out

    return make


def _with_linear_probe(base_fn, tensors, rng):
    """Add sum(w * t) over the checked tensors to a loss function.

    The linear term shifts every gradient element by an O(1) constant
    (central differences are exact on it), so no element can sit at an
    exact cancellation zero or inside the error floor's blind spot.
    """
    probes = [Tensor(rng.normal(size=t.data.shape) + 1.5, dtype=np.float64)
              for t in tensors]

    def fn(*args):
        out = base_fn(*args)
        for t, w in zip(tensors, probes):
            out = E.add(out, E.sum_(E.mul(t, w)))
        return out

    return fn


def loss_gradcheck_battery(seed: int) -> float:
    """Worst gradcheck error over every training loss for one seed.

    Each loss runs on a tiny float64 model and is checked against a
    sample of parameters drawn from every part of its graph: conv front
    end, attention, norms, generators, quantizer codebook, cluster
    classifier, CTC head, and residual adapters.
    """
    rng = np.random.default_rng([seed, 0x6D])
    enc_cfg = EncoderConfig(d_input=4, d_model=8, n_heads=2, n_blocks=1,
                            d_ffn=16, causal=True)
    feats = rng.normal(size=(2, 14, 4))
    lengths = np.array([14, 11])
    worst = 0.0

    def check(fn, specs):
        tensors = [t for t, _, _ in specs]
        return _conditioned_check(_with_linear_probe(fn, tensors, rng),
                                  _param_draw(specs), rng)

    # APC (single lag, squared error)
    enc = build_encoder(enc_cfg, seed)
    obj = EAPCObjective(APCConfig(shift=2, n_lags=1, p=2, d_feat=4), 8,
                        enc.subsample_factor, rng)
    named = _float64_params({"enc": enc, "obj": obj})
    worst = max(worst, check(
        lambda *_: obj.loss(enc, feats, lengths),
        [(named["enc.block0.attn.wo.w"], 0.0, 0.5),
         (named["enc.final_ln.g"], 1.0, 0.3),
         (named["enc.conv.conv2.b"], 0.0, 0.5),
         (named["obj.gen0.b"], 0.0, 0.5)]))

    # E-APC (two lags, absolute error)
    enc2 = build_encoder(enc_cfg, seed + 1)
    obj2 = EAPCObjective(APCConfig(shift=1, n_lags=2, p=1, d_feat=4), 8,
                         enc2.subsample_factor, rng)
    named = _float64_params({"enc": enc2, "obj": obj2})
    worst = max(worst, check(
        lambda *_: obj2.loss(enc2, feats, lengths),
        [(named["enc.block0.ffn.lin1.b"], 0.0, 0.5),
         (named["enc.block0.ln2.g"], 1.0, 0.3),
         (named["obj.gen1.b"], 0.0, 0.5),
         (named["enc.block0.attn.wq.b"], 0.0, 0.5)]))

    # bidirectional APC with a shared generator
    pair = BidirectionalAPC(enc_cfg, APCConfig(shift=1, n_lags=1, p=1, d_feat=4),
                            "share_generator", seed)
    named = _float64_params({"pair": pair})
    worst = max(worst, check(
        lambda *_: pair.loss(feats, lengths),
        [(named["pair.fwd.gen.gen0.b"], 0.0, 0.5),
         (named["pair.fwd.model.block0.ln1.g"], 1.0, 0.3),
         (named["pair.rev.model.conv.conv2.b"], 0.0, 0.5)]))

    # contrastive with quantized targets and diversity. The quantizer's
    # hard assignment makes the forward pass piecewise-constant in
    # anything upstream of the argmax (straight-through gradients are
    # biased there by design), so the check targets parameters the loss
    # is genuinely differentiable in: the mask embedding and context
    # blocks, and the codebook, which enters linearly after assignment.
    enc3 = build_encoder(enc_cfg, seed + 2)
    cobj = ContrastiveObjective(
        ContrastiveConfig(n_negatives=3, mask_prob=0.6, span_len=2, n_codes=4),
        8, rng)
    feats_c = rng.normal(size=(2, 20, 4))
    lengths_c = np.array([20, 17])
    named = _float64_params({"enc": enc3, "obj": cobj})
    worst = max(worst, check(
        lambda *_: cobj.loss(enc3, feats_c, lengths_c,
                             np.random.default_rng([seed, 0x77]), step=3),
        [(named["obj.mask_emb"], 0.0, 0.5),
         (named["obj.quantizer.codebook"], 0.0, 1.0),
         (named["enc.block0.attn.wv.b"], 0.0, 0.5),
         (named["enc.final_ln.g"], 1.0, 0.3)]))

    # the quantizer's soft path: diversity is smooth in the projection
    quant = cobj.children["quantizer"]
    z = Tensor(rng.normal(size=(2, 4, 8)))
    div_wts = np.ones((2, 4), dtype=np.float64)

    def div_fn(*_):
        _, soft = quant(z, np.random.default_rng([seed, 0x7C]), tau=1.5)
        return GumbelQuantizer.diversity_loss(soft, div_wts)

    worst = max(worst, check(
        div_fn,
        [(named["obj.quantizer.proj.w"], 0.0, 0.5),
         (named["obj.quantizer.proj.b"], 0.0, 0.5)]))

    # masked cluster prediction on k-means targets
    enc4 = build_encoder(enc_cfg, seed + 3)
    mobj = MaskedClusterObjective(
        MaskedClusterConfig(n_clusters=3, mask_prob=0.5, span_len=2, alpha=0.5),
        8, rng)
    gm = [group_mean_features(feats[i], int(lengths[i]), enc4.subsample_factor)
          for i in range(2)]
    centers = kmeans_fit(np.concatenate(gm).astype(np.float32), 3, rng)
    labels = np.full((2, 4), -1)
    for i in range(2):
        lab = kmeans_assign(gm[i].astype(np.float32), centers)
        labels[i, : len(lab)] = lab
    named = _float64_params({"enc": enc4, "obj": mobj})
    worst = max(worst, check(
        lambda *_: mobj.loss(enc4, feats, lengths, labels,
                             np.random.default_rng([seed, 0x78])),
        [(named["obj.mask_emb"], 0.0, 0.5),
         (named["obj.classifier.w"], 0.0, 0.5),
         (named["obj.classifier.b"], 0.0, 0.5),
         (named["enc.block0.attn.wk.b"], 0.0, 0.5)]))

    # CTC through an encoder carrying random-initialized adapters
    enc5 = build_encoder(enc_cfg, seed + 4)
    enc5.insert_adapters(2, np.random.default_rng([seed, 0x79]), random_init=True)
    head = CTCHead(np.random.default_rng([seed, 0x7A]), 8, vocab_size=3)
    named = _float64_params({"enc": enc5, "head": head})
    targets = [[1, 2], [2]]

    def ctc_fn(*_):
        hidden, out_lengths = enc5(feats, lengths)
        return ctc_loss_batch(head(hidden), out_lengths, targets)

    worst = max(worst, check(
        ctc_fn,
        [(named["head.out.w"], 0.0, 0.5),
         (named["head.out.b"], 0.0, 0.5),
         (named["enc.adapter1.down.w"], 0.0, 0.5),
         (named["enc.adapter1.up.w"], 0.0, 0.5),
         (named["enc.adapter0.ln.g"], 1.0, 0.3)]))

    # residual adapter forward on its own
    ada = ResidualAdapter(np.random.default_rng([seed, 0x7B]), 8, 2,
                          random_init=True)
    named = _float64_params({"ada": ada})
    xa = rng.normal(size=(2, 5, 8))
    wa = rng.normal(size=(2, 5, 8)) + 0.5

    worst = max(worst, check(
        lambda *_: E.sum_(E.mul(ada(Tensor(xa)), Tensor(wa))),
        [(named["ada.down.w"], 0.0, 0.5),
         (named["ada.up.w"], 0.0, 0.5),
         (named["ada.ln.g"], 1.0, 0.3),
         (named["ada.ln.b"], 0.0, 0.5)]))

    return worst
