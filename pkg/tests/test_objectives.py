"""Five self-supervised objectives: exact reductions, sharing schemes,
masking, quantization, and k-means targets."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslasr import engine as E
from sslasr.engine import Tape, Tensor
from sslasr.model import EncoderConfig, build_encoder
from sslasr.objectives import (
    APCConfig,
    BidirectionalAPC,
    ContrastiveConfig,
    ContrastiveObjective,
    EAPCObjective,
    GumbelQuantizer,
    MaskedClusterConfig,
    MaskedClusterObjective,
    apc_loss,
    apply_mask_embedding,
    assign_cluster_labels,
    batch_mask,
    fit_cluster_targets,
    group_mean_features,
    gumbel_tau,
    kmeans_assign,
    kmeans_fit,
    reverse_group_blocks,
    sample_mask_spans,
    stack_targets,
    valid_groups,
)

ENC = EncoderConfig(d_input=4, d_model=8, n_heads=2, n_blocks=1, d_ffn=16, causal=True)


def batch(rng, b=2, t=16, d=4):
    feats = rng.normal(size=(b, t, d)).astype(np.float32)
    lengths = [t, t - 3][:b]
    return feats, lengths


class TestTargets:
    def test_stack_targets_hand_case(self):
        feats = np.arange(10, dtype=np.float32).reshape(1, 5, 2)
        stacked, valid = stack_targets(feats, [5], factor=2)
        assert stacked.shape == (1, 3, 4)
        assert np.array_equal(stacked[0, 0], [0, 1, 2, 3])
        assert np.array_equal(stacked[0, 1], [4, 5, 6, 7])
        assert np.array_equal(stacked[0, 2], [8, 9, 0, 0])  # padded partial group
        assert list(valid) == [2]

    def test_valid_groups(self):
        assert list(valid_groups([16, 13, 3], 4)) == [4, 3, 0]

    def test_apc_loss_hand_values(self):
        pred = Tensor(np.array([[[1.0, 2.0], [3.0, 5.0]]], dtype=np.float32))
        target = np.array([[[0.0, 0.0], [1.0, 1.0]]], dtype=np.float32)
        mask = np.array([[True, True]])
        assert apc_loss(pred, target, mask, p=1).data == pytest.approx(1 + 2 + 2 + 4)
        assert apc_loss(pred, target, mask, p=2).data == pytest.approx(1 + 4 + 4 + 16)
        half = np.array([[False, True]])
        assert apc_loss(pred, target, half, p=1).data == pytest.approx(6.0)
        assert apc_loss(pred, target, half, p=1, normalize=True).data == pytest.approx(3.0)

    def test_apc_loss_errors(self):
        pred = Tensor(np.zeros((1, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="p must be"):
            apc_loss(pred, np.zeros((1, 2, 2)), np.ones((1, 2), dtype=bool), p=3)
        with pytest.raises(ValueError, match="no valid prediction targets"):
            apc_loss(pred, np.zeros((1, 2, 2)), np.zeros((1, 2), dtype=bool), normalize=True)


class TestFutureRegression:
    def test_single_lag_matches_manual_apc(self):
        rng = np.random.default_rng(0)
        enc = build_encoder(ENC, seed=0)
        obj = EAPCObjective(APCConfig(shift=2, n_lags=1, p=1, d_feat=4), 8, 4, rng)
        feats, lengths = batch(rng)
        got = obj.loss(enc, feats, lengths, normalize=False)

        hidden, _ = enc(feats, lengths)
        stacked, valid = stack_targets(feats, lengths, 4)
        g = stacked.shape[1]
        target = np.zeros_like(stacked)
        target[:, : g - 2] = stacked[:, 2:]
        mask = np.arange(g)[None, :] < np.maximum(valid[:, None] - 2, 0)
        want = apc_loss(obj.children["gen0"](hidden), target, mask, p=1)
        assert got.data == want.data

    def test_multi_lag_sum_matches_independent_single_lags(self):
        rng = np.random.default_rng(1)
        enc = build_encoder(ENC, seed=1)
        multi = EAPCObjective(APCConfig(shift=2, n_lags=2, p=2, d_feat=4), 8, 4, rng)
        singles = []
        for i, shift in enumerate((2, 3)):
            s = EAPCObjective(APCConfig(shift=shift, n_lags=1, p=2, d_feat=4), 8, 4,
                              np.random.default_rng(99))
            s.children["gen0"].p["w"].data = multi.children[f"gen{i}"].p["w"].data.copy()
            s.children["gen0"].p["b"].data = multi.children[f"gen{i}"].p["b"].data.copy()
            singles.append(s)
        feats, lengths = batch(rng, t=24)
        total = multi.loss(enc, feats, lengths, normalize=False)
        parts = [s.loss(enc, feats, lengths, normalize=False) for s in singles]
        assert total.data == np.float32(parts[0].data + parts[1].data)

    def test_normalization_divides_by_contributing_elements(self):
        rng = np.random.default_rng(2)
        enc = build_encoder(ENC, seed=2)
        obj = EAPCObjective(APCConfig(shift=1, n_lags=2, p=1, d_feat=4), 8, 4, rng)
        feats, lengths = batch(rng)
        raw = obj.loss(enc, feats, lengths, normalize=False).data
        norm = obj.loss(enc, feats, lengths, normalize=True).data
        valid = valid_groups(lengths, 4)
        count = sum(int(np.maximum(valid - lag, 0).sum()) * 16 for lag in (1, 2))
        assert norm == pytest.approx(raw / count, rel=1e-6)

    def test_all_lags_out_of_range_rejected(self):
        rng = np.random.default_rng(3)
        enc = build_encoder(ENC, seed=3)
        obj = EAPCObjective(APCConfig(shift=9, n_lags=1, d_feat=4), 8, 4, rng)
        feats, lengths = batch(rng)  # only 4 valid groups, lag 9 impossible
        with pytest.raises(ValueError, match="no valid prediction targets at any lag"):
            obj.loss(enc, feats, lengths)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError, match=">= 1"):
            EAPCObjective(APCConfig(shift=0), 8, 4, np.random.default_rng(0))


class TestReversal:
    def test_reverse_group_blocks_hand_case(self):
        feats = np.arange(7, dtype=np.float32).reshape(1, 7, 1)
        out = reverse_group_blocks(feats, [6], factor=2)
        assert out[0, :, 0].tolist() == [4, 5, 2, 3, 0, 1, 6]
        assert feats[0, 0, 0] == 0  # input untouched

    def test_double_reverse_is_identity(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(3, 13, 2)).astype(np.float32)
        lengths = [13, 8, 3]
        once = reverse_group_blocks(feats, lengths, 4)
        twice = reverse_group_blocks(once, lengths, 4)
        assert np.array_equal(twice, feats)

    def test_palindromic_groups_are_fixed_points(self):
        rng = np.random.default_rng(5)
        g0 = rng.normal(size=(4, 2)).astype(np.float32)
        g1 = rng.normal(size=(4, 2)).astype(np.float32)
        feats = np.concatenate([g0, g1, g0], axis=0)[None]
        assert np.array_equal(reverse_group_blocks(feats, [12], 4), feats)


class TestBidirectional:
    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError, match="unknown sharing scheme"):
            BidirectionalAPC(ENC, APCConfig(d_feat=4), "share_everything", seed=0)

    def test_scheme_none_keeps_directions_independent(self):
        pair = BidirectionalAPC(ENC, APCConfig(d_feat=4), "none", seed=0)
        assert not pair.rev_obj.shares_storage_with(pair.fwd_obj)
        names = set(pair.named_params())
        assert any(n.startswith("rev.model.") for n in names)
        assert any(n.startswith("rev.gen.") for n in names)

    def test_share_generator_aliases_only_generators(self):
        pair = BidirectionalAPC(ENC, APCConfig(d_feat=4), "share_generator", seed=0)
        assert pair.rev_obj.shares_storage_with(pair.fwd_obj)
        assert not pair.rev.shares_storage_with(pair.fwd)
        names = set(pair.named_params())
        assert not any(n.startswith("rev.gen.") for n in names)
        assert any(n.startswith("rev.model.") for n in names)

    def test_share_gen_encoder_aliases_blocks_not_conv(self):
        pair = BidirectionalAPC(ENC, APCConfig(d_feat=4), "share_gen_encoder", seed=0)
        f, r = pair.fwd.children, pair.rev.children
        assert r["block0"].shares_storage_with(f["block0"])
        assert r["final_ln"].shares_storage_with(f["final_ln"])
        assert not r["conv"].shares_storage_with(f["conv"])
        assert pair.rev_obj.shares_storage_with(pair.fwd_obj)

    def test_share_all_aliases_everything(self):
        pair = BidirectionalAPC(ENC, APCConfig(d_feat=4), "share_all", seed=0)
        assert pair.rev.shares_storage_with(pair.fwd)
        assert pair.rev_obj.shares_storage_with(pair.fwd_obj)
        names = set(pair.named_params())
        assert not any(n.startswith("rev.") for n in names)

    def test_update_through_shared_tensor_is_visible_both_ways(self):
        pair = BidirectionalAPC(ENC, APCConfig(d_feat=4), "share_generator", seed=0)
        pair.fwd_obj.children["gen0"].p["b"].data[:] = 7.0
        assert np.all(pair.rev_obj.children["gen0"].p["b"].data == 7.0)

    def test_adapters_follow_host_sharing(self):
        pair = BidirectionalAPC(ENC, APCConfig(d_feat=4), "share_gen_encoder", seed=0)
        pair.insert_adapters(4, np.random.default_rng(0), random_init=True)
        f, r = pair.fwd.children, pair.rev.children
        assert r["adapter1"].shares_storage_with(f["adapter1"])
        assert not r["adapter0"].shares_storage_with(f["adapter0"])

    def test_share_all_loss_doubles_on_palindromic_input(self):
        pair = BidirectionalAPC(ENC, APCConfig(shift=1, n_lags=1, d_feat=4), "share_all", seed=0)
        rng = np.random.default_rng(6)
        g0 = rng.normal(size=(4, 4)).astype(np.float32)
        g1 = rng.normal(size=(4, 4)).astype(np.float32)
        feats = np.concatenate([g0, g1, g0], axis=0)[None]
        total = pair.loss(feats, [12], normalize=False)
        fwd_only = pair.fwd_obj.loss(pair.fwd, feats, [12], normalize=False)
        assert total.data == np.float32(2.0) * fwd_only.data

    def test_average_directions_is_idempotent(self):
        pair = BidirectionalAPC(ENC, APCConfig(d_feat=4), "share_generator", seed=0)
        f_w = pair.fwd.children["conv"].children["conv1"].p["w"]
        r_w = pair.rev.children["conv"].children["conv1"].p["w"]
        mean = (f_w.data.astype(np.float64) + r_w.data.astype(np.float64)) / 2
        enc = pair.average_directions()
        assert enc is pair.fwd
        assert np.allclose(f_w.data, mean.astype(np.float32), atol=0)
        assert np.array_equal(f_w.data, r_w.data)
        snapshot = f_w.data.copy()
        pair.average_directions()
        assert np.array_equal(f_w.data, snapshot)


class TestSpanMasking:
    def test_minimum_one_span_forced(self):
        rng = np.random.default_rng(0)
        for n in (1, 3, 10):
            mask = sample_mask_spans(n, rng, mask_prob=0.0, span_len=3)
            assert mask.shape == (n,)
            assert mask.sum() >= 1

    def test_min_spans_zero_allows_empty(self):
        mask = sample_mask_spans(10, np.random.default_rng(0), mask_prob=0.0,
                                 span_len=3, min_spans=0)
        assert not mask.any()

    def test_zero_length(self):
        assert sample_mask_spans(0, np.random.default_rng(0)).shape == (0,)

    def test_forced_span_shape(self):
        # exactly one span when nothing fires: a run of span_len (clipped)
        mask = sample_mask_spans(20, np.random.default_rng(3), mask_prob=0.0, span_len=4)
        edges = np.flatnonzero(np.diff(np.concatenate([[0], mask, [0]])))
        assert len(edges) == 2 and 1 <= edges[1] - edges[0] <= 4

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 40), seed=st.integers(0, 1000))
    def test_mask_stays_in_bounds_and_is_deterministic(self, n, seed):
        a = sample_mask_spans(n, np.random.default_rng(seed), mask_prob=0.3, span_len=5)
        b = sample_mask_spans(n, np.random.default_rng(seed), mask_prob=0.3, span_len=5)
        assert np.array_equal(a, b)
        assert a.shape == (n,)

    def test_batch_mask_respects_lengths(self):
        mask = batch_mask(np.array([5, 2, 0]), 8, np.random.default_rng(1), 0.5, 3)
        assert mask.shape == (3, 8)
        assert not mask[0, 5:].any()
        assert not mask[1, 2:].any()
        assert not mask[2].any()

    def test_apply_mask_embedding(self):
        latents = Tensor(np.zeros((1, 3, 2), dtype=np.float32))
        emb = Tensor(np.array([5.0, 6.0], dtype=np.float32))
        mask = np.array([[True, False, True]])
        out = apply_mask_embedding(latents, mask, emb)
        assert np.array_equal(out.data, [[[5, 6], [0, 0], [5, 6]]])


class TestQuantizer:
    def test_tau_schedule(self):
        assert gumbel_tau(0) == 2.0
        assert gumbel_tau(500) == pytest.approx(1.25)
        assert gumbel_tau(1000) == 0.5
        assert gumbel_tau(5000) == 0.5
        assert gumbel_tau(-3) == 2.0
        assert gumbel_tau(7, anneal_steps=0) == 0.5

    def test_hard_rows_come_from_codebook(self):
        rng = np.random.default_rng(0)
        quant = GumbelQuantizer(rng, d_latent=6, n_codes=5, d_code=6)
        z = Tensor(rng.normal(size=(2, 7, 6)).astype(np.float32))
        quantized, soft = quant(z, np.random.default_rng(1), tau=1.0)
        codes = quant.p["codebook"].data
        picks = soft.data.argmax(axis=-1)
        assert np.array_equal(quantized.data, codes[picks])
        assert np.allclose(soft.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_straight_through_reaches_projection(self):
        rng = np.random.default_rng(2)
        quant = GumbelQuantizer(rng, d_latent=6, n_codes=5, d_code=6)
        z = Tensor(rng.normal(size=(1, 4, 6)).astype(np.float32))
        with Tape() as tape:
            quantized, _ = quant(z, np.random.default_rng(3), tau=1.0)
            loss = E.sum_(quantized)
        E.backward(loss, tape)
        assert np.abs(quant.children["proj"].p["w"].grad).sum() > 0
        assert np.abs(quant.p["codebook"].grad).sum() > 0

    def test_diversity_extremes(self):
        v = 8
        uniform = Tensor(np.full((1, 6, v), 1.0 / v, dtype=np.float32))
        collapsed = np.zeros((1, 6, v), dtype=np.float32)
        collapsed[..., 2] = 1.0
        w = np.ones((1, 6), dtype=np.float32)
        assert GumbelQuantizer.diversity_loss(uniform, w).data == pytest.approx(0.0, abs=1e-5)
        assert GumbelQuantizer.diversity_loss(Tensor(collapsed), w).data == \
            pytest.approx((v - 1) / v, abs=1e-5)

    def test_diversity_needs_weight(self):
        soft = Tensor(np.full((1, 2, 4), 0.25, dtype=np.float32))
        with pytest.raises(ValueError, match="at least one weighted position"):
            GumbelQuantizer.diversity_loss(soft, np.zeros((1, 2), dtype=np.float32))


class TestContrastive:
    def test_loss_runs_and_backprops(self):
        rng = np.random.default_rng(0)
        enc = build_encoder(ENC, seed=0)
        obj = ContrastiveObjective(
            ContrastiveConfig(n_negatives=3, mask_prob=0.6, span_len=2, n_codes=4), 8, rng
        )
        feats = rng.normal(size=(2, 20, 4)).astype(np.float32)
        with Tape() as tape:
            loss = obj.loss(enc, feats, [20, 17], np.random.default_rng(1), step=5)
        assert loss.shape == ()
        assert np.isfinite(loss.data)
        E.backward(loss, tape)
        assert np.abs(obj.p["mask_emb"].grad).sum() > 0
        assert np.abs(obj.children["quantizer"].p["codebook"].grad).sum() > 0

    def test_single_code_gives_uniform_logits(self):
        # one codebook entry: every candidate is the positive, so the
        # cross entropy is exactly ln(K+1) and diversity is zero
        rng = np.random.default_rng(1)
        enc = build_encoder(ENC, seed=1)
        k = 3
        obj = ContrastiveObjective(
            ContrastiveConfig(n_negatives=k, mask_prob=0.6, span_len=2, n_codes=1,
                              diversity_weight=0.0), 8, rng
        )
        feats = rng.normal(size=(2, 20, 4)).astype(np.float32)
        loss = obj.loss(enc, feats, [20, 17], np.random.default_rng(2))
        assert loss.data == pytest.approx(np.log(k + 1), rel=1e-5)

    def test_no_anchors_raises(self):
        rng = np.random.default_rng(2)
        enc = build_encoder(ENC, seed=2)
        obj = ContrastiveObjective(
            ContrastiveConfig(n_negatives=2, mask_prob=0.0, span_len=1, n_codes=4), 8, rng
        )
        feats = rng.normal(size=(2, 4, 4)).astype(np.float32)
        # one valid group per utterance: a single forced span is never
        # enough for a distractor pool
        with pytest.raises(ValueError, match="no contrastive anchors"):
            obj.loss(enc, feats, [4, 4], np.random.default_rng(3))

    def test_deterministic_given_rng(self):
        rng = np.random.default_rng(3)
        enc = build_encoder(ENC, seed=3)
        obj = ContrastiveObjective(
            ContrastiveConfig(n_negatives=3, mask_prob=0.6, span_len=2, n_codes=4), 8, rng
        )
        feats = rng.normal(size=(2, 20, 4)).astype(np.float32)
        a = obj.loss(enc, feats, [20, 17], np.random.default_rng(7), step=2)
        b = obj.loss(enc, feats, [20, 17], np.random.default_rng(7), step=2)
        assert a.data == b.data


class TestKMeans:
    def _blobs(self, rng, centers, n=40, scale=0.05):
        pts = np.concatenate([c + scale * rng.normal(size=(n, len(c))) for c in centers])
        truth = np.repeat(np.arange(len(centers)), n)
        return pts, truth

    def test_recovers_separated_blobs(self):
        rng = np.random.default_rng(0)
        pts, truth = self._blobs(rng, [(0, 0), (5, 5), (-5, 5)])
        centers = kmeans_fit(pts, 3, np.random.default_rng(1))
        labels = kmeans_assign(pts, centers)
        # each true blob maps to exactly one distinct fitted center
        mapping = {t: set(labels[truth == t]) for t in range(3)}
        assert all(len(s) == 1 for s in mapping.values())
        assert len(set.union(*mapping.values())) == 3

    def test_fewer_points_than_clusters(self):
        with pytest.raises(ValueError, match="fewer points than clusters"):
            kmeans_fit(np.zeros((2, 3)), 5, np.random.default_rng(0))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(50, 4))
        a = kmeans_fit(pts, 4, np.random.default_rng(9))
        b = kmeans_fit(pts, 4, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_group_mean_features(self):
        feats = np.arange(12, dtype=np.float32).reshape(6, 2)
        rows = group_mean_features(feats, length=5, factor=2)
        assert rows.shape == (2, 2)
        assert np.array_equal(rows, [[1, 2], [5, 6]])


class TestMaskedCluster:
    def _setup(self, seed, alpha=1.0):
        rng = np.random.default_rng(seed)
        enc = build_encoder(ENC, seed=seed)
        obj = MaskedClusterObjective(
            MaskedClusterConfig(n_clusters=3, mask_prob=0.5, span_len=2, alpha=alpha), 8, rng
        )
        feats = rng.normal(size=(2, 16, 4)).astype(np.float32)
        lengths = [16, 13]
        rows = np.concatenate([
            group_mean_features(feats[b], lengths[b], 4) for b in range(2)
        ])
        centers = kmeans_fit(rows, 3, np.random.default_rng(0))
        labels = np.full((2, 4), -1, dtype=np.int64)
        for b in range(2):
            lab = assign_cluster_labels(feats[b], lengths[b], centers, 4)
            labels[b, : len(lab)] = lab
        return enc, obj, feats, lengths, labels

    def test_loss_runs_and_backprops(self):
        enc, obj, feats, lengths, labels = self._setup(0)
        with Tape() as tape:
            loss = obj.loss(enc, feats, lengths, labels, np.random.default_rng(1))
        assert np.isfinite(loss.data)
        E.backward(loss, tape)
        assert np.abs(obj.children["classifier"].p["w"].grad).sum() > 0
        assert np.abs(obj.p["mask_emb"].grad).sum() > 0

    def test_alpha_blends_masked_and_unmasked_terms(self):
        enc, obj, feats, lengths, labels = self._setup(1, alpha=1.0)
        rng_mask = lambda: np.random.default_rng(42)
        masked_only = obj.loss(enc, feats, lengths, labels, rng_mask()).data
        obj.cfg.alpha = 0.0
        unmasked_only = obj.loss(enc, feats, lengths, labels, rng_mask()).data
        obj.cfg.alpha = 0.25
        blend = obj.loss(enc, feats, lengths, labels, rng_mask()).data
        assert blend == pytest.approx(0.25 * masked_only + 0.75 * unmasked_only, rel=1e-5)

    def test_all_labels_missing_raises(self):
        enc, obj, feats, lengths, _ = self._setup(2)
        labels = np.full((2, 4), -1, dtype=np.int64)
        with pytest.raises(ValueError, match="no labeled positions"):
            obj.loss(enc, feats, lengths, labels, np.random.default_rng(0))

    def test_fit_cluster_targets_shapes(self):
        rng = np.random.default_rng(3)
        utts = [(rng.normal(size=(16, 4)).astype(np.float32), 16) for _ in range(4)]
        centers = fit_cluster_targets(utts, factor=4, k=3, rng=np.random.default_rng(1))
        assert centers.shape == (3, 4)
        labels = assign_cluster_labels(utts[0][0], 16, centers, 4)
        assert labels.shape == (4,) and set(labels) <= {0, 1, 2}

    def test_fit_cluster_targets_with_encoder(self):
        rng = np.random.default_rng(4)
        enc = build_encoder(ENC, seed=4)
        utts = [(rng.normal(size=(16, 4)).astype(np.float32), 16) for _ in range(3)]
        centers = fit_cluster_targets(utts, factor=4, k=2,
                                      rng=np.random.default_rng(2), encoder=enc)
        assert centers.shape == (2, 8)  # hidden-state space, d_model wide
        labels = assign_cluster_labels(utts[0][0], 16, centers, 4, encoder=enc)
        assert labels.shape == (4,)
