"""Relational context invariants: equivariance, skew-symmetry, cost, pooling."""

import numpy as np
import pytest
import torch

from conftest import permuted_scene, tiny_model_config, tiny_scene

from asdkit.config import RelationalConfig
from asdkit.features import collate, featurize_scene
from asdkit.headmap import canonical_pairs
from asdkit.relational import ContextNet, SpeakerContextModel, TemporalBackend, suppression_pool
from asdkit.train import init_params


def build_model(config, seed=0):
    model = SpeakerContextModel(config)
    init_params(model, seed)
    model.eval()
    return model


def scene_batch(scene, config):
    return collate([featurize_scene(scene, config)])


class TestTemporalBackend:
    def test_conv_same_length(self):
        net = TemporalBackend(8, "conv1d").eval()
        out = net(torch.randn(2, 17, 8))
        assert out.shape == (2, 17, 8)

    def test_conv_receptive_field_two_frames(self):
        torch.manual_seed(0)
        net = TemporalBackend(8, "conv1d").eval()
        x = torch.randn(1, 20, 8)
        base = net(x)
        for t_perturbed, t_checked in [(10, 7), (10, 13), (0, 3)]:
            x2 = x.clone()
            x2[0, t_perturbed] += 1.0
            out = net(x2)
            # three frames away: unchanged; adjacent frames: affected
            assert torch.allclose(out[0, t_checked], base[0, t_checked], atol=1e-6)
        x3 = x.clone()
        x3[0, 10] += 1.0
        out = net(x3)
        assert not torch.allclose(out[0, 12], base[0, 12], atol=1e-6)

    def test_bigru_single_frame(self):
        net = TemporalBackend(8, "bigru", gru_cells=256).eval()
        out = net(torch.randn(3, 1, 8))
        assert out.shape == (3, 1, 256)

    def test_bigru_output_width(self):
        net = TemporalBackend(8, "bigru", gru_cells=32).eval()
        assert net(torch.randn(2, 9, 8)).shape == (2, 9, 32)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            TemporalBackend(8, "lstm")


class TestContextNet:
    def test_parameter_sharing_identical_outputs(self):
        torch.manual_seed(1)
        net = ContextNet(6, 8, RelationalConfig(hidden_dim=8, gru_cells=8)).eval()
        x = torch.randn(1, 1, 12, 6)
        both = torch.cat([x, x], dim=1)
        out = net(both)
        assert torch.allclose(out[0, 0], out[0, 1])

    def test_zero_input_deterministic_bias_response(self):
        torch.manual_seed(2)
        net = ContextNet(6, 8, RelationalConfig(hidden_dim=8, gru_cells=8)).eval()
        a = net(torch.zeros(1, 2, 5, 6))
        b = net(torch.zeros(1, 2, 5, 6))
        assert torch.equal(a, b)

    def test_eval_counter(self):
        net = ContextNet(6, 8, RelationalConfig(hidden_dim=8, gru_cells=8)).eval()
        net(torch.randn(2, 3, 4, 6))
        assert net.raw_eval_count == 6


class TestSuppressionPool:
    def test_singleton_max_is_identity(self):
        eta = torch.randn(1, 1, 7, 5)
        out = suppression_pool(eta, "max")
        assert torch.allclose(out[0], eta[0, 0])

    def test_arithmetic_example(self):
        eta = torch.tensor([[[[1.0, -2.0]], [[0.0, 5.0]]]])  # (1, N=2, T=1, D=2)
        assert torch.allclose(suppression_pool(eta, "max")[0, 0], torch.tensor([1.0, 5.0]))
        assert torch.allclose(suppression_pool(eta, "mean")[0, 0], torch.tensor([0.5, 1.5]))

    def test_permutation_invariance(self):
        torch.manual_seed(3)
        eta = torch.randn(2, 4, 6, 5)
        perm = torch.tensor([2, 0, 3, 1])
        for mode in ("max", "mean"):
            assert torch.allclose(suppression_pool(eta, mode), suppression_pool(eta[:, perm], mode))

    def test_absent_candidates_excluded(self):
        eta = torch.tensor([[[[10.0]], [[1.0]]]])  # (1, 2, 1, 1)
        presence = torch.tensor([[[False], [True]]])
        out = suppression_pool(eta, "max", presence)
        assert out.item() == pytest.approx(1.0)

    def test_empty_error(self):
        with pytest.raises(ValueError):
            suppression_pool(torch.zeros(1, 0, 4, 3), "max")

    def test_none_rejected(self):
        with pytest.raises(ValueError):
            suppression_pool(torch.zeros(1, 2, 4, 3), "none")


class TestSkewSymmetry:
    def test_pair_plus_reverse_is_exactly_zero(self):
        config = tiny_model_config()
        model = build_model(config)
        torch.manual_seed(4)
        n, t = 3, 6
        dv = config.encoder.reduced_dim + config.encoder.spatial_dim
        v_eff = torch.randn(n, t, dv)
        pair_maps = torch.rand(len(canonical_pairs(n)), t, 3, 64, 64)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                fwd = model.pairwise_feature(v_eff, pair_maps, i, j)
                rev = model.pairwise_feature(v_eff, pair_maps, j, i)
                assert torch.equal(fwd + rev, torch.zeros_like(fwd))

    def test_swapped_presentation_negates_exactly(self):
        # evaluating the raw net on the pair presented in the opposite order
        # (features swapped, map channels swapped) must give the exact negation
        config = tiny_model_config()
        model = build_model(config, seed=12)
        torch.manual_seed(12)
        t = 5
        dv = config.encoder.reduced_dim + config.encoder.spatial_dim
        v = torch.randn(2, t, dv)
        maps = torch.rand(1, t, 3, 64, 64)
        swapped = maps[:, :, [1, 0, 2]]
        even_a, odd_a = model._pair_streams(v[0][None, None], v[1][None, None], maps[0][None, None])
        even_b, odd_b = model._pair_streams(v[1][None, None], v[0][None, None], swapped[0][None, None])
        with torch.no_grad():
            out_a = model.pair_net(even_a, odd_a)
            out_b = model.pair_net(even_b, odd_b)
        assert torch.equal(out_a, -out_b)

    def test_same_candidate_rejected(self):
        config = tiny_model_config()
        model = build_model(config)
        v_eff = torch.randn(2, 4, config.encoder.reduced_dim + config.encoder.spatial_dim)
        maps = torch.rand(1, 4, 3, 64, 64)
        with pytest.raises(ValueError):
            model.pairwise_feature(v_eff, maps, 1, 1)


class TestEvaluationCount:
    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_count_is_n_times_n_plus_one_half(self, n):
        config = tiny_model_config()
        model = build_model(config, seed=n)
        scene = tiny_scene(n_candidates=n, n_frames=8, seed=n)
        batch = scene_batch(scene, config)
        model.reset_relational_eval_count()
        with torch.no_grad():
            model(batch, contextual=True)
        assert model.relational_eval_count() == n * (n + 1) // 2

    def test_pair_net_evaluated_once_for_two_candidates(self):
        config = tiny_model_config()
        model = build_model(config)
        scene = tiny_scene(n_candidates=2, n_frames=8, seed=1)
        batch = scene_batch(scene, config)
        model.reset_relational_eval_count()
        with torch.no_grad():
            model(batch, contextual=True)
        assert model.pair_net.raw_eval_count == 1
        assert model.activity_net.raw_eval_count == 2


class TestPermutationEquivariance:
    @pytest.mark.parametrize("backend", ["conv1d", "bigru"])
    @pytest.mark.parametrize("spatial", [True, False])
    def test_end_to_end_scores_permute(self, backend, spatial):
        rng = np.random.default_rng(17)
        for trial in range(4):
            n = int(rng.integers(2, 5))
            config = tiny_model_config(spatial=spatial, backend=backend)
            model = build_model(config, seed=trial)
            scene = tiny_scene(n_candidates=n, n_frames=9, seed=100 + trial)
            perm = list(rng.permutation(n))
            scores = model.predict(scene_batch(scene, config))[0]
            scores_perm = model.predict(scene_batch(permuted_scene(scene, perm), config))[0]
            assert torch.allclose(scores_perm, scores[perm], atol=1e-5)

    def test_visual_only_equivariance(self):
        config = tiny_model_config()
        model = build_model(config, seed=9)
        scene = tiny_scene(n_candidates=4, n_frames=8, seed=9)
        perm = [2, 0, 3, 1]
        a = model.predict_visual_only(scene_batch(scene, config))[0]
        b = model.predict_visual_only(scene_batch(permuted_scene(scene, perm), config))[0]
        assert torch.allclose(b, a[perm], atol=1e-5)


class TestPredictionHeads:
    def test_zero_head_weights_give_half(self):
        config = tiny_model_config()
        model = build_model(config)
        with torch.no_grad():
            model.av_head.weight.zero_()
            model.av_head.bias.zero_()
            model.visual_head.weight.zero_()
            model.visual_head.bias.zero_()
        scene = tiny_scene(n_candidates=2, n_frames=6, seed=3)
        batch = scene_batch(scene, config)
        assert torch.allclose(model.predict(batch), torch.full((1, 2, 6), 0.5))
        assert torch.allclose(model.predict_visual_only(batch), torch.full((1, 2, 6), 0.5))

    def test_scores_strictly_inside_unit_interval(self):
        config = tiny_model_config()
        model = build_model(config, seed=5)
        batch = scene_batch(tiny_scene(3, 8, seed=5), config)
        scores = model.predict(batch)
        assert torch.all(scores > 0) and torch.all(scores < 1)

    def test_visual_only_ignores_audio(self):
        config = tiny_model_config()
        model = build_model(config, seed=6)
        scene = tiny_scene(2, 8, seed=6)
        batch = scene_batch(scene, config)
        base = model.predict_visual_only(batch)
        noisy = collate([featurize_scene(scene, config)])
        noisy.mfcc = noisy.mfcc + torch.randn_like(noisy.mfcc)
        assert torch.allclose(model.predict_visual_only(noisy), base)

    def test_av_prediction_depends_on_audio(self):
        config = tiny_model_config()
        model = build_model(config, seed=7)
        scene = tiny_scene(2, 8, seed=7)
        batch = scene_batch(scene, config)
        base = model.predict(batch)
        noisy = collate([featurize_scene(scene, config)])
        noisy.mfcc = noisy.mfcc + 3.0 * torch.randn_like(noisy.mfcc)
        assert not torch.allclose(model.predict(noisy), base)


class TestScalability:
    def test_small_n_model_runs_on_six_candidates(self):
        config = tiny_model_config()
        model = build_model(config)
        for n in (1, 3, 6):
            batch = scene_batch(tiny_scene(n_candidates=n, n_frames=8, seed=n), config)
            scores = model.predict(batch)
            assert scores.shape == (1, n, 8)

    def test_relational_disabled_is_per_candidate(self):
        # with relational off, each candidate's score must not depend on others
        config = tiny_model_config(relational=False, spatial=False)
        model = build_model(config, seed=8)
        scene = tiny_scene(n_candidates=3, n_frames=8, seed=8)
        full = model.predict(scene_batch(scene, config))[0]
        import dataclasses

        for k in range(3):
            solo = dataclasses.replace(scene, tracks=[scene.tracks[k]])
            alone = model.predict(scene_batch(solo, config))[0, 0]
            assert torch.allclose(alone, full[k], atol=1e-5)
